#include "repsim/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "repsim/error.hpp"

namespace repsim::report {
namespace {

constexpr double kWidth = 760.0;
constexpr double kPanelHeight = 330.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 180.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 55.0;

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string color(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

bool has_error(const Series& s, std::size_t i) { return i < s.error.size() && std::isfinite(s.error[i]); }

// Evenly spaced "nice" ticks covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int target) {
  const double span = hi - lo;
  const double raw = span / target;
  const double magnitude = std::pow(10.0, std::floor(std::log10(raw)));
  double step = magnitude;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    step = m * magnitude;
    if (span / step <= target) break;
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step - 1e-9) * step; t <= hi + step * 1e-9; t += step) out.push_back(t);
  return out;
}

struct Frame {
  double x0, y0, width, height;  // plot area in document coordinates
  double xmin, xmax, ymin, ymax;

  double px(double x) const { return x0 + (xmax == xmin ? 0.5 : (x - xmin) / (xmax - xmin)) * width; }
  double py(double y) const { return y0 + height - (ymax == ymin ? 0.5 : (y - ymin) / (ymax - ymin)) * height; }
};

std::pair<double, double> y_range(const Panel& panel, bool include_zero) {
  double lo = include_zero ? 0.0 : INFINITY;
  double hi = include_zero ? 0.0 : -INFINITY;
  for (const Series& s : panel.series) {
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      const double e = has_error(s, i) ? s.error[i] : 0.0;
      lo = std::min(lo, s.y[i] - e);
      hi = std::max(hi, s.y[i] + e);
    }
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (panel.y_min) lo = *panel.y_min;
  if (panel.y_max) hi = *panel.y_max;
  if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  } else if (!panel.y_min || !panel.y_max) {
    const double pad = 0.05 * (hi - lo);
    if (!panel.y_min && !(include_zero && lo == 0.0)) lo -= pad;
    if (!panel.y_max) hi += pad;
  }
  return {lo, hi};
}

void draw_axes(std::ostringstream& svg, const Panel& panel, const Frame& f, double top) {
  svg << "<text x=\"" << num(f.x0 + f.width / 2) << "\" y=\"" << num(top + 22)
      << "\" text-anchor=\"middle\" font-size=\"15\" font-weight=\"bold\">" << escape(panel.title) << "</text>\n";
  svg << "<rect x=\"" << num(f.x0) << "\" y=\"" << num(f.y0) << "\" width=\"" << num(f.width) << "\" height=\""
      << num(f.height) << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (double t : nice_ticks(f.ymin, f.ymax, 5)) {
    const double y = f.py(t);
    svg << "<line x1=\"" << num(f.x0) << "\" x2=\"" << num(f.x0 + f.width) << "\" y1=\"" << num(y) << "\" y2=\""
        << num(y) << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << num(f.x0 - 6) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
        << tick_text(t) << "</text>\n";
  }
  svg << "<text x=\"" << num(f.x0 + f.width / 2) << "\" y=\"" << num(f.y0 + f.height + 40)
      << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(panel.x_label) << "</text>\n";
  const double yc = f.y0 + f.height / 2;
  svg << "<text x=\"" << num(f.x0 - 50) << "\" y=\"" << num(yc) << "\" text-anchor=\"middle\" font-size=\"12\" "
      << "transform=\"rotate(-90 " << num(f.x0 - 50) << " " << num(yc) << ")\">" << escape(panel.y_label)
      << "</text>\n";
}

void draw_legend(std::ostringstream& svg, const Panel& panel, const Frame& f) {
  for (std::size_t i = 0; i < panel.series.size(); ++i) {
    const double y = f.y0 + 10 + 18.0 * static_cast<double>(i);
    const double x = f.x0 + f.width + 14;
    svg << "<rect x=\"" << num(x) << "\" y=\"" << num(y - 9) << "\" width=\"12\" height=\"12\" fill=\"" << color(i)
        << "\"/>\n";
    svg << "<text x=\"" << num(x + 18) << "\" y=\"" << num(y + 2) << "\" font-size=\"12\">"
        << escape(panel.series[i].label) << "</text>\n";
  }
}

void error_bar(std::ostringstream& svg, double x, double y_lo, double y_hi, const std::string& stroke) {
  svg << "<line x1=\"" << num(x) << "\" x2=\"" << num(x) << "\" y1=\"" << num(y_lo) << "\" y2=\"" << num(y_hi)
      << "\" stroke=\"" << stroke << "\"/>\n";
  for (double y : {y_lo, y_hi}) {
    svg << "<line x1=\"" << num(x - 3) << "\" x2=\"" << num(x + 3) << "\" y1=\"" << num(y) << "\" y2=\"" << num(y)
        << "\" stroke=\"" << stroke << "\"/>\n";
  }
}

void draw_line_panel(std::ostringstream& svg, const Panel& panel, double top) {
  Frame f{kLeft, top + kTop, kWidth - kLeft - kRight, kPanelHeight - kTop - kBottom, 0, 1, 0, 1};
  std::set<double> xs;
  for (const Series& s : panel.series) xs.insert(s.x.begin(), s.x.end());
  if (!xs.empty()) {
    f.xmin = *xs.begin();
    f.xmax = *xs.rbegin();
  }
  std::tie(f.ymin, f.ymax) = y_range(panel, false);
  draw_axes(svg, panel, f, top);

  // Categorical ticks when labels are given, otherwise every distinct x (or a
  // nice subset when there are many).
  if (!panel.categories.empty()) {
    for (std::size_t i = 0; i < panel.categories.size(); ++i) {
      const double x = f.px(static_cast<double>(i));
      svg << "<text x=\"" << num(x) << "\" y=\"" << num(f.y0 + f.height + 16)
          << "\" text-anchor=\"middle\" font-size=\"11\">" << escape(panel.categories[i]) << "</text>\n";
    }
  } else {
    std::vector<double> ticks(xs.begin(), xs.end());
    if (ticks.size() > 12 && f.xmax > f.xmin) ticks = nice_ticks(f.xmin, f.xmax, 8);
    for (double t : ticks) {
      svg << "<text x=\"" << num(f.px(t)) << "\" y=\"" << num(f.y0 + f.height + 16)
          << "\" text-anchor=\"middle\" font-size=\"11\">" << tick_text(t) << "</text>\n";
    }
  }

  for (std::size_t k = 0; k < panel.series.size(); ++k) {
    const Series& s = panel.series[k];
    const std::string stroke = color(k);
    std::string points;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      points += num(f.px(s.x[i])) + "," + num(f.py(s.y[i])) + " ";
    }
    svg << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\" points=\"" << points << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      const double x = f.px(s.x[i]);
      if (has_error(s, i)) error_bar(svg, x, f.py(s.y[i] - s.error[i]), f.py(s.y[i] + s.error[i]), stroke);
      svg << "<circle cx=\"" << num(x) << "\" cy=\"" << num(f.py(s.y[i])) << "\" r=\"3\" fill=\"" << stroke
          << "\"/>\n";
    }
  }
  draw_legend(svg, panel, f);
}

void draw_bar_panel(std::ostringstream& svg, const Panel& panel, double top) {
  Frame f{kLeft, top + kTop, kWidth - kLeft - kRight, kPanelHeight - kTop - kBottom, 0, 1, 0, 1};
  std::tie(f.ymin, f.ymax) = y_range(panel, true);
  draw_axes(svg, panel, f, top);

  const std::size_t groups = panel.categories.size();
  const std::size_t per_group = std::max<std::size_t>(panel.series.size(), 1);
  const double group_width = f.width / static_cast<double>(std::max<std::size_t>(groups, 1));
  const double bar_width = 0.8 * group_width / static_cast<double>(per_group);
  const double base = f.py(std::clamp(0.0, f.ymin, f.ymax));
  for (std::size_t g = 0; g < groups; ++g) {
    const double gx = f.x0 + group_width * static_cast<double>(g);
    svg << "<text x=\"" << num(gx + group_width / 2) << "\" y=\"" << num(f.y0 + f.height + 16)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << escape(panel.categories[g]) << "</text>\n";
    for (std::size_t k = 0; k < panel.series.size(); ++k) {
      const Series& s = panel.series[k];
      if (g >= s.y.size() || !std::isfinite(s.y[g])) continue;
      const double x = gx + 0.1 * group_width + bar_width * static_cast<double>(k);
      const double y = f.py(s.y[g]);
      svg << "<rect x=\"" << num(x) << "\" y=\"" << num(std::min(y, base)) << "\" width=\"" << num(bar_width)
          << "\" height=\"" << num(std::abs(base - y)) << "\" fill=\"" << color(k) << "\"/>\n";
      if (has_error(s, g)) {
        error_bar(svg, x + bar_width / 2, f.py(s.y[g] - s.error[g]), f.py(s.y[g] + s.error[g]), "#000");
      }
    }
  }
  draw_legend(svg, panel, f);
}

}  // namespace

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw Error("format_double: conversion failed");
  return std::string(buf, end);
}

std::string format_optional(const std::optional<double>& value) { return value ? format_double(*value) : ""; }

CsvTable::CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

void CsvTable::add_row(std::vector<std::string> fields) {
  if (fields.size() != columns_.size()) {
    throw ShapeError("csv row has " + std::to_string(fields.size()) + " fields, expected " +
                     std::to_string(columns_.size()));
  }
  rows_.push_back(std::move(fields));
}

std::string CsvTable::str() const {
  const auto field = [](const std::string& text) {
    if (text.find_first_of(",\"\n") == std::string::npos) return text;
    std::string out = "\"";
    for (char c : text) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  };
  std::string out;
  const auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i > 0) out += ',';
      out += field(fields[i]);
    }
    out += '\n';
  };
  line(columns_);
  for (const auto& row : rows_) line(row);
  return out;
}

std::string render_svg(const std::vector<Panel>& panels) {
  std::ostringstream svg;
  const double height = kPanelHeight * static_cast<double>(std::max<std::size_t>(panels.size(), 1));
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\"" << num(height)
      << "\" viewBox=\"0 0 " << num(kWidth) << " " << num(height) << "\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i) {
    const double top = kPanelHeight * static_cast<double>(i);
    if (panels[i].kind == Panel::Kind::bar) {
      draw_bar_panel(svg, panels[i], top);
    } else {
      draw_line_panel(svg, panels[i], top);
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace repsim::report
