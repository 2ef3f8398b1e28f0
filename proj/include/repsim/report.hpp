#pragma once

#include <optional>
#include <string>
#include <vector>

// Tidy CSV and SVG chart output for experiment reports.
namespace repsim::report {

/// Shortest decimal text that reads back to the same double.
std::string format_double(double value);
/// Empty for a missing value.
std::string format_optional(const std::optional<double>& value);

/// Comma-separated table with a header row; fields containing commas or
/// quotes are quoted.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns);

  void add_row(std::vector<std::string> fields);
  std::size_t rows() const { return rows_.size(); }
  std::string str() const;

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

struct Series {
  std::string label;
  std::vector<double> x;  // numeric positions (line charts) or ignored (bar charts)
  std::vector<double> y;
  std::vector<double> error;  // half-width of the error bar; empty or NaN means none
};

struct Panel {
  enum class Kind { line, bar };

  Kind kind = Kind::line;
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<std::string> categories;  // bar groups, or tick labels for line x positions 0..n-1
  std::vector<Series> series;
  std::optional<double> y_min;
  std::optional<double> y_max;
};

/// Panels stacked vertically in one SVG document.
std::string render_svg(const std::vector<Panel>& panels);

}  // namespace repsim::report
