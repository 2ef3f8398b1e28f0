#include "repsim/config.hpp"

#include <charconv>
#include <sstream>

#include "repsim/error.hpp"
#include "repsim/labels.hpp"

#define TOML_HEADER_ONLY 1
#include "toml.hpp"

namespace repsim::experiments {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunSpec, dataset, source, n_train, n_test, transform, epochs, batch_size, lr,
                                   momentum)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ExperimentConfig, pipeline, cell, start, run, pretrain, seeds, n_probe, compare)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Profile, name, seeds, n_probe, batch_size, lr, momentum, eval_n_test,
                                   pretrain_n_train, pretrain_epochs, f1_n_train, f1_epochs, scratch_d,
                                   scratch_n_train, scratch_epochs, f3b_sizes, f3b_epochs, finetune_d,
                                   finetune_n_train, finetune_n_test, finetune_epochs, shift)

namespace {

bool compatible(const nlohmann::json& target, const nlohmann::json& value) {
  if (target.is_number_float()) return value.is_number();
  if (target.is_number_unsigned()) return value.is_number_unsigned() || (value.is_number_integer() && value >= 0);
  if (target.is_number_integer()) return value.is_number_integer();
  if (target.is_array()) {
    if (!value.is_array()) return false;
    if (target.empty()) return true;
    for (const auto& element : value) {
      if (!compatible(target.front(), element)) return false;
    }
    return true;
  }
  return target.type() == value.type();
}

template <typename T>
T strict_read(const nlohmann::json& patch, const char* what) {
  nlohmann::json base = T{};
  if (!patch.is_object()) throw ConfigError(std::string(what) + ": expected a table/object");
  merge_strict(base, patch);
  try {
    return base.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

nlohmann::json toml_to_json(const toml::node& node) {
  if (const auto* table = node.as_table()) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [key, value] : *table) out[std::string(key.str())] = toml_to_json(value);
    return out;
  }
  if (const auto* array = node.as_array()) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& value : *array) out.push_back(toml_to_json(value));
    return out;
  }
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) {
    const std::int64_t i = v->get();
    if (i >= 0) return static_cast<std::uint64_t>(i);
    return i;
  }
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  if (const auto* v = node.as_date()) {
    std::ostringstream text;
    text << *v;
    return text.str();
  }
  if (const auto* v = node.as_time()) {
    std::ostringstream text;
    text << *v;
    return text.str();
  }
  if (const auto* v = node.as_date_time()) {
    std::ostringstream text;
    text << *v;
    return text.str();
  }
  return nullptr;
}

nlohmann::json parse_scalar(const nlohmann::json& like, const std::string& text, const std::string& key) {
  const auto fail = [&] {
    return ConfigError("override " + key + "=" + text + ": cannot convert to the type of '" + key + "' (" +
                       like.type_name() + ")");
  };
  if (like.is_string()) return text;
  if (like.is_boolean()) {
    if (text == "true") return true;
    if (text == "false") return false;
    throw fail();
  }
  if (like.is_number_float()) {
    double value = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || end != text.data() + text.size()) throw fail();
    return value;
  }
  if (like.is_number_unsigned()) {
    std::uint64_t value = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || end != text.data() + text.size()) throw fail();
    return value;
  }
  if (like.is_number_integer()) {
    std::int64_t value = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || end != text.data() + text.size()) throw fail();
    return value;
  }
  throw fail();
}

void require(bool condition, const std::string& message) {
  if (!condition) throw ConfigError(message);
}

}  // namespace

Profile reduced_profile() { return Profile{}; }

Profile full_profile() {
  Profile p;
  p.name = "full";
  p.seeds = 5;
  p.n_probe = 2048;
  p.pretrain_n_train = 50000;
  p.eval_n_test = 0;
  p.pretrain_epochs = 30;
  p.f1_n_train = 50000;
  p.f1_epochs = 30;
  p.scratch_n_train = 5000;
  p.scratch_epochs = 300;
  p.f3b_sizes = {100, 500, 1000, 5000, 10000, 50000};
  p.f3b_epochs = 300;
  p.finetune_n_train = 5000;
  p.finetune_n_test = 5000;
  p.finetune_epochs = 100;
  return p;
}

Profile profile_by_name(const std::string& name) {
  if (name == "reduced") return reduced_profile();
  if (name == "full") return full_profile();
  throw ConfigError("unknown scale '" + name + "' (expected reduced or full)");
}

nlohmann::json to_json(const RunSpec& spec) { return spec; }
nlohmann::json to_json(const ExperimentConfig& config) { return config; }
nlohmann::json to_json(const Profile& profile) { return profile; }

RunSpec run_spec_from_json(const nlohmann::json& j) { return strict_read<RunSpec>(j, "run spec"); }
ExperimentConfig config_from_json(const nlohmann::json& j) { return strict_read<ExperimentConfig>(j, "experiment config"); }
Profile profile_from_json(const nlohmann::json& j) { return strict_read<Profile>(j, "profile"); }

void validate(const RunSpec& spec) {
  require(spec.dataset == "cifar10" || spec.dataset == "svhn", "run.dataset: unknown dataset '" + spec.dataset + "'");
  require(spec.source == "train" || spec.source == "test" || spec.source == "train+test",
          "run.source: expected train, test or train+test, got '" + spec.source + "'");
  require(spec.n_train > 0, "run.n_train must be positive");
  require(spec.source == "train" || spec.n_test > 0, "run.n_test must be positive when splitting one pool");
  require(spec.batch_size > 0, "run.batch_size must be positive");
  require(spec.lr >= 0.0, "run.lr must be non-negative");
  require(spec.momentum >= 0.0 && spec.momentum < 1.0, "run.momentum must lie in [0, 1)");
  labels::parse_transform(spec.transform).validate(10);
}

void validate(const ExperimentConfig& config) {
  require(config.start == "scratch" || config.start == "pretrained",
          "start: expected scratch or pretrained, got '" + config.start + "'");
  validate(config.run);
  if (config.start == "pretrained") validate(config.pretrain);
  require(!config.seeds.empty(), "seeds must not be empty");
  for (std::size_t i = 0; i < config.seeds.size(); ++i) {
    for (std::size_t j = i + 1; j < config.seeds.size(); ++j) {
      require(config.seeds[i] != config.seeds[j], "seeds must be distinct");
    }
  }
  require(config.n_probe >= 4, "n_probe must be at least 4");
  for (const std::string& target : config.compare) {
    require(target == "init" || target == "pretrained" || target == "epochs",
            "compare: unknown target '" + target + "'");
    require(target != "pretrained" || config.start == "pretrained",
            "compare: 'pretrained' needs start = \"pretrained\"");
  }
}

void validate(const Profile& p) {
  require(p.seeds >= 1, "seeds must be at least 1");
  require(p.n_probe >= 4, "n_probe must be at least 4");
  require(p.batch_size > 0, "batch_size must be positive");
  require(p.momentum >= 0.0 && p.momentum < 1.0, "momentum must lie in [0, 1)");
  for (int d : p.scratch_d) require(d >= 0 && d <= 9, "scratch_d entries must lie in 0..9");
  for (int d : p.finetune_d) require(d >= 0 && d <= 9, "finetune_d entries must lie in 0..9");
  require(p.shift >= 1 && p.shift <= 9, "shift must lie in 1..9");
  require(!p.f3b_sizes.empty(), "f3b_sizes must not be empty");
}

nlohmann::json read_toml(const std::filesystem::path& path) {
  try {
    return toml_to_json(toml::parse_file(path.string()));
  } catch (const toml::parse_error& e) {
    std::ostringstream message;
    message << path.string() << ": " << e.description() << " (line " << e.source().begin.line << ")";
    throw ConfigError(message.str());
  }
}

nlohmann::json parse_toml(std::string_view text) {
  try {
    return toml_to_json(toml::parse(text));
  } catch (const toml::parse_error& e) {
    std::ostringstream message;
    message << "TOML: " << e.description() << " (line " << e.source().begin.line << ")";
    throw ConfigError(message.str());
  }
}

void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& where) {
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    nlohmann::json& target = base[key];
    if (target.is_object()) {
      if (!value.is_object()) throw ConfigError("config key '" + path + "' must be a table");
      merge_strict(target, value, path);
    } else if (!compatible(target, value)) {
      throw ConfigError("config key '" + path + "': expected " + std::string(target.type_name()) + ", got " +
                        value.type_name());
    } else {
      target = value;
    }
  }
}

void apply_overrides(nlohmann::json& document, const std::vector<std::string>& overrides) {
  for (const std::string& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq);
    const std::string text = item.substr(eq + 1);

    nlohmann::json* node = &document;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    if (node->is_object()) throw ConfigError("config key '" + key + "' is a table; override its fields instead");

    if (node->is_array()) {
      // "[0, 1, 3]" as JSON, or the bare list "0,1,3".
      nlohmann::json parsed = nlohmann::json::parse(text, nullptr, false);
      if (parsed.is_discarded() || !parsed.is_array()) {
        parsed = nlohmann::json::array();
        const nlohmann::json like = node->empty() ? nlohmann::json("") : node->front();
        std::size_t pos = 0;
        while (pos <= text.size()) {
          const auto comma = text.find(',', pos);
          const std::string element = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
          if (!element.empty()) parsed.push_back(parse_scalar(like, element, key));
          if (comma == std::string::npos) break;
          pos = comma + 1;
        }
      }
      if (!compatible(*node, parsed)) throw ConfigError("override " + item + ": element types do not match");
      *node = parsed;
    } else {
      *node = parse_scalar(*node, text, key);
    }
  }
}

}  // namespace repsim::experiments
