#include "kteval/config.hpp"

#include <cctype>
#include <cstdlib>

#include "kteval/util.hpp"

namespace kteval {
namespace {

struct TomlValue {
  enum class Kind { Str, Int, Float, Bool, Array };
  Kind kind = Kind::Str;
  std::string str;
  std::int64_t integer = 0;
  double real = 0.0;
  bool boolean = false;
  std::vector<TomlValue> array;
};

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

std::string parse_quoted(const std::string& text, std::size_t& pos, int line_no) {
  std::string out;
  ++pos;  // opening quote
  while (pos < text.size()) {
    const char c = text[pos];
    if (c == '\\') {
      if (pos + 1 >= text.size()) {
        throw ConfigError("line " + std::to_string(line_no) + ": dangling escape");
      }
      const char e = text[pos + 1];
      switch (e) {
        case 'n':
          out += '\n';
          break;
        case 't':
          out += '\t';
          break;
        case '"':
          out += '"';
          break;
        case '\\':
          out += '\\';
          break;
        default:
          throw ConfigError("line " + std::to_string(line_no) + ": unsupported escape \\" +
                            std::string(1, e));
      }
      pos += 2;
      continue;
    }
    if (c == '"') {
      ++pos;
      return out;
    }
    out += c;
    ++pos;
  }
  throw ConfigError("line " + std::to_string(line_no) + ": unterminated string");
}

TomlValue parse_scalar(const std::string& token, int line_no) {
  TomlValue value;
  const std::string t = trim(token);
  if (t.empty()) {
    throw ConfigError("line " + std::to_string(line_no) + ": empty value");
  }
  if (t == "true" || t == "false") {
    value.kind = TomlValue::Kind::Bool;
    value.boolean = t == "true";
    return value;
  }
  bool numeric = true;
  bool has_dot = false;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const char c = t[i];
    if (c == '-' || c == '+') {
      if (i != 0) {
        numeric = false;
      }
    } else if (c == '.') {
      has_dot = true;
    } else if (c == 'e' || c == 'E') {
      has_dot = true;  // exponent implies float
    } else if (!std::isdigit(static_cast<unsigned char>(c))) {
      numeric = false;
    }
  }
  if (numeric) {
    if (has_dot) {
      value.kind = TomlValue::Kind::Float;
      value.real = std::strtod(t.c_str(), nullptr);
    } else {
      value.kind = TomlValue::Kind::Int;
      value.integer = std::strtoll(t.c_str(), nullptr, 10);
    }
    return value;
  }
  throw ConfigError("line " + std::to_string(line_no) + ": unrecognized value '" + t + "'");
}

TomlValue parse_value(const std::string& raw, int line_no) {
  const std::string text = trim(raw);
  if (text.empty()) {
    throw ConfigError("line " + std::to_string(line_no) + ": missing value");
  }
  if (text.front() == '"') {
    std::size_t pos = 0;
    TomlValue value;
    value.kind = TomlValue::Kind::Str;
    value.str = parse_quoted(text, pos, line_no);
    if (!trim(text.substr(pos)).empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": trailing text after string");
    }
    return value;
  }
  if (text.front() == '[') {
    if (text.back() != ']') {
      throw ConfigError("line " + std::to_string(line_no) + ": unterminated array");
    }
    TomlValue value;
    value.kind = TomlValue::Kind::Array;
    std::string body = text.substr(1, text.size() - 2);
    std::size_t pos = 0;
    while (pos < body.size()) {
      while (pos < body.size() &&
             std::isspace(static_cast<unsigned char>(body[pos]))) {
        ++pos;
      }
      if (pos >= body.size()) {
        break;
      }
      if (body[pos] == '"') {
        TomlValue element;
        element.kind = TomlValue::Kind::Str;
        element.str = parse_quoted(body, pos, line_no);
        value.array.push_back(std::move(element));
      } else {
        std::size_t comma = body.find(',', pos);
        const std::string token =
            body.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        value.array.push_back(parse_scalar(token, line_no));
        pos = comma == std::string::npos ? body.size() : comma;
      }
      while (pos < body.size() &&
             std::isspace(static_cast<unsigned char>(body[pos]))) {
        ++pos;
      }
      if (pos < body.size()) {
        if (body[pos] != ',') {
          throw ConfigError("line " + std::to_string(line_no) +
                            ": expected comma in array");
        }
        ++pos;
      }
    }
    return value;
  }
  return parse_scalar(text, line_no);
}

std::string expect_string(const TomlValue& value, const std::string& key, int line_no) {
  if (value.kind != TomlValue::Kind::Str) {
    throw ConfigError("line " + std::to_string(line_no) + ": " + key +
                      " expects a quoted string");
  }
  return value.str;
}

std::int64_t expect_int(const TomlValue& value, const std::string& key, int line_no) {
  if (value.kind != TomlValue::Kind::Int) {
    throw ConfigError("line " + std::to_string(line_no) + ": " + key +
                      " expects an integer");
  }
  return value.integer;
}

double expect_number(const TomlValue& value, const std::string& key, int line_no) {
  if (value.kind == TomlValue::Kind::Float) {
    return value.real;
  }
  if (value.kind == TomlValue::Kind::Int) {
    return static_cast<double>(value.integer);
  }
  throw ConfigError("line " + std::to_string(line_no) + ": " + key + " expects a number");
}

void apply_model_key(ModelConfig& model, const std::string& key, const TomlValue& value,
                     int line_no) {
  if (key == "provider") {
    try {
      model.provider = parse_provider(expect_string(value, key, line_no));
    } catch (const GatewayError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  } else if (key == "endpoint") {
    model.endpoint = expect_string(value, key, line_no);
  } else if (key == "name") {
    model.model = expect_string(value, key, line_no);
  } else if (key == "thinking_budget") {
    if (value.kind == TomlValue::Kind::Str && value.str == "none") {
      model.thinking_budget.reset();
    } else {
      model.thinking_budget = static_cast<int>(expect_int(value, key, line_no));
    }
  } else if (key == "temperature") {
    model.temperature = expect_number(value, key, line_no);
  } else if (key == "max_answer_tokens") {
    model.max_answer_tokens = static_cast<int>(expect_int(value, key, line_no));
  } else if (key == "timeout_ms") {
    model.timeout_ms = static_cast<int>(expect_int(value, key, line_no));
  } else if (key == "max_parallel") {
    model.max_parallel = static_cast<int>(expect_int(value, key, line_no));
  } else if (key == "retry_attempts") {
    model.retry.attempts = static_cast<int>(expect_int(value, key, line_no));
  } else if (key == "retry_backoff_ms") {
    model.retry.backoff_base_ms = static_cast<int>(expect_int(value, key, line_no));
  } else if (key == "budget_field") {
    model.budget_field = expect_string(value, key, line_no);
  } else if (key == "api_key_env") {
    model.api_key_env = expect_string(value, key, line_no);
  } else if (key == "cache") {
    model.cache_dir = expect_string(value, key, line_no);
  } else if (key == "mock_seed") {
    model.mock_seed = static_cast<std::uint64_t>(expect_int(value, key, line_no));
  } else if (key == "mock_trace_tokens") {
    model.mock_trace_tokens = static_cast<int>(expect_int(value, key, line_no));
  } else {
    throw ConfigError("line " + std::to_string(line_no) + ": unknown model key '" + key +
                      "'");
  }
}

}  // namespace

std::uint64_t derived_seed(std::uint64_t base, std::uint64_t purpose) {
  return mix_hash({base, purpose});
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig config;
  config.judge.temperature = 0.0;
  config.judge.model = "mock-judge";

  std::string section;
  int line_no = 0;
  for (const std::string& raw_line : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(strip_comment(raw_line));
    if (line.empty()) {
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section != "dataset" && section != "experiment" && section != "model" &&
          section != "judge") {
        throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" +
                          section + "]");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const TomlValue value = parse_value(line.substr(eq + 1), line_no);

    if (section == "dataset") {
      if (key == "tag") {
        config.dataset.tag = expect_string(value, key, line_no);
      } else if (key == "format") {
        try {
          config.dataset.format = parse_dataset_format(expect_string(value, key, line_no));
        } catch (const DatasetError& e) {
          throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
        }
      } else if (key == "path") {
        config.dataset.path = expect_string(value, key, line_no);
      } else if (key == "split_ratio") {
        config.dataset.split_ratio = expect_number(value, key, line_no);
      } else if (key == "subsample_learners") {
        config.dataset.subsample_learners =
            static_cast<int>(expect_int(value, key, line_no));
      } else {
        throw ConfigError("line " + std::to_string(line_no) + ": unknown dataset key '" +
                          key + "'");
      }
    } else if (section == "experiment") {
      if (key == "variant") {
        try {
          config.experiment.variant = parse_variant(expect_string(value, key, line_no));
        } catch (const PromptError& e) {
          throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
        }
      } else if (key == "mode") {
        try {
          config.experiment.mode = parse_mode(expect_string(value, key, line_no));
        } catch (const PromptError& e) {
          throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
        }
      } else if (key == "history_length") {
        config.experiment.history_length = static_cast<int>(expect_int(value, key, line_no));
      } else if (key == "weight_portion") {
        config.experiment.weight_portion = expect_number(value, key, line_no);
      } else if (key == "samples") {
        config.experiment.samples = static_cast<int>(expect_int(value, key, line_no));
      } else if (key == "seed") {
        config.experiment.seed = static_cast<std::uint64_t>(expect_int(value, key, line_no));
      } else if (key == "cap") {
        config.experiment.cap = static_cast<int>(expect_int(value, key, line_no));
      } else if (key == "last_k_positions") {
        config.experiment.last_k_positions =
            static_cast<int>(expect_int(value, key, line_no));
      } else if (key == "output_dir") {
        config.experiment.output_dir = expect_string(value, key, line_no);
      } else if (key == "run_name") {
        config.experiment.run_name = expect_string(value, key, line_no);
      } else if (key == "budgets") {
        if (value.kind != TomlValue::Kind::Array) {
          throw ConfigError("line " + std::to_string(line_no) +
                            ": budgets expects an array");
        }
        config.experiment.budgets.clear();
        for (const TomlValue& element : value.array) {
          if (element.kind == TomlValue::Kind::Str) {
            if (element.str != "none") {
              throw ConfigError("line " + std::to_string(line_no) +
                                ": budget entries are integers or \"none\"");
            }
            config.experiment.budgets.push_back(std::nullopt);
          } else if (element.kind == TomlValue::Kind::Int) {
            config.experiment.budgets.push_back(static_cast<int>(element.integer));
          } else {
            throw ConfigError("line " + std::to_string(line_no) +
                              ": budget entries are integers or \"none\"");
          }
        }
      } else {
        throw ConfigError("line " + std::to_string(line_no) +
                          ": unknown experiment key '" + key + "'");
      }
    } else if (section == "model") {
      apply_model_key(config.model, key, value, line_no);
    } else if (section == "judge") {
      apply_model_key(config.judge, key, value, line_no);
    } else {
      throw ConfigError("line " + std::to_string(line_no) + ": key outside any section");
    }
  }

  if (config.dataset.split_ratio <= 0.0 || config.dataset.split_ratio >= 1.0) {
    throw ConfigError("split_ratio must be strictly between 0 and 1");
  }
  if (config.experiment.history_length < 1) {
    throw ConfigError("history_length must be >= 1");
  }
  if (config.experiment.samples < 1) {
    throw ConfigError("samples must be >= 1");
  }
  if (config.experiment.weight_portion < 0.0 || config.experiment.weight_portion > 1.0) {
    throw ConfigError("weight_portion must be in [0, 1]");
  }
  try {
    config.model.validate();
    config.judge.validate();
  } catch (const GatewayError& e) {
    throw ConfigError(e.what());
  }
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  return parse_config_text(text);
}

std::string describe_config(const ExperimentConfig& config) {
  std::string out;
  out += "dataset: " + config.dataset.tag + " (" +
         dataset_format_name(config.dataset.format) + ") at " + config.dataset.path + "\n";
  out += "split_ratio: " + std::to_string(config.dataset.split_ratio) + "\n";
  if (config.dataset.subsample_learners) {
    out += "subsample_learners: " + std::to_string(*config.dataset.subsample_learners) + "\n";
  }
  out += "variant: " + variant_name(config.experiment.variant) + "\n";
  out += "mode: " + mode_name(config.experiment.mode) + "\n";
  out += "history_length: " + std::to_string(config.experiment.history_length) + "\n";
  out += "samples: " + std::to_string(config.experiment.samples) + "\n";
  out += "seed: " + std::to_string(config.experiment.seed) + "\n";
  if (config.experiment.cap) {
    out += "cap: " + std::to_string(*config.experiment.cap) + "\n";
  }
  out += "budgets:";
  if (config.experiment.budgets.empty()) {
    out += " [model default]";
  } else {
    for (const std::optional<int>& budget : config.experiment.budgets) {
      out += ' ' + (budget ? std::to_string(*budget) : std::string("none"));
    }
  }
  out += "\n";
  out += "model: " + config.model.model + " via " + provider_name(config.model.provider) +
         "\n";
  out += "judge: " + config.judge.model + " via " + provider_name(config.judge.provider) +
         "\n";
  return out;
}

}  // namespace kteval
