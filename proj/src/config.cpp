#include "rawnext/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "rawnext/analysis.hpp"

namespace rawnext {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t to_size(const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return x;
}

std::vector<std::size_t> to_size_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(trim(item)));
  if (out.empty()) throw ConfigError("expected a comma-separated list");
  return out;
}

template <typename C>
std::string join(const C& items, const std::function<std::string(const typename C::value_type&)>& f) {
  std::string out;
  for (const auto& x : items) out += (out.empty() ? "" : ",") + f(x);
  return out;
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(sec, key, member)                                                   \
  Field {                                                                              \
    sec, key, [](RunConfig& c, const std::string& v) { c.member = to_size(v); },       \
        [](const RunConfig& c) { return std::to_string(c.member); }                    \
  }
#define DOUBLE_FIELD(sec, key, member)                                                                \
  Field {                                                                                             \
    sec, key, [](RunConfig& c, const std::string& v) { c.member = static_cast<decltype(c.member)>(to_double(v)); }, \
        [](const RunConfig& c) { return fmt_double(c.member); }                                       \
  }
#define STRING_FIELD(sec, key, member) \
  Field { sec, key, [](RunConfig& c, const std::string& v) { c.member = v; }, [](const RunConfig& c) { return c.member; } }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"model", "mode", [](RunConfig& c, const std::string& v) {
              try {
                c.model.mode = parse_model_mode(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
              }
            },
            [](const RunConfig& c) { return to_string(c.model.mode); }},
      SIZE_FIELD("model", "frontend_channels", model.frontend_channels),
      Field{"model", "stage_widths", [](RunConfig& c, const std::string& v) { c.model.stage_widths = to_size_list(v); },
            [](const RunConfig& c) {
              return join(c.model.stage_widths, std::function<std::string(const std::size_t&)>(
                                                    [](const std::size_t& x) { return std::to_string(x); }));
            }},
      Field{"model", "stage_blocks", [](RunConfig& c, const std::string& v) { c.model.stage_blocks = to_size_list(v); },
            [](const RunConfig& c) {
              return join(c.model.stage_blocks, std::function<std::string(const std::size_t&)>(
                                                    [](const std::size_t& x) { return std::to_string(x); }));
            }},
      SIZE_FIELD("model", "original_paths", model.original_paths),
      SIZE_FIELD("model", "low_paths", model.low_paths),
      SIZE_FIELD("model", "high_paths", model.high_paths),
      SIZE_FIELD("model", "resample_factor", model.resample_factor),
      SIZE_FIELD("model", "gate_hidden_divisor", model.gate_hidden_divisor),
      SIZE_FIELD("model", "gate_hidden_min", model.gate_hidden_min),
      SIZE_FIELD("model", "asp_hidden", model.asp_hidden),
      SIZE_FIELD("model", "embedding_dim", model.embedding_dim),

      SIZE_FIELD("train", "speakers_per_batch", train.batch.speakers_per_batch),
      SIZE_FIELD("train", "utts_per_speaker", train.batch.utts_per_speaker),
      SIZE_FIELD("train", "fixed_len", train.batch.fixed_len),
      SIZE_FIELD("train", "random_len_min", train.batch.random_len_min),
      SIZE_FIELD("train", "random_len_max", train.batch.random_len_max),
      SIZE_FIELD("train", "epochs", train.epochs),
      SIZE_FIELD("train", "steps_per_epoch", train.steps_per_epoch),
      DOUBLE_FIELD("train", "lr_start", train.schedule.lr_start),
      DOUBLE_FIELD("train", "lr_end", train.schedule.lr_end),
      DOUBLE_FIELD("train", "beta1", train.optimizer.beta1),
      DOUBLE_FIELD("train", "beta2", train.optimizer.beta2),
      DOUBLE_FIELD("train", "eps", train.optimizer.eps),
      DOUBLE_FIELD("train", "weight_decay", train.optimizer.weight_decay),
      Field{"train", "second_moment_correction",
            [](RunConfig& c, const std::string& v) {
              if (v == "true" || v == "1") c.train.optimizer.second_moment_correction = true;
              else if (v == "false" || v == "0") c.train.optimizer.second_moment_correction = false;
              else throw ConfigError("expected true or false, got '" + v + "'");
            },
            [](const RunConfig& c) { return std::string(c.train.optimizer.second_moment_correction ? "true" : "false"); }},
      Field{"train", "loss", [](RunConfig& c, const std::string& v) { c.train.loss = parse_loss_kind(v); },
            [](const RunConfig& c) { return to_string(c.train.loss); }},
      DOUBLE_FIELD("train", "aam_margin", train.aam_margin),
      DOUBLE_FIELD("train", "aam_scale", train.aam_scale),
      DOUBLE_FIELD("train", "pre_emphasis", train.pre_emphasis),
      SIZE_FIELD("train", "seed", train.seed),
      STRING_FIELD("train", "out", train_out),

      SIZE_FIELD("data", "n_speakers", data.n_speakers),
      SIZE_FIELD("data", "utts_per_speaker", data.utts_per_speaker),
      DOUBLE_FIELD("data", "duration_min_s", data.duration_min_s),
      DOUBLE_FIELD("data", "duration_max_s", data.duration_max_s),
      SIZE_FIELD("data", "sample_rate", data.sample_rate),
      DOUBLE_FIELD("data", "snr_min_db", data.snr_min_db),
      DOUBLE_FIELD("data", "snr_max_db", data.snr_max_db),
      SIZE_FIELD("data", "seed", data.seed),
      SIZE_FIELD("data", "eval_speakers", data.eval_speakers),
      SIZE_FIELD("data", "eval_utts_per_speaker", data.eval_utts_per_speaker),
      SIZE_FIELD("data", "n_trials", data.n_trials),
      STRING_FIELD("data", "root", data_root),

      Field{"eval", "durations", [](RunConfig& c, const std::string& v) { c.eval.durations = parse_durations(v); },
            [](const RunConfig& c) {
              std::string out;
              for (const auto& d : c.eval.durations)
                out += (out.empty() ? "" : ",") + (d.seconds ? fmt_double(*d.seconds) : std::string("full"));
              return out;
            }},
      Field{"eval", "lengths",
            [](RunConfig& c, const std::string& v) {
              c.eval.lengths = parse_lengths(v);
            },
            [](const RunConfig& c) {
              std::string out;
              for (double l : c.eval.lengths) out += (out.empty() ? "" : ",") + fmt_double(l);
              return out;
            }},
      DOUBLE_FIELD("eval", "p_target", eval.dcf.p_target),
      DOUBLE_FIELD("eval", "c_miss", eval.dcf.c_miss),
      DOUBLE_FIELD("eval", "c_fa", eval.dcf.c_fa),
      Field{"eval", "eer_mode", [](RunConfig& c, const std::string& v) { c.eval.eer_mode = parse_eer_mode(v); },
            [](const RunConfig& c) { return to_string(c.eval.eer_mode); }},
  };
  return table;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig config = desk();
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "data" && section != "eval")
        throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of a section");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& f : fields()) {
      if (section == f.section && key == f.key) {
        try {
          f.set(config, value);
        } catch (const std::exception& e) {
          throw ConfigError(where + section + "." + key + ": " + e.what());
        }
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
  }
  config.validate();
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

std::string RunConfig::serialize() const {
  std::string out, section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      section = f.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(*this) + "\n";
  }
  return out;
}

void RunConfig::set_seed(std::uint64_t seed) {
  train.seed = seed;
  data.seed = seed;
}

void RunConfig::validate() const {
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  train.validate();
  data.validate();
  if (train.batch.fixed_len < model.min_samples())
    throw ConfigError("train: fixed_len " + std::to_string(train.batch.fixed_len) + " is below the model minimum of " +
                      std::to_string(model.min_samples()) + " samples");
  if (eval.durations.empty()) throw ConfigError("eval: durations must not be empty");
  for (double l : eval.lengths)
    if (!(l > 0)) throw ConfigError("eval: lengths must be positive");
  if (!(eval.dcf.p_target > 0 && eval.dcf.p_target < 1)) throw ConfigError("eval: p_target must lie in (0, 1)");
  if (!(eval.dcf.c_miss > 0 && eval.dcf.c_fa > 0)) throw ConfigError("eval: costs must be positive");
}

RunConfig RunConfig::desk() {
  RunConfig c;
  c.model = ModelConfig::desk();
  c.train.batch.speakers_per_batch = 8;
  // 2 x 3^7 samples: six frames reach the last stage.
  c.train.batch.fixed_len = 4374;
  c.train.batch.random_len_min = 2000;
  c.train.batch.random_len_max = 4374;
  c.train.epochs = 5;
  // About three passes over the 1000-utterance corpus per epoch.
  c.train.steps_per_epoch = 189;
  c.train.optimizer.second_moment_correction = true;
  return c;
}

}  // namespace rawnext
