#include "vib/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

extern char** environ;

namespace vib {

namespace {

void check_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError(where + ": unknown field '" + k + "'");
}

template <class T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::filesystem::path path_field(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  std::string s;
  read(j, key, s, where);
  return s;
}

}  // namespace

void DataConfig::validate() const {
  const int sources = idx.has_value() + csv.has_value() + synth.has_value();
  if (sources != 1) throw ConfigError("data: exactly one of idx, csv, synth must be given");
  auto exists = [](const std::filesystem::path& p, const char* what) {
    if (!std::filesystem::exists(p)) throw IoError(std::string("data: ") + what + " not found: " + p.string());
  };
  if (idx) {
    exists(idx->train_images, "train_images");
    exists(idx->train_labels, "train_labels");
    exists(idx->test_images, "test_images");
    exists(idx->test_labels, "test_labels");
  }
  if (csv) {
    exists(csv->train, "train csv");
    exists(csv->test, "test csv");
  }
  if (synth && (synth->classes < 2 || synth->dim < 1 || synth->train_per_class < 1 || synth->test_per_class < 1))
    throw ConfigError("data.synth: needs classes >= 2, dim >= 1 and non-empty splits");
}

void ExperimentConfig::validate() const {
  model.validate();
  objective.validate(model);
  train.validate();
  attack.attack.validate();
  if (embed2d.grid < 2 || !(embed2d.extent > 0.0)) throw ConfigError("embed2d: grid >= 2 and extent > 0 required");
  if (!(gradcheck.tolerance > 0.0)) throw ConfigError("gradcheck.tolerance must be > 0");
}

void apply_env_overrides(Json& j, const std::vector<std::pair<std::string, std::string>>& env) {
  for (const auto& [name, value] : env) {
    if (name.rfind("APP_", 0) != 0 || name.size() == 4) continue;
    std::string rest = name.substr(4);
    std::transform(rest.begin(), rest.end(), rest.begin(), [](unsigned char c) { return std::tolower(c); });
    Json* node = &j;
    std::size_t pos = 0;
    for (;;) {
      const std::size_t cut = rest.find("__", pos);
      const std::string key = rest.substr(pos, cut == std::string::npos ? std::string::npos : cut - pos);
      if (key.empty()) throw ConfigError("bad override name " + name);
      if (cut == std::string::npos) {
        Json parsed = Json::parse(value, nullptr, false);
        (*node)[key] = parsed.is_discarded() ? Json(value) : parsed;
        break;
      }
      node = &(*node)[key];
      if (!node->is_object() && !node->is_null()) throw ConfigError("override " + name + " descends into a scalar");
      pos = cut + 2;
    }
  }
}

std::vector<std::pair<std::string, std::string>> app_environment() {
  std::vector<std::pair<std::string, std::string>> out;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv = *e;
    const auto eq = kv.find('=');
    if (eq != std::string::npos && kv.rfind("APP_", 0) == 0) out.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Json to_json(const ModelSpec& s) {
  return {{"input_dim", s.input_dim},     {"hidden", s.hidden},
          {"K", s.K},                     {"stochastic", s.stochastic},
          {"mode", std::string(to_string(s.mode))}, {"sigma_bias", s.sigma_bias},
          {"offdiag_scale", s.offdiag_scale}, {"classes", s.classes},
          {"reconstruct", s.reconstruct}, {"decoder_hidden", s.decoder_hidden}};
}

ModelSpec model_spec_from_json(const Json& j) {
  const std::string w = "model";
  check_keys(j, w, {"input_dim", "hidden", "K", "stochastic", "mode", "sigma_bias", "offdiag_scale", "classes",
                    "reconstruct", "decoder_hidden"});
  ModelSpec s;
  read(j, "input_dim", s.input_dim, w);
  read(j, "hidden", s.hidden, w);
  read(j, "K", s.K, w);
  read(j, "stochastic", s.stochastic, w);
  std::string mode = std::string(to_string(s.mode));
  read(j, "mode", mode, w);
  s.mode = parse_covariance_mode(mode);
  read(j, "sigma_bias", s.sigma_bias, w);
  read(j, "offdiag_scale", s.offdiag_scale, w);
  read(j, "classes", s.classes, w);
  read(j, "reconstruct", s.reconstruct, w);
  read(j, "decoder_hidden", s.decoder_hidden, w);
  return s;
}

Json to_json(const ObjectiveConfig& o) {
  return {{"kind", std::string(to_string(o.kind))},
          {"beta", o.vib.beta},
          {"train_samples", o.vib.train_samples},
          {"eval_samples", o.vib.eval_samples},
          {"dropout_rate", o.dropout_rate},
          {"confidence_beta", o.confidence_beta},
          {"label_smoothing", o.label_smoothing}};
}

ObjectiveConfig objective_from_json(const Json& j) {
  const std::string w = "objective";
  check_keys(j, w, {"kind", "beta", "train_samples", "eval_samples", "dropout_rate", "confidence_beta",
                    "label_smoothing"});
  ObjectiveConfig o;
  std::string kind = std::string(to_string(o.kind));
  read(j, "kind", kind, w);
  o.kind = parse_objective_kind(kind);
  read(j, "beta", o.vib.beta, w);
  read(j, "train_samples", o.vib.train_samples, w);
  read(j, "eval_samples", o.vib.eval_samples, w);
  read(j, "dropout_rate", o.dropout_rate, w);
  read(j, "confidence_beta", o.confidence_beta, w);
  read(j, "label_smoothing", o.label_smoothing, w);
  if (o.kind == ObjectiveKind::dropout && !j.contains("dropout_rate"))
    throw ConfigError("objective: dropout needs 'dropout_rate'");
  if (o.kind == ObjectiveKind::confidence_penalty && !j.contains("confidence_beta"))
    throw ConfigError("objective: confidence_penalty needs 'confidence_beta'");
  if (o.kind == ObjectiveKind::label_smoothing && !j.contains("label_smoothing"))
    throw ConfigError("objective: label_smoothing needs 'label_smoothing'");
  return o;
}

Json to_json(const TrainConfig& t) {
  return {{"lr0", t.lr0},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"adam_eps", t.adam_eps},
          {"decay_factor", t.decay_factor},
          {"decay_every_epochs", t.decay_every_epochs},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"ema_decay", t.ema_decay},
          {"seed", t.seed}};
}

TrainConfig train_config_from_json(const Json& j) {
  const std::string w = "train";
  check_keys(j, w, {"lr0", "adam_beta1", "adam_beta2", "adam_eps", "decay_factor", "decay_every_epochs", "epochs",
                    "batch_size", "ema_decay", "seed"});
  TrainConfig t;
  read(j, "lr0", t.lr0, w);
  read(j, "adam_beta1", t.adam_beta1, w);
  read(j, "adam_beta2", t.adam_beta2, w);
  read(j, "adam_eps", t.adam_eps, w);
  read(j, "decay_factor", t.decay_factor, w);
  read(j, "decay_every_epochs", t.decay_every_epochs, w);
  read(j, "epochs", t.epochs, w);
  read(j, "batch_size", t.batch_size, w);
  read(j, "ema_decay", t.ema_decay, w);
  read(j, "seed", t.seed, w);
  return t;
}

attack::AttackConfig attack_config_from_json(const Json& j) {
  const std::string w = "attack";
  attack::AttackConfig a;
  std::string kind = std::string(to_string(a.kind));
  read(j, "kind", kind, w);
  a.kind = attack::parse_kind(kind);
  read(j, "epsilon", a.epsilon, w);
  read(j, "targeted", a.targeted, w);
  if (j.contains("target_label") && !j.at("target_label").is_null()) {
    int t = 0;
    read(j, "target_label", t, w);
    a.target_label = t;
  }
  read(j, "max_iterations", a.max_iterations, w);
  read(j, "c_search_steps", a.c_search_steps, w);
  read(j, "c_init", a.c_init, w);
  read(j, "c_max", a.c_max, w);
  read(j, "inner_lr", a.inner_lr, w);
  read(j, "kappa", a.kappa, w);
  read(j, "eval_samples", a.eval_samples, w);
  read(j, "mean_mode", a.mean_mode, w);
  read(j, "early_abort", a.early_abort, w);
  read(j, "l0_threshold", a.l0_threshold, w);
  return a;
}

ExperimentConfig parse_config(const Json& j) {
  check_keys(j, "config", {"data", "model", "objective", "train", "attack", "betas", "embed2d", "gradcheck",
                           "checkpoint", "out", "seed"});
  ExperimentConfig c;

  const Json data = j.value("data", Json::object());
  check_keys(data, "data", {"idx", "csv", "synth", "train_limit", "test_limit"});
  if (data.contains("idx")) {
    const Json& s = data["idx"];
    check_keys(s, "data.idx", {"train_images", "train_labels", "test_images", "test_labels"});
    c.data.idx = IdxSource{path_field(s, "train_images", "data.idx"), path_field(s, "train_labels", "data.idx"),
                           path_field(s, "test_images", "data.idx"), path_field(s, "test_labels", "data.idx")};
  }
  if (data.contains("csv")) {
    const Json& s = data["csv"];
    check_keys(s, "data.csv", {"train", "test", "dim"});
    CsvSource src{path_field(s, "train", "data.csv"), path_field(s, "test", "data.csv"), 0};
    read(s, "dim", src.dim, "data.csv");
    c.data.csv = src;
  }
  if (data.contains("synth")) {
    const Json& s = data["synth"];
    check_keys(s, "data.synth", {"classes", "dim", "train_per_class", "test_per_class", "separation"});
    SynthSource src;
    read(s, "classes", src.classes, "data.synth");
    read(s, "dim", src.dim, "data.synth");
    read(s, "train_per_class", src.train_per_class, "data.synth");
    read(s, "test_per_class", src.test_per_class, "data.synth");
    read(s, "separation", src.separation, "data.synth");
    c.data.synth = src;
  }
  read(data, "train_limit", c.data.train_limit, "data");
  read(data, "test_limit", c.data.test_limit, "data");

  if (j.contains("model")) c.model = model_spec_from_json(j["model"]);
  if (j.contains("objective")) c.objective = objective_from_json(j["objective"]);
  c.objective.vib.K = c.model.K;
  c.objective.vib.mode = c.model.mode;
  c.objective.vib.sigma_bias = c.model.sigma_bias;
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);

  if (j.contains("attack")) {
    Json a = j["attack"];
    check_keys(a, "attack", {"kind", "epsilon", "targeted", "target_label", "max_iterations", "c_search_steps",
                             "c_init", "c_max", "inner_lr", "kappa", "eval_samples", "mean_mode", "early_abort",
                             "l0_threshold", "n", "source_label", "baseline_checkpoint"});
    c.attack.attack = attack_config_from_json(a);
    read(a, "n", c.attack.n, "attack");
    if (a.contains("source_label") && !a["source_label"].is_null()) c.attack.source_label = a["source_label"].get<int>();
    if (a.contains("baseline_checkpoint")) c.attack.baseline_checkpoint = a["baseline_checkpoint"].get<std::string>();
  }
  read(j, "betas", c.betas, "config");
  if (j.contains("embed2d")) {
    check_keys(j["embed2d"], "embed2d", {"n", "grid", "extent"});
    read(j["embed2d"], "n", c.embed2d.n, "embed2d");
    read(j["embed2d"], "grid", c.embed2d.grid, "embed2d");
    read(j["embed2d"], "extent", c.embed2d.extent, "embed2d");
  }
  if (j.contains("gradcheck")) {
    check_keys(j["gradcheck"], "gradcheck", {"tolerance", "sign_flip_fault"});
    read(j["gradcheck"], "tolerance", c.gradcheck.tolerance, "gradcheck");
    read(j["gradcheck"], "sign_flip_fault", c.gradcheck.sign_flip_fault, "gradcheck");
  }
  if (j.contains("checkpoint")) c.checkpoint = j["checkpoint"].get<std::string>();
  if (j.contains("out")) c.out = j["out"].get<std::string>();
  read(j, "seed", c.seed, "config");
  c.train.seed = c.seed;
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, bool use_env) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError("config " + path.string() + " is not valid JSON");
  if (use_env) apply_env_overrides(j, app_environment());
  // Relative dataset paths resolve against the config file's directory.
  auto base = path.parent_path();
  ExperimentConfig c = parse_config(j);
  auto fix = [&](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative() && !std::filesystem::exists(p)) p = base / p;
  };
  if (c.data.idx) {
    fix(c.data.idx->train_images);
    fix(c.data.idx->train_labels);
    fix(c.data.idx->test_images);
    fix(c.data.idx->test_labels);
  }
  if (c.data.csv) {
    fix(c.data.csv->train);
    fix(c.data.csv->test);
  }
  fix(c.checkpoint);
  fix(c.attack.baseline_checkpoint);
  return c;
}

Splits load_data(const DataConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Splits s;
  if (cfg.idx) {
    s.train = scale_to_pm1(load_idx(cfg.idx->train_images, cfg.idx->train_labels));
    s.test = scale_to_pm1(load_idx(cfg.idx->test_images, cfg.idx->test_labels));
  } else if (cfg.csv) {
    s.train = load_feature_csv(cfg.csv->train, cfg.csv->dim);
    s.test = load_feature_csv(cfg.csv->test, cfg.csv->dim ? cfg.csv->dim : s.train.dim());
    s.test.classes = s.train.classes = std::max(s.train.classes, s.test.classes);
  } else {
    const auto& p = *cfg.synth;
    Rng root = Rng(seed).split(0x5eed);
    Rng a = root.split(1), b = root.split(2);
    s.train = synth_blobs(a, p.classes, p.train_per_class, p.dim, p.separation);
    s.test = synth_blobs(b, p.classes, p.test_per_class, p.dim, p.separation);
  }
  s.train.split = "train";
  s.test.split = "test";
  if (cfg.train_limit && cfg.train_limit < s.train.size()) s.train = s.train.head(cfg.train_limit);
  if (cfg.test_limit && cfg.test_limit < s.test.size()) s.test = s.test.head(cfg.test_limit);
  if (s.train.dim() != s.test.dim()) throw FormatError("train and test inputs have different widths");
  return s;
}

}  // namespace vib
