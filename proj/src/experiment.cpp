#include "vib/experiment.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "vib/checkpoint.hpp"
#include "vib/nn.hpp"

namespace vib::cli {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

namespace {

class CsvFile {
 public:
  CsvFile(const std::filesystem::path& path, const std::string& schema, const std::vector<std::string>& cols)
      : path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary);
    if (!out_) throw IoError("cannot write " + path.string());
    out_ << "# schema: " << schema << " v" << kSchemaVersion << '\n';
    row(cols);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
    if (!out_) throw IoError("failed writing " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

std::string str(std::size_t v) { return std::to_string(v); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

Model load_model(const std::filesystem::path& path, const Splits& data, Checkpoint* ck_out = nullptr) {
  if (path.empty()) throw ConfigError("this command needs 'checkpoint' in the config");
  Checkpoint ck = load_checkpoint(path);
  if (ck.spec.input_dim != data.test.dim())
    throw ConfigError("checkpoint " + path.string() + " expects inputs of width " + std::to_string(ck.spec.input_dim) +
                      " but the dataset has " + std::to_string(data.test.dim()));
  if (!ck.spec.reconstruct && data.test.classes > ck.spec.classes)
    throw ConfigError("checkpoint " + path.string() + " predicts fewer classes than the dataset has");
  Model m = ck.state.ema_model();
  if (ck_out) *ck_out = std::move(ck);
  return m;
}

}  // namespace

std::vector<GradcheckRow> run_gradchecks(double tolerance, bool sign_flip_fault, std::uint64_t seed) {
  struct Case {
    std::string name;
    ObjectiveKind kind;
    double beta = 0.0;
    CovarianceMode mode = CovarianceMode::diag;
    std::size_t train_samples = 1;
    double param = 0.0;
  };
  const std::vector<Case> cases = {
      {"vib beta=0", ObjectiveKind::vib, 0.0},
      {"vib beta=1e-3", ObjectiveKind::vib, 1e-3},
      {"vib beta=1", ObjectiveKind::vib, 1.0},
      {"vib beta=1e-3 samples=3", ObjectiveKind::vib, 1e-3, CovarianceMode::diag, 3},
      {"vib fullcov2d beta=1e-2", ObjectiveKind::vib, 1e-2, CovarianceMode::fullcov2d},
      {"deterministic", ObjectiveKind::deterministic},
      {"dropout rate=0.3", ObjectiveKind::dropout, 0.0, CovarianceMode::diag, 1, 0.3},
      {"confidence_penalty beta=0.5", ObjectiveKind::confidence_penalty, 0.0, CovarianceMode::diag, 1, 0.5},
      {"label_smoothing eps=0.1", ObjectiveKind::label_smoothing, 0.0, CovarianceMode::diag, 1, 0.1},
      {"unsup_vib beta=0.5", ObjectiveKind::unsup_vib, 0.5},
      {"unsup_vib beta=1", ObjectiveKind::unsup_vib, 1.0},
  };
  std::vector<GradcheckRow> rows;
  const Rng root(seed);
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const Case& c = cases[ci];
    Rng shape = root.split(ci, 0);
    ModelSpec spec;
    spec.input_dim = 3 + shape.below(4);
    spec.hidden = {3 + shape.below(4)};
    spec.mode = c.mode;
    spec.K = c.mode == CovarianceMode::fullcov2d ? 2 : 2 + shape.below(3);
    spec.classes = 3 + shape.below(2);
    spec.sigma_bias = -1.0;
    const bool vib_like = c.kind == ObjectiveKind::vib || c.kind == ObjectiveKind::unsup_vib;
    spec.stochastic = vib_like;
    spec.reconstruct = c.kind == ObjectiveKind::unsup_vib;
    if (spec.reconstruct) spec.decoder_hidden = {3 + shape.below(3)};
    const std::size_t batch = 3 + shape.below(3);

    ObjectiveConfig obj;
    obj.kind = c.kind;
    obj.vib.beta = c.beta;
    obj.vib.K = spec.K;
    obj.vib.mode = spec.mode;
    obj.vib.sigma_bias = spec.sigma_bias;
    obj.vib.train_samples = c.train_samples;
    obj.dropout_rate = c.param;
    obj.confidence_beta = c.param;
    obj.label_smoothing = c.param;
    obj.validate(spec);

    Rng init = root.split(ci, 1);
    Model model = Model::init(spec, init);
    Rng data = root.split(ci, 2);
    Matrix x(batch, spec.input_dim);
    for (double& v : x.values()) v = 2.0 * data.uniform() - 1.0;
    std::vector<int> y(batch);
    for (int& v : y) v = static_cast<int>(data.below(spec.classes));
    // Xavier biases are zero; random ones exercise the bias gradients.
    std::vector<double> theta = model.params();
    for (double& v : theta) v += 0.1 * data.normal();
    const Rng noise = root.split(ci, 3);

    const nn::LossWithGrad loss = [&](std::span<const double> th, std::vector<double>* grad) {
      model.set_params(th);
      Rng r = noise;
      const LossBreakdown lb = objective_loss(model, x, y, obj, r);
      if (grad) {
        *grad = lb.grads;
        if (sign_flip_fault)
          for (double& g : *grad) g = -g;
      }
      return lb.total;
    };
    const auto rep = nn::grad_check(loss, theta, tolerance);
    rows.push_back({c.name, rep.max_rel_error, rep.num_params, rep.passed});
  }
  return rows;
}

int cmd_gradcheck(const ExperimentConfig& cfg, std::ostream& log) {
  const auto rows = run_gradchecks(cfg.gradcheck.tolerance, cfg.gradcheck.sign_flip_fault, cfg.seed);
  CsvFile csv(cfg.out / "gradcheck.csv", "gradcheck", {"objective", "num_params", "max_rel_error", "passed"});
  bool all = true;
  for (const auto& r : rows) {
    csv.row({r.name, str(r.num_params), fmt(r.max_rel_error), r.passed ? "1" : "0"});
    log << (r.passed ? "pass " : "FAIL ") << r.name << "  max_rel_error=" << fmt(r.max_rel_error) << '\n';
    all = all && r.passed;
  }
  log << (all ? "gradcheck: all passed" : "gradcheck: FAILED") << " (tolerance " << fmt(cfg.gradcheck.tolerance)
      << ")\n";
  return all ? 0 : 1;
}

int cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const Splits data = load_data(cfg.data, cfg.seed);
  CsvFile csv(cfg.out / "metrics.csv", "metrics",
              {"epoch", "lr", "train_err_1shot", "test_err_1shot", "train_err_mc", "test_err_mc", "mean_mode_err",
               "mi_zx_bits", "mi_zy_train_bits", "mi_zy_test_bits", "xent_nats", "kl_nats"});
  const FitResult res = fit(cfg.model, data.train, data.test, cfg.objective, cfg.train, [&](const MetricsRecord& m) {
    csv.row({str(m.epoch), fmt(m.lr), fmt(m.train_err_1shot), fmt(m.test_err_1shot), fmt(m.train_err_mc),
             fmt(m.test_err_mc), fmt(m.mean_mode_err), fmt(m.mi_zx_bits), fmt(m.mi_zy_train_bits),
             fmt(m.mi_zy_test_bits), fmt(m.xent_nats), fmt(m.kl_nats)});
    log << "epoch " << m.epoch << " test_err_mc=" << fmt(m.test_err_mc) << " mi_zx_bits=" << fmt(m.mi_zx_bits)
        << '\n';
  });
  save_checkpoint(cfg.out / "model.ckpt", {cfg.model, cfg.objective, cfg.train, res.state});
  if (res.diverged) {
    log << "training diverged: " << res.message << " (state rolled back to epoch " << res.state.epochs_done << ")\n";
    return 3;
  }
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, std::ostream& log) {
  const Splits data = load_data(cfg.data, cfg.seed);
  Checkpoint ck;
  const Model model = load_model(cfg.checkpoint, data, &ck);
  CsvFile csv(cfg.out / "eval.csv", "eval",
              {"split", "err_1shot", "err_mc", "err_mean", "mi_zx_bits", "mi_zy_bits", "xent_nats"});
  for (const Dataset* ds : {&data.train, &data.test}) {
    const auto s = evaluate_all(model, *ds, ck.objective.vib.eval_samples, eval_noise(cfg.seed, ds->split));
    csv.row({ds->split, fmt(s.err_1shot), fmt(s.err_mc), fmt(s.err_mean), fmt(s.mi_zx_bits), fmt(s.mi_zy_bits),
             fmt(s.xent_nats)});
    log << ds->split << ": err_mc=" << fmt(s.err_mc) << " mi_zx_bits=" << fmt(s.mi_zx_bits) << '\n';
  }
  return 0;
}

int cmd_attack(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.attack.attack.validate();
  const Splits data = load_data(cfg.data, cfg.seed);
  const Model model = load_model(cfg.checkpoint, data);
  std::vector<std::size_t> idx;
  if (cfg.attack.n > 0) {
    if (cfg.attack.source_label) {
      idx = data.test.first_with_label(*cfg.attack.source_label, cfg.attack.n);
    } else {
      idx.resize(std::min(cfg.attack.n, data.test.size()));
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    }
  }
  const auto& ac = cfg.attack.attack;
  const auto results = attack::run(model, data.test, idx, ac, cfg.seed);
  write_text(cfg.out / "attack.jsonl", attack::to_jsonl(results));

  std::vector<attack::Summary> rows;
  if (!cfg.attack.baseline_checkpoint.empty()) {
    const Model base = load_model(cfg.attack.baseline_checkpoint, data);
    const auto bres = attack::run(base, data.test, idx, ac, cfg.seed);
    rows.push_back(attack::summarize("baseline", base, data.test, idx, bres, ac, cfg.seed));
  }
  rows.push_back(attack::summarize("model", model, data.test, idx, results, ac, cfg.seed));
  for (auto& r : rows) attack::set_relative(r, rows.front());

  CsvFile csv(cfg.out / "attack_summary.csv", "attack-summary",
              {"name", "n", "clean_accuracy", "adv_accuracy", "success_rate", "n_success", "mean_l0_all",
               "mean_l2_all", "mean_linf_all", "mean_l0_success", "mean_l2_success", "mean_linf_success", "rel_l0",
               "rel_l2", "rel_linf"});
  for (const auto& s : rows) {
    csv.row({s.name, str(s.n), fmt(s.clean_accuracy), fmt(s.adv_accuracy), fmt(s.success_rate), str(s.n_success),
             fmt(s.mean_l0_all), fmt(s.mean_l2_all), fmt(s.mean_linf_all), fmt(s.mean_l0_success),
             fmt(s.mean_l2_success), fmt(s.mean_linf_success), fmt(s.rel_l0), fmt(s.rel_l2), fmt(s.rel_linf)});
    log << s.name << ": n=" << s.n << " success_rate=" << fmt(s.success_rate) << " adv_accuracy="
        << fmt(s.adv_accuracy) << " mean_l2_success=" << fmt(s.mean_l2_success) << '\n';
  }
  return 0;
}

int cmd_ibcurve(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.betas.size() < 2) throw ConfigError("ibcurve needs at least two entries in 'betas'");
  if (cfg.objective.kind != ObjectiveKind::vib) throw ConfigError("ibcurve needs objective.kind = vib");
  cfg.validate();
  const Splits data = load_data(cfg.data, cfg.seed);
  CsvFile csv(cfg.out / "ibcurve.csv", "ibcurve", {"beta", "split", "mi_zx_bits", "mi_zy_bits", "err_mc"});
  for (double beta : cfg.betas) {
    ObjectiveConfig obj = cfg.objective;
    obj.vib.beta = beta;
    const FitResult res = fit(cfg.model, data.train, data.test, obj, cfg.train);
    const Model ema = res.state.ema_model();
    for (const Dataset* ds : {&data.train, &data.test}) {
      const auto s = evaluate_all(ema, *ds, obj.vib.eval_samples, eval_noise(cfg.seed, ds->split));
      csv.row({fmt(beta), ds->split, fmt(s.mi_zx_bits), fmt(s.mi_zy_bits), fmt(s.err_mc)});
    }
    log << "beta " << fmt(beta) << " done" << (res.diverged ? " (diverged)" : "") << '\n';
  }
  return 0;
}

int cmd_embed2d(const ExperimentConfig& cfg, std::ostream& log) {
  const Splits data = load_data(cfg.data, cfg.seed);
  const Model model = load_model(cfg.checkpoint, data);
  if (model.spec.K != 2 || !model.spec.stochastic || model.spec.reconstruct)
    throw ConfigError("embed2d needs a stochastic K=2 classifier checkpoint (K=" + std::to_string(model.spec.K) + ")");
  const Dataset ds = data.test.head(cfg.embed2d.n);
  CsvFile emb(cfg.out / "embeddings.csv", "embeddings", {"index", "label", "mu1", "mu2", "L11", "L21", "L22"});
  if (ds.size() > 0) {
    const EncodedBatch enc = encode_batch(model, ds.inputs);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const Matrix L = enc.codes[i].cholesky();
      emb.row({str(i), std::to_string(ds.labels[i]), fmt(enc.codes[i].mean[0]), fmt(enc.codes[i].mean[1]),
               fmt(L(0, 0)), fmt(L(1, 0)), fmt(L(1, 1))});
    }
  }
  CsvFile grid(cfg.out / "entropy_grid.csv", "entropy-grid", {"z1", "z2", "entropy_nats"});
  const std::size_t g = cfg.embed2d.grid;
  const double e = cfg.embed2d.extent;
  Matrix z(g * g, 2);
  for (std::size_t a = 0; a < g; ++a)
    for (std::size_t b = 0; b < g; ++b) {
      z(a * g + b, 0) = -e + 2.0 * e * static_cast<double>(a) / static_cast<double>(g - 1);
      z(a * g + b, 1) = -e + 2.0 * e * static_cast<double>(b) / static_cast<double>(g - 1);
    }
  const Matrix logits = nn::mlp_forward(model.decoder, z).output;
  for (std::size_t r = 0; r < z.rows(); ++r)
    grid.row({fmt(z(r, 0)), fmt(z(r, 1)), fmt(nn::entropy(nn::softmax(logits.row(r))))});
  log << "wrote " << ds.size() << " embeddings and a " << g << "x" << g << " entropy grid\n";
  return 0;
}

int dispatch(const std::string& command, const ExperimentConfig& cfg, std::ostream& log) {
  if (command == "train") return cmd_train(cfg, log);
  if (command == "eval") return cmd_eval(cfg, log);
  if (command == "attack") return cmd_attack(cfg, log);
  if (command == "ibcurve") return cmd_ibcurve(cfg, log);
  if (command == "embed2d") return cmd_embed2d(cfg, log);
  if (command == "gradcheck") return cmd_gradcheck(cfg, log);
  throw ConfigError("unknown command '" + command + "'");
}

}  // namespace vib::cli
