#include "vib/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "vib/nn.hpp"

namespace vib::attack {

std::string_view to_string(Kind k) { return k == Kind::fgs ? "fgs" : "l2opt"; }

Kind parse_kind(std::string_view s) {
  if (s == "fgs") return Kind::fgs;
  if (s == "l2opt") return Kind::l2opt;
  throw ConfigError("unknown attack kind '" + std::string(s) + "' (expected fgs or l2opt)");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ConfigError("attack epsilon must be >= 0");
  if (!(c_init > 0.0) || !(c_max >= c_init)) throw ConfigError("attack needs 0 < c_init <= c_max");
  if (!(inner_lr > 0.0)) throw ConfigError("attack inner_lr must be > 0");
  if (!(kappa >= 0.0)) throw ConfigError("attack kappa must be >= 0");
  if (eval_samples < 1) throw ConfigError("attack eval_samples must be >= 1");
  if (target_label && *target_label < 0) throw ConfigError("attack target_label must be >= 0");
}

Norms perturb_norms(std::span<const double> x, std::span<const double> x_adv, double l0_threshold) {
  require(x.size() == x_adv.size(), "perturb_norms: length mismatch");
  Norms n;
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(x_adv[i] - x[i]);
    n.l0 += d > l0_threshold;
    sq += d * d;
    n.linf = std::max(n.linf, d);
  }
  n.l2 = std::sqrt(sq);
  return n;
}

Matrix draw_eps(const Model& model, std::size_t samples, bool mean_mode, Rng& rng) {
  if (!model.spec.stochastic || mean_mode) return Matrix(0, model.spec.K);
  return sample_standard_normal(rng, samples, model.spec.K);
}

namespace {

Matrix as_row(std::span<const double> x) { return Matrix(1, x.size(), std::vector<double>(x.begin(), x.end())); }

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

// Decoder inputs: the deterministic code, the mean (no draws) or one row per draw.
Matrix decoder_inputs(const Model& model, const EncodedBatch& enc, const Matrix& eps) {
  if (!model.spec.stochastic) return enc.trace.output;
  const GaussianCode& code = enc.codes[0];
  if (eps.rows() == 0) return as_row(code.mean);
  Matrix z(eps.rows(), model.spec.K);
  for (std::size_t s = 0; s < eps.rows(); ++s) {
    const auto zs = sample(code, eps.row(s));
    std::copy(zs.begin(), zs.end(), z.row(s).begin());
  }
  return z;
}

struct Forward {
  EncodedBatch enc;
  nn::MlpTrace dec;
  Matrix log_p;               // per draw
  std::vector<double> log_pbar;
};

Forward forward(const Model& model, std::span<const double> x, const Matrix& eps) {
  require(!model.spec.reconstruct, "attack: model is not a classifier");
  require(x.size() == model.spec.input_dim, "attack: input width does not match the model");
  Forward f;
  f.enc = encode_batch(model, as_row(x));
  f.dec = nn::mlp_forward(model.decoder, decoder_inputs(model, f.enc, eps));
  const std::size_t s = f.dec.output.rows();
  const std::size_t c = model.spec.classes;
  f.log_p = Matrix(s, c);
  for (std::size_t r = 0; r < s; ++r) {
    const auto lp = nn::log_softmax(f.dec.output.row(r));
    std::copy(lp.begin(), lp.end(), f.log_p.row(r).begin());
  }
  f.log_pbar.resize(c);
  std::vector<double> col(s);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t r = 0; r < s; ++r) col[r] = f.log_p(r, j);
    f.log_pbar[j] = log_sum_exp(col) - std::log(static_cast<double>(s));
  }
  return f;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

std::vector<double> log_mean_probs(const Model& model, std::span<const double> x, const Matrix& eps) {
  return forward(model, x, eps).log_pbar;
}

namespace {

std::vector<double> backward(const Model& model, const Forward& f, std::span<const double> upstream,
                             const Matrix& eps) {
  const std::size_t s = f.log_p.rows();
  const std::size_t c = model.spec.classes;
  require(upstream.size() == c, "model_gradient_x: upstream width must equal the class count");

  // d log pbar_j / d logit_s,k = w_sj (delta_jk - p_s,k), w_sj = p_s,j / (S pbar_j).
  Matrix dlogits(s, c);
  for (std::size_t r = 0; r < s; ++r) {
    double total = 0.0;
    std::vector<double> b(c);
    for (std::size_t j = 0; j < c; ++j) {
      b[j] = upstream[j] * std::exp(f.log_p(r, j) - f.log_pbar[j] - std::log(static_cast<double>(s)));
      total += b[j];
    }
    for (std::size_t k = 0; k < c; ++k) dlogits(r, k) = b[k] - std::exp(f.log_p(r, k)) * total;
  }
  const Matrix dz = nn::mlp_backward_input(model.decoder, f.dec, dlogits);

  Matrix draw;
  if (!model.spec.stochastic) {
    draw = dz;
  } else {
    const GaussianCode& code = f.enc.codes[0];
    CodeGrad g(code);
    const std::vector<double> zero(model.spec.K, 0.0);
    for (std::size_t r = 0; r < s; ++r)
      accumulate_sample_grad(code, eps.rows() == 0 ? std::span<const double>(zero) : eps.row(r), dz.row(r), g);
    draw = as_row(head_raw_grad(f.enc.raw(0), model.spec.head(), g));
  }
  const Matrix dx = nn::mlp_backward_input(model.encoder, f.enc.trace, draw);
  return {dx.row(0).begin(), dx.row(0).end()};
}

}  // namespace

InputGrad model_gradient_x(const Model& model, std::span<const double> x, std::span<const double> upstream,
                           const Matrix& eps) {
  Forward f = forward(model, x, eps);
  InputGrad out;
  out.grad = backward(model, f, upstream, eps);
  out.log_probs = std::move(f.log_pbar);
  return out;
}

InputGrad nll_gradient_x(const Model& model, std::span<const double> x, int label, const Matrix& eps) {
  std::vector<double> up(model.spec.classes, 0.0);
  up.at(static_cast<std::size_t>(label)) = -1.0;
  return model_gradient_x(model, x, up, eps);
}

ExampleStreams example_streams(std::uint64_t seed, std::size_t index) {
  const Rng base = Rng(seed).split(index);
  return {base.split(1), base.split(2), base.split(3)};
}

int fresh_prediction(const Model& model, std::span<const double> x, const AttackConfig& cfg, const Rng& eval) {
  Rng rng = eval;
  const Matrix eps = draw_eps(model, cfg.eval_samples, cfg.mean_mode, rng);
  return static_cast<int>(argmax(log_mean_probs(model, x, eps)));
}

int choose_target(const AttackConfig& cfg, int y, std::size_t classes, const ExampleStreams& streams) {
  if (!cfg.targeted) return -1;
  if (cfg.target_label) {
    if (static_cast<std::size_t>(*cfg.target_label) >= classes)
      throw ConfigError("attack target_label exceeds the class count");
    return *cfg.target_label;
  }
  require(classes >= 2, "attack: a random target needs at least two classes");
  Rng rng = streams.target;
  return static_cast<int>((static_cast<std::size_t>(y) + 1 + rng.below(classes - 1)) % classes);
}

namespace {

AttackResult finish(const Model& model, std::span<const double> x, int y, int target, std::vector<double> x_adv,
                    const AttackConfig& cfg, const ExampleStreams& streams) {
  AttackResult r;
  r.true_label = y;
  r.target_label = target;
  r.pred = fresh_prediction(model, x_adv, cfg, streams.eval);
  r.success = target >= 0 ? r.pred == target : r.pred != y;
  const Norms n = perturb_norms(x, x_adv, cfg.l0_threshold);
  r.l0 = n.l0;
  r.l2 = n.l2;
  r.linf = n.linf;
  r.x_adv = std::move(x_adv);
  return r;
}

// Margin f before clamping at -kappa; negative means the attack goal holds.
double margin(std::span<const double> z, int y, int target, std::size_t* other) {
  const std::size_t anchor = static_cast<std::size_t>(target >= 0 ? target : y);
  std::size_t best = anchor == 0 ? 1 : 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (i != anchor && z[i] > z[best]) best = i;
  if (other) *other = best;
  return target >= 0 ? z[best] - z[anchor] : z[anchor] - z[best];
}

}  // namespace

AttackResult fgs(const Model& model, std::span<const double> x, int y_true, const AttackConfig& cfg,
                 const ExampleStreams& streams) {
  Rng rng = streams.attack;
  const Matrix eps = draw_eps(model, cfg.eval_samples, cfg.mean_mode, rng);
  const InputGrad g = nll_gradient_x(model, x, y_true, eps);
  std::vector<double> adv(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = g.grad[i] > 0.0 ? 1.0 : g.grad[i] < 0.0 ? -1.0 : 0.0;
    adv[i] = std::clamp(x[i] + cfg.epsilon * s, -1.0, 1.0);
  }
  return finish(model, x, y_true, -1, std::move(adv), cfg, streams);
}

AttackResult l2opt(const Model& model, std::span<const double> x, int y_true, const AttackConfig& cfg,
                   const ExampleStreams& streams) {
  const std::size_t d = x.size();
  const std::size_t classes = model.spec.classes;
  const int target = choose_target(cfg, y_true, classes, streams);
  if (target == y_true) throw ConfigError("l2opt: target label equals the true label");

  std::vector<double> w0(d);
  for (std::size_t i = 0; i < d; ++i) w0[i] = std::atanh(std::clamp(x[i], -1.0, 1.0) * (1.0 - 1e-9));

  std::vector<double> best_x(x.begin(), x.end());
  double best_l2sq = std::numeric_limits<double>::infinity();
  bool found = false;
  std::vector<double> closest(x.begin(), x.end());
  double closest_margin = std::numeric_limits<double>::infinity();

  Rng rng = streams.attack;
  double c = cfg.c_init, lo = 0.0, hi = cfg.c_max;
  bool have_hi = false;
  const std::size_t abort_every = std::max<std::size_t>(1, cfg.max_iterations / 10);
  const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;

  for (std::size_t step = 0; step < cfg.c_search_steps && cfg.max_iterations > 0; ++step) {
    std::vector<double> w = w0, m(d, 0.0), v(d, 0.0), xa(d);
    double prev = std::numeric_limits<double>::infinity();
    bool step_success = false;
    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
      double l2sq = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        xa[i] = std::tanh(w[i]);
        l2sq += (xa[i] - x[i]) * (xa[i] - x[i]);
      }
      const Matrix eps = draw_eps(model, cfg.eval_samples, cfg.mean_mode, rng);
      const Forward fw = forward(model, xa, eps);
      std::size_t other = 0;
      const double mg = margin(fw.log_pbar, y_true, target, &other);
      const double f = std::max(mg, -cfg.kappa);
      const double loss = l2sq + c * f;

      if (mg < -cfg.kappa) {
        step_success = true;
        if (l2sq < best_l2sq) {
          best_l2sq = l2sq;
          best_x = xa;
          found = true;
        }
      } else if (!found && (mg < closest_margin)) {
        closest_margin = mg;
        closest = xa;
      }
      if (cfg.early_abort && it % abort_every == 0) {
        if (loss > prev * 0.9999) break;
        prev = loss;
      }

      std::vector<double> gx(d, 0.0);
      if (mg > -cfg.kappa) {
        std::vector<double> up(classes, 0.0);
        const std::size_t anchor = static_cast<std::size_t>(target >= 0 ? target : y_true);
        up[other] = target >= 0 ? 1.0 : -1.0;
        up[anchor] = target >= 0 ? -1.0 : 1.0;
        gx = backward(model, fw, up, eps);
      }
      const double t = static_cast<double>(it + 1);
      const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
      for (std::size_t i = 0; i < d; ++i) {
        const double gi = (2.0 * (xa[i] - x[i]) + c * gx[i]) * (1.0 - xa[i] * xa[i]);
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        w[i] -= cfg.inner_lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + adam_eps);
      }
    }
    if (step_success) {
      hi = std::min(hi, c);
      have_hi = true;
      c = 0.5 * (lo + hi);
    } else {
      lo = std::max(lo, c);
      c = have_hi ? 0.5 * (lo + hi) : std::min(c * 10.0, cfg.c_max);
    }
  }
  return finish(model, x, y_true, target, found ? best_x : closest, cfg, streams);
}

std::vector<AttackResult> run(const Model& model, const Dataset& ds, std::span<const std::size_t> indices,
                              const AttackConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  require(ds.dim() == model.spec.input_dim, "attack: dataset width does not match the model");
  std::vector<AttackResult> out(indices.size());
  const long n = static_cast<long>(indices.size());
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic, 1)
  for (long k = 0; k < n; ++k) {
    try {
      const std::size_t i = indices[static_cast<std::size_t>(k)];
      const auto streams = example_streams(seed, i);
      const auto x = ds.inputs.row(i);
      const int y = ds.labels[i];
      AttackResult r = cfg.kind == Kind::fgs ? fgs(model, x, y, cfg, streams) : l2opt(model, x, y, cfg, streams);
      r.index = i;
      out[static_cast<std::size_t>(k)] = std::move(r);
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  return out;
}

Summary summarize(std::string name, const Model& model, const Dataset& ds, std::span<const std::size_t> indices,
                  std::span<const AttackResult> results, const AttackConfig& cfg, std::uint64_t seed) {
  require(indices.size() == results.size(), "summarize: indices/results length mismatch");
  Summary s;
  s.name = std::move(name);
  s.n = results.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  s.rel_l0 = s.rel_l2 = s.rel_linf = nan;
  if (s.n == 0) return s;
  std::size_t clean_ok = 0, adv_ok = 0;
  for (std::size_t k = 0; k < s.n; ++k) {
    const std::size_t i = indices[k];
    const auto& r = results[k];
    clean_ok += fresh_prediction(model, ds.inputs.row(i), cfg, example_streams(seed, i).eval) == ds.labels[i];
    adv_ok += r.pred == r.true_label;
    s.mean_l0_all += static_cast<double>(r.l0);
    s.mean_l2_all += r.l2;
    s.mean_linf_all += r.linf;
    if (r.success) {
      ++s.n_success;
      s.mean_l0_success += static_cast<double>(r.l0);
      s.mean_l2_success += r.l2;
      s.mean_linf_success += r.linf;
    }
  }
  const double n = static_cast<double>(s.n);
  s.clean_accuracy = static_cast<double>(clean_ok) / n;
  s.adv_accuracy = static_cast<double>(adv_ok) / n;
  s.success_rate = static_cast<double>(s.n_success) / n;
  s.mean_l0_all /= n;
  s.mean_l2_all /= n;
  s.mean_linf_all /= n;
  if (s.n_success > 0) {
    const double ns = static_cast<double>(s.n_success);
    s.mean_l0_success /= ns;
    s.mean_l2_success /= ns;
    s.mean_linf_success /= ns;
  } else {
    s.mean_l0_success = s.mean_l2_success = s.mean_linf_success = nan;
  }
  return s;
}

void set_relative(Summary& s, const Summary& b) {
  s.rel_l0 = s.mean_l0_success / b.mean_l0_success;
  s.rel_l2 = s.mean_l2_success / b.mean_l2_success;
  s.rel_linf = s.mean_linf_success / b.mean_linf_success;
}

std::vector<Summary> robustness_sweep(std::span<const NamedModel> models, const Dataset& ds,
                                      std::span<const std::size_t> indices, const AttackConfig& cfg,
                                      std::uint64_t seed) {
  std::vector<Summary> rows;
  for (const auto& nm : models) {
    const auto res = run(*nm.model, ds, indices, cfg, seed);
    rows.push_back(summarize(nm.name, *nm.model, ds, indices, res, cfg, seed));
  }
  for (auto& r : rows)
    if (!rows.empty()) set_relative(r, rows.front());
  return rows;
}

std::string to_jsonl(std::span<const AttackResult> results) {
  std::string out;
  for (const auto& r : results) {
    nlohmann::ordered_json j;
    j["index"] = r.index;
    j["true_label"] = r.true_label;
    j["target_label"] = r.target_label;
    j["success"] = r.success;
    j["l0"] = r.l0;
    j["l2"] = r.l2;
    j["linf"] = r.linf;
    j["pred"] = r.pred;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace vib::attack
