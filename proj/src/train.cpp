#include "vib/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vib/nn.hpp"

namespace vib {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor must be in (0, 1]");
  if (decay_every_epochs < 1) throw ConfigError("decay_every_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must be in [0, 1)");
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr0 * std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every_epochs));
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const TrainConfig& cfg) {
  require(params.size() == grads.size(), "adam_step: params/grads length mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  require(state.m.size() == params.size(), "adam_step: optimizer state does not match params");
  for (double g : grads)
    if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
  ++state.step;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
}

void ema_update(std::span<double> shadow, std::span<const double> params, double decay) {
  require(shadow.size() == params.size(), "ema_update: length mismatch");
  for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] = decay * shadow[i] + (1.0 - decay) * params[i];
}

std::string_view to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::vib: return "vib";
    case ObjectiveKind::deterministic: return "deterministic";
    case ObjectiveKind::dropout: return "dropout";
    case ObjectiveKind::confidence_penalty: return "confidence_penalty";
    case ObjectiveKind::label_smoothing: return "label_smoothing";
    case ObjectiveKind::unsup_vib: return "unsup_vib";
  }
  return "?";
}

ObjectiveKind parse_objective_kind(std::string_view s) {
  for (auto k : {ObjectiveKind::vib, ObjectiveKind::deterministic, ObjectiveKind::dropout,
                 ObjectiveKind::confidence_penalty, ObjectiveKind::label_smoothing, ObjectiveKind::unsup_vib})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown objective '" + std::string(s) + "'");
}

void ObjectiveConfig::validate(const ModelSpec& spec) const {
  spec.validate();
  switch (kind) {
    case ObjectiveKind::vib:
      vib.validate();
      vib.check_model(spec);
      if (spec.reconstruct) throw ConfigError("vib objective needs a classifier decoder");
      break;
    case ObjectiveKind::unsup_vib:
      vib.validate();
      vib.check_model(spec);
      if (!spec.reconstruct) throw ConfigError("unsup_vib objective needs a reconstruction decoder");
      break;
    case ObjectiveKind::dropout:
      nn::validate_dropout_rate(dropout_rate);
      [[fallthrough]];
    default:
      if (spec.reconstruct) throw ConfigError(std::string(to_string(kind)) + " objective needs a classifier");
      if (kind == ObjectiveKind::label_smoothing && !(label_smoothing >= 0.0))
        throw ConfigError("label_smoothing must be >= 0");
      if (kind == ObjectiveKind::confidence_penalty && !std::isfinite(confidence_beta))
        throw ConfigError("confidence_beta must be finite");
      break;
  }
}

LossBreakdown objective_loss(Model& model, const Matrix& x, Labels y, const ObjectiveConfig& obj, Rng& rng) {
  switch (obj.kind) {
    case ObjectiveKind::vib: return vib_loss(model, x, y, obj.vib, rng);
    case ObjectiveKind::deterministic: return deterministic_loss(model, x, y);
    case ObjectiveKind::dropout: return dropout_loss(model, x, y, obj.dropout_rate, rng);
    case ObjectiveKind::confidence_penalty: return confidence_penalty_loss(model, x, y, obj.confidence_beta);
    case ObjectiveKind::label_smoothing: return label_smoothing_loss(model, x, y, obj.label_smoothing);
    case ObjectiveKind::unsup_vib: return unsup_vib_loss(model, x, obj.vib.beta, rng);
  }
  throw ConfigError("unknown objective");
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

constexpr std::size_t kChunk = 500;

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct ChunkPredictions {
  std::vector<int> one_shot, mc, mean;
  double xent_sum = 0.0;
  std::size_t xent_terms = 0;
  double kl_sum = 0.0;
};

ChunkPredictions predict_chunk(const Model& model, const Matrix& x, std::span<const int> y, std::size_t first,
                               std::size_t samples, const Rng& noise) {
  const std::size_t n = x.rows();
  ChunkPredictions out;
  const EncodedBatch enc = encode_batch(model, x);
  const Matrix mu = code_means(model, enc);
  for (const auto& c : enc.codes) out.kl_sum += kl_to_prior(c);

  if (model.spec.reconstruct) {
    const auto eps = indexed_noise(noise, first, n, model.spec.K, samples);
    for (const auto& e : eps) {
      const Matrix xhat = nn::mlp_forward(model.decoder, sample_codes(enc, e)).output;
      for (std::size_t i = 0; i < n; ++i) out.xent_sum += reconstruction_nll(x.row(i), xhat.row(i));
      out.xent_terms += n;
    }
    return out;
  }

  const Matrix mean_logits = nn::mlp_forward(model.decoder, mu).output;
  out.mean.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.mean[i] = static_cast<int>(argmax(mean_logits.row(i)));

  if (!model.spec.stochastic) {
    out.one_shot = out.mean;
    out.mc = out.mean;
    for (std::size_t i = 0; i < n; ++i) out.xent_sum -= nn::log_softmax(mean_logits.row(i))[y.empty() ? 0 : y[i]];
    out.xent_terms = y.empty() ? 0 : n;
    return out;
  }

  const std::size_t c = model.spec.classes;
  Matrix avg(n, c);
  out.one_shot.resize(n);
  const auto eps = indexed_noise(noise, first, n, model.spec.K, samples);
  const double w = 1.0 / static_cast<double>(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    const Matrix logits = nn::mlp_forward(model.decoder, sample_codes(enc, eps[s])).output;
    for (std::size_t i = 0; i < n; ++i) {
      const auto lp = nn::log_softmax(logits.row(i));
      if (s == 0) out.one_shot[i] = static_cast<int>(argmax(lp));
      if (!y.empty()) out.xent_sum -= lp[static_cast<std::size_t>(y[i])];
      auto a = avg.row(i);
      for (std::size_t j = 0; j < c; ++j) a[j] += w * std::exp(lp[j]);
    }
  }
  out.xent_terms = y.empty() ? 0 : n * samples;
  out.mc.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.mc[i] = static_cast<int>(argmax(avg.row(i)));
  return out;
}

Matrix slice_rows(const Matrix& m, std::size_t first, std::size_t count) {
  Matrix out(count, m.cols());
  for (std::size_t i = 0; i < count; ++i)
    std::copy(m.row(first + i).begin(), m.row(first + i).end(), out.row(i).begin());
  return out;
}

}  // namespace

Rng eval_noise(std::uint64_t seed, std::string_view split) {
  return Rng(seed).split(stream::eval).split(fnv1a(split));
}

EvalSummary evaluate_all(const Model& model, const Dataset& ds, std::size_t samples, const Rng& noise) {
  require(samples >= 1, "evaluate: samples must be >= 1");
  require(ds.size() > 0, "evaluate: empty dataset");
  const std::size_t n = ds.size();
  std::size_t wrong1 = 0, wrongmc = 0, wrongmean = 0;
  double xent = 0.0, kl = 0.0;
  std::size_t terms = 0;
  for (std::size_t first = 0; first < n; first += kChunk) {
    const std::size_t count = std::min(kChunk, n - first);
    const std::span<const int> y(ds.labels.data() + first, count);
    const auto p = predict_chunk(model, slice_rows(ds.inputs, first, count), y, first, samples, noise);
    if (!model.spec.reconstruct) {
      for (std::size_t i = 0; i < count; ++i) {
        wrong1 += p.one_shot[i] != y[i];
        wrongmc += p.mc[i] != y[i];
        wrongmean += p.mean[i] != y[i];
      }
    }
    xent += p.xent_sum;
    terms += p.xent_terms;
    kl += p.kl_sum;
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double dn = static_cast<double>(n);
  EvalSummary s;
  s.xent_nats = xent / static_cast<double>(terms);
  s.mi_zx_bits = model.spec.stochastic ? kl / dn / kLn2 : nan;
  if (model.spec.reconstruct) {
    s.err_1shot = s.err_mc = s.err_mean = s.mi_zy_bits = nan;
  } else {
    s.err_1shot = static_cast<double>(wrong1) / dn;
    s.err_mc = static_cast<double>(wrongmc) / dn;
    s.err_mean = static_cast<double>(wrongmean) / dn;
    s.mi_zy_bits = label_entropy_bits(ds.labels, model.spec.classes) - s.xent_nats / kLn2;
  }
  return s;
}

double evaluate(const Model& model, const Dataset& ds, EvalMode mode, std::size_t samples, const Rng& noise) {
  const auto s = evaluate_all(model, ds, mode == EvalMode::mc ? samples : 1, noise);
  switch (mode) {
    case EvalMode::one_shot: return s.err_1shot;
    case EvalMode::mc: return s.err_mc;
    case EvalMode::mean: return s.err_mean;
  }
  return s.err_mc;
}

std::vector<int> predict(const Model& model, const Matrix& x, EvalMode mode, std::size_t samples, const Rng& noise,
                         std::size_t first_index) {
  require(!model.spec.reconstruct, "predict: model is not a classifier");
  std::vector<int> out;
  out.reserve(x.rows());
  for (std::size_t first = 0; first < x.rows(); first += kChunk) {
    const std::size_t count = std::min(kChunk, x.rows() - first);
    const auto p = predict_chunk(model, slice_rows(x, first, count), {}, first_index + first,
                                 mode == EvalMode::mc ? samples : 1, noise);
    const auto& v = mode == EvalMode::one_shot ? p.one_shot : mode == EvalMode::mc ? p.mc : p.mean;
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

Model TrainingState::ema_model() const {
  Model m = model;
  m.set_params(ema);
  return m;
}

FitResult fit(const ModelSpec& spec, const Dataset& train, const Dataset& test, const ObjectiveConfig& obj,
              const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  obj.validate(spec);
  train.validate();
  require(train.dim() == spec.input_dim, "fit: dataset width " + std::to_string(train.dim()) +
                                             " != model input_dim " + std::to_string(spec.input_dim));
  if (!spec.reconstruct && train.classes > spec.classes)
    throw ConfigError("fit: dataset has more classes than the model");

  const Rng root(cfg.seed);
  Rng init_rng = root.split(stream::init);
  FitResult res;
  res.state.model = Model::init(spec, init_rng);
  res.state.ema = res.state.model.params();

  std::vector<double> params = res.state.ema;
  const std::size_t n = train.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t eval_samples = obj.vib.eval_samples;
  const Rng train_eval = eval_noise(cfg.seed, "train");
  const Rng test_eval = eval_noise(cfg.seed, "test");

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const TrainingState last_good = res.state;
    const double lr = lr_at(epoch, cfg);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng shuffle = root.split(stream::shuffle, epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[shuffle.below(i)]);

    double xent_sum = 0.0, kl_sum = 0.0;
    try {
      for (std::size_t b = 0; b < batches; ++b) {
        const std::size_t lo = b * cfg.batch_size;
        const std::size_t hi = std::min(n, lo + cfg.batch_size);
        const std::span<const std::size_t> idx(perm.data() + lo, hi - lo);
        const Matrix x = train.rows(idx);
        const auto y = train.labels_of(idx);
        Rng step_rng = root.split(stream::noise, epoch).split(b);
        const LossBreakdown loss = objective_loss(res.state.model, x, y, obj, step_rng);
        adam_step(params, loss.grads, res.state.adam, lr, cfg);
        res.state.model.set_params(params);
        ema_update(res.state.ema, params, cfg.ema_decay);
        xent_sum += loss.xent_term;
        kl_sum += loss.kl_term;
      }
    } catch (const NumericError& e) {
      res.state = last_good;
      res.diverged = true;
      res.message = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }
    res.state.epochs_done = epoch + 1;

    const Model ema = res.state.ema_model();
    const auto tr = evaluate_all(ema, train, eval_samples, train_eval);
    const auto te = evaluate_all(ema, test, eval_samples, test_eval);
    MetricsRecord m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_err_1shot = tr.err_1shot;
    m.test_err_1shot = te.err_1shot;
    m.train_err_mc = tr.err_mc;
    m.test_err_mc = te.err_mc;
    m.mean_mode_err = te.err_mean;
    m.mi_zx_bits = tr.mi_zx_bits;
    m.mi_zy_train_bits = tr.mi_zy_bits;
    m.mi_zy_test_bits = te.mi_zy_bits;
    m.xent_nats = xent_sum / static_cast<double>(batches);
    m.kl_nats = kl_sum / static_cast<double>(batches);
    res.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return res;
}

DropoutSelection select_dropout_rate(const ModelSpec& spec, const Dataset& train, std::span<const double> rates,
                                     std::size_t validation_size, const TrainConfig& cfg) {
  if (rates.empty()) throw ConfigError("select_dropout_rate: no candidate rates");
  if (validation_size == 0 || validation_size >= train.size())
    throw ConfigError("select_dropout_rate: validation split must be non-empty and smaller than the training set");
  Rng rng = Rng(cfg.seed).split(stream::eval).split(0xd509);
  auto [fit_part, val] = split_dataset(train, train.size() - validation_size, rng);
  DropoutSelection sel;
  double best = std::numeric_limits<double>::infinity();
  for (double rate : rates) {
    ObjectiveConfig obj;
    obj.kind = ObjectiveKind::dropout;
    obj.dropout_rate = rate;
    const FitResult r = fit(spec, fit_part, val, obj, cfg);
    const double err = evaluate(r.state.ema_model(), val, EvalMode::mean, 1, eval_noise(cfg.seed, "validation"));
    sel.validation_errors.push_back(err);
    if (err < best) {
      best = err;
      sel.rate = rate;
    }
  }
  return sel;
}

}  // namespace vib
