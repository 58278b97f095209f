#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vib/data.hpp"
#include "vib/model.hpp"
#include "vib/objective.hpp"

namespace vib {

struct TrainConfig {
  double lr0 = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double decay_factor = 0.97;
  std::size_t decay_every_epochs = 2;
  std::size_t epochs = 200;
  std::size_t batch_size = 100;
  double ema_decay = 0.999;
  std::uint64_t seed = 0;

  void validate() const;
};

/// lr0 * decay_factor^floor(epoch / decay_every_epochs)
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const TrainConfig& cfg);

/// shadow <- decay * shadow + (1 - decay) * params
void ema_update(std::span<double> shadow, std::span<const double> params, double decay);

enum class ObjectiveKind { vib, deterministic, dropout, confidence_penalty, label_smoothing, unsup_vib };

std::string_view to_string(ObjectiveKind k);
ObjectiveKind parse_objective_kind(std::string_view s);

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::vib;
  VibConfig vib;
  double dropout_rate = 0.0;
  double confidence_beta = 0.0;
  double label_smoothing = 0.0;

  void validate(const ModelSpec& spec) const;
};

/// One minibatch loss (with gradients) for any objective kind.
LossBreakdown objective_loss(Model& model, const Matrix& x, Labels y, const ObjectiveConfig& obj, Rng& rng);

enum class EvalMode { one_shot, mc, mean };

/// Everything the metrics stream needs from one pass over a split.
struct EvalSummary {
  double err_1shot = 0.0;
  double err_mc = 0.0;
  double err_mean = 0.0;
  double mi_zx_bits = 0.0;  // NaN for deterministic encoders
  double mi_zy_bits = 0.0;
  double xent_nats = 0.0;   // mean -log q(y|z) over the evaluation draws
};

/// Per-example noise comes from noise.split(example index), so results do not depend
/// on chunking and `mc` with one sample reproduces `one_shot` exactly.
EvalSummary evaluate_all(const Model& model, const Dataset& ds, std::size_t samples, const Rng& noise);
double evaluate(const Model& model, const Dataset& ds, EvalMode mode, std::size_t samples, const Rng& noise);
std::vector<int> predict(const Model& model, const Matrix& x, EvalMode mode, std::size_t samples, const Rng& noise,
                         std::size_t first_index = 0);

struct MetricsRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_err_1shot = 0.0;
  double test_err_1shot = 0.0;
  double train_err_mc = 0.0;
  double test_err_mc = 0.0;
  double mean_mode_err = 0.0;
  double mi_zx_bits = 0.0;
  double mi_zy_train_bits = 0.0;
  double mi_zy_test_bits = 0.0;
  double xent_nats = 0.0;
  double kl_nats = 0.0;
};

/// RNG substreams of a training run, all derived from TrainConfig::seed.
namespace stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t noise = 3;
inline constexpr std::uint64_t eval = 4;
}  // namespace stream

Rng eval_noise(std::uint64_t seed, std::string_view split);

struct TrainingState {
  Model model;              // raw parameters, used for gradients only
  std::vector<double> ema;  // Polyak shadow, used for every reported number
  AdamState adam;
  std::size_t epochs_done = 0;

  Model ema_model() const;
};

struct FitResult {
  TrainingState state;
  std::vector<MetricsRecord> history;
  bool diverged = false;
  std::string message;
};

using EpochCallback = std::function<void(const MetricsRecord&)>;

/// Runs TrainConfig::epochs epochs of shuffled minibatch Adam with EMA tracking and
/// per-epoch metrics. On a non-finite loss the state rolls back to the last completed
/// epoch and `diverged` is set.
FitResult fit(const ModelSpec& spec, const Dataset& train, const Dataset& test, const ObjectiveConfig& obj,
              const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct DropoutSelection {
  double rate = 0.0;
  std::vector<double> validation_errors;  // one per candidate rate
};

/// Trains a dropout baseline for each rate on `train` minus a held-out validation split
/// of `validation_size` examples and returns the rate with the lowest validation error.
DropoutSelection select_dropout_rate(const ModelSpec& spec, const Dataset& train, std::span<const double> rates,
                                     std::size_t validation_size, const TrainConfig& cfg);

}  // namespace vib
