#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vib/data.hpp"
#include "vib/model.hpp"

namespace vib::attack {

enum class Kind { fgs, l2opt };

std::string_view to_string(Kind k);
Kind parse_kind(std::string_view s);

struct AttackConfig {
  Kind kind = Kind::l2opt;
  double epsilon = 0.0;  // fgs
  bool targeted = false;
  std::optional<int> target_label;  // fixed target; otherwise drawn per example
  std::size_t max_iterations = 1000;
  std::size_t c_search_steps = 9;
  double c_init = 1e-3;
  double c_max = 1e10;
  double inner_lr = 1e-2;
  double kappa = 0.0;
  std::size_t eval_samples = 12;
  bool mean_mode = false;  // sigma forced to 0 for both the attack and its evaluation
  bool early_abort = true;
  double l0_threshold = 1e-6;

  void validate() const;
};

struct AttackResult {
  std::size_t index = 0;
  int true_label = 0;
  int target_label = -1;  // -1 when untargeted
  std::vector<double> x_adv;
  bool success = false;
  int pred = 0;
  std::size_t l0 = 0;
  double l2 = 0.0;
  double linf = 0.0;
};

struct Norms {
  std::size_t l0 = 0;
  double l2 = 0.0;
  double linf = 0.0;
};

Norms perturb_norms(std::span<const double> x, std::span<const double> x_adv, double l0_threshold = 1e-6);

/// S x K noise draws for one gradient step; empty for deterministic models and mean mode.
Matrix draw_eps(const Model& model, std::size_t samples, bool mean_mode, Rng& rng);

/// log of the class distribution averaged over the draws in `eps` (one row per draw).
std::vector<double> log_mean_probs(const Model& model, std::span<const double> x, const Matrix& eps);

struct InputGrad {
  std::vector<double> log_probs;  // log of the MC-averaged class distribution
  std::vector<double> grad;       // d(upstream . log_probs) / dx
};

/// Exact input gradient of upstream . log pbar(x) under the frozen draws `eps`.
InputGrad model_gradient_x(const Model& model, std::span<const double> x, std::span<const double> upstream,
                           const Matrix& eps);

/// Gradient of -log pbar_label(x).
InputGrad nll_gradient_x(const Model& model, std::span<const double> x, int label, const Matrix& eps);

/// Noise substreams of the attack on example `index`.
struct ExampleStreams {
  Rng attack;
  Rng eval;
  Rng target;
};
ExampleStreams example_streams(std::uint64_t seed, std::size_t index);

/// Prediction under a fresh eval_samples-draw evaluation from the example's eval stream.
int fresh_prediction(const Model& model, std::span<const double> x, const AttackConfig& cfg, const Rng& eval);

AttackResult fgs(const Model& model, std::span<const double> x, int y_true, const AttackConfig& cfg,
                 const ExampleStreams& streams);
AttackResult l2opt(const Model& model, std::span<const double> x, int y_true, const AttackConfig& cfg,
                   const ExampleStreams& streams);

/// Target for example `index`: cfg.target_label, or a uniformly drawn label other than y.
int choose_target(const AttackConfig& cfg, int y, std::size_t classes, const ExampleStreams& streams);

/// Attacks every listed example (in parallel); results are in input order.
std::vector<AttackResult> run(const Model& model, const Dataset& ds, std::span<const std::size_t> indices,
                              const AttackConfig& cfg, std::uint64_t seed);

struct Summary {
  std::string name;
  std::size_t n = 0;
  double clean_accuracy = 0.0;
  double adv_accuracy = 0.0;
  double success_rate = 0.0;
  double mean_l0_all = 0.0;
  double mean_l2_all = 0.0;
  double mean_linf_all = 0.0;
  std::size_t n_success = 0;
  double mean_l0_success = 0.0;
  double mean_l2_success = 0.0;
  double mean_linf_success = 0.0;
  // Success-only means divided by the baseline's; NaN when either side has no successes.
  double rel_l0 = 0.0;
  double rel_l2 = 0.0;
  double rel_linf = 0.0;
};

Summary summarize(std::string name, const Model& model, const Dataset& ds, std::span<const std::size_t> indices,
                  std::span<const AttackResult> results, const AttackConfig& cfg, std::uint64_t seed);
void set_relative(Summary& s, const Summary& baseline);

struct NamedModel {
  std::string name;
  const Model* model = nullptr;
};

/// Attacks the same examples on every model; the first model is the baseline for relative norms.
std::vector<Summary> robustness_sweep(std::span<const NamedModel> models, const Dataset& ds,
                                      std::span<const std::size_t> indices, const AttackConfig& cfg,
                                      std::uint64_t seed);

std::string to_jsonl(std::span<const AttackResult> results);

}  // namespace vib::attack
