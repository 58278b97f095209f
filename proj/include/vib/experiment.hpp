#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "vib/config.hpp"

namespace vib::cli {

inline constexpr int kSchemaVersion = 1;

/// Fixed-precision text for CSV cells ("nan" for NaN).
std::string fmt(double v);

struct GradcheckRow {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t num_params = 0;
  bool passed = false;
};

/// grad_check over every objective kind on small random shapes.
std::vector<GradcheckRow> run_gradchecks(double tolerance, bool sign_flip_fault, std::uint64_t seed);

// Subcommands. Each writes its files under cfg.out and returns a process exit status.
int cmd_train(const ExperimentConfig& cfg, std::ostream& log);
int cmd_eval(const ExperimentConfig& cfg, std::ostream& log);
int cmd_attack(const ExperimentConfig& cfg, std::ostream& log);
int cmd_ibcurve(const ExperimentConfig& cfg, std::ostream& log);
int cmd_embed2d(const ExperimentConfig& cfg, std::ostream& log);
int cmd_gradcheck(const ExperimentConfig& cfg, std::ostream& log);

int dispatch(const std::string& command, const ExperimentConfig& cfg, std::ostream& log);

}  // namespace vib::cli
