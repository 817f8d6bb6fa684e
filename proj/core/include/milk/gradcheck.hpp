#pragma once

#include <milk/objective.hpp>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace milk {

struct TensorError {
  std::string tensor;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t n_checked = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::vector<TensorError> tensors;
  std::size_t n_trials = 0;
  std::size_t n_coordinates = 0;
  double seconds = 0.0;
};

// A randomized problem instance.
struct GradCheckTrial {
  std::size_t n_users = 4;
  std::size_t n_items = 6;
  std::size_t n_modalities = 2;
  std::size_t dim = 3;
  std::size_t feature_dim = 5;
  std::size_t batch_size = 8;
  ObjectiveWeights weights;
  bool mask_modalities = false;
  EnvVariant variant = EnvVariant::full;
  std::uint64_t seed = 0;
};

struct GradCheckOptions {
  std::vector<GradCheckTrial> trials;
  double step = 1e-4;
  // Floor on the relative-error denominator, for coordinates whose true
  // derivative is numerically zero.
  double denominator_floor = 1e-6;
  // Test hook: perturbs the analytic gradient so the check must fail.
  bool corrupt_gradient = false;
};

inline constexpr double kGradCheckTolerance = 1e-4;

// >= 20 trials covering beta > 0 (including 1000), lambda > 0, masked
// modalities, M in {2, 3} and every environment variant.
std::vector<GradCheckTrial> default_gradcheck_trials(std::uint64_t seed);

// Central differences against loss_and_gradient on every coordinate of every
// trial.
GradCheckReport finite_diff_check(const GradCheckOptions& options);

// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

std::string report_to_json(const GradCheckReport& report, double tolerance);

}  // namespace milk
