#pragma once

#include <milk/rng.hpp>

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace milk {

inline constexpr double kDefaultDirichletAlpha = 0.01;

struct EnvironmentWeights {
  std::size_t env_id = 0;
  std::vector<double> theta;
};

struct EnvironmentSet {
  std::vector<EnvironmentWeights> envs;

  std::size_t size() const noexcept { return envs.size(); }
  const EnvironmentWeights& operator[](std::size_t e) const { return envs[e]; }
};

enum class EnvVariant {
  full,             // equal weights + Dirichlet sample + its cyclic shifts, resampled per step
  no_e0,            // full without the equal-weight environment
  no_cyclic_shift,  // equal weights + M independent Dirichlet samples
  frozen,           // full, sampled once and reused
  equal_only,       // single equal-weight environment (ERM)
};

std::string_view to_string(EnvVariant variant);
EnvVariant parse_env_variant(std::string_view name);

// Marsaglia-Tsang squeeze; shapes below 1 use the boost
// Gamma(a) = Gamma(a + 1) * U^(1/a).
double sample_gamma(double shape, Rng& rng);

// log of a Gamma(shape, 1) draw. For tiny shapes the draw itself underflows
// double precision, the log does not.
double sample_log_gamma(double shape, Rng& rng);

std::vector<double> sample_dirichlet(std::span<const double> alpha, Rng& rng);

// (t1, ..., tM) -> (tM, t1, ..., t_{M-1}).
std::vector<double> cyclic_shift(std::span<const double> theta);

std::vector<double> equal_weights(std::size_t n_modalities);

EnvironmentSet build_environments(std::size_t n_modalities, std::span<const double> alpha, Rng& rng,
                                  EnvVariant variant);

/// Per-step environment source for a training run. Frozen schedules sample
/// on the first call and then keep returning that set.
class EnvironmentSchedule {
 public:
  EnvironmentSchedule(std::size_t n_modalities, std::vector<double> alpha, EnvVariant variant);

  const EnvironmentSet& next(Rng& rng);
  EnvVariant variant() const noexcept { return variant_; }

 private:
  std::size_t n_modalities_;
  std::vector<double> alpha_;
  EnvVariant variant_;
  std::optional<EnvironmentSet> current_;
};

}  // namespace milk
