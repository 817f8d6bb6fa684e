#include <milk/environments.hpp>

#include <milk/error.hpp>

#include <algorithm>
#include <cmath>
#include <string>

namespace milk {

std::string_view to_string(EnvVariant variant) {
  switch (variant) {
    case EnvVariant::full: return "full";
    case EnvVariant::no_e0: return "no_e0";
    case EnvVariant::no_cyclic_shift: return "no_cyclic_shift";
    case EnvVariant::frozen: return "frozen";
    case EnvVariant::equal_only: return "equal_only";
  }
  return "?";
}

EnvVariant parse_env_variant(std::string_view name) {
  if (name == "full") return EnvVariant::full;
  if (name == "no_e0") return EnvVariant::no_e0;
  if (name == "no_cyclic_shift" || name == "no_cs") return EnvVariant::no_cyclic_shift;
  if (name == "frozen") return EnvVariant::frozen;
  if (name == "equal_only") return EnvVariant::equal_only;
  throw ConfigError("unknown environment variant '" + std::string(name) + "'");
}

namespace {

// Marsaglia & Tsang (2000), shape >= 1.
double gamma_shape_at_least_one(double shape, Rng& rng) {
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform_open();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

void check_shape(double shape) {
  if (!(shape > 0.0) || !std::isfinite(shape)) {
    throw ParameterError("Gamma/Dirichlet parameters must be positive and finite, got " + std::to_string(shape));
  }
}

}  // namespace

double sample_log_gamma(double shape, Rng& rng) {
  check_shape(shape);
  if (shape >= 1.0) return std::log(gamma_shape_at_least_one(shape, rng));
  const double boosted = gamma_shape_at_least_one(shape + 1.0, rng);
  return std::log(boosted) + std::log(rng.uniform_open()) / shape;
}

double sample_gamma(double shape, Rng& rng) {
  check_shape(shape);
  if (shape >= 1.0) return gamma_shape_at_least_one(shape, rng);
  return std::exp(sample_log_gamma(shape, rng));
}

std::vector<double> sample_dirichlet(std::span<const double> alpha, Rng& rng) {
  if (alpha.empty()) throw ParameterError("Dirichlet needs at least one parameter");
  for (double a : alpha) check_shape(a);
  // Normalize in log space: small shapes make raw Gamma draws underflow.
  std::vector<double> out(alpha.size());
  for (std::size_t m = 0; m < alpha.size(); ++m) out[m] = sample_log_gamma(alpha[m], rng);
  const double top = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double& v : out) {
    v = std::exp(v - top);
    sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> cyclic_shift(std::span<const double> theta) {
  std::vector<double> out(theta.begin(), theta.end());
  if (!out.empty()) std::rotate(out.rbegin(), out.rbegin() + 1, out.rend());
  return out;
}

std::vector<double> equal_weights(std::size_t n_modalities) {
  return std::vector<double>(n_modalities, 1.0 / static_cast<double>(n_modalities));
}

EnvironmentSet build_environments(std::size_t n_modalities, std::span<const double> alpha, Rng& rng,
                                  EnvVariant variant) {
  if (variant == EnvVariant::equal_only) {
    if (n_modalities < 1) throw ParameterError("need at least one modality");
    return {{{0, equal_weights(n_modalities)}}};
  }
  if (n_modalities < 2) throw ParameterError("environment construction needs M >= 2");
  if (alpha.size() != n_modalities) throw ParameterError("alpha must have one entry per modality");

  EnvironmentSet set;
  if (variant != EnvVariant::no_e0) set.envs.push_back({0, equal_weights(n_modalities)});

  if (variant == EnvVariant::no_cyclic_shift) {
    for (std::size_t e = 1; e <= n_modalities; ++e) set.envs.push_back({e, sample_dirichlet(alpha, rng)});
    return set;
  }
  std::vector<double> theta = sample_dirichlet(alpha, rng);
  for (std::size_t e = 1; e <= n_modalities; ++e) {
    set.envs.push_back({e, theta});
    theta = cyclic_shift(theta);
  }
  return set;
}

EnvironmentSchedule::EnvironmentSchedule(std::size_t n_modalities, std::vector<double> alpha, EnvVariant variant)
    : n_modalities_(n_modalities), alpha_(std::move(alpha)), variant_(variant) {
  if (variant_ != EnvVariant::equal_only) {
    if (n_modalities_ < 2) throw ParameterError("environment construction needs M >= 2");
    if (alpha_.size() == 1) alpha_.assign(n_modalities_, alpha_.front());
    if (alpha_.size() != n_modalities_) throw ParameterError("alpha must have one entry per modality");
    for (double a : alpha_) check_shape(a);
  }
}

const EnvironmentSet& EnvironmentSchedule::next(Rng& rng) {
  const bool reuse = current_ && (variant_ == EnvVariant::frozen || variant_ == EnvVariant::equal_only);
  if (!reuse) current_ = build_environments(n_modalities_, alpha_, rng, variant_);
  return *current_;
}

}  // namespace milk
