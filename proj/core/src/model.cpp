#include <milk/model.hpp>

#include <milk/error.hpp>
#include <milk/rng.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace milk {

std::vector<std::size_t> ModelParams::feature_dims() const {
  std::vector<std::size_t> dims;
  for (const auto& w : weights) dims.push_back(static_cast<std::size_t>(w.cols()));
  return dims;
}

bool ModelParams::all_finite() const {
  if (!user_embeddings.allFinite()) return false;
  for (const auto& w : weights) {
    if (!w.allFinite()) return false;
  }
  for (const auto& b : biases) {
    if (!b.allFinite()) return false;
  }
  return true;
}

void ModelParams::set_zero() {
  user_embeddings.setZero();
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
  ModelParams out = other;
  out.set_zero();
  return out;
}

std::vector<TensorView<double>> tensors(ModelParams& params) {
  std::vector<TensorView<double>> out;
  auto& u = params.user_embeddings;
  out.push_back({"user_embeddings", {u.data(), static_cast<std::size_t>(u.size())}});
  for (std::size_t m = 0; m < params.n_modalities(); ++m) {
    auto& w = params.weights[m];
    auto& b = params.biases[m];
    out.push_back({"W" + std::to_string(m), {w.data(), static_cast<std::size_t>(w.size())}});
    out.push_back({"b" + std::to_string(m), {b.data(), static_cast<std::size_t>(b.size())}});
  }
  return out;
}

std::vector<TensorView<const double>> tensors(const ModelParams& params) {
  std::vector<TensorView<const double>> out;
  for (auto& t : tensors(const_cast<ModelParams&>(params))) out.push_back({t.name, t.values});
  return out;
}

ModelParams init_params(std::size_t n_users, std::span<const std::size_t> dims, std::size_t d, std::uint64_t seed,
                        double init_std) {
  if (d < 1) throw ParameterError("representation dim must be >= 1");
  Rng rng(seed);
  const auto rows = static_cast<Eigen::Index>(d);
  ModelParams p;
  p.user_embeddings.resize(static_cast<Eigen::Index>(n_users), rows);
  for (Eigen::Index i = 0; i < p.user_embeddings.size(); ++i) p.user_embeddings.data()[i] = rng.normal(0.0, init_std);
  for (std::size_t dx : dims) {
    Matrix w(rows, static_cast<Eigen::Index>(dx));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, init_std);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(rows));
  }
  return p;
}

void check_dimensions(const ModelParams& params, const ModelParams& other) {
  bool ok = params.user_embeddings.rows() == other.user_embeddings.rows() &&
            params.user_embeddings.cols() == other.user_embeddings.cols() &&
            params.n_modalities() == other.n_modalities();
  for (std::size_t m = 0; ok && m < params.n_modalities(); ++m) {
    ok = params.weights[m].rows() == other.weights[m].rows() && params.weights[m].cols() == other.weights[m].cols() &&
         params.biases[m].size() == other.biases[m].size();
  }
  if (!ok) throw DimensionError("parameter shapes differ");
}

Vector extract(const ModelParams& params, std::size_t m, const Eigen::Ref<const Vector>& x) {
  if (m >= params.n_modalities()) throw DimensionError("modality index out of range");
  if (x.size() != params.weights[m].cols()) {
    throw DimensionError("feature length " + std::to_string(x.size()) + " != extractor input " +
                         std::to_string(params.weights[m].cols()));
  }
  return params.weights[m] * x + params.biases[m];
}

ModalityRepresentations compute_representations(const ModelParams& params, const ModalityFeatureBank& features,
                                                std::span<const ItemId> items) {
  if (features.n_modalities() != params.n_modalities()) throw DimensionError("modality count mismatch");
  ModalityRepresentations reps;
  reps.items.assign(items.begin(), items.end());
  const auto n = static_cast<Eigen::Index>(items.size());
  for (std::size_t m = 0; m < params.n_modalities(); ++m) {
    if (features.dim(m) != static_cast<std::size_t>(params.weights[m].cols())) {
      throw DimensionError("feature dim mismatch for modality " + std::to_string(m));
    }
    Matrix x(n, static_cast<Eigen::Index>(features.dim(m)));
    for (Eigen::Index r = 0; r < n; ++r) x.row(r) = features.row(m, items[static_cast<std::size_t>(r)]);
    Matrix c = x * params.weights[m].transpose();
    c.rowwise() += params.biases[m].transpose();
    reps.rows.push_back(std::move(c));
  }
  return reps;
}

double alignment_loss(const ModalityRepresentations& reps, const AvailabilityMask& mask) {
  const std::size_t n_modalities = reps.n_modalities();
  double sum = 0.0;
  std::size_t terms = 0;
  for (std::size_t r = 0; r < reps.n_items(); ++r) {
    const ItemId j = reps.items[r];
    for (std::size_t m = 0; m + 1 < n_modalities; ++m) {
      if (!mask.available(j, m)) continue;
      for (std::size_t m2 = m + 1; m2 < n_modalities; ++m2) {
        if (!mask.available(j, m2)) continue;
        const auto ri = static_cast<Eigen::Index>(r);
        sum += (reps.rows[m].row(ri) - reps.rows[m2].row(ri)).squaredNorm();
        ++terms;
      }
    }
  }
  return terms == 0 ? 0.0 : sum / static_cast<double>(terms);
}

void check_simplex(std::span<const double> weights) {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ContractError("fusion weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ContractError("fusion weights sum to " + std::to_string(sum) + ", not 1");
}

Vector fuse(std::span<const Vector> reps, std::span<const double> weights) {
  if (reps.size() != weights.size() || reps.empty()) throw DimensionError("one fusion weight per modality");
  check_simplex(weights);
  Vector z = weights[0] * reps[0];
  for (std::size_t m = 1; m < reps.size(); ++m) {
    if (reps[m].size() != z.size()) throw DimensionError("representation lengths differ");
    z += weights[m] * reps[m];
  }
  return z;
}

Vector fuse(const ModalityRepresentations& reps, std::size_t row, std::span<const double> weights) {
  if (reps.n_modalities() != weights.size() || weights.empty()) throw DimensionError("one fusion weight per modality");
  check_simplex(weights);
  const auto r = static_cast<Eigen::Index>(row);
  Vector z = weights[0] * reps.rows[0].row(r).transpose();
  for (std::size_t m = 1; m < weights.size(); ++m) z += weights[m] * reps.rows[m].row(r).transpose();
  return z;
}

double predict(const Eigen::Ref<const Vector>& user, const Eigen::Ref<const Vector>& item) {
  if (user.size() != item.size()) throw DimensionError("user and item representation lengths differ");
  return user.dot(item);
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'C', 'K', 'P', '0', '0', '0', '1'};

std::uint32_t le32(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
  return v;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  v = le32(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("truncated checkpoint header");
  return le32(v);
}

template <typename Derived>
void put_floats(std::ostream& out, const Eigen::DenseBase<Derived>& values) {
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(values.derived().data()[i])));
  }
}

template <typename Derived>
void get_floats(std::istream& in, Eigen::DenseBase<Derived>& values) {
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw DataError("truncated checkpoint body");
    const float f = std::bit_cast<float>(le32(bits));
    if (!std::isfinite(f)) throw DataError("checkpoint holds a non-finite value");
    values.derived().data()[i] = f;
  }
}

}  // namespace

void write_checkpoint(std::ostream& out, const ModelParams& params) {
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, static_cast<std::uint32_t>(params.n_users()));
  put_u32(out, static_cast<std::uint32_t>(params.dim()));
  put_u32(out, static_cast<std::uint32_t>(params.n_modalities()));
  for (auto dx : params.feature_dims()) put_u32(out, static_cast<std::uint32_t>(dx));
  put_floats(out, params.user_embeddings);
  for (std::size_t m = 0; m < params.n_modalities(); ++m) {
    put_floats(out, params.weights[m]);
    put_floats(out, params.biases[m]);
  }
}

ModelParams read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw DataError("checkpoint does not start with MCKP0001");
  }
  const std::uint32_t n_users = get_u32(in);
  const std::uint32_t d = get_u32(in);
  const std::uint32_t n_modalities = get_u32(in);
  std::vector<std::size_t> dims;
  for (std::uint32_t m = 0; m < n_modalities; ++m) dims.push_back(get_u32(in));

  ModelParams p;
  p.user_embeddings.resize(n_users, d);
  get_floats(in, p.user_embeddings);
  for (std::uint32_t m = 0; m < n_modalities; ++m) {
    Matrix w(d, static_cast<Eigen::Index>(dims[m]));
    Vector b(d);
    get_floats(in, w);
    get_floats(in, b);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint '" + path.string() + "'");
  write_checkpoint(out, params);
  if (!out) throw ConfigError("failed writing checkpoint '" + path.string() + "'");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

}  // namespace milk
