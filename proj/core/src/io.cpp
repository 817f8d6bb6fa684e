#include <milk/io.hpp>

#include <milk/error.hpp>

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace milk {

namespace {

using json = nlohmann::json;

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  return out;
}

template <typename T>
bool parse_number(std::string_view text, T& value) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\r')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\r')) text.remove_suffix(1);
  if (text.empty()) return false;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == sep) {
      fields.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return fields;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
  return v;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  v = to_le(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in, const char* what) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw DimensionError(std::string("truncated header reading ") + what);
  }
  return to_le(v);
}

void write_f32(std::ostream& out, double value) {
  const auto f = static_cast<float>(value);
  write_u32(out, std::bit_cast<std::uint32_t>(f));
}

constexpr char kFeatureMagic[8] = {'M', 'F', 'E', 'A', '0', '0', '0', '1'};

}  // namespace

// ---------------------------------------------------------------------------
// Interactions

LoadedInteractions parse_interactions(std::istream& in) {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line, '\t');
    std::uint64_t user = 0;
    std::uint64_t item = 0;
    if (fields.size() != 2 || !parse_number(fields[0], user) || !parse_number(fields[1], item)) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 'user<TAB>item' with non-negative integers");
    }
    if (item > std::numeric_limits<ItemId>::max() - 1) {
      throw ParseError("line " + std::to_string(line_no) + ": item id out of range");
    }
    raw.emplace_back(user, item);
  }
  if (raw.empty()) throw DataError("interaction file contains no pairs");

  std::uint64_t max_user = 0;
  std::uint64_t max_item = 0;
  std::vector<std::uint64_t> users;
  users.reserve(raw.size());
  for (const auto& [u, i] : raw) {
    max_user = std::max(max_user, u);
    max_item = std::max(max_item, i);
    users.push_back(u);
  }
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());

  LoadedInteractions out;
  const bool dense_users = users.size() == max_user + 1;
  std::map<std::uint64_t, UserId> remap;
  if (!dense_users) {
    for (std::size_t k = 0; k < users.size(); ++k) remap[users[k]] = static_cast<UserId>(k);
    out.original_user_ids = users;
  }
  std::vector<Interaction> pairs;
  pairs.reserve(raw.size());
  for (const auto& [u, i] : raw) {
    pairs.push_back({dense_users ? static_cast<UserId>(u) : remap.at(u), static_cast<ItemId>(i)});
  }
  out.interactions = InteractionSet(users.size(), static_cast<std::size_t>(max_item + 1), std::move(pairs));
  return out;
}

InteractionSet load_interactions(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_interactions(in).interactions;
}

void write_interactions(const std::filesystem::path& path, const InteractionSet& interactions) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  for (const auto& p : interactions.pairs()) out << p.user << '\t' << p.item << '\n';
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Features

FeatureFormat feature_format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return FeatureFormat::csv;
  return FeatureFormat::binary;
}

Matrix parse_feature_matrix_binary(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kFeatureMagic, sizeof magic) != 0) {
    throw DataError("feature file does not start with MFEA0001");
  }
  const std::uint32_t rows = read_u32(in, "n_items");
  const std::uint32_t cols = read_u32(in, "dim");
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
      throw DimensionError("feature file header declares " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " values but holds only " + std::to_string(i));
    }
    const float f = std::bit_cast<float>(to_le(bits));
    if (!std::isfinite(f)) {
      throw DataError("non-finite feature value at row " + std::to_string(i / cols) + ", column " +
                      std::to_string(i % cols));
    }
    out.data()[i] = f;
  }
  return out;
}

Matrix parse_feature_matrix_csv(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    for (auto field : split_fields(line, ',')) {
      double v = 0.0;
      if (!parse_number(field, v)) throw ParseError("line " + std::to_string(line_no) + ": bad feature value");
      if (!std::isfinite(v)) throw DataError("line " + std::to_string(line_no) + ": non-finite feature value");
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DimensionError("line " + std::to_string(line_no) + ": expected " + std::to_string(rows.front().size()) +
                           " columns");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("feature CSV is empty");
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return out;
}

Matrix load_feature_matrix(const std::filesystem::path& path, FeatureFormat format,
                           std::optional<std::size_t> expected_rows) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  Matrix out = format == FeatureFormat::csv ? parse_feature_matrix_csv(in) : parse_feature_matrix_binary(in);
  if (expected_rows && static_cast<std::size_t>(out.rows()) != *expected_rows) {
    throw DimensionError("'" + path.string() + "' has " + std::to_string(out.rows()) + " rows, expected " +
                         std::to_string(*expected_rows));
  }
  return out;
}

ModalityFeatureBank load_features(const std::vector<std::filesystem::path>& paths, FeatureFormat format,
                                  std::optional<std::size_t> expected_rows) {
  std::vector<Matrix> matrices;
  for (const auto& p : paths) matrices.push_back(load_feature_matrix(p, format, expected_rows));
  return ModalityFeatureBank(std::move(matrices));
}

void write_feature_matrix_binary(const std::filesystem::path& path, const Matrix& matrix) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  out.write(kFeatureMagic, sizeof kFeatureMagic);
  write_u32(out, static_cast<std::uint32_t>(matrix.rows()));
  write_u32(out, static_cast<std::uint32_t>(matrix.cols()));
  for (Eigen::Index i = 0; i < matrix.size(); ++i) write_f32(out, matrix.data()[i]);
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

void write_feature_matrix_csv(const std::filesystem::path& path, const Matrix& matrix) {
  auto out = open_out(path);
  out.precision(17);
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) out << (c ? "," : "") << matrix(r, c);
    out << '\n';
  }
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Masks

AvailabilityMask parse_mask_csv(std::istream& in) {
  std::vector<std::uint8_t> entries;
  std::size_t n_cols = 0;
  std::size_t n_rows = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line, ',');
    if (n_rows == 0) n_cols = fields.size();
    if (fields.size() != n_cols) throw DimensionError("mask line " + std::to_string(line_no) + ": column count");
    for (auto f : fields) {
      unsigned v = 0;
      if (!parse_number(f, v) || v > 1) throw ParseError("mask line " + std::to_string(line_no) + ": expected 0/1");
      entries.push_back(static_cast<std::uint8_t>(v));
    }
    ++n_rows;
  }
  if (n_rows == 0) throw DataError("mask CSV is empty");
  return AvailabilityMask(n_rows, n_cols, std::move(entries));
}

AvailabilityMask load_mask_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_mask_csv(in);
}

void write_mask_csv(const std::filesystem::path& path, const AvailabilityMask& mask) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  for (ItemId j = 0; j < mask.n_items(); ++j) {
    for (std::size_t m = 0; m < mask.n_modalities(); ++m) out << (m ? "," : "") << (mask.available(j, m) ? 1 : 0);
    out << '\n';
  }
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Split manifest

std::string manifest_to_json(const SplitManifest& m) {
  json j;
  j["interactions"] = m.interactions.generic_string();
  j["features"] = json::array();
  for (const auto& f : m.features) j["features"].push_back(f.generic_string());
  j["train_mask"] = m.train_mask.generic_string();
  j["test_mask"] = m.test_mask.generic_string();
  j["n_users"] = m.n_users;
  j["n_items"] = m.n_items;
  j["seed"] = m.seed;
  j["new_ratio"] = m.new_ratio;
  j["protocol"] = m.protocol;
  j["missingness"] = {{"train_missing_ratio", m.missingness.train_missing_ratio},
                      {"test_missing_ratio", m.missingness.test_missing_ratio},
                      {"max_missing_per_item", m.missingness.max_missing_per_item}};
  j["warm_items"] = m.warm_items;
  j["val_items"] = m.val_items;
  j["test_items"] = m.test_items;
  return j.dump(2) + "\n";
}

SplitManifest manifest_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    SplitManifest m;
    m.interactions = j.at("interactions").get<std::string>();
    for (const auto& f : j.at("features")) m.features.emplace_back(f.get<std::string>());
    m.train_mask = j.at("train_mask").get<std::string>();
    m.test_mask = j.at("test_mask").get<std::string>();
    m.n_users = j.at("n_users").get<std::size_t>();
    m.n_items = j.at("n_items").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.new_ratio = j.at("new_ratio").get<double>();
    m.protocol = j.at("protocol").get<std::string>();
    const auto& miss = j.at("missingness");
    m.missingness.train_missing_ratio = miss.at("train_missing_ratio").get<double>();
    m.missingness.test_missing_ratio = miss.at("test_missing_ratio").get<double>();
    m.missingness.max_missing_per_item = miss.at("max_missing_per_item").get<std::size_t>();
    m.warm_items = j.at("warm_items").get<std::vector<ItemId>>();
    m.val_items = j.at("val_items").get<std::vector<ItemId>>();
    m.test_items = j.at("test_items").get<std::vector<ItemId>>();
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid split manifest: ") + e.what());
  }
}

void write_manifest(const std::filesystem::path& path, const SplitManifest& manifest) {
  write_text_file(path, manifest_to_json(manifest));
}

SplitManifest load_manifest(const std::filesystem::path& path) { return manifest_from_json(read_text_file(path)); }

DatasetBundle replay_manifest(const SplitManifest& m, const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::filesystem::path& p) { return p.is_absolute() ? p : base_dir / p; };
  std::vector<std::filesystem::path> feature_paths;
  for (const auto& f : m.features) feature_paths.push_back(resolve(f));
  const auto format = feature_paths.empty() ? FeatureFormat::binary : feature_format_from_path(feature_paths.front());
  ModalityFeatureBank features = load_features(feature_paths, format, m.n_items);
  auto interactions = load_interactions(resolve(m.interactions));
  if (interactions.n_items() > m.n_items) throw DimensionError("interactions reference items beyond n_items");
  if (interactions.n_users() != m.n_users) throw DimensionError("interaction log user count differs from manifest");

  DatasetBundle bundle = assemble_bundle(interactions, std::move(features), m.val_items, m.test_items, m.seed,
                                         m.new_ratio);
  if (bundle.warm_items != m.warm_items) throw DataError("manifest warm items disagree with val/test pools");
  bundle.train_mask = load_mask_csv(resolve(m.train_mask));
  bundle.test_mask = load_mask_csv(resolve(m.test_mask));
  const std::size_t n_modalities = bundle.features.n_modalities();
  for (const auto* mask : {&bundle.train_mask, &bundle.test_mask}) {
    if (mask->n_items() != m.n_items || mask->n_modalities() != n_modalities) {
      throw DimensionError("mask shape does not match the feature bank");
    }
  }
  return bundle;
}

std::string read_text_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  out << text;
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

}  // namespace milk
