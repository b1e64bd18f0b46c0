#include "kafuse/dataset.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string_view>

namespace kafuse {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw NotFound("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

double parse_double(std::string_view cell, const fs::path& file, std::size_t row) {
  while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
  while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size())
    throw DataError(file.string() + ": unparsable value '" + std::string(cell) + "' on line " +
                    std::to_string(row + 1));
  if (!std::isfinite(value))
    throw DataError(file.string() + ": non-finite value on line " + std::to_string(row + 1));
  return value;
}

Matrix read_view_csv(const fs::path& file, Index rows, Index cols) {
  const std::string text = read_file(file);
  const auto lines = split_lines(text);
  if (static_cast<Index>(lines.size()) != rows)
    throw SchemaError(file.string() + ": expected " + std::to_string(rows) + " feature rows, found " +
                      std::to_string(lines.size()));
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < lines.size(); ++r) {
    std::string_view line = lines[r];
    Index c = 0;
    std::size_t start = 0;
    while (true) {
      std::size_t end = line.find(',', start);
      std::string_view cell = line.substr(start, end == std::string_view::npos ? line.size() - start : end - start);
      if (c >= cols)
        throw SchemaError(file.string() + ": more than " + std::to_string(cols) + " columns on line " +
                          std::to_string(r + 1));
      m(static_cast<Index>(r), c++) = parse_double(cell, file, r);
      if (end == std::string_view::npos) break;
      start = end + 1;
    }
    if (c != cols)
      throw SchemaError(file.string() + ": expected " + std::to_string(cols) + " columns, found " +
                        std::to_string(c) + " on line " + std::to_string(r + 1));
  }
  return m;
}

LabelVector read_labels(const fs::path& file, Index n) {
  const std::string text = read_file(file);
  const auto lines = split_lines(text);
  if (static_cast<Index>(lines.size()) != n)
    throw SchemaError(file.string() + ": expected " + std::to_string(n) + " labels, found " +
                      std::to_string(lines.size()));
  LabelVector y(n);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view s = lines[i];
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw DataError(file.string() + ": bad label on line " + std::to_string(i + 1));
    y(static_cast<Index>(i)) = v;
  }
  return y;
}

void append_double(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw NotFound("cannot write " + file.string());
  out << text;
}

}  // namespace

Index MultiViewDataset::total_features() const {
  Index d = 0;
  for (const auto& v : views) d += v.dim();
  return d;
}

void MultiViewDataset::validate() const {
  if (views.empty()) throw SchemaError("dataset has no views");
  const Index n = samples();
  if (n < 2) throw SchemaError("dataset needs at least 2 samples");
  for (const auto& v : views) {
    if (v.dim() < 1) throw SchemaError("view '" + v.name + "' has no features");
    if (v.samples() != n) throw SchemaError("view '" + v.name + "' has a different sample count");
    if (!v.data.allFinite()) throw DataError("view '" + v.name + "' contains non-finite entries");
  }
  if (labels) {
    if (labels->size() != n) throw SchemaError("label count does not match sample count");
    const int c = class_count.value_or(labels->maxCoeff());
    if (c < 1) throw DataError("class_count must be positive");
    std::vector<int> seen(static_cast<std::size_t>(c), 0);
    for (Index i = 0; i < n; ++i) {
      const int y = (*labels)(i);
      if (y < 1 || y > c) throw DataError("label " + std::to_string(y) + " outside 1.." + std::to_string(c));
      seen[static_cast<std::size_t>(y - 1)] = 1;
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end())
      throw DataError("some class in 1.." + std::to_string(c) + " has no samples");
  }
}

Normalization parse_normalization(const std::string& s) {
  if (s == "minmax") return Normalization::minmax;
  if (s == "zscore") return Normalization::zscore;
  if (s == "none") return Normalization::none;
  throw ConfigError("unknown normalization '" + s + "'");
}

std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::minmax: return "minmax";
    case Normalization::zscore: return "zscore";
    case Normalization::none: return "none";
  }
  return "none";
}

MultiViewDataset load_dataset(const fs::path& root) {
  const fs::path manifest_path = root / "dataset.json";
  if (!fs::exists(manifest_path)) throw NotFound("missing " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw SchemaError(manifest_path.string() + ": " + e.what());
  }

  MultiViewDataset ds;
  try {
    ds.name = manifest.value("name", root.filename().string());
    const Index n = manifest.at("n").get<Index>();
    for (const auto& v : manifest.at("views")) {
      ViewMatrix view;
      view.name = v.value("name", "view" + std::to_string(ds.views.size() + 1));
      const Index d = v.at("d").get<Index>();
      const fs::path file = root / v.at("file").get<std::string>();
      if (!fs::exists(file)) throw NotFound("missing view file " + file.string());
      view.data = read_view_csv(file, d, n);
      ds.views.push_back(std::move(view));
    }
    if (manifest.contains("class_count") && !manifest["class_count"].is_null())
      ds.class_count = manifest["class_count"].get<int>();
    if (manifest.contains("labels_file") && !manifest["labels_file"].is_null()) {
      const fs::path file = root / manifest["labels_file"].get<std::string>();
      if (!fs::exists(file)) throw NotFound("missing labels file " + file.string());
      ds.labels = read_labels(file, n);
      if (!ds.class_count) ds.class_count = ds.labels->maxCoeff();
    }
  } catch (const json::exception& e) {
    throw SchemaError(manifest_path.string() + ": " + e.what());
  }
  ds.validate();
  return ds;
}

void write_dataset(const MultiViewDataset& ds, const fs::path& root) {
  ds.validate();
  fs::create_directories(root);
  json manifest;
  manifest["name"] = ds.name;
  manifest["n"] = ds.samples();
  manifest["views"] = json::array();
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    const auto& view = ds.views[v];
    const std::string file = "view" + std::to_string(v + 1) + ".csv";
    manifest["views"].push_back({{"name", view.name}, {"file", file}, {"d", view.dim()}});

    std::string text;
    text.reserve(static_cast<std::size_t>(view.data.size()) * 20);
    for (Index r = 0; r < view.dim(); ++r) {
      for (Index c = 0; c < view.samples(); ++c) {
        if (c) text.push_back(',');
        append_double(text, view.data(r, c));
      }
      text.push_back('\n');
    }
    write_text(root / file, text);
  }
  if (ds.labels) {
    manifest["labels_file"] = "labels.csv";
    std::string text;
    for (Index i = 0; i < ds.labels->size(); ++i) text += std::to_string((*ds.labels)(i)) + "\n";
    write_text(root / "labels.csv", text);
  }
  if (ds.class_count) manifest["class_count"] = *ds.class_count;
  write_text(root / "dataset.json", manifest.dump(2) + "\n");
}

MultiViewDataset normalize(const MultiViewDataset& ds, Normalization scheme) {
  MultiViewDataset out = ds;
  if (scheme == Normalization::none) return out;
  for (auto& view : out.views) {
    Matrix& x = view.data;
    const double n = static_cast<double>(x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
      auto row = x.row(r);
      if (scheme == Normalization::minmax) {
        const double lo = row.minCoeff();
        const double range = row.maxCoeff() - lo;
        if (range > 0.0)
          row = (row.array() - lo) / range;
        else
          row.setZero();
      } else {
        const double mean = row.sum() / n;
        const double sd = std::sqrt((row.array() - mean).square().sum() / n);
        if (sd > 0.0)
          row = (row.array() - mean) / sd;
        else
          row.setZero();
      }
    }
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (samples < 2) throw ConfigError("synthetic spec needs at least 2 samples");
  if (classes < 1 || classes > samples) throw ConfigError("synthetic spec needs 1 <= classes <= samples");
  if (views < 1) throw ConfigError("synthetic spec needs at least one view");
  if (informative < 1) throw ConfigError("synthetic spec needs at least one informative feature per view");
  if (duplicates < 0 || nonlinear < 0 || noise < 0) throw ConfigError("feature counts must be nonnegative");
  if (!(noise_std >= 0.0) || !(separation >= 0.0)) throw ConfigError("noise_std and separation must be nonnegative");
}

FeatureRole SyntheticTruth::role(Index g) const {
  if (std::binary_search(informative.begin(), informative.end(), g)) return FeatureRole::informative;
  if (std::binary_search(redundant.begin(), redundant.end(), g)) return FeatureRole::redundant;
  return FeatureRole::noise;
}

SyntheticDataset synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const Index n = spec.samples;
  SyntheticDataset out;
  auto& ds = out.data;
  ds.name = "synthetic";
  LabelVector labels(n);
  for (Index j = 0; j < n; ++j) labels(j) = static_cast<int>(j % spec.classes) + 1;
  ds.labels = labels;
  ds.class_count = spec.classes;

  const Index d = spec.informative + spec.duplicates + spec.nonlinear + spec.noise;
  Index offset = 0;
  for (Index v = 0; v < spec.views; ++v) {
    Matrix centres(spec.classes, spec.informative);
    for (Index c = 0; c < centres.rows(); ++c)
      for (Index f = 0; f < centres.cols(); ++f) centres(c, f) = spec.separation * normal(rng);

    Matrix x(d, n);
    for (Index f = 0; f < spec.informative; ++f)
      for (Index j = 0; j < n; ++j) x(f, j) = centres(labels(j) - 1, f) + spec.noise_std * normal(rng);

    Index row = spec.informative;
    for (Index i = 0; i < spec.duplicates; ++i, ++row) {
      const Index src = i % spec.informative;
      x.row(row) = x.row(src);
      out.truth.source_of.emplace_back(offset + row, offset + src);
    }
    for (Index i = 0; i < spec.nonlinear; ++i, ++row) {
      const Index src = i % spec.informative;
      const auto s = x.row(src).array();
      const double mean = s.mean();
      const double sd = std::sqrt((s - mean).square().mean());
      x.row(row) = sd > 0.0 ? ((s - mean) / sd).tanh().matrix().eval() : Eigen::RowVectorXd::Zero(n).eval();
      out.truth.source_of.emplace_back(offset + row, offset + src);
    }
    for (Index i = 0; i < spec.noise; ++i, ++row)
      for (Index j = 0; j < n; ++j) x(row, j) = normal(rng);

    for (Index f = 0; f < spec.informative; ++f) out.truth.informative.push_back(offset + f);
    for (Index f = spec.informative; f < spec.informative + spec.duplicates + spec.nonlinear; ++f)
      out.truth.redundant.push_back(offset + f);
    for (Index f = d - spec.noise; f < d; ++f) out.truth.noise.push_back(offset + f);

    ds.views.push_back({"view" + std::to_string(v + 1), std::move(x)});
    offset += d;
  }
  ds.validate();
  return out;
}

void write_ground_truth(const SyntheticTruth& truth, const fs::path& file) {
  json j;
  j["informative"] = truth.informative;
  j["redundant"] = truth.redundant;
  j["noise"] = truth.noise;
  j["source_of"] = json::array();
  for (const auto& [copy, src] : truth.source_of) j["source_of"].push_back({{"feature", copy}, {"source", src}});
  j["index_base"] = 0;
  write_text(file, j.dump(2) + "\n");
}

}  // namespace kafuse
