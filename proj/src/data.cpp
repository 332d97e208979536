#include "bernnet/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "bernnet/error.hpp"

namespace bernnet {

std::size_t Dataset::output_width() const noexcept {
  switch (task) {
    case TaskKind::multiclass: return num_classes;
    case TaskKind::binary: return 1;
    case TaskKind::regression: return targets.cols();
  }
  return 0;
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  for (;;) {
    const int n = gzread(f, buf, sizeof buf);
    if (n < 0) {
      int code = 0;
      const std::string msg = gzerror(f, &code);
      gzclose(f);
      throw IoError("read error in " + path + ": " + msg);
    }
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  gzclose(f);
  return out;
}

namespace {

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

std::string hex32(std::uint32_t v) {
  std::ostringstream s;
  s << "0x" << std::hex << v;
  return s.str();
}

}  // namespace

Dataset load_mnist(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file_bytes(images_path);
  const auto lab = read_file_bytes(labels_path);
  if (img.size() < 16) throw ParseError(images_path + ": truncated IDX header");
  if (lab.size() < 8) throw ParseError(labels_path + ": truncated IDX header");
  if (be32(img, 0) != 0x00000803) {
    throw ParseError(images_path + ": bad image magic " + hex32(be32(img, 0)) + " (expected 0x803)");
  }
  if (be32(lab, 0) != 0x00000801) {
    throw ParseError(labels_path + ": bad label magic " + hex32(be32(lab, 0)) + " (expected 0x801)");
  }
  const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  const std::size_t n_labels = be32(lab, 4);
  if (n != n_labels) {
    throw ParseError("MNIST image count " + std::to_string(n) + " != label count " + std::to_string(n_labels));
  }
  const std::size_t d = rows * cols;
  if (img.size() < 16 + n * d) throw ParseError(images_path + ": truncated pixel data");
  if (lab.size() < 8 + n) throw ParseError(labels_path + ": truncated label data");

  Dataset out;
  out.task = TaskKind::multiclass;
  out.num_classes = 10;
  out.features = Matrix(n, d);
  out.labels.resize(n);
  auto f = out.features.values();
  for (std::size_t i = 0; i < n * d; ++i) f[i] = static_cast<double>(img[16 + i]) / 255.0;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned label = lab[8 + i];
    if (label > 9) throw ParseError(labels_path + ": label " + std::to_string(label) + " > 9 at row " + std::to_string(i));
    out.labels[i] = label;
  }
  return out;
}

Dataset load_higgs_csv(const std::string& path, std::optional<std::size_t> max_rows) {
  constexpr std::size_t kColumns = 29;
  const auto bytes = read_file_bytes(path);
  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < bytes.size() && (!max_rows || labels.size() < *max_rows)) {
    std::size_t end = pos;
    while (end < bytes.size() && bytes[end] != '\n') ++end;
    ++line_no;
    std::string_view line(reinterpret_cast<const char*>(bytes.data()) + pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    std::size_t col = 0;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      std::string_view field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
      while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
      if (field.empty()) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": missing field in column " + std::to_string(col + 1));
      }
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": non-numeric field '" + std::string(field) + "'");
      }
      if (col == 0) {
        if (v != 0.0 && v != 1.0) {
          throw ParseError(path + ":" + std::to_string(line_no) + ": label must be 0 or 1");
        }
        labels.push_back(static_cast<std::size_t>(v));
      } else if (col < kColumns) {
        values.push_back(v);
      }
      ++col;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (col != kColumns) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected 29 columns, found " + std::to_string(col));
    }
  }
  Dataset out;
  out.task = TaskKind::binary;
  out.num_classes = 2;
  out.features = Matrix(labels.size(), kColumns - 1, std::move(values));
  out.labels = std::move(labels);
  return out;
}

Batch make_batch(const Dataset& d, std::span<const std::size_t> rows) {
  Batch b;
  b.x = gather_rows(d.features, rows);
  b.rows.assign(rows.begin(), rows.end());
  if (d.task == TaskKind::regression) {
    b.targets = gather_rows(d.targets, rows);
  } else {
    b.labels.reserve(rows.size());
    for (std::size_t r : rows) b.labels.push_back(d.labels[r]);
  }
  return b;
}

Dataset subset(const Dataset& d, std::span<const std::size_t> rows) {
  Dataset out;
  out.task = d.task;
  out.num_classes = d.num_classes;
  out.split = d.split;
  Batch b = make_batch(d, rows);
  out.features = std::move(b.x);
  out.labels = std::move(b.labels);
  out.targets = std::move(b.targets);
  return out;
}

Dataset take_first(const Dataset& d, std::size_t n) {
  std::vector<std::size_t> rows(std::min(n, d.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return subset(d, rows);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                            std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw DomainError("split: fraction must lie in (0, 1)");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto head = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> a(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(head));
  std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(head), order.end());
  return {std::move(a), std::move(b)};
}

std::pair<Dataset, Dataset> split(const Dataset& d, double fraction, std::uint64_t seed) {
  const auto [a, b] = split_indices(d.size(), fraction, seed);
  Dataset train = subset(d, a);
  Dataset val = subset(d, b);
  train.split = "train";
  val.split = "validation";
  return {std::move(train), std::move(val)};
}

Standardizer Standardizer::fit(const Matrix& x, double var_floor) {
  if (x.rows() == 0) throw DimensionError("standardizer: no rows");
  const std::size_t n = x.rows(), d = x.cols();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
  }
  for (double& m : s.mean) m /= static_cast<double>(n);
  std::vector<double> var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double c = r[j] - s.mean[j];
      var[j] += c * c;
    }
  }
  for (std::size_t j = 0; j < d; ++j) s.scale[j] = std::sqrt(std::max(var[j] / static_cast<double>(n), var_floor));
  return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (x.cols() != mean.size()) throw DimensionError("standardizer: width mismatch");
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) o[j] = (r[j] - mean[j]) / scale[j];
  }
  return out;
}

BatchIterator::BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed, bool shuffle)
    : data_(&data), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  start_epoch(1);
}

void BatchIterator::start_epoch(int epoch) {
  order_.resize(data_->size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (shuffle_) {
    Rng rng(seed_ ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<std::size_t>(order_));
  }
  pos_ = 0;
}

bool BatchIterator::next(Batch& out) {
  if (pos_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), pos_ + batch_size_);
  out = make_batch(*data_, std::span<const std::size_t>(order_.data() + pos_, end - pos_));
  pos_ = end;
  return true;
}

std::size_t BatchIterator::batches_per_epoch() const noexcept {
  return (data_->size() + batch_size_ - 1) / batch_size_;
}

double target_function(const std::string& name, double x) {
  if (name == "linear") return x;
  if (name == "const") return 1.0;
  const bool is_sin = name.rfind("sin_", 0) == 0;
  const bool is_cos = name.rfind("cos_", 0) == 0;
  if (is_sin || is_cos) {
    int k = 0;
    const char* first = name.data() + 4;
    const char* last = name.data() + name.size();
    const auto [ptr, ec] = std::from_chars(first, last, k);
    if (ec == std::errc() && ptr == last && k >= 0) {
      const double arg = 2.0 * std::numbers::pi * k * x;
      return is_sin ? std::sin(arg) : std::cos(arg);
    }
  }
  throw ConfigError("unknown target function '" + name + "'");
}

Dataset synth_regression(const SyntheticTarget& target, std::uint64_t seed) {
  if (!(target.upper > target.lower)) throw DomainError("synthetic target: empty domain");
  if (target.samples < 2) throw DomainError("synthetic target: needs >= 2 samples");
  if (target.functions.empty()) throw DomainError("synthetic target: no functions");
  if (!(target.noise >= 0.0)) throw DomainError("synthetic target: noise must be >= 0");
  const std::size_t n = target.samples;
  Rng rng(seed);
  Dataset out;
  out.task = TaskKind::regression;
  out.features = Matrix(n, 1);
  out.targets = Matrix(n, target.functions.size());
  const double w = target.upper - target.lower;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = target.random_x ? rng.uniform(target.lower, target.upper)
                                     : target.lower + w * static_cast<double>(i) / static_cast<double>(n - 1);
    out.features(i, 0) = i + 1 == n && !target.random_x ? target.upper : x;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < target.functions.size(); ++j) {
      double y = target_function(target.functions[j], out.features(i, 0));
      if (target.noise > 0.0) y += rng.normal(0.0, target.noise);
      out.targets(i, j) = y;
    }
  }
  return out;
}

double modulus_estimate(std::span<const double> x, const Matrix& y, double delta) {
  if (x.size() < 2) throw DomainError("modulus_estimate: needs >= 2 samples");
  if (y.rows() != x.size()) throw DimensionError("modulus_estimate: x/y length mismatch");
  if (!(delta > 0.0)) throw DomainError("modulus_estimate: delta must be > 0");
  std::vector<std::size_t> order(x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  double best = 0.0;
  for (std::size_t a = 0; a < order.size(); ++a) {
    const std::size_t i = order[a];
    for (std::size_t b = a + 1; b < order.size() && x[order[b]] - x[i] <= delta; ++b) {
      const std::size_t j = order[b];
      for (std::size_t c = 0; c < y.cols(); ++c) best = std::max(best, std::abs(y(i, c) - y(j, c)));
    }
  }
  return best;
}

}  // namespace bernnet
