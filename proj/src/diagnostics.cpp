#include "bernnet/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "bernnet/error.hpp"

namespace bernnet {

Matrix activation_derivatives(const Network& net, const ForwardCache& cache, std::size_t activation_index) {
  if (cache.mode != Mode::train || cache.ops.size() != net.ops().size()) {
    throw StaleCacheError("diagnostics need a train-mode cache of this network");
  }
  const std::size_t op_index = net.activation_op(activation_index);
  const auto& spec = net.activation_spec(activation_index);
  const OpCache& oc = cache.ops[op_index];
  const Matrix& x = oc.input;
  Matrix d(x.rows(), x.cols());
  if (spec.kind != ActivationKind::bernstein) {
    auto in = x.values();
    auto out = d.values();
    for (std::size_t k = 0; k < in.size(); ++k) out[k] = activation_derivative(spec.kind, spec.leaky_slope, in[k]);
    return d;
  }
  const auto& b = spec.bernstein;
  const int n = b.degree;
  const Matrix& c = oc.coefficients;
  const bool shared = c.rows() == 1;
  const double scale = static_cast<double>(n) / b.width();
  std::vector<double> lower(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double v = x(i, j);
      const double t = v == b.upper ? 1.0 : (v - b.lower) / b.width();
      basis_row(n - 1, t, lower);
      const auto cr = c.row(shared ? 0 : j);
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += (cr[k + 1] - cr[k]) * lower[k];
      d(i, j) = scale * acc;
    }
  }
  return d;
}

std::vector<LayerBatchStats> layer_batch_stats(const Network& net, const ForwardCache& cache,
                                               const DeadNeuronPolicy& policy) {
  if (!(policy.threshold > 0.0)) throw DomainError("dead-neuron threshold must be > 0");
  std::vector<LayerBatchStats> out(net.activation_count());
  for (std::size_t a = 0; a < net.activation_count(); ++a) {
    const Matrix d = activation_derivatives(net, cache, a);
    const std::size_t rows = d.rows(), width = d.cols();
    double min_abs = std::numeric_limits<double>::infinity();
    std::vector<double> col_sum(width, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      auto r = d.row(i);
      for (std::size_t j = 0; j < width; ++j) {
        const double v = std::abs(r[j]);
        min_abs = std::min(min_abs, v);
        col_sum[j] += v;
      }
    }
    std::size_t dead = 0;
    for (double s : col_sum) {
      if (s / static_cast<double>(rows) < policy.threshold) ++dead;
    }
    out[a].min_abs_derivative = rows > 0 ? min_abs : 0.0;
    out[a].dead_ratio = width > 0 ? static_cast<double>(dead) / static_cast<double>(width) : 0.0;

    if (const auto clamp_op = net.clamp_before_activation(a)) {
      const auto& cs = std::get<ClampSpec>(net.ops()[*clamp_op].spec);
      const auto in = cache.ops[*clamp_op].input.values();
      std::size_t outside = 0;
      for (double v : in) {
        if (v < cs.lower || v > cs.upper) ++outside;
      }
      out[a].clamp_saturation = in.empty() ? 0.0 : static_cast<double>(outside) / static_cast<double>(in.size());
    }
  }
  return out;
}

std::vector<double> min_abs_derivative(const Network& net, const ForwardCache& cache) {
  std::vector<double> out;
  for (const auto& s : layer_batch_stats(net, cache)) out.push_back(s.min_abs_derivative);
  return out;
}

std::vector<double> dead_neuron_ratio(const Network& net, const ForwardCache& cache, const DeadNeuronPolicy& policy) {
  std::vector<double> out;
  for (const auto& s : layer_batch_stats(net, cache, policy)) out.push_back(s.dead_ratio);
  return out;
}

std::vector<double> clamp_saturation(const Network& net, const ForwardCache& cache) {
  std::vector<double> out;
  for (const auto& s : layer_batch_stats(net, cache)) out.push_back(s.clamp_saturation);
  return out;
}

void MagAccumulator::add(const Matrix& grad) {
  for (double v : grad.values()) sum_ += std::abs(v);
  count_ += grad.size();
}

double MagAccumulator::value() const noexcept {
  return count_ == 0 ? 0.0 : sum_ / static_cast<double>(count_);
}

double compute_auc(std::span<const double> scores, std::span<const std::size_t> labels) {
  if (scores.size() != labels.size()) throw DimensionError("compute_auc: score/label count mismatch");
  std::size_t pos = 0;
  for (std::size_t l : labels) {
    if (l > 1) throw DomainError("compute_auc: labels must be 0 or 1");
    pos += l;
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw DomainError("compute_auc: needs both classes");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum += midrank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

double compute_accuracy(const Matrix& logits, std::span<const std::size_t> labels) {
  if (logits.rows() != labels.size()) throw DimensionError("compute_accuracy: row/label count mismatch");
  if (labels.empty()) throw DimensionError("compute_accuracy: empty input");
  std::size_t correct = 0;
  if (logits.cols() == 1) {
    for (std::size_t i = 0; i < labels.size(); ++i) correct += (logits(i, 0) > 0.0 ? 1u : 0u) == labels[i];
  } else {
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

EpochAccumulator::EpochAccumulator(std::size_t layers)
    : min_(layers, std::numeric_limits<double>::infinity()), dead_sum_(layers, 0.0), sat_sum_(layers, 0.0) {}

void EpochAccumulator::add(const std::vector<LayerBatchStats>& stats) {
  if (stats.size() != min_.size()) throw DimensionError("epoch accumulator: layer count mismatch");
  for (std::size_t l = 0; l < stats.size(); ++l) {
    min_[l] = std::min(min_[l], stats[l].min_abs_derivative);
    dead_sum_[l] += stats[l].dead_ratio;
    sat_sum_[l] += stats[l].clamp_saturation;
  }
  ++batches_;
}

void EpochAccumulator::write_to(DiagnosticsRecord& record) const {
  const double nb = batches_ == 0 ? 1.0 : static_cast<double>(batches_);
  record.min_abs_derivative.resize(min_.size());
  record.dead_ratio.resize(min_.size());
  record.clamp_saturation.resize(min_.size());
  for (std::size_t l = 0; l < min_.size(); ++l) {
    record.min_abs_derivative[l] = batches_ == 0 ? 0.0 : min_[l];
    record.dead_ratio[l] = dead_sum_[l] / nb;
    record.clamp_saturation[l] = sat_sum_[l] / nb;
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("format_double failed");
  return std::string(buf, ptr);
}

CsvWriter::CsvWriter(const std::string& path, const std::string& fingerprint, const std::vector<std::string>& header)
    : path_(path), columns_(header.size()) {
  buffer_ = "# config-fingerprint: " + fingerprint + "\n";
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) buffer_ += ',';
    buffer_ += header[i];
  }
  buffer_ += '\n';
}

CsvWriter& CsvWriter::cell(double v) { return cell(format_double(v)); }
CsvWriter& CsvWriter::cell(long long v) { return cell(std::to_string(v)); }

CsvWriter& CsvWriter::cell(const std::string& v) {
  if (in_row_ == columns_) throw Error("csv " + path_ + ": too many cells in row");
  if (in_row_) buffer_ += ',';
  buffer_ += v;
  ++in_row_;
  return *this;
}

void CsvWriter::end_row() {
  if (in_row_ != columns_) throw Error("csv " + path_ + ": short row");
  buffer_ += '\n';
  in_row_ = 0;
}

void CsvWriter::close() {
  std::ofstream out(path_, std::ios::binary);
  if (!out) throw IoError("cannot write " + path_);
  out << buffer_;
  if (!out) throw IoError("failed writing " + path_);
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ParseError("csv has no column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

double CsvTable::number(std::size_t row, const std::string& name) const {
  const std::string& s = rows.at(row).at(column(name));
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError("csv: non-numeric cell '" + s + "'");
  return v;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  CsvTable t;
  std::string line;
  bool have_header = false;
  auto split_line = [](const std::string& l) {
    std::vector<std::string> cells;
    std::stringstream ss(l);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!l.empty() && l.back() == ',') cells.emplace_back();
    return cells;
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      t.comments.push_back(line.substr(1));
    } else if (!have_header) {
      t.header = split_line(line);
      have_header = true;
    } else {
      t.rows.push_back(split_line(line));
      if (t.rows.back().size() != t.header.size()) throw ParseError(path + ": row width differs from header");
    }
  }
  if (!have_header) throw ParseError(path + ": no header row");
  return t;
}

namespace {

double min_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : *std::min_element(v.begin(), v.end());
}
double max_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
}
double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

void export_metrics_csv(const std::vector<DiagnosticsRecord>& records, const std::string& path,
                        const std::string& fingerprint) {
  CsvWriter w(path, fingerprint,
              {"epoch", "train_loss", "val_loss", "val_metric", "lr", "mag", "min_abs_derivative",
               "max_dead_ratio", "mean_dead_ratio", "mean_clamp_saturation", "bounds_hold"});
  for (const auto& r : records) {
    w.cell(static_cast<long long>(r.epoch))
        .cell(r.train_loss)
        .cell(r.val_loss)
        .cell(r.val_metric)
        .cell(r.lr)
        .cell(r.mag)
        .cell(min_of(r.min_abs_derivative))
        .cell(max_of(r.dead_ratio))
        .cell(mean_of(r.dead_ratio))
        .cell(mean_of(r.clamp_saturation))
        .cell(static_cast<long long>(r.bounds_hold ? 1 : 0));
    w.end_row();
  }
  w.close();
}

void export_heatmap_csv(const std::vector<DiagnosticsRecord>& records, const std::string& path,
                        const std::string& fingerprint) {
  if (records.empty()) throw Error("export_heatmap_csv: no records");
  CsvWriter w(path, fingerprint, {"epoch", "layer_index", "dead_ratio", "min_abs_derivative"});
  for (const auto& r : records) {
    for (std::size_t l = 0; l < r.dead_ratio.size(); ++l) {
      w.cell(static_cast<long long>(r.epoch)).cell(static_cast<long long>(l)).cell(r.dead_ratio[l]).cell(r.min_abs_derivative[l]);
      w.end_row();
    }
  }
  w.close();
}

void export_depth_profile_csv(const DiagnosticsRecord& record, const std::vector<double>& floors,
                              const std::string& path, const std::string& fingerprint) {
  if (floors.size() != record.min_abs_derivative.size()) throw DimensionError("depth profile: floor count mismatch");
  CsvWriter w(path, fingerprint,
              {"epoch", "layer_index", "min_abs_derivative", "dead_ratio", "clamp_saturation", "theoretical_floor"});
  for (std::size_t l = 0; l < floors.size(); ++l) {
    w.cell(static_cast<long long>(record.epoch))
        .cell(static_cast<long long>(l))
        .cell(record.min_abs_derivative[l])
        .cell(record.dead_ratio[l])
        .cell(record.clamp_saturation[l])
        .cell(floors[l]);
    w.end_row();
  }
  w.close();
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_svg_plot(const std::string& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<PlotSeries>& series, bool log_y) {
  constexpr double W = 720, H = 440, L = 70, R = 170, T = 40, B = 50;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  auto ty = [&](double y) { return log_y ? std::log10(std::max(y, 1e-300)) : y; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(ty(s.y[i]))) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  if (!(x1 >= x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (ty(y) - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0;
    const double fy = y0 + (y1 - y0) * k / 4.0;
    const double sx = L + (W - L - R) * k / 4.0;
    const double sy = H - B - (H - T - B) * k / 4.0;
    o << "<text x=\"" << sx << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << format_double(std::round(fx * 1000) / 1000) << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << sy + 4 << "\" text-anchor=\"end\">"
      << (log_y ? "1e" : "") << format_double(std::round(fy * 1000) / 1000) << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xml_escape(x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (T + H - B) / 2
    << ")\">" << xml_escape(y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % 10];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < std::min(series[s].x.size(), series[s].y.size()); ++i) {
      if (!std::isfinite(ty(series[s].y[i]))) continue;
      o << px(series[s].x[i]) << "," << py(series[s].y[i]) << " ";
    }
    o << "\"/>\n";
    const double ly = T + 16.0 * static_cast<double>(s);
    o << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\">" << xml_escape(series[s].name) << "</text>\n";
  }
  o << "</svg>\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << o.str();
}

}  // namespace bernnet
