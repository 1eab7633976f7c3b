#include "stpatch/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "stpatch/timeutil.hpp"

namespace stpatch {

namespace {

constexpr char kValuesMagic[5] = {'P', 'S', 'T', 'D', '1'};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  return fields;
}

void impute_missing(Tensor& values) {
  const std::size_t rows = values.dim(0), cols = values.dim(1);
  std::size_t fixed = 0;
  for (std::size_t j = 0; j < cols; ++j) {
    double last = 0.0;  // leading gaps become zero
    for (std::size_t t = 0; t < rows; ++t) {
      if (std::isfinite(values(t, j))) {
        last = values(t, j);
      } else {
        values(t, j) = last;
        ++fixed;
      }
    }
  }
  if (fixed > 0) {
    std::cerr << "warning: imputed " << fixed
              << " missing value(s) by previous-slice carry-forward\n";
  }
}

}  // namespace

RawDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path base(dir);
  const fs::path points_path = base / "points.csv";
  const fs::path values_path = base / "values.bin";
  const fs::path meta_path = base / "meta.txt";

  RawDataset ds;

  // points.csv: header then index,lat,lng
  {
    std::ifstream in(points_path);
    if (!in) throw std::runtime_error("cannot open " + points_path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty points file: " + points_path.string());
    std::size_t expected = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto fields = split_csv_line(line);
      if (fields.size() != 3) {
        throw std::runtime_error("malformed points row '" + line + "' in " + points_path.string());
      }
      const std::size_t idx = std::stoul(fields[0]);
      if (idx != expected) {
        throw std::runtime_error("points file indices must be consecutive from 0; got " +
                                 fields[0] + " at row " + std::to_string(expected));
      }
      ds.lat.push_back(std::stod(fields[1]));
      ds.lng.push_back(std::stod(fields[2]));
      ++expected;
    }
  }

  // meta.txt: key=value lines
  {
    std::ifstream in(meta_path);
    if (!in) throw std::runtime_error("cannot open " + meta_path.string());
    std::string line;
    bool have_start = false, have_slice = false;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq);
      const std::string val = line.substr(eq + 1);
      if (key == "start_time") {
        ds.start_epoch_seconds = parse_iso8601(val);
        have_start = true;
      } else if (key == "slice_minutes") {
        ds.slice_minutes = std::stoi(val);
        have_slice = true;
      }
    }
    if (!have_start || !have_slice) {
      throw std::runtime_error("meta file missing start_time or slice_minutes: " +
                               meta_path.string());
    }
    if (ds.slice_minutes <= 0 || 1440 % ds.slice_minutes != 0) {
      throw std::runtime_error("slice_minutes must divide a day, got " +
                               std::to_string(ds.slice_minutes));
    }
  }

  // values.bin: magic, u64 rows, u64 cols, then row-major f64
  {
    std::ifstream in(values_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + values_path.string());
    char magic[5];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kValuesMagic, sizeof(kValuesMagic)) != 0) {
      throw std::runtime_error("bad values magic in " + values_path.string() +
                               " (expected PSTD1)");
    }
    std::uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (!in || rows == 0 || cols == 0) {
      throw std::runtime_error("corrupt header in " + values_path.string());
    }
    if (cols != ds.lat.size()) {
      throw std::runtime_error("coordinate count " + std::to_string(ds.lat.size()) +
                               " does not match value columns " + std::to_string(cols));
    }
    ds.values = Tensor({rows, cols});
    in.read(reinterpret_cast<char*>(ds.values.data()),
            std::streamsize(rows * cols * sizeof(double)));
    if (!in) throw std::runtime_error("truncated values payload in " + values_path.string());
  }

  impute_missing(ds.values);
  return ds;
}

void save_dataset(const RawDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path base(dir);
  {
    std::ofstream out(base / "points.csv");
    if (!out) throw std::runtime_error("cannot write points.csv in " + dir);
    out << "index,lat,lng\n";
    out.precision(17);
    for (std::size_t i = 0; i < ds.lat.size(); ++i) {
      out << i << "," << ds.lat[i] << "," << ds.lng[i] << "\n";
    }
  }
  {
    std::ofstream out(base / "meta.txt");
    if (!out) throw std::runtime_error("cannot write meta.txt in " + dir);
    out << "start_time=" << format_iso8601(ds.start_epoch_seconds) << "\n";
    out << "slice_minutes=" << ds.slice_minutes << "\n";
  }
  {
    std::ofstream out(base / "values.bin", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write values.bin in " + dir);
    out.write(kValuesMagic, sizeof(kValuesMagic));
    const std::uint64_t rows = ds.values.dim(0), cols = ds.values.dim(1);
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    out.write(reinterpret_cast<const char*>(ds.values.data()),
              std::streamsize(rows * cols * sizeof(double)));
    if (!out) throw std::runtime_error("values.bin write failed in " + dir);
  }
}

SplitRanges chronological_split(const RawDataset& ds) {
  const std::size_t total = ds.total_slices();
  if (total < 24) {
    throw std::invalid_argument("dataset too short to split: " + std::to_string(total) +
                                " slices, need at least 24");
  }
  SplitRanges s;
  s.train = {0, total * 6 / 10};
  s.val = {s.train.length, total * 2 / 10};
  s.test = {s.train.length + s.val.length, total - s.train.length - s.val.length};
  return s;
}

Tensor slice_values(const RawDataset& ds, const SliceRange& range) {
  const std::size_t cols = ds.point_count();
  Tensor out({range.length, cols});
  std::memcpy(out.data(), ds.values.data() + range.begin * cols,
              range.length * cols * sizeof(double));
  return out;
}

std::vector<WindowRef> windows(const SliceRange& range, int history_len, int horizon, int stride) {
  std::vector<WindowRef> out;
  const std::size_t need = std::size_t(history_len) + std::size_t(horizon);
  if (range.length < need) return out;
  for (std::size_t off = 0; off + need <= range.length; off += std::size_t(stride)) {
    out.push_back({range.begin + off, history_len, horizon});
  }
  return out;
}

Tensor window_history(const RawDataset& ds, const WindowRef& w) {
  return slice_values(ds, {w.history_begin, std::size_t(w.history_len)});
}

Tensor window_future(const RawDataset& ds, const WindowRef& w) {
  return slice_values(ds, {w.history_begin + std::size_t(w.history_len), std::size_t(w.horizon)});
}

std::int64_t window_last_timestamp(const RawDataset& ds, const WindowRef& w) {
  return ds.timestamp_of_slice(w.history_begin + std::size_t(w.history_len) - 1);
}

MetricAccumulator::MetricAccumulator(int horizon, double mask_threshold)
    : horizon_(horizon),
      mask_threshold_(mask_threshold),
      abs_sum_(std::size_t(horizon), 0.0),
      sq_sum_(std::size_t(horizon), 0.0),
      ape_sum_(std::size_t(horizon), 0.0),
      count_(std::size_t(horizon), 0),
      ape_count_(std::size_t(horizon), 0) {}

void MetricAccumulator::add(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target) || pred.rank() != 2 || pred.dim(0) != std::size_t(horizon_)) {
    throw std::invalid_argument("metric input shapes disagree: " + pred.shape_str() + " vs " +
                                target.shape_str());
  }
  const std::size_t cols = pred.dim(1);
  for (int h = 0; h < horizon_; ++h) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double e = pred(std::size_t(h), j) - target(std::size_t(h), j);
      abs_sum_[std::size_t(h)] += std::abs(e);
      sq_sum_[std::size_t(h)] += e * e;
      ++count_[std::size_t(h)];
      const double y = target(std::size_t(h), j);
      if (std::abs(y) > mask_threshold_) {
        ape_sum_[std::size_t(h)] += std::abs(e) / std::abs(y);
        ++ape_count_[std::size_t(h)];
      }
    }
  }
  ++count_all_;
}

MetricAccumulator::Row MetricAccumulator::finalize(double abs_sum, double sq_sum,
                                                   std::uint64_t count, double ape_sum,
                                                   std::uint64_t ape_count) const {
  Row row;
  if (count == 0) return row;
  row.mae = abs_sum / double(count);
  row.rmse = std::sqrt(sq_sum / double(count));
  if (ape_count > 0) {
    row.mape = 100.0 * ape_sum / double(ape_count);
  } else {
    std::cerr << "warning: MAPE undefined (all targets within mask threshold)\n";
  }
  return row;
}

MetricAccumulator::Row MetricAccumulator::at_horizon(int h) const {
  if (h < 1 || h > horizon_) throw std::invalid_argument("horizon out of range");
  const std::size_t i = std::size_t(h - 1);
  return finalize(abs_sum_[i], sq_sum_[i], count_[i], ape_sum_[i], ape_count_[i]);
}

MetricAccumulator::Row MetricAccumulator::average() const {
  double a = 0, s = 0, p = 0;
  std::uint64_t c = 0, pc = 0;
  for (int h = 0; h < horizon_; ++h) {
    a += abs_sum_[std::size_t(h)];
    s += sq_sum_[std::size_t(h)];
    p += ape_sum_[std::size_t(h)];
    c += count_[std::size_t(h)];
    pc += ape_count_[std::size_t(h)];
  }
  return finalize(a, s, c, p, pc);
}

MetricReport make_report(const MetricAccumulator& acc) {
  MetricReport r;
  r.horizon3 = acc.at_horizon(3);
  r.horizon6 = acc.at_horizon(6);
  r.horizon12 = acc.at_horizon(12);
  r.average = acc.average();
  return r;
}

namespace {
void write_row(std::ostream& out, const std::string& name, const MetricAccumulator::Row& row) {
  out << name << "," << row.mae << "," << row.rmse << ",";
  if (row.mape) out << *row.mape;
  out << "\n";
}
}  // namespace

void write_metric_csv(const MetricReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out.precision(17);
  out << "horizon,mae,rmse,mape\n";
  write_row(out, "3", report.horizon3);
  write_row(out, "6", report.horizon6);
  write_row(out, "12", report.horizon12);
  write_row(out, "average", report.average);
}

std::string format_report(const MetricReport& report) {
  std::ostringstream os;
  os.precision(6);
  auto line = [&](const char* name, const MetricAccumulator::Row& row) {
    os << name << "  MAE " << row.mae << "  RMSE " << row.rmse << "  MAPE ";
    if (row.mape) os << *row.mape << "%";
    else os << "n/a";
    os << "\n";
  };
  line("horizon  3:", report.horizon3);
  line("horizon  6:", report.horizon6);
  line("horizon 12:", report.horizon12);
  line("average   :", report.average);
  return os.str();
}

RawDataset synth_generate(const SynthSpec& spec) {
  if (spec.point_count < 2 || spec.days < 2) {
    throw std::invalid_argument("synthetic dataset needs at least 2 points and 2 days");
  }
  if (spec.slice_minutes <= 0 || 1440 % spec.slice_minutes != 0) {
    throw std::invalid_argument("slice_minutes must divide a day");
  }
  std::mt19937_64 rng(spec.seed);
  const std::size_t n = std::size_t(spec.point_count);
  const int per_day = 1440 / spec.slice_minutes;
  const std::size_t total = std::size_t(per_day) * std::size_t(spec.days);
  constexpr double kTau = 2.0 * 3.14159265358979323846;

  RawDataset ds;
  ds.slice_minutes = spec.slice_minutes;
  ds.start_epoch_seconds = parse_iso8601("2019-01-01 00:00:00");
  ds.lat.resize(n);
  ds.lng.resize(n);
  std::vector<double> ux(n), uy(n);
  for (std::size_t i = 0; i < n; ++i) {
    ux[i] = uniform01(rng);
    uy[i] = uniform01(rng);
    ds.lat[i] = 37.0 + 0.2 * uy[i];
    ds.lng[i] = -122.0 + 0.2 * ux[i];
  }

  // k nearest neighbors in the unit square, self excluded.
  const std::size_t k = std::size_t(std::min<int>(spec.k_neighbors, int(n) - 1));
  std::vector<std::vector<int>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> d;
    d.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = ux[i] - ux[j];
      const double dy = uy[i] - uy[j];
      d.emplace_back(dx * dx + dy * dy, int(j));
    }
    std::sort(d.begin(), d.end());
    for (std::size_t j = 0; j < k; ++j) neighbors[i].push_back(d[j].second);
  }

  std::vector<double> amplitude(n), phase(n), level(n);
  for (std::size_t i = 0; i < n; ++i) {
    amplitude[i] = uniform_in(rng, 0.5, 1.5);
    phase[i] = uniform_in(rng, 0.0, kTau);
    level[i] = uniform_in(rng, 5.0, 10.0);
  }

  ds.values = Tensor({total, n});
  for (std::size_t t = 0; t < total; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double angle = kTau * (double(t) / double(per_day)) + phase[i];
      double x = level[i] + amplitude[i] * std::sin(angle);
      if (spec.diffusion != 0.0 && t > 0 && !neighbors[i].empty()) {
        double mean_prev = 0.0;
        for (int j : neighbors[i]) mean_prev += ds.values(t - 1, std::size_t(j));
        mean_prev /= double(neighbors[i].size());
        x += spec.diffusion * mean_prev;
      }
      if (spec.noise != 0.0) x += spec.noise * gaussian(rng);
      ds.values(t, i) = x;
    }
  }
  return ds;
}

}  // namespace stpatch
