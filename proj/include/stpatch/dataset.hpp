#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stpatch/tensor.hpp"

namespace stpatch {

// A traffic dataset: H_total x N value matrix, per-point coordinates, and
// the calendar metadata needed to index the temporal dictionaries.
struct RawDataset {
  Tensor values;  // [H_total x N]
  std::vector<double> lat;
  std::vector<double> lng;
  std::int64_t start_epoch_seconds = 0;
  int slice_minutes = 5;

  std::size_t total_slices() const { return values.dim(0); }
  std::size_t point_count() const { return values.dim(1); }
  int slices_per_day() const { return 1440 / slice_minutes; }
  std::int64_t timestamp_of_slice(std::size_t slice) const {
    return start_epoch_seconds + std::int64_t(slice) * slice_minutes * 60;
  }
};

// Directory layout: points.csv (index,lat,lng), values.bin (magic PSTD1,
// little-endian f64 rows, one row per time slice), meta.txt (start_time,
// slice_minutes).
RawDataset load_dataset(const std::string& dir);
void save_dataset(const RawDataset& ds, const std::string& dir);

// Contiguous [begin, begin+length) range of time slices.
struct SliceRange {
  std::size_t begin = 0;
  std::size_t length = 0;
};

struct SplitRanges {
  SliceRange train, val, test;
};

// 6:2:2 prefix/middle/suffix split, no shuffling.
SplitRanges chronological_split(const RawDataset& ds);

// Rows [range.begin, range.begin+range.length) of the value matrix.
Tensor slice_values(const RawDataset& ds, const SliceRange& range);

// One training/evaluation sample: the history window starts at
// history_begin (absolute slice index) and the future follows immediately.
struct WindowRef {
  std::size_t history_begin;
  int history_len;
  int horizon;
};

std::vector<WindowRef> windows(const SliceRange& range, int history_len = 12, int horizon = 12,
                               int stride = 1);

Tensor window_history(const RawDataset& ds, const WindowRef& w);  // [H x N]
Tensor window_future(const RawDataset& ds, const WindowRef& w);   // [F x N]
std::int64_t window_last_timestamp(const RawDataset& ds, const WindowRef& w);

// Streaming metric accumulation over (prediction, target) pairs in
// de-normalized units. MAPE masks targets with |y| <= mask_threshold and is
// reported as a percentage; it is absent when nothing survives the mask.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(int horizon = 12, double mask_threshold = 1e-3);
  void add(const Tensor& pred, const Tensor& target);  // both [F x N]

  struct Row {
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> mape;  // percent
  };
  Row at_horizon(int h) const;  // 1-based forecast step
  Row average() const;
  bool empty() const { return count_all_ == 0; }

 private:
  Row finalize(double abs_sum, double sq_sum, std::uint64_t count, double ape_sum,
               std::uint64_t ape_count) const;
  int horizon_;
  double mask_threshold_;
  std::vector<double> abs_sum_, sq_sum_, ape_sum_;
  std::vector<std::uint64_t> count_, ape_count_;
  std::uint64_t count_all_ = 0;
};

// The Table-style report at horizons 3, 6, 12 and the all-step average.
struct MetricReport {
  MetricAccumulator::Row horizon3, horizon6, horizon12, average;
};

MetricReport make_report(const MetricAccumulator& acc);
void write_metric_csv(const MetricReport& report, const std::string& path);
std::string format_report(const MetricReport& report);

struct SynthSpec {
  std::uint64_t seed = 1;
  int point_count = 64;
  int days = 30;
  int slice_minutes = 15;
  int k_neighbors = 4;
  double diffusion = 0.5;
  double noise = 0.1;
};

// Points uniform in a small lat/lng box; each series is a daily sinusoid
// with per-point amplitude/phase/level plus diffusion from the k nearest
// neighbors' previous value and Gaussian noise. Fully seed-determined.
RawDataset synth_generate(const SynthSpec& spec);

}  // namespace stpatch
