#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stpatch/graph.hpp"
#include "stpatch/timeutil.hpp"

namespace stpatch {

struct EmbeddingConfig {
  int history_len = 12;  // H
  int input_dim = 128;   // d_e
  int week_dim = 32;     // d_w
  int day_dim = 32;      // d_d
  int spatial_dim = 32;  // d_s
  int week_size = 7;     // N_w
  int day_size = 0;      // N_d, slices per day
  int point_count = 0;   // N

  int model_dim() const { return input_dim + week_dim + day_dim + spatial_dim; }
};

// Tape leaves for the learnable embedding tables.
struct EmbeddingRefs {
  NodePtr input_w;  // [d_e x H]
  NodePtr input_b;  // [d_e]
  NodePtr week;     // [N_w x d_w]
  NodePtr day;      // [N_d x d_d]
  NodePtr spatial;  // [N x d_s]
};

// (day-of-week, slice-of-day) lookup indices for a window's last timeslice.
inline std::pair<int, int> temporal_indices(std::int64_t timestamp, int slice_minutes,
                                            const EmbeddingConfig& cfg) {
  const int dow = day_of_week(timestamp);
  const int tod = seconds_since_midnight(timestamp) / (slice_minutes * 60);
  if (dow < 0 || dow >= cfg.week_size || tod < 0 || tod >= cfg.day_size) {
    throw std::invalid_argument("timestamp " + format_iso8601(timestamp) +
                                " falls outside the temporal dictionaries");
  }
  return {dow, tod};
}

// Row n of the result is the concatenation of the projected history of point
// n, the shared day-of-week and slice-of-day dictionary rows, and the
// point's spatial identity row. window is [H x N] in normalized units.
inline NodePtr embed(Tape& tape, const Tensor& window, int dow, int tod,
                     const EmbeddingRefs& refs, const EmbeddingConfig& cfg) {
  if (window.rank() != 2 || window.dim(0) != std::size_t(cfg.history_len) ||
      window.dim(1) != std::size_t(cfg.point_count)) {
    throw std::invalid_argument("window must be [" + std::to_string(cfg.history_len) + " x " +
                                std::to_string(cfg.point_count) + "], got " +
                                window.shape_str());
  }
  auto input = tape.leaf(transpose2(window));  // [N x H]
  auto projected =
      tape.add_rowbias(tape.matmul(input, tape.transpose2(refs.input_w)), refs.input_b);
  auto week_rows =
      tape.gather_rows(refs.week, std::vector<int>(std::size_t(cfg.point_count), dow));
  auto day_rows = tape.gather_rows(refs.day, std::vector<int>(std::size_t(cfg.point_count), tod));
  return tape.concat_last({projected, week_rows, day_rows, refs.spatial});
}

}  // namespace stpatch
