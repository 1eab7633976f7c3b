#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stpatch {

// One timed geometry: a dual attention layer either over the patched
// R x P x d layout or as a single dense all-pairs patch (R = 1, P = M).
struct BenchRow {
  std::string variant;  // "patched" or "full"
  int n = 0;
  int capacity = 0;
  int leaves_per_patch = 0;
  int patch_count = 0;       // R
  int patch_size = 0;        // P
  std::uint64_t total_slots = 0;  // M = R * P
  int model_dim = 0;
  double forward_ms = 0.0;
  double backward_ms = 0.0;
  std::uint64_t flops_counted = 0;  // interaction flops of one forward layer
  std::uint64_t peak_alloc_bytes = 0;
  bool failed = false;
};

struct BenchConfig {
  std::vector<int> sizes;  // ascending point counts
  int model_dim = 64;
  int capacity = 2;
  int leaves_per_patch = 16;
  int heads = 1;
  int repeats = 3;  // timed iterations, median reported; one warm-up excluded
  bool with_backward = true;
  bool use_float = false;  // single precision variant
  std::uint64_t seed = 1;
};

// Times one patched and one full dual layer per size. Both run through the
// same tape ops, so differences isolate the layout. Out-of-memory marks the
// row failed and the run continues.
std::vector<BenchRow> run_bench(const BenchConfig& cfg);

void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path);

}  // namespace stpatch
