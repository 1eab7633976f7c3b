#include "stpatch/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <new>
#include <stdexcept>

#include "stpatch/encoder.hpp"

namespace stpatch {

namespace {

struct Geometry {
  int patch_count, patch_size;
  std::uint64_t total_slots;
};

Geometry patched_geometry(int n, int capacity, int leaves_per_patch) {
  int depth = 0;
  while ((std::size_t(capacity) << depth) < std::size_t(n)) ++depth;
  const std::size_t leaves = std::size_t(1) << depth;
  if (std::size_t(leaves_per_patch) > leaves) {
    throw std::invalid_argument("leaves per patch " + std::to_string(leaves_per_patch) +
                                " exceeds leaf count " + std::to_string(leaves) + " at N = " +
                                std::to_string(n));
  }
  Geometry g;
  g.patch_size = capacity * leaves_per_patch;
  g.patch_count = int(leaves) / leaves_per_patch;
  g.total_slots = leaves * std::size_t(capacity);
  return g;
}

template <typename T>
void time_variant(BenchRow& row, int heads, int repeats, bool with_backward, std::uint64_t seed) {
  using Clock = std::chrono::steady_clock;
  std::mt19937_64 rng(seed);
  const int d = row.model_dim;
  const int dh = d / heads;

  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.heads = heads;
  cfg.model_dim = d;
  cfg.patch_count = row.patch_count;
  cfg.patch_size = row.patch_size;
  cfg.residual = false;
  cfg.layernorm = false;

  const auto input = random_uniform<T>(
      rng, {std::size_t(row.patch_count), std::size_t(row.patch_size), std::size_t(d)}, -1.0, 1.0);
  const double bound = std::sqrt(1.0 / double(d));
  std::vector<TensorT<T>> depth_w, breadth_w;
  for (int b = 0; b < 2; ++b) {
    auto& dst = b == 0 ? depth_w : breadth_w;
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < 3; ++i) {
        dst.push_back(
            random_uniform<T>(rng, {std::size_t(d), std::size_t(dh)}, -bound, bound));
      }
    }
    dst.push_back(random_uniform<T>(rng, {std::size_t(d), std::size_t(d)}, -bound, bound));
  }

  auto build_refs = [&](TapeT<T>& tape, const std::vector<TensorT<T>>& w) {
    AttentionWeightRefs<T> refs;
    for (int h = 0; h < heads; ++h) {
      refs.query.push_back(tape.leaf(w[std::size_t(3 * h)]));
      refs.key.push_back(tape.leaf(w[std::size_t(3 * h + 1)]));
      refs.value.push_back(tape.leaf(w[std::size_t(3 * h + 2)]));
    }
    refs.output = tape.leaf(w[std::size_t(3 * heads)]);
    return refs;
  };

  std::vector<double> fwd_ms, bwd_ms;
  bool counted = false;
  for (int it = 0; it < repeats + 1; ++it) {  // first iteration is the warm-up
    TapeT<T> tape;
    auto x = tape.leaf(input);
    auto depth_refs = build_refs(tape, depth_w);
    auto breadth_refs = build_refs(tape, breadth_w);

    if (!counted) FlopStats::reset();
    MemStats::reset_peak();
    const auto f0 = Clock::now();
    auto out = depth_attention(tape, x, depth_refs, cfg);
    out = breadth_attention(tape, out, breadth_refs, cfg);
    const auto f1 = Clock::now();
    if (!counted) {
      row.flops_counted = FlopStats::interaction;
      counted = true;
    }

    double bwd = 0.0;
    if (with_backward) {
      auto loss = tape.sum_all(tape.reshape(out, {row.total_slots * std::size_t(d)}));
      const auto b0 = Clock::now();
      tape.backward(loss);
      const auto b1 = Clock::now();
      bwd = std::chrono::duration<double, std::milli>(b1 - b0).count();
    }
    row.peak_alloc_bytes = std::max(row.peak_alloc_bytes, MemStats::peak_bytes);
    if (it == 0) continue;
    fwd_ms.push_back(std::chrono::duration<double, std::milli>(f1 - f0).count());
    if (with_backward) bwd_ms.push_back(bwd);
  }

  std::sort(fwd_ms.begin(), fwd_ms.end());
  row.forward_ms = fwd_ms[fwd_ms.size() / 2];
  if (with_backward) {
    std::sort(bwd_ms.begin(), bwd_ms.end());
    row.backward_ms = bwd_ms[bwd_ms.size() / 2];
  }
}

template <typename T>
BenchRow bench_one(const BenchConfig& cfg, int n, bool full) {
  BenchRow row;
  row.variant = full ? "full" : "patched";
  row.n = n;
  row.capacity = cfg.capacity;
  row.leaves_per_patch = cfg.leaves_per_patch;
  row.model_dim = cfg.model_dim;
  const Geometry base = patched_geometry(n, cfg.capacity, cfg.leaves_per_patch);
  row.total_slots = base.total_slots;
  if (full) {
    row.patch_count = 1;
    row.patch_size = int(base.total_slots);
  } else {
    row.patch_count = base.patch_count;
    row.patch_size = base.patch_size;
  }
  try {
    time_variant<T>(row, cfg.heads, cfg.repeats, cfg.with_backward, cfg.seed);
  } catch (const std::bad_alloc&) {
    row.failed = true;
  }
  return row;
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchConfig& cfg) {
  tune_allocator_for_tensors();
  if (cfg.sizes.empty()) throw std::invalid_argument("bench needs at least one size");
  if (!std::is_sorted(cfg.sizes.begin(), cfg.sizes.end())) {
    throw std::invalid_argument("bench sizes must be ascending");
  }
  if (cfg.model_dim % cfg.heads != 0) {
    throw std::invalid_argument("model dim not divisible by head count");
  }
  std::vector<BenchRow> rows;
  for (int n : cfg.sizes) {
    if (cfg.use_float) {
      rows.push_back(bench_one<float>(cfg, n, false));
      rows.push_back(bench_one<float>(cfg, n, true));
    } else {
      rows.push_back(bench_one<double>(cfg, n, false));
      rows.push_back(bench_one<double>(cfg, n, true));
    }
  }
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "variant,n,capacity,leaves_per_patch,patch_count,patch_size,total_slots,model_dim,"
         "forward_ms,backward_ms,flops_counted,peak_alloc_bytes,failed\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.variant << "," << r.n << "," << r.capacity << "," << r.leaves_per_patch << ","
        << r.patch_count << "," << r.patch_size << "," << r.total_slots << "," << r.model_dim
        << "," << r.forward_ms << "," << r.backward_ms << "," << r.flops_counted << ","
        << r.peak_alloc_bytes << "," << (r.failed ? 1 : 0) << "\n";
  }
}

}  // namespace stpatch
