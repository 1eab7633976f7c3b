#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace stpatch {

// Large tensor buffers churn through mmap/munmap by default, which is slow
// and noisy under sandboxed kernels. Keeping big blocks in the arena and
// never trimming makes repeated forward/backward passes reuse their pages.
inline void tune_allocator_for_tensors() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

// Live tensor-buffer bytes and arithmetic work, tracked globally. All
// acceptance paths run serially, so plain counters are enough.
struct MemStats {
  static inline std::uint64_t live_bytes = 0;
  static inline std::uint64_t peak_bytes = 0;
  static void on_alloc(std::uint64_t n) {
    live_bytes += n;
    peak_bytes = std::max(peak_bytes, live_bytes);
  }
  static void on_free(std::uint64_t n) { live_bytes -= n; }
  static void reset_peak() { peak_bytes = live_bytes; }
};

struct FlopStats {
  static inline std::uint64_t total = 0;
  // Flops from batched rank-3 x rank-3 products only: the correlation and
  // aggregation matmuls whose cost carries the quadratic attention terms.
  static inline std::uint64_t interaction = 0;
  static void reset() {
    total = 0;
    interaction = 0;
  }
};

namespace detail {

template <typename T>
struct TrackedVec {
  std::vector<T> v;
  std::size_t counted = 0;

  TrackedVec() = default;
  TrackedVec(std::size_t n, T fill) : v(n, fill), counted(n * sizeof(T)) {
    MemStats::on_alloc(counted);
  }
  explicit TrackedVec(std::vector<T> src) : v(std::move(src)), counted(v.size() * sizeof(T)) {
    MemStats::on_alloc(counted);
  }
  TrackedVec(const TrackedVec& o) : v(o.v), counted(o.counted) { MemStats::on_alloc(counted); }
  TrackedVec(TrackedVec&& o) noexcept
      : v(std::move(o.v)), counted(std::exchange(o.counted, 0)) {}
  TrackedVec& operator=(TrackedVec o) noexcept {
    std::swap(v, o.v);
    std::swap(counted, o.counted);
    return *this;
  }
  ~TrackedVec() { MemStats::on_free(counted); }
};

}  // namespace detail

// Dense row-major tensor of rank 1..3. Double precision is the default
// throughout the library; float is instantiated for benchmark runs.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  static TensorT from_data(std::vector<std::size_t> shape, std::vector<T> data) {
    TensorT t;
    t.shape_ = std::move(shape);
    if (checked_numel(t.shape_) != data.size()) {
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(t.shape_));
    }
    t.data_ = detail::TrackedVec<T>(std::move(data));
    return t;
  }

  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.v.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  bool empty() const { return data_.v.empty(); }

  T* data() { return data_.v.data(); }
  const T* data() const { return data_.v.data(); }
  std::span<T> values() { return std::span<T>(data_.v); }
  std::span<const T> values() const { return std::span<const T>(data_.v); }

  T& operator()(std::size_t i) { return data_.v[i]; }
  T operator()(std::size_t i) const { return data_.v[i]; }
  T& operator()(std::size_t i, std::size_t j) { return data_.v[i * shape_[1] + j]; }
  T operator()(std::size_t i, std::size_t j) const { return data_.v[i * shape_[1] + j]; }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_.v[(i * shape_[1] + j) * shape_[2] + k];
  }
  T operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_.v[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (T x : data_.v) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  std::string shape_str() const { return shape_str(shape_); }

  static std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
  }

 private:
  static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor shape must not be empty");
    std::size_t n = 1;
    for (std::size_t e : shape) {
      if (e == 0) throw std::invalid_argument("tensor extents must be positive");
      n *= e;
    }
    return n;
  }

  std::vector<std::size_t> shape_;
  detail::TrackedVec<T> data_;
};

using Tensor = TensorT<double>;

namespace detail {

// C[i,j] += A[i,k] * B[k,j], row-major blocks.
template <typename T>
inline void mm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[i,j] += A[k,i] * B[k,j]  (A transposed)
template <typename T>
inline void mm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T* arow = a + kk * m;
    const T* brow = b + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[i,j] += A[i,k] * B[j,k]  (B transposed)
template <typename T>
inline void mm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] += acc;
    }
  }
}

struct MatmulDims {
  std::size_t batches, m, k, n;
  bool a_batched, b_batched, batched_out;
};

template <typename T>
inline MatmulDims matmul_dims(const TensorT<T>& a, const TensorT<T>& b) {
  if ((a.rank() != 2 && a.rank() != 3) || (b.rank() != 2 && b.rank() != 3)) {
    throw std::invalid_argument("matmul expects rank-2 or rank-3 operands, got " +
                                a.shape_str() + " and " + b.shape_str());
  }
  MatmulDims d{};
  d.a_batched = a.rank() == 3;
  d.b_batched = b.rank() == 3;
  d.batched_out = d.a_batched || d.b_batched;
  const std::size_t am = a.dim(a.rank() - 2), ak = a.dim(a.rank() - 1);
  const std::size_t bk = b.dim(b.rank() - 2), bn = b.dim(b.rank() - 1);
  if (ak != bk) {
    throw std::invalid_argument("matmul inner extents disagree: " + a.shape_str() + " x " +
                                b.shape_str());
  }
  if (d.a_batched && d.b_batched && a.dim(0) != b.dim(0)) {
    throw std::invalid_argument("matmul batch extents disagree: " + a.shape_str() + " x " +
                                b.shape_str());
  }
  d.batches = d.a_batched ? a.dim(0) : (d.b_batched ? b.dim(0) : 1);
  d.m = am;
  d.k = ak;
  d.n = bn;
  return d;
}

}  // namespace detail

// Standard (optionally batched) matrix product. A rank-2 operand next to a
// rank-3 one broadcasts across the batch.
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  const auto d = detail::matmul_dims(a, b);
  TensorT<T> out(d.batched_out ? std::vector<std::size_t>{d.batches, d.m, d.n}
                               : std::vector<std::size_t>{d.m, d.n});
  for (std::size_t bi = 0; bi < d.batches; ++bi) {
    const T* ap = a.data() + (d.a_batched ? bi * d.m * d.k : 0);
    const T* bp = b.data() + (d.b_batched ? bi * d.k * d.n : 0);
    detail::mm_acc(ap, bp, out.data() + bi * d.m * d.n, d.m, d.k, d.n);
  }
  const std::uint64_t flops = std::uint64_t(2) * d.batches * d.m * d.k * d.n;
  FlopStats::total += flops;
  if (d.a_batched && d.b_batched) FlopStats::interaction += flops;
  return out;
}

// scale * (A B^T) per batch; used for attention correlation scores.
template <typename T>
TensorT<T> scaled_matmul_nt(const TensorT<T>& a, const TensorT<T>& b, T scale) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    throw std::invalid_argument("scaled_matmul_nt expects matching rank-3 operands, got " +
                                a.shape_str() + " and " + b.shape_str());
  }
  const std::size_t batches = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  TensorT<T> out({batches, m, n});
  for (std::size_t bi = 0; bi < batches; ++bi) {
    detail::mm_nt_acc(a.data() + bi * m * k, b.data() + bi * n * k, out.data() + bi * m * n, m, k,
                      n);
  }
  for (std::size_t i = 0; i < out.numel(); ++i) out(i) *= scale;
  const std::uint64_t flops = std::uint64_t(2) * batches * m * k * n;
  FlopStats::total += flops;
  FlopStats::interaction += flops;
  return out;
}

// Max-subtracted softmax along the last dimension.
template <typename T>
TensorT<T> softmax_last(const TensorT<T>& t) {
  const std::size_t width = t.dim(t.rank() - 1);
  const std::size_t rows = t.numel() / width;
  TensorT<T> out(t.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = t.data() + r * width;
    T* o = out.data() + r * width;
    T mx = in[0];
    for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, in[j]);
    T sum = T(0);
    for (std::size_t j = 0; j < width; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < width; ++j) o[j] /= sum;
  }
  FlopStats::total += std::uint64_t(5) * t.numel();
  return out;
}

template <typename T>
TensorT<T> transpose2(const TensorT<T>& t) {
  if (t.rank() != 2) throw std::invalid_argument("transpose2 expects rank-2, got " + t.shape_str());
  TensorT<T> out({t.dim(1), t.dim(0)});
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) out(j, i) = t(i, j);
  return out;
}

// Swap the two leading axes of a rank-3 tensor.
template <typename T>
TensorT<T> swap01(const TensorT<T>& t) {
  if (t.rank() != 3) throw std::invalid_argument("swap01 expects rank-3, got " + t.shape_str());
  const std::size_t d0 = t.dim(0), d1 = t.dim(1), w = t.dim(2);
  TensorT<T> out({d1, d0, w});
  for (std::size_t i = 0; i < d0; ++i)
    for (std::size_t j = 0; j < d1; ++j)
      std::memcpy(out.data() + (j * d0 + i) * w, t.data() + (i * d1 + j) * w, w * sizeof(T));
  return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("add shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  }
  TensorT<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out(i) = a(i) + b(i);
  FlopStats::total += a.numel();
  return out;
}

// rows of x plus a rank-1 bias.
template <typename T>
TensorT<T> add_rowbias(const TensorT<T>& x, const TensorT<T>& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw std::invalid_argument("add_rowbias expects [r x c] + [c], got " + x.shape_str() +
                                " and " + bias.shape_str());
  }
  TensorT<T> out(x.shape());
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t j = 0; j < x.dim(1); ++j) out(i, j) = x(i, j) + bias(j);
  FlopStats::total += x.numel();
  return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& t, T c) {
  TensorT<T> out(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) out(i) = t(i) * c;
  FlopStats::total += t.numel();
  return out;
}

// Concatenate along the last dimension; all leading dims must agree.
template <typename T>
TensorT<T> concat_last(const std::vector<const TensorT<T>*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last needs at least one operand");
  const auto& first = *parts[0];
  std::size_t width = 0;
  for (const auto* p : parts) {
    if (p->rank() != first.rank()) {
      throw std::invalid_argument("concat_last rank mismatch: " + first.shape_str() + " vs " +
                                  p->shape_str());
    }
    for (std::size_t i = 0; i + 1 < first.rank(); ++i) {
      if (p->dim(i) != first.dim(i)) {
        throw std::invalid_argument("concat_last leading dims disagree: " + first.shape_str() +
                                    " vs " + p->shape_str());
      }
    }
    width += p->dim(p->rank() - 1);
  }
  std::vector<std::size_t> shape = first.shape();
  shape.back() = width;
  TensorT<T> out(shape);
  const std::size_t rows = out.numel() / width;
  std::size_t offset = 0;
  for (const auto* p : parts) {
    const std::size_t w = p->dim(p->rank() - 1);
    for (std::size_t r = 0; r < rows; ++r)
      std::memcpy(out.data() + r * width + offset, p->data() + r * w, w * sizeof(T));
    offset += w;
  }
  return out;
}

template <typename T>
TensorT<T> slice_last(const TensorT<T>& t, std::size_t start, std::size_t len) {
  const std::size_t width = t.dim(t.rank() - 1);
  if (start + len > width) {
    throw std::invalid_argument("slice_last out of range on " + t.shape_str());
  }
  std::vector<std::size_t> shape = t.shape();
  shape.back() = len;
  TensorT<T> out(shape);
  const std::size_t rows = t.numel() / width;
  for (std::size_t r = 0; r < rows; ++r)
    std::memcpy(out.data() + r * len, t.data() + r * width + start, len * sizeof(T));
  return out;
}

// out[i,:] = x[idx[i],:]; an index of -1 yields a zero row.
template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, std::span<const int> idx) {
  if (x.rank() != 2) throw std::invalid_argument("gather_rows expects rank-2, got " + x.shape_str());
  const std::size_t w = x.dim(1);
  TensorT<T> out({idx.size(), w});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const int src = idx[i];
    if (src < 0) continue;
    if (std::size_t(src) >= x.dim(0)) {
      throw std::invalid_argument("gather_rows index " + std::to_string(src) +
                                  " out of range for " + x.shape_str());
    }
    std::memcpy(out.data() + i * w, x.data() + std::size_t(src) * w, w * sizeof(T));
  }
  return out;
}

// (x - mean) / sqrt(var + eps) along the last dimension, no affine terms.
template <typename T>
TensorT<T> layer_norm_last(const TensorT<T>& t, T eps = T(1e-5)) {
  const std::size_t width = t.dim(t.rank() - 1);
  const std::size_t rows = t.numel() / width;
  TensorT<T> out(t.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = t.data() + r * width;
    T* o = out.data() + r * width;
    T mean = T(0);
    for (std::size_t j = 0; j < width; ++j) mean += in[j];
    mean /= T(width);
    T var = T(0);
    for (std::size_t j = 0; j < width; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= T(width);
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) o[j] = (in[j] - mean) * inv;
  }
  FlopStats::total += std::uint64_t(6) * t.numel();
  return out;
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& t, std::vector<std::size_t> shape) {
  TensorT<T> out(shape);
  if (out.numel() != t.numel()) {
    throw std::invalid_argument("reshape changes element count: " + t.shape_str() + " -> " +
                                TensorT<T>::shape_str(shape));
  }
  std::memcpy(out.data(), t.data(), t.numel() * sizeof(T));
  return out;
}

template <typename T>
T sum_all(const TensorT<T>& t) {
  T s = T(0);
  for (std::size_t i = 0; i < t.numel(); ++i) s += t(i);
  FlopStats::total += t.numel();
  return s;
}

// Mean absolute difference over all entries.
template <typename T>
T l1_loss(const TensorT<T>& pred, const TensorT<T>& target) {
  if (!pred.same_shape(target)) {
    throw std::invalid_argument("l1_loss shape mismatch: " + pred.shape_str() + " vs " +
                                target.shape_str());
  }
  T s = T(0);
  for (std::size_t i = 0; i < pred.numel(); ++i) s += std::abs(pred(i) - target(i));
  FlopStats::total += 2 * pred.numel();
  return s / T(pred.numel());
}

// Portable deterministic draws: identical across standard libraries.
inline double uniform01(std::mt19937_64& rng) {
  return double(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

inline double gaussian(std::mt19937_64& rng) {
  // Box-Muller on the portable uniform.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

template <typename T>
TensorT<T> random_uniform(std::mt19937_64& rng, std::vector<std::size_t> shape, double lo,
                          double hi) {
  TensorT<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t(i) = T(uniform_in(rng, lo, hi));
  return t;
}

}  // namespace stpatch
