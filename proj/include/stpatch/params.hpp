#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "stpatch/tensor.hpp"

namespace stpatch {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

// One learnable tensor plus its AdamW moment estimates.
struct Param {
  Tensor value;
  Tensor moment1;
  Tensor moment2;
};

struct AdamWConfig {
  double lr = 0.002;
  double weight_decay = 0.0001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named parameters with shared optimizer step count. Iteration order is the
// name order of the map, which keeps serialization canonical; registration
// order is tracked separately so seeded initialization is reproducible.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor init) {
    if (params_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    Param p;
    p.moment1 = Tensor(init.shape());
    p.moment2 = Tensor(init.shape());
    p.value = std::move(init);
    order_.push_back(name);
    return params_.emplace(name, std::move(p)).first->second.value;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  Param& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }
  const Param& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }

  Tensor& value(const std::string& name) { return at(name).value; }
  const Tensor& value(const std::string& name) const { return at(name).value; }

  const std::vector<std::string>& registration_order() const { return order_; }
  const std::map<std::string, Param>& all() const { return params_; }
  std::uint64_t step() const { return step_; }

  // Decoupled-weight-decay Adam step with bias correction. The decay term
  // never touches the moment estimates. Missing gradients mean the parameter
  // was disconnected this pass and receive a pure decay update.
  void adamw_step(const std::map<std::string, Tensor>& grads, const AdamWConfig& cfg) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(step_));
    for (auto& [name, p] : params_) {
      const auto git = grads.find(name);
      const Tensor* g = git == grads.end() ? nullptr : &git->second;
      if (g != nullptr) {
        if (!g->same_shape(p.value)) {
          throw std::invalid_argument("gradient shape mismatch for " + name + ": " +
                                      g->shape_str() + " vs " + p.value.shape_str());
        }
        if (!g->all_finite()) {
          throw std::runtime_error("non-finite gradient for parameter " + name);
        }
      }
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        const double gi = g ? (*g)(i) : 0.0;
        p.moment1(i) = cfg.beta1 * p.moment1(i) + (1.0 - cfg.beta1) * gi;
        p.moment2(i) = cfg.beta2 * p.moment2(i) + (1.0 - cfg.beta2) * gi * gi;
        const double mhat = p.moment1(i) / bc1;
        const double vhat = p.moment2(i) / bc2;
        p.value(i) -= cfg.lr * cfg.weight_decay * p.value(i);
        p.value(i) -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      }
    }
  }

  void zero_state() {
    step_ = 0;
    for (auto& [name, p] : params_) {
      (void)name;
      p.moment1 = Tensor(p.value.shape());
      p.moment2 = Tensor(p.value.shape());
    }
  }

 private:
  std::map<std::string, Param> params_;
  std::vector<std::string> order_;
  std::uint64_t step_ = 0;

  friend struct CheckpointIO;
};

// Flat binary container: magic "PSTG1", shared step count, parameter entries
// (name, shape, value/moment payloads as little-endian f64), then extra
// unoptimized tensors (normalization stats, geometry echo).
struct CheckpointIO {
  static constexpr char kMagic[5] = {'P', 'S', 'T', 'G', '1'};

  static void save(const std::string& path, const ParamStore& store,
                   const std::map<std::string, Tensor>& extras) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for write: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u64(out, store.step_);
    write_u64(out, store.params_.size());
    for (const auto& [name, p] : store.params_) {
      write_string(out, name);
      write_tensor(out, p.value);
      write_payload(out, p.moment1);
      write_payload(out, p.moment2);
    }
    write_u64(out, extras.size());
    for (const auto& [name, t] : extras) {
      write_string(out, name);
      write_tensor(out, t);
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
  }

  static void load(const std::string& path, ParamStore& store,
                   std::map<std::string, Tensor>& extras) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[5];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
      throw std::runtime_error("bad checkpoint magic in " + path + " (expected PSTG1)");
    }
    store = ParamStore();
    store.step_ = read_u64(in);
    const std::uint64_t count = read_u64(in);
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::string name = read_string(in);
      Param p;
      p.value = read_tensor(in);
      p.moment1 = read_payload(in, p.value.shape());
      p.moment2 = read_payload(in, p.value.shape());
      store.order_.push_back(name);
      store.params_.emplace(name, std::move(p));
    }
    extras.clear();
    const std::uint64_t ecount = read_u64(in);
    for (std::uint64_t i = 0; i < ecount; ++i) {
      const std::string name = read_string(in);
      extras.emplace(name, read_tensor(in));
    }
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  }

 private:
  static void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }
  static void write_string(std::ofstream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), std::streamsize(s.size()));
  }
  static std::string read_string(std::ifstream& in) {
    const std::uint64_t n = read_u64(in);
    if (n > (1u << 20)) throw std::runtime_error("corrupt checkpoint string length");
    std::string s(n, '\0');
    in.read(s.data(), std::streamsize(n));
    return s;
  }
  static void write_tensor(std::ofstream& out, const Tensor& t) {
    write_u64(out, t.rank());
    for (std::size_t i = 0; i < t.rank(); ++i) write_u64(out, t.dim(i));
    write_payload(out, t);
  }
  static Tensor read_tensor(std::ifstream& in) {
    const std::uint64_t rank = read_u64(in);
    if (rank == 0 || rank > 8) throw std::runtime_error("corrupt checkpoint tensor rank");
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = read_u64(in);
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * sizeof(double)));
    return t;
  }
  static void write_payload(std::ofstream& out, const Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              std::streamsize(t.numel() * sizeof(double)));
  }
  static Tensor read_payload(std::ifstream& in, const std::vector<std::size_t>& shape) {
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * sizeof(double)));
    return t;
  }

  friend void save_tensor_map(const std::string&, const std::map<std::string, Tensor>&);
  friend std::map<std::string, Tensor> load_tensor_map(const std::string&);
};

// Binary sidecar of named tensors (attention matrices and the like),
// magic "PSTGA1".
inline void save_tensor_map(const std::string& path,
                            const std::map<std::string, Tensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out.write("PSTGA1", 6);
  CheckpointIO::write_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    CheckpointIO::write_string(out, name);
    CheckpointIO::write_tensor(out, t);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::map<std::string, Tensor> load_tensor_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  char magic[6];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, "PSTGA1", 6) != 0) {
    throw std::runtime_error("bad sidecar magic in " + path);
  }
  std::map<std::string, Tensor> tensors;
  const std::uint64_t count = CheckpointIO::read_u64(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = CheckpointIO::read_string(in);
    tensors.emplace(name, CheckpointIO::read_tensor(in));
  }
  if (!in) throw std::runtime_error("truncated sidecar: " + path);
  return tensors;
}

}  // namespace stpatch
