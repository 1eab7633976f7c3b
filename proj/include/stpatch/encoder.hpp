#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "stpatch/graph.hpp"

namespace stpatch {

// Optional sink for the softmax attention weights of each head, keyed by
// "l<layer>.<depth|breadth>.h<head>".
template <typename T>
using AttentionCapture = std::map<std::string, TensorT<T>>;

enum class EncoderMode { kDual, kDepthOnly, kBreadthOnly, kNone };

struct EncoderConfig {
  int layers = 5;          // L
  int heads = 4;           // o
  int model_dim = 0;       // d
  int patch_count = 0;     // R
  int patch_size = 0;      // P
  bool residual = true;
  bool layernorm = true;
  EncoderMode mode = EncoderMode::kDual;

  int head_dim() const {
    if (heads < 1 || model_dim % heads != 0) {
      throw std::invalid_argument("model dim " + std::to_string(model_dim) +
                                  " not divisible by head count " + std::to_string(heads));
    }
    return model_dim / heads;
  }
};

// Per-head projection weights for one attention sub-block, as tape nodes.
template <typename T>
struct AttentionWeightRefs {
  std::vector<NodePtrT<T>> query;  // each [d x d/o]
  std::vector<NodePtrT<T>> key;
  std::vector<NodePtrT<T>> value;
  NodePtrT<T> output;  // [d x d]
};

template <typename T>
struct LayerWeightRefs {
  AttentionWeightRefs<T> depth;
  AttentionWeightRefs<T> breadth;
};

// Multi-head scaled dot-product attention over the middle axis of a
// [batches x slots x d] input: per batch, every slot attends to every slot.
// Logits divide by sqrt(d/o). Residual and layer normalization follow the
// mixed output when enabled.
template <typename T>
NodePtrT<T> attention_over_slots(TapeT<T>& tape, const NodePtrT<T>& x,
                                 const AttentionWeightRefs<T>& w, const EncoderConfig& cfg,
                                 AttentionCapture<T>* capture = nullptr,
                                 const std::string& name = {}) {
  const int heads = cfg.heads;
  const T inv_scale = T(1) / std::sqrt(T(cfg.head_dim()));
  std::vector<NodePtrT<T>> head_outputs;
  head_outputs.reserve(std::size_t(heads));
  for (int h = 0; h < heads; ++h) {
    auto q = tape.matmul(x, w.query[std::size_t(h)]);
    auto k = tape.matmul(x, w.key[std::size_t(h)]);
    auto v = tape.matmul(x, w.value[std::size_t(h)]);
    auto scores = tape.scaled_matmul_nt(q, k, inv_scale);
    auto weights = tape.softmax_last(scores);
    if (capture) (*capture)[name + ".h" + std::to_string(h)] = weights->value;
    head_outputs.push_back(tape.matmul(weights, v));
  }
  auto merged = heads == 1 ? head_outputs[0] : tape.concat_last(head_outputs);
  auto mixed = tape.matmul(merged, w.output);
  if (cfg.residual) mixed = tape.add(mixed, x);
  if (cfg.layernorm) mixed = tape.layer_norm_last(mixed);
  return mixed;
}

// Local mixing: attention among the P slots inside each of the R patches.
template <typename T>
NodePtrT<T> depth_attention(TapeT<T>& tape, const NodePtrT<T>& x, const AttentionWeightRefs<T>& w,
                            const EncoderConfig& cfg, AttentionCapture<T>* capture = nullptr,
                            const std::string& name = "depth") {
  return attention_over_slots(tape, x, w, cfg, capture, name);
}

// Global mixing: attention among the R patches at each fixed slot index,
// realized by swapping the patch and slot axes around the same core.
template <typename T>
NodePtrT<T> breadth_attention(TapeT<T>& tape, const NodePtrT<T>& x,
                              const AttentionWeightRefs<T>& w, const EncoderConfig& cfg,
                              AttentionCapture<T>* capture = nullptr,
                              const std::string& name = "breadth") {
  auto swapped = tape.swap01(x);
  auto attended = attention_over_slots(tape, swapped, w, cfg, capture, name);
  return tape.swap01(attended);
}

template <typename T>
NodePtrT<T> encode(TapeT<T>& tape, NodePtrT<T> x, const std::vector<LayerWeightRefs<T>>& layers,
                   const EncoderConfig& cfg, AttentionCapture<T>* capture = nullptr) {
  if (int(layers.size()) != cfg.layers) {
    throw std::invalid_argument("encoder expects " + std::to_string(cfg.layers) +
                                " layers, got " + std::to_string(layers.size()));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const std::string prefix = "l" + std::to_string(l) + ".";
    switch (cfg.mode) {
      case EncoderMode::kDual:
        x = depth_attention(tape, x, layer.depth, cfg, capture, prefix + "depth");
        x = breadth_attention(tape, x, layer.breadth, cfg, capture, prefix + "breadth");
        break;
      case EncoderMode::kDepthOnly:
        x = depth_attention(tape, x, layer.depth, cfg, capture, prefix + "depth");
        break;
      case EncoderMode::kBreadthOnly:
        x = breadth_attention(tape, x, layer.breadth, cfg, capture, prefix + "breadth");
        break;
      case EncoderMode::kNone:
        break;
    }
  }
  return x;
}

}  // namespace stpatch
