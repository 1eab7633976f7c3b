#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stpatch/dataset.hpp"
#include "stpatch/decoder.hpp"
#include "stpatch/embedding.hpp"
#include "stpatch/encoder.hpp"
#include "stpatch/graph.hpp"
#include "stpatch/kdtree.hpp"
#include "stpatch/layout.hpp"
#include "stpatch/params.hpp"

namespace stpatch {

// z-score statistics over the training split; identity when disabled.
struct Normalization {
  bool enabled = true;
  double mean = 0.0;
  double std = 1.0;

  double fwd(double x) const { return enabled ? (x - mean) / std : x; }
  double inv(double x) const { return enabled ? x * std + mean : x; }
};

Normalization fit_normalization(const Tensor& train_values, bool enabled);

struct ModelConfig {
  EmbeddingConfig embedding;
  EncoderConfig encoder;
  int horizon = 12;  // F
  int capacity = 2;
  int leaves_per_patch = 1;
  PadMode pad_mode = PadMode::kSimilarity;
  bool use_tree = true;  // false gives the sequential (index-order) layout
  bool normalize = true;
};

// Embedding + patch layout + dual-attention encoder + projection decoder,
// with every learnable tensor registered in a ParamStore.
class ForecastModel {
 public:
  // Builds the tree and layout from the training split of ds, fits
  // normalization, then initializes parameters from the seed.
  ForecastModel(const ModelConfig& cfg, const RawDataset& ds, std::uint64_t seed);

  // Rebuilds a model from a checkpoint; layout and normalization are
  // restored from the checkpoint extras, parameters from the payload.
  static ForecastModel from_checkpoint(const std::string& path, const RawDataset& ds);

  void save_checkpoint(const std::string& path) const;

  // Records the full forward pass on the tape and returns the normalized
  // [N x F] prediction node. Bindings from parameter name to tape leaf are
  // appended to leaves for gradient extraction.
  NodePtr forward(Tape& tape, const Tensor& history, std::int64_t last_timestamp,
                  std::vector<std::pair<std::string, NodePtr>>* leaves = nullptr) const;

  // De-normalized [F x N] forecast.
  Tensor predict(const Tensor& history, std::int64_t last_timestamp) const;

  // Normalized target for loss computation.
  Tensor normalized_target(const Tensor& future) const;

  const ModelConfig& config() const { return cfg_; }
  const PatchLayout& layout() const { return layout_; }
  const Normalization& normalization() const { return norm_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Attention matrices captured during the last predict() call when enabled:
  // name -> [batches x slots x slots] weights per layer, head, and block.
  void set_capture_attention(bool on) { capture_attention_ = on; }
  const std::map<std::string, Tensor>& captured_attention() const { return captured_attention_; }

 private:
  ForecastModel() = default;
  void init_params(std::uint64_t seed);
  void build_layout(const RawDataset& ds);
  std::map<std::string, Tensor> make_extras() const;
  void check_geometry(const RawDataset& ds) const;

  ModelConfig cfg_;
  PatchLayout layout_;
  Normalization norm_;
  ParamStore params_;
  int slice_minutes_ = 0;
  bool capture_attention_ = false;
  mutable std::map<std::string, Tensor> captured_attention_;
};

}  // namespace stpatch
