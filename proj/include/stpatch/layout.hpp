#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stpatch/kdtree.hpp"
#include "stpatch/tensor.hpp"

namespace stpatch {

enum class PadMode {
  kSimilarity,  // most similar series by mean cosine against the leaf
  kDistance,    // geographically closest to the leaf (ablation fixture)
  kZero,        // zero rows instead of copies (ablation fixture)
};

// Pad sources per leaf, in the order the padded slots are appended.
// kZero mode records -1 sources.
struct PadAssignments {
  std::vector<std::vector<int>> sources;  // one list per leaf
  int leaves_per_patch = 1;
  PadMode mode = PadMode::kSimilarity;

  std::size_t pad_count() const {
    std::size_t n = 0;
    for (const auto& s : sources) n += s.size();
    return n;
  }
};

// The full permutation/padding map from N original points to R patches of P
// slots. Slot s holds original point new_order[s]; padded slots carry a copy
// of pad_source[s] (or zeros when the source is -1).
struct PatchLayout {
  std::vector<int> new_order;      // slot -> original index, -1 for zero pads
  std::vector<bool> padded;        // slot -> padded?
  std::vector<int> pad_source;     // slot -> source index, -1 if not padded / zero pad
  std::vector<int> slot_of_point;  // original index -> its unique non-padded slot
  int patch_count = 0;             // R
  int patch_size = 0;              // P
  int capacity = 0;                // C
  int leaves_per_patch = 0;        // per-patch leaf group size
  int point_count = 0;             // N
  std::size_t total_slots = 0;     // M = R * P

  void validate() const;  // checks the structural invariants, throws on violation
};

// Fills every unfull leaf up to capacity. Similarity is the mean cosine
// between the candidate's training series and the series of the leaf's
// current members (copies already padded into the leaf included); candidates
// already occupying any slot of the enclosing patch group are excluded, which
// keeps patches free of repeats. Ties take the smaller original index.
// train_series is the H_train x N training-split matrix.
PadAssignments pad_assignments(const LeafKdTree& tree, const Tensor& train_series,
                               int leaves_per_patch = 1, PadMode mode = PadMode::kSimilarity);

// Distance mode needs coordinates instead of series.
PadAssignments pad_assignments_distance(const LeafKdTree& tree, std::span<const GeoPoint> points,
                                        int leaves_per_patch = 1);

PadAssignments pad_assignments_zero(const LeafKdTree& tree, int leaves_per_patch = 1);

// Groups consecutive runs of leaves_per_patch padded leaves into patches.
// leaves_per_patch must be a power of two and at most the leaf count.
PatchLayout assemble_patches(const LeafKdTree& tree, const PadAssignments& padded,
                             int leaves_per_patch);

// A tree-free layout that chunks points in original index order; fixture for
// the variant that skips the spatial index entirely.
PatchLayout sequential_layout(int point_count, int capacity, int leaves_per_patch);

// Slot s of the result holds row new_order[s] of the input (zeros for -1).
Tensor apply_layout(const PatchLayout& layout, const Tensor& embeddings);

// Recovers the N rows from their unique non-padded slots.
Tensor invert_layout(const PatchLayout& layout, const Tensor& patched);

// Cosine similarity with all-zero vectors mapping to 0.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace stpatch
