#pragma once

#include "stpatch/graph.hpp"
#include "stpatch/layout.hpp"

namespace stpatch {

// Projection head weights as tape leaves.
struct DecoderRefs {
  NodePtr weight;  // [F x d]
  NodePtr bias;    // [F]
};

// Unpatches encoder output back to original point order and projects each
// point's representation to the forecast horizon. Returns [N x F] in the
// model's working (normalized) units; padded slots are discarded by the
// unpatch gather and cannot influence the result.
inline NodePtr decode(Tape& tape, const NodePtr& encoded, const PatchLayout& layout,
                      const DecoderRefs& refs) {
  const auto& shape = encoded->value.shape();
  if (shape.size() != 3 || shape[0] != std::size_t(layout.patch_count) ||
      shape[1] != std::size_t(layout.patch_size)) {
    throw std::invalid_argument("encoded tensor " + encoded->value.shape_str() +
                                " does not match layout geometry [" +
                                std::to_string(layout.patch_count) + " x " +
                                std::to_string(layout.patch_size) + " x d]");
  }
  auto flat = tape.reshape(encoded, {layout.total_slots, shape[2]});
  auto original_rows = tape.gather_rows(flat, layout.slot_of_point);
  return tape.add_rowbias(tape.matmul(original_rows, tape.transpose2(refs.weight)), refs.bias);
}

}  // namespace stpatch
