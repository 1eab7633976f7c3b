#include "stpatch/layout.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace stpatch {

namespace {

bool is_power_of_two(int v) { return v >= 1 && (v & (v - 1)) == 0; }

void check_grouping(const LeafKdTree& tree, int leaves_per_patch) {
  if (!is_power_of_two(leaves_per_patch)) {
    throw std::invalid_argument("leaves per patch must be a power of 2, got " +
                                std::to_string(leaves_per_patch));
  }
  if (std::size_t(leaves_per_patch) > tree.leaf_count()) {
    throw std::invalid_argument("leaves per patch " + std::to_string(leaves_per_patch) +
                                " exceeds leaf count " + std::to_string(tree.leaf_count()));
  }
}

std::vector<std::vector<double>> series_columns(const Tensor& train_series, int n_points) {
  if (train_series.rank() != 2 || train_series.dim(1) != std::size_t(n_points)) {
    throw std::invalid_argument("training series must be [H_train x N] with N = " +
                                std::to_string(n_points) + ", got " + train_series.shape_str());
  }
  const std::size_t h = train_series.dim(0);
  std::vector<std::vector<double>> cols{std::size_t(n_points), std::vector<double>(h)};
  for (std::size_t t = 0; t < h; ++t)
    for (std::size_t j = 0; j < std::size_t(n_points); ++j) cols[j][t] = train_series(t, j);
  return cols;
}

// Shared greedy fill: scores candidates against the leaf's evolving member
// list, excluding everything already occupying the enclosing patch group.
template <typename ScoreFn>
PadAssignments fill_pads(const LeafKdTree& tree, int leaves_per_patch, PadMode mode,
                         ScoreFn&& member_score) {
  check_grouping(tree, leaves_per_patch);
  const int n = tree.point_count();
  const int capacity = tree.capacity();

  PadAssignments out;
  out.mode = mode;
  out.leaves_per_patch = leaves_per_patch;
  out.sources.resize(tree.leaf_count());

  bool any_unfull = false;
  for (const auto& leaf : tree.leaves())
    if (int(leaf.size()) < capacity) any_unfull = true;
  if (!any_unfull) return out;

  const int patch_size = capacity * leaves_per_patch;
  if (patch_size > n) {
    throw std::invalid_argument(
        "padding infeasible: patch size " + std::to_string(patch_size) + " exceeds point count " +
        std::to_string(n) + ", so patches cannot avoid repeated points");
  }

  const std::size_t groups = tree.leaf_count() / std::size_t(leaves_per_patch);
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<char> occupied(std::size_t(n), 0);
    for (int li = 0; li < leaves_per_patch; ++li) {
      for (int idx : tree.leaf(g * leaves_per_patch + li)) occupied[std::size_t(idx)] = 1;
    }
    for (int li = 0; li < leaves_per_patch; ++li) {
      const auto& leaf = tree.leaf(g * leaves_per_patch + li);
      std::vector<int> members(leaf);
      auto& pads = out.sources[g * leaves_per_patch + li];
      for (int need = capacity - int(leaf.size()); need > 0; --need) {
        int best = -1;
        double best_score = 0.0;
        for (int j = 0; j < n; ++j) {
          if (occupied[std::size_t(j)]) continue;
          const double s = member_score(j, members);
          if (best < 0 || s > best_score) {
            best = j;
            best_score = s;
          }
        }
        if (best < 0) {
          throw std::invalid_argument("padding infeasible: no candidate left outside patch group " +
                                      std::to_string(g));
        }
        pads.push_back(best);
        members.push_back(best);
        occupied[std::size_t(best)] = 1;
      }
    }
  }
  return out;
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

PadAssignments pad_assignments(const LeafKdTree& tree, const Tensor& train_series,
                               int leaves_per_patch, PadMode mode) {
  if (mode == PadMode::kZero) return pad_assignments_zero(tree, leaves_per_patch);
  if (mode == PadMode::kDistance) {
    throw std::invalid_argument("distance padding needs coordinates; use pad_assignments_distance");
  }
  const auto cols = series_columns(train_series, tree.point_count());
  return fill_pads(tree, leaves_per_patch, PadMode::kSimilarity,
                   [&cols](int candidate, const std::vector<int>& members) {
                     if (members.empty()) return 0.0;
                     double s = 0.0;
                     for (int m : members)
                       s += cosine_similarity(cols[std::size_t(candidate)], cols[std::size_t(m)]);
                     return s / double(members.size());
                   });
}

PadAssignments pad_assignments_distance(const LeafKdTree& tree, std::span<const GeoPoint> points,
                                        int leaves_per_patch) {
  if (points.size() != std::size_t(tree.point_count())) {
    throw std::invalid_argument("coordinate count does not match tree point count");
  }
  std::vector<std::pair<double, double>> coords(points.size());
  for (const auto& p : points) coords[std::size_t(p.original_index)] = {p.lat, p.lng};
  return fill_pads(tree, leaves_per_patch, PadMode::kDistance,
                   [&coords](int candidate, const std::vector<int>& members) {
                     if (members.empty()) return 0.0;
                     double s = 0.0;
                     for (int m : members) {
                       const double dy = coords[std::size_t(candidate)].first -
                                         coords[std::size_t(m)].first;
                       const double dx = coords[std::size_t(candidate)].second -
                                         coords[std::size_t(m)].second;
                       s += std::sqrt(dx * dx + dy * dy);
                     }
                     return -s / double(members.size());
                   });
}

PadAssignments pad_assignments_zero(const LeafKdTree& tree, int leaves_per_patch) {
  check_grouping(tree, leaves_per_patch);
  PadAssignments out;
  out.mode = PadMode::kZero;
  out.leaves_per_patch = leaves_per_patch;
  out.sources.resize(tree.leaf_count());
  for (std::size_t li = 0; li < tree.leaf_count(); ++li) {
    const int need = tree.capacity() - int(tree.leaf(li).size());
    out.sources[li].assign(std::size_t(std::max(0, need)), -1);
  }
  return out;
}

PatchLayout assemble_patches(const LeafKdTree& tree, const PadAssignments& padded,
                             int leaves_per_patch) {
  check_grouping(tree, leaves_per_patch);
  if (padded.sources.size() != tree.leaf_count()) {
    throw std::invalid_argument("pad assignments do not cover every leaf");
  }
  if (padded.mode != PadMode::kZero && padded.pad_count() > 0 &&
      padded.leaves_per_patch != leaves_per_patch) {
    throw std::invalid_argument("pad assignments were computed for a patch group of " +
                                std::to_string(padded.leaves_per_patch) + " leaves, not " +
                                std::to_string(leaves_per_patch));
  }

  PatchLayout layout;
  layout.capacity = tree.capacity();
  layout.leaves_per_patch = leaves_per_patch;
  layout.point_count = tree.point_count();
  layout.patch_size = tree.capacity() * leaves_per_patch;
  layout.patch_count = int(tree.leaf_count()) / leaves_per_patch;
  layout.total_slots = tree.leaf_count() * std::size_t(tree.capacity());
  layout.new_order.reserve(layout.total_slots);
  layout.padded.reserve(layout.total_slots);
  layout.pad_source.reserve(layout.total_slots);
  layout.slot_of_point.assign(std::size_t(layout.point_count), -1);

  for (std::size_t li = 0; li < tree.leaf_count(); ++li) {
    const auto& leaf = tree.leaf(li);
    const auto& pads = padded.sources[li];
    if (leaf.size() + pads.size() != std::size_t(tree.capacity())) {
      throw std::invalid_argument("leaf " + std::to_string(li) + " is not padded to capacity");
    }
    for (int idx : leaf) {
      layout.slot_of_point[std::size_t(idx)] = int(layout.new_order.size());
      layout.new_order.push_back(idx);
      layout.padded.push_back(false);
      layout.pad_source.push_back(-1);
    }
    for (int src : pads) {
      layout.new_order.push_back(src);
      layout.padded.push_back(true);
      layout.pad_source.push_back(src);
    }
  }
  layout.validate();
  return layout;
}

PatchLayout sequential_layout(int point_count, int capacity, int leaves_per_patch) {
  if (point_count < 1 || capacity < 1) {
    throw std::invalid_argument("sequential layout needs positive point count and capacity");
  }
  if (!is_power_of_two(leaves_per_patch)) {
    throw std::invalid_argument("leaves per patch must be a power of 2, got " +
                                std::to_string(leaves_per_patch));
  }
  int depth = 0;
  while ((std::size_t(capacity) << depth) < std::size_t(point_count)) ++depth;
  const std::size_t leaf_count = std::size_t(1) << depth;
  if (std::size_t(leaves_per_patch) > leaf_count) {
    throw std::invalid_argument("leaves per patch " + std::to_string(leaves_per_patch) +
                                " exceeds leaf count " + std::to_string(leaf_count));
  }

  PatchLayout layout;
  layout.capacity = capacity;
  layout.leaves_per_patch = leaves_per_patch;
  layout.point_count = point_count;
  layout.patch_size = capacity * leaves_per_patch;
  layout.patch_count = int(leaf_count) / leaves_per_patch;
  layout.total_slots = leaf_count * std::size_t(capacity);
  layout.slot_of_point.assign(std::size_t(point_count), -1);
  for (std::size_t s = 0; s < layout.total_slots; ++s) {
    if (s < std::size_t(point_count)) {
      layout.slot_of_point[s] = int(s);
      layout.new_order.push_back(int(s));
      layout.padded.push_back(false);
      layout.pad_source.push_back(-1);
    } else {
      layout.new_order.push_back(-1);  // zero pads at the tail
      layout.padded.push_back(true);
      layout.pad_source.push_back(-1);
    }
  }
  layout.validate();
  return layout;
}

void PatchLayout::validate() const {
  const std::size_t m = total_slots;
  if (m != std::size_t(patch_count) * std::size_t(patch_size) || m < std::size_t(point_count)) {
    throw std::logic_error("layout slot arithmetic broken: M != R*P or M < N");
  }
  if (new_order.size() != m || padded.size() != m || pad_source.size() != m) {
    throw std::logic_error("layout arrays disagree with slot count");
  }
  std::vector<int> seen(std::size_t(point_count), 0);
  for (std::size_t s = 0; s < m; ++s) {
    if (!padded[s]) {
      if (new_order[s] < 0 || new_order[s] >= point_count) {
        throw std::logic_error("non-padded slot holds invalid index");
      }
      if (slot_of_point[std::size_t(new_order[s])] != int(s)) {
        throw std::logic_error("slot_of_point inconsistent with new_order");
      }
      ++seen[std::size_t(new_order[s])];
    } else if (new_order[s] != pad_source[s]) {
      throw std::logic_error("padded slot source mismatch");
    }
  }
  for (int c : seen) {
    if (c != 1) throw std::logic_error("original index does not occupy exactly one non-padded slot");
  }
  for (int r = 0; r < patch_count; ++r) {
    std::unordered_set<int> in_patch;
    for (int p = 0; p < patch_size; ++p) {
      const int idx = new_order[std::size_t(r) * patch_size + std::size_t(p)];
      if (idx < 0) continue;
      if (!in_patch.insert(idx).second) {
        throw std::logic_error("original index repeats inside patch " + std::to_string(r));
      }
    }
  }
}

Tensor apply_layout(const PatchLayout& layout, const Tensor& embeddings) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != std::size_t(layout.point_count)) {
    throw std::invalid_argument("embeddings must be [N x d] with N = " +
                                std::to_string(layout.point_count) + ", got " +
                                embeddings.shape_str());
  }
  Tensor flat = gather_rows(embeddings, std::span<const int>(layout.new_order));
  return reshape(flat, {std::size_t(layout.patch_count), std::size_t(layout.patch_size),
                        embeddings.dim(1)});
}

Tensor invert_layout(const PatchLayout& layout, const Tensor& patched) {
  std::size_t width = 0;
  if (patched.rank() == 3 && patched.dim(0) == std::size_t(layout.patch_count) &&
      patched.dim(1) == std::size_t(layout.patch_size)) {
    width = patched.dim(2);
  } else if (patched.rank() == 2 && patched.dim(0) == layout.total_slots) {
    width = patched.dim(1);
  } else {
    throw std::invalid_argument("patched tensor shape " + patched.shape_str() +
                                " does not match layout geometry");
  }
  Tensor out({std::size_t(layout.point_count), width});
  for (int i = 0; i < layout.point_count; ++i) {
    const std::size_t slot = std::size_t(layout.slot_of_point[std::size_t(i)]);
    std::memcpy(out.data() + std::size_t(i) * width, patched.data() + slot * width,
                width * sizeof(double));
  }
  return out;
}

}  // namespace stpatch
