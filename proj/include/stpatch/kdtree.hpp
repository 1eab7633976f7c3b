#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace stpatch {

struct GeoPoint {
  int original_index = 0;
  double lat = 0.0;
  double lng = 0.0;
};

// Complete binary partition tree over sensor coordinates. Every point lives
// in a leaf; internal nodes hold only the splitting hyperplane. All leaves
// sit at the same depth, so leaf count is always a power of two and empty
// leaves are legal.
//
// Splits alternate axes starting with latitude. A node with n points sends
// the first floor(n/2) of its axis-sorted points to the left child and the
// rest to the right; the threshold is the midpoint of the two coordinates
// bracketing the cut. Ties order by (split coord, other coord, index).
class LeafKdTree {
 public:
  enum Axis : int { kLat = 0, kLng = 1 };

  struct SplitNode {
    Axis axis = kLat;
    double threshold = 0.0;
  };

  static LeafKdTree build(std::span<const GeoPoint> points, int capacity);

  int depth() const { return depth_; }
  int capacity() const { return capacity_; }
  int point_count() const { return point_count_; }
  std::size_t leaf_count() const { return leaves_.size(); }

  const std::vector<int>& leaf(std::size_t i) const { return leaves_.at(i); }
  const std::vector<std::vector<int>>& leaves() const { return leaves_; }

  // Internal nodes in level order; empty when depth is 0.
  const std::vector<SplitNode>& internal_nodes() const { return internal_; }

  // Left-to-right concatenation of leaf contents: the breadth-first new
  // index order over the original point indices. Length equals point_count.
  std::vector<int> leaf_order() const;

  static Axis axis_at_depth(int depth) { return depth % 2 == 0 ? kLat : kLng; }

 private:
  int depth_ = 0;
  int capacity_ = 0;
  int point_count_ = 0;
  std::vector<SplitNode> internal_;
  std::vector<std::vector<int>> leaves_;
};

}  // namespace stpatch
