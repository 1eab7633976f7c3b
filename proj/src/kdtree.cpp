#include "stpatch/kdtree.hpp"

#include <algorithm>
#include <stdexcept>
#include <tuple>

namespace stpatch {

namespace {

double coord(const GeoPoint& p, LeafKdTree::Axis axis) {
  return axis == LeafKdTree::kLat ? p.lat : p.lng;
}

// Tie-break ordering on the split axis.
void sort_on_axis(std::vector<GeoPoint>& pts, LeafKdTree::Axis axis) {
  const LeafKdTree::Axis other = axis == LeafKdTree::kLat ? LeafKdTree::kLng : LeafKdTree::kLat;
  std::sort(pts.begin(), pts.end(), [&](const GeoPoint& a, const GeoPoint& b) {
    return std::make_tuple(coord(a, axis), coord(a, other), a.original_index) <
           std::make_tuple(coord(b, axis), coord(b, other), b.original_index);
  });
}

void validate(std::span<const GeoPoint> points) {
  for (const auto& p : points) {
    if (p.lat < -90.0 || p.lat > 90.0 || p.lng < -180.0 || p.lng > 180.0) {
      throw std::invalid_argument("coordinates out of range for point " +
                                  std::to_string(p.original_index));
    }
  }
}

}  // namespace

LeafKdTree LeafKdTree::build(std::span<const GeoPoint> points, int capacity) {
  if (points.empty()) throw std::invalid_argument("leaf kdtree needs at least one point");
  if (capacity < 1) throw std::invalid_argument("leaf capacity must be >= 1");
  validate(points);

  LeafKdTree tree;
  tree.capacity_ = capacity;
  tree.point_count_ = static_cast<int>(points.size());
  int depth = 0;
  while ((std::size_t(capacity) << depth) < points.size()) ++depth;
  tree.depth_ = depth;
  tree.internal_.resize((std::size_t(1) << depth) - 1);
  tree.leaves_.resize(std::size_t(1) << depth);

  struct Frame {
    std::size_t node;  // level-order index, root = 0
    int level;
    std::vector<GeoPoint> pts;
  };
  std::vector<Frame> stack;
  stack.push_back({0, 0, std::vector<GeoPoint>(points.begin(), points.end())});

  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    const Axis axis = axis_at_depth(f.level);
    sort_on_axis(f.pts, axis);

    if (f.level == depth) {
      auto& leaf = tree.leaves_[f.node - (tree.internal_.size())];
      leaf.reserve(f.pts.size());
      for (const auto& p : f.pts) leaf.push_back(p.original_index);
      continue;
    }

    const std::size_t n = f.pts.size();
    const std::size_t cut = n / 2;  // left gets floor(n/2), right gets ceil(n/2)
    SplitNode split;
    split.axis = axis;
    if (cut >= 1 && cut < n) {
      split.threshold = 0.5 * (coord(f.pts[cut - 1], axis) + coord(f.pts[cut], axis));
    } else if (n == 1) {
      split.threshold = coord(f.pts[0], axis);
    } else {
      split.threshold = 0.0;  // empty node, children stay empty
    }
    tree.internal_[f.node] = split;

    Frame left{2 * f.node + 1, f.level + 1,
               std::vector<GeoPoint>(f.pts.begin(), f.pts.begin() + std::ptrdiff_t(cut))};
    Frame right{2 * f.node + 2, f.level + 1,
                std::vector<GeoPoint>(f.pts.begin() + std::ptrdiff_t(cut), f.pts.end())};
    stack.push_back(std::move(right));
    stack.push_back(std::move(left));
  }
  return tree;
}

std::vector<int> LeafKdTree::leaf_order() const {
  std::vector<int> order;
  order.reserve(std::size_t(point_count_));
  for (const auto& leaf : leaves_)
    for (int idx : leaf) order.push_back(idx);
  return order;
}

}  // namespace stpatch
