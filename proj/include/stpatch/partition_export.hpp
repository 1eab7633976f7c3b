#pragma once

#include <span>
#include <string>
#include <vector>

#include "stpatch/kdtree.hpp"
#include "stpatch/layout.hpp"

namespace stpatch {

// Per-point and per-leaf views of a finished partition, for inspection and
// the partition CLI command.
struct PartitionReport {
  struct PointRow {
    int original_index;
    double lat, lng;
    int leaf_id;
    int patch_id;
    std::vector<int> leaf_pad_sources;  // sources padded into this point's leaf
  };
  struct LeafRow {
    int leaf_id;
    int patch_id;
    int size_before_pad;
    std::vector<int> pad_source_indices;
  };

  std::vector<PointRow> points;       // one per original point (N features)
  std::vector<LeafRow> leaves;        // one per leaf
  std::vector<int> patch_occupancy;   // slots per patch, always P
  int patch_count = 0;
  int patch_size = 0;
  std::size_t total_slots = 0;
  std::size_t pad_count = 0;
};

PartitionReport build_partition_report(const LeafKdTree& tree, const PatchLayout& layout,
                                       std::span<const GeoPoint> points);

// GeoJSON FeatureCollection, one Point feature per original sensor.
void write_partition_geojson(const PartitionReport& report, const std::string& path);

// CSV with columns leaf_id, patch_id, size_before_pad, pad_source_indices.
void write_partition_csv(const PartitionReport& report, const std::string& path);

}  // namespace stpatch
