#include "stpatch/partition_export.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace stpatch {

PartitionReport build_partition_report(const LeafKdTree& tree, const PatchLayout& layout,
                                       std::span<const GeoPoint> points) {
  if (points.size() != std::size_t(layout.point_count)) {
    throw std::invalid_argument("point list does not match layout point count");
  }
  PartitionReport report;
  report.patch_count = layout.patch_count;
  report.patch_size = layout.patch_size;
  report.total_slots = layout.total_slots;
  report.patch_occupancy.assign(std::size_t(layout.patch_count), 0);

  const int leaves_per_patch = layout.leaves_per_patch;
  std::vector<int> leaf_of_point(points.size(), -1);
  for (std::size_t li = 0; li < tree.leaf_count(); ++li) {
    PartitionReport::LeafRow row;
    row.leaf_id = int(li);
    row.patch_id = int(li) / leaves_per_patch;
    row.size_before_pad = int(tree.leaf(li).size());
    for (int idx : tree.leaf(li)) leaf_of_point[std::size_t(idx)] = int(li);
    report.leaves.push_back(std::move(row));
  }
  // Pad sources per leaf come from the slot map: capacity slots per leaf, in
  // leaf order, pads flagged.
  const int capacity = layout.capacity;
  for (std::size_t s = 0; s < layout.total_slots; ++s) {
    const std::size_t li = s / std::size_t(capacity);
    report.patch_occupancy[li / std::size_t(leaves_per_patch)]++;
    if (layout.padded[s]) {
      report.leaves[li].pad_source_indices.push_back(layout.pad_source[s]);
      ++report.pad_count;
    }
  }

  for (const auto& p : points) {
    PartitionReport::PointRow row;
    row.original_index = p.original_index;
    row.lat = p.lat;
    row.lng = p.lng;
    row.leaf_id = leaf_of_point[std::size_t(p.original_index)];
    row.patch_id = row.leaf_id / leaves_per_patch;
    row.leaf_pad_sources = report.leaves[std::size_t(row.leaf_id)].pad_source_indices;
    report.points.push_back(std::move(row));
  }
  return report;
}

void write_partition_geojson(const PartitionReport& report, const std::string& path) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& p : report.points) {
    nlohmann::json f;
    f["type"] = "Feature";
    f["geometry"] = {{"type", "Point"}, {"coordinates", {p.lng, p.lat}}};
    f["properties"] = {{"original_index", p.original_index},
                       {"leaf_id", p.leaf_id},
                       {"patch_id", p.patch_id},
                       {"leaf_pad_sources", p.leaf_pad_sources}};
    features.push_back(std::move(f));
  }
  nlohmann::json doc;
  doc["type"] = "FeatureCollection";
  doc["features"] = std::move(features);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << doc.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_partition_csv(const PartitionReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "leaf_id,patch_id,size_before_pad,pad_source_indices\n";
  for (const auto& row : report.leaves) {
    out << row.leaf_id << "," << row.patch_id << "," << row.size_before_pad << ",";
    for (std::size_t i = 0; i < row.pad_source_indices.size(); ++i) {
      if (i) out << ";";
      out << row.pad_source_indices[i];
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace stpatch
