#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfc/metrics.hpp"
#include "dfc/synthetic.hpp"

namespace dfc {

// Tab-separated assignment file:
//   # dfc-assignments 1
//   # atlas_hash=<sha256 hex>
//   # k=<clusters>
//   # h=<threshold applied>
//   # outlier_removal=<0|1>
//   id  cluster  q_m  outlier
//   ...one row per fiber, q_m printed with 17 significant digits
struct AssignmentTable {
  std::string atlas_hash;
  int k = 0;
  double h = 0.0;
  bool outlier_removal = true;
  std::vector<std::int64_t> id;
  std::vector<int> cluster;
  std::vector<double> q_max;
  std::vector<bool> outlier;

  std::size_t size() const { return id.size(); }
  ClusterResult cluster_result() const;
};

std::string format_assignments(const AssignmentTable& table);
AssignmentTable parse_assignments(const std::string& text);
void write_assignments(const AssignmentTable& table, const std::filesystem::path& path);
AssignmentTable read_assignments(const std::filesystem::path& path);

// Ground truth: header "id  bundle  outlier", bundle -1 for outliers.
std::string format_truth(const GroundTruth& truth);
GroundTruth parse_truth(const std::string& text);
void write_truth(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth read_truth(const std::filesystem::path& path);

// Condensed distance matrix: "DMAT", u32 version, u64 n, then n(n-1)/2 f64
// values of the strict upper triangle, row-major.
std::vector<std::byte> write_distance_matrix_bytes(const DistanceMatrix& m);
DistanceMatrix read_distance_matrix_bytes(std::span<const std::byte> bytes);
/// Full n x n matrix as CSV with 17 significant digits.
std::string format_distance_csv(const DistanceMatrix& m);

}  // namespace dfc
