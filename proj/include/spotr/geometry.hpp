#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spotr/common.hpp"
#include "spotr/tensor.hpp"

namespace spotr {

enum class ShapeKind { Sphere = 0, Cube = 1, Torus = 2, Cylinder = 3 };

constexpr int kNumShapeClasses = 4;
constexpr int kPartsPerClass = 2;

ShapeKind shape_from_name(const std::string& name);
const char* shape_name(ShapeKind kind);

/// Points plus optional per-point features and labels. Two label channels:
/// a per-cloud class id (classification) or per-point part ids
/// (segmentation). Part ids are global: class c owns parts {2c, 2c+1},
/// so the class is recoverable from any part id.
struct PointCloud {
  Tensor positions;               // [N x 3]
  Tensor features;                // optional [N x C]
  int cloud_label = -1;
  std::vector<int> point_labels;  // empty unless segmentation

  size_t size() const { return positions.rows(); }
};

/// Center on the centroid and scale so the farthest point sits at radius 1.
PointCloud normalize(const PointCloud& pc);

/// Farthest point sampling, deterministic and permutation-invariant:
/// the seed is the lexicographic (x,y,z) minimum; each later pick maximizes
/// the min squared distance to the selected set, ties broken by smaller
/// lexicographic coordinate, then smaller original index.
std::vector<size_t> fps(const Tensor& positions, size_t m);

struct Group {
  size_t anchor = 0;
  // Anchor occupies the first slot; the rest sorted by ascending
  // (distance, index) and truncated so the total never exceeds the cap.
  std::vector<size_t> members;
};

std::vector<Group> ball_query(const Tensor& positions,
                              const std::vector<size_t>& anchors,
                              double radius, size_t cap);

/// Synthetic dataset: surface-sampled unit shapes with Gaussian jitter,
/// normalized, carrying both a class id and per-point part ids.
/// n_samples must divide evenly across the class list.
std::vector<PointCloud> gen_shapes(const std::vector<ShapeKind>& classes,
                                   size_t n_points, size_t n_samples,
                                   uint64_t seed, double jitter = 0.02);

PointCloud read_pc(const std::string& path);
void write_pc(const std::string& path, const PointCloud& pc);

void write_ply(const std::string& path,
               const std::vector<std::array<double, 3>>& points,
               const std::vector<std::array<uint8_t, 3>>& colors);

}  // namespace spotr
