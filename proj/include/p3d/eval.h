#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "p3d/data.h"
#include "p3d/mesh.h"
#include "p3d/networks.h"

namespace p3d {

/// Occupancy of the cube [-1,1]^3 split into R^3 cells; index (i,j,k) is
/// (x,y,z) and the cell center is -1 + (2i+1)/R.
struct VoxelGrid {
    std::size_t resolution = 0;
    std::vector<std::uint8_t> occupied;  // x fastest: i + R*(j + R*k)

    static VoxelGrid empty(std::size_t resolution);
    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return i + resolution * (j + resolution * k); }
    bool at(std::size_t i, std::size_t j, std::size_t k) const { return occupied[index(i, j, k)] != 0; }
    double center(std::size_t i) const { return -1.0 + (2.0 * static_cast<double>(i) + 1.0) / resolution; }
    std::size_t count() const;
};

inline constexpr std::size_t kVoxelResolution = 32;

/// Cells whose center lies inside the surface by +x ray parity. A mesh that is
/// not closed falls back to surface rasterization plus an exterior flood fill.
/// Warnings (clipping, fallback) are appended to `warnings` when given.
/// Throws ConfigError when R < 8.
VoxelGrid voxelize(const TriMesh& mesh, std::size_t resolution = kVoxelResolution,
                   std::vector<std::string>* warnings = nullptr);

/// |a and b| / |a or b|. Throws UndefinedMetric for an empty union.
double voxel_iou(const VoxelGrid& a, const VoxelGrid& b);

/// "R R R" text header line, then occupancy bit-packed LSB first in index order.
void write_voxels(const VoxelGrid& grid, const std::filesystem::path& path);
VoxelGrid read_voxels(const std::filesystem::path& path);

using Sample = std::vector<float>;

/// Biased squared MMD with an RBF kernel, before clamping and the root.
double mmd_squared(std::span<const Sample> x, std::span<const Sample> y, double bandwidth);
/// sqrt(max(0, mmd_squared)). Throws ConfigError for bandwidth <= 0 and
/// ContractViolation for an empty sample.
double mmd(std::span<const Sample> x, std::span<const Sample> y, double bandwidth);

/// Median pairwise Euclidean distance. Throws ContractViolation for fewer than two samples.
double median_pairwise_distance(std::span<const Sample> samples);

struct EmbeddingSet {
    std::vector<Sample> codes;
    std::vector<std::size_t> bins;
    std::size_t size() const { return codes.size(); }
};

struct PairwiseMmd {
    double mean = 0.0;
    std::size_t pairs = 0;
    std::vector<std::size_t> bins_used;
    std::vector<std::size_t> bins_excluded;  // fewer than two samples
};

/// Mean MMD over all unordered pairs of bins holding at least two samples.
/// Throws UndefinedMetric when fewer than two bins qualify.
PairwiseMmd pairwise_viewpoint_mmd(const EmbeddingSet& set, double bandwidth,
                                   std::vector<std::string>* warnings = nullptr);

/// Header "bin,z0,...,z{D-1}", one row per code. D is 512 for an empty set.
void export_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet load_embeddings(const std::filesystem::path& path);

/// Codes of every dataset sample paired with its view bin.
EmbeddingSet embed_dataset(const ModelParams& model, const Dataset& dataset);

struct IouReport {
    double mean = 0.0;
    std::size_t count = 0;
};

/// Mean voxel IoU of G(E(image)) against each sample's ground-truth mesh.
/// Samples without a ground-truth mesh are skipped.
IouReport reconstruction_iou(const ModelParams& model, const Dataset& dataset,
                             std::size_t resolution = kVoxelResolution);

/// Pairs "*.obj" files by name in two directories and averages their voxel IoU.
/// Throws IoError if a predicted mesh has no ground-truth counterpart.
IouReport directory_iou(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                        std::size_t resolution = kVoxelResolution);

}  // namespace p3d
