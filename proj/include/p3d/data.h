#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "p3d/mesh.h"
#include "p3d/renderer.h"
#include "p3d/tensor.h"

namespace p3d {

/// Regular (azimuth, elevation) grid. Azimuth wraps at 360; elevation covers
/// [el_min, el_min + el_range).
struct ViewBinning {
    double az_width = 15.0;
    double el_width = 20.0;
    double el_min = -20.0;
    double el_range = 60.0;

    std::size_t azimuth_bins() const;
    std::size_t elevation_bins() const;
    std::size_t bin_count() const { return azimuth_bins() * elevation_bins(); }
    /// Throws ConfigError unless both widths divide their ranges.
    void validate() const;
};

/// floor(az mod 360 / az_width) + n_az * floor((el - el_min) / el_width).
/// Throws ConfigError for a bad grid and GeometryError for an elevation outside it.
std::size_t bin_viewpoint(double azimuth_deg, double elevation_deg, const ViewBinning& binning);
std::size_t bin_viewpoint(double azimuth_deg, double elevation_deg, double az_width, double el_width, double el_min,
                          double el_range);

/// Azimuth-only grid with K bins (one elevation band spanning [-90, 90)).
ViewBinning azimuth_binning(std::size_t k);

struct SampleRecord {
    std::string image;  // relative to the dataset root
    double azimuth = 0.0;
    double elevation = 0.0;
    double distance = 2.732;
    std::size_t view_bin = 0;
    std::optional<std::size_t> instance_id;
};

struct DatasetManifest {
    std::string name;
    std::size_t k = 0;
    std::string pose_convention;
    std::size_t image_resolution = 64;
    std::vector<SampleRecord> samples;
    bool single_view = true;
    ViewBinning binning;
};

std::string manifest_to_json(const DatasetManifest& manifest);
/// Throws FormatError for malformed JSON or missing fields.
DatasetManifest manifest_from_json(const std::string& text);

/// Relative path of an instance's ground-truth mesh.
std::string gt_mesh_name(std::size_t instance_id);

/// A validated dataset with every silhouette resident in memory.
class Dataset {
public:
    /// Throws IoError naming a missing or truncated file, FormatError for a bad
    /// manifest and ConfigError for records that violate its invariants.
    static Dataset load(const std::filesystem::path& root);

    std::size_t size() const { return manifest_.samples.size(); }
    std::size_t num_views() const { return manifest_.k; }
    const DatasetManifest& manifest() const { return manifest_; }
    const std::filesystem::path& root() const { return root_; }

    const SampleRecord& record(std::size_t i) const { return manifest_.samples.at(i); }
    Pose pose(std::size_t i) const;
    /// Binary [R,R] silhouette.
    const Tensor& silhouette(std::size_t i) const { return silhouettes_.at(i); }
    /// [R,R,4] network input: silhouette replicated into RGB plus the silhouette channel.
    Tensor image(std::size_t i) const;
    std::optional<std::filesystem::path> gt_mesh_path(std::size_t i) const;

private:
    std::filesystem::path root_;
    DatasetManifest manifest_;
    std::vector<Tensor> silhouettes_;
};

/// Expands an [H,W] silhouette into the [H,W,4] network input.
Tensor silhouette_to_image(const Tensor& silhouette);

/// Independent stream seed from a base seed (splitmix64 mixing).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// n indices drawn uniformly with replacement; deterministic in `seed`.
std::vector<std::size_t> sample_batch(std::size_t dataset_size, std::size_t n, std::uint64_t seed);

enum class ShapeFamily { Ellipsoid, RoundedBox, EllipsoidUnion };

const char* family_name(ShapeFamily family);

/// Star-shaped primitive described radially around the origin.
///   Ellipsoid:      a, b, c semi-axes
///   RoundedBox:     a, b, c half-extents, p superquadric exponent
///   EllipsoidUnion: a1, b1, c1, a2, b2, c2 semi-axes, dx, dy, dz (centers at +-d)
struct ShapeRecipe {
    ShapeFamily family = ShapeFamily::Ellipsoid;
    std::vector<double> params;
    std::uint64_t seed = 0;
};

/// Draws a recipe whose surface lies inside [-1,1]^3 and contains the origin.
ShapeRecipe sample_recipe(std::uint64_t seed);

/// Radial surface over an icosphere of the given level. Throws GeometryError
/// for a recipe that does not enclose the origin.
TriMesh build_recipe_mesh(const ShapeRecipe& recipe, int level = kCanonicalLevel);

struct SyntheticConfig {
    std::size_t instances = 200;
    std::size_t k = 8;
    double elevation = 30.0;
    double distance = 2.732;
    std::uint64_t seed = 0;
    /// 1 reproduces the single-view setting; larger values render distinct views
    /// of each instance and mark the set as multi-view.
    std::size_t views_per_instance = 1;
    /// Rasterizer sharpness for the stored silhouettes; small values give the
    /// geometric outline after thresholding.
    float render_sigma = 1e-3f;
    std::string name = "synthetic";
};

/// Writes manifest.json, images/ and gt_meshes/ under `out`.
DatasetManifest generate_synthetic_dataset(const SyntheticConfig& config, const std::filesystem::path& out);

}  // namespace p3d
