#include "p3d/data.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "p3d/error.h"
#include "p3d/image.h"
#include "p3d/networks.h"

namespace p3d {

namespace {

using nlohmann::json;

// Index of x within a grid of cells of the given width. The small slack keeps
// grid points that are exact multiples of the width (up to rounding) in their own cell.
std::size_t cell(double x, double width) { return static_cast<std::size_t>(std::floor(x / width + 1e-9)); }

std::size_t divide_range(double range, double width, const char* what) {
    if (!(width > 0.0) || !(range > 0.0)) throw ConfigError(std::string(what) + " width and range must be positive");
    const double n = range / width;
    const double rounded = std::round(n);
    if (rounded < 1.0 || std::abs(n - rounded) > 1e-9 * std::max(1.0, n))
        throw ConfigError(std::string(what) + " width " + std::to_string(width) + " does not divide range " +
                          std::to_string(range));
    return static_cast<std::size_t>(rounded);
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

// Distance from the origin to the far intersection of direction u with the
// ellipsoid |(x - c) / axes| = 1. Requires the origin inside.
double ellipsoid_exit(const double u[3], const double c[3], const double axes[3]) {
    double qa = 0, qb = 0, qc = -1;
    for (int i = 0; i < 3; ++i) {
        const double ui = u[i] / axes[i], ci = c[i] / axes[i];
        qa += ui * ui;
        qb += ui * ci;
        qc += ci * ci;
    }
    if (qc >= 0.0) throw GeometryError("ellipsoid does not contain the origin");
    return (qb + std::sqrt(qb * qb - qa * qc)) / qa;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::size_t ViewBinning::azimuth_bins() const { return divide_range(360.0, az_width, "azimuth"); }
std::size_t ViewBinning::elevation_bins() const { return divide_range(el_range, el_width, "elevation"); }

void ViewBinning::validate() const {
    azimuth_bins();
    elevation_bins();
}

std::size_t bin_viewpoint(double azimuth_deg, double elevation_deg, const ViewBinning& b) {
    const std::size_t n_az = b.azimuth_bins();
    const std::size_t n_el = b.elevation_bins();
    if (!std::isfinite(azimuth_deg) || !std::isfinite(elevation_deg))
        throw GeometryError("viewpoint angles must be finite");
    const double rel = elevation_deg - b.el_min;
    if (rel < 0.0 || rel >= b.el_range)
        throw GeometryError("elevation " + std::to_string(elevation_deg) + " outside [" + std::to_string(b.el_min) +
                            ", " + std::to_string(b.el_min + b.el_range) + ")");
    double az = std::fmod(azimuth_deg, 360.0);
    if (az < 0.0) az += 360.0;
    const std::size_t ia = std::min(cell(az, b.az_width), n_az - 1) % n_az;
    const std::size_t ie = std::min(cell(rel, b.el_width), n_el - 1);
    return ia + n_az * ie;
}

std::size_t bin_viewpoint(double azimuth_deg, double elevation_deg, double az_width, double el_width, double el_min,
                          double el_range) {
    return bin_viewpoint(azimuth_deg, elevation_deg, ViewBinning{az_width, el_width, el_min, el_range});
}

ViewBinning azimuth_binning(std::size_t k) {
    if (k < 2) throw ConfigError("need at least 2 viewpoint bins, got " + std::to_string(k));
    return ViewBinning{360.0 / static_cast<double>(k), 180.0, -90.0, 180.0};
}

std::string manifest_to_json(const DatasetManifest& m) {
    json j;
    j["name"] = m.name;
    j["K"] = m.k;
    j["pose_convention"] = m.pose_convention;
    j["image_resolution"] = m.image_resolution;
    j["single_view"] = m.single_view;
    j["binning"] = {{"az_width", m.binning.az_width},
                    {"el_width", m.binning.el_width},
                    {"el_min", m.binning.el_min},
                    {"el_range", m.binning.el_range}};
    json samples = json::array();
    for (const SampleRecord& s : m.samples) {
        json r{{"image", s.image},
               {"azimuth", s.azimuth},
               {"elevation", s.elevation},
               {"distance", s.distance},
               {"view_bin", s.view_bin}};
        if (s.instance_id) r["instance_id"] = *s.instance_id;
        samples.push_back(std::move(r));
    }
    j["samples"] = std::move(samples);
    return j.dump(1) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
    DatasetManifest m;
    try {
        const json j = json::parse(text);
        m.name = j.at("name").get<std::string>();
        m.k = j.at("K").get<std::size_t>();
        m.pose_convention = j.value("pose_convention", "");
        m.image_resolution = j.at("image_resolution").get<std::size_t>();
        m.single_view = j.at("single_view").get<bool>();
        if (j.contains("binning")) {
            const json& b = j["binning"];
            m.binning = {b.at("az_width").get<double>(), b.at("el_width").get<double>(), b.at("el_min").get<double>(),
                         b.at("el_range").get<double>()};
        } else {
            m.binning = azimuth_binning(std::max<std::size_t>(m.k, 2));
        }
        for (const json& r : j.at("samples")) {
            SampleRecord s;
            s.image = r.at("image").get<std::string>();
            s.azimuth = r.at("azimuth").get<double>();
            s.elevation = r.at("elevation").get<double>();
            s.distance = r.at("distance").get<double>();
            s.view_bin = r.at("view_bin").get<std::size_t>();
            if (r.contains("instance_id") && !r["instance_id"].is_null())
                s.instance_id = r["instance_id"].get<std::size_t>();
            m.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed dataset manifest: ") + e.what());
    }
    return m;
}

std::string gt_mesh_name(std::size_t instance_id) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "gt_meshes/instance_%05zu.obj", instance_id);
    return buf;
}

Dataset Dataset::load(const std::filesystem::path& root) {
    const std::filesystem::path manifest_path = root / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) throw IoError("missing dataset manifest: " + manifest_path.string());
    Dataset d;
    d.root_ = root;
    d.manifest_ = manifest_from_json(read_text(manifest_path));
    const DatasetManifest& m = d.manifest_;
    if (m.k < 2) throw ConfigError("dataset K must be at least 2");
    if (m.image_resolution == 0) throw ConfigError("dataset image resolution must be positive");
    std::set<std::size_t> seen;
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        const SampleRecord& s = m.samples[i];
        if (s.view_bin >= m.k)
            throw ConfigError("sample " + std::to_string(i) + " has view_bin " + std::to_string(s.view_bin) +
                              " but K = " + std::to_string(m.k));
        if (m.single_view && s.instance_id && !seen.insert(*s.instance_id).second)
            throw ConfigError("single-view dataset repeats instance " + std::to_string(*s.instance_id));
        const std::filesystem::path img = root / s.image;
        if (!std::filesystem::exists(img)) throw IoError("missing image file: " + img.string());
        Tensor sil = read_pgm(img);
        if (sil.dim(0) != m.image_resolution || sil.dim(1) != m.image_resolution)
            throw ConfigError("image " + img.string() + " is " + shape_to_string(sil.shape()) + ", manifest says " +
                              std::to_string(m.image_resolution));
        for (float& v : sil.data()) v = v >= 0.5f ? 1.0f : 0.0f;
        d.silhouettes_.push_back(std::move(sil));
    }
    return d;
}

Pose Dataset::pose(std::size_t i) const {
    const SampleRecord& s = record(i);
    return Pose{s.azimuth, s.elevation, s.distance, s.view_bin};
}

Tensor Dataset::image(std::size_t i) const { return silhouette_to_image(silhouette(i)); }

std::optional<std::filesystem::path> Dataset::gt_mesh_path(std::size_t i) const {
    const SampleRecord& s = record(i);
    if (!s.instance_id) return std::nullopt;
    std::filesystem::path p = root_ / gt_mesh_name(*s.instance_id);
    if (!std::filesystem::exists(p)) return std::nullopt;
    return p;
}

Tensor silhouette_to_image(const Tensor& sil) {
    if (sil.rank() != 2) throw ContractViolation("expected an [H,W] silhouette, got " + shape_to_string(sil.shape()));
    Tensor img({sil.dim(0), sil.dim(1), 4});
    for (std::size_t p = 0; p < sil.numel(); ++p)
        for (std::size_t c = 0; c < 4; ++c) img[p * 4 + c] = sil[p];
    return img;
}

std::vector<std::size_t> sample_batch(std::size_t dataset_size, std::size_t n, std::uint64_t seed) {
    if (dataset_size == 0) throw ContractViolation("cannot sample from an empty dataset");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, dataset_size - 1);
    std::vector<std::size_t> out(n);
    for (std::size_t& i : out) i = pick(rng);
    return out;
}

const char* family_name(ShapeFamily f) {
    switch (f) {
        case ShapeFamily::Ellipsoid: return "ellipsoid";
        case ShapeFamily::RoundedBox: return "rounded_box";
        case ShapeFamily::EllipsoidUnion: return "ellipsoid_union";
    }
    return "unknown";
}

ShapeRecipe sample_recipe(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
    ShapeRecipe r;
    r.seed = seed;
    r.family = static_cast<ShapeFamily>(std::min<int>(2, static_cast<int>(u01(rng) * 3.0)));
    switch (r.family) {
        case ShapeFamily::Ellipsoid:
            r.params = {uniform(0.35, 0.95), uniform(0.35, 0.95), uniform(0.35, 0.95)};
            break;
        case ShapeFamily::RoundedBox:
            r.params = {uniform(0.3, 0.6), uniform(0.3, 0.6), uniform(0.3, 0.6), uniform(3.0, 6.0)};
            break;
        case ShapeFamily::EllipsoidUnion: {
            double axes[6];
            for (double& a : axes) a = uniform(0.3, 0.55);
            // Direction of the center offset; its length keeps the origin inside both.
            double d[3] = {uniform(-1, 1), uniform(-0.5, 0.5), uniform(-1, 1)};
            const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) + 1e-12;
            double worst = 0.0;
            for (int e = 0; e < 2; ++e) {
                double q = 0.0;
                for (int i = 0; i < 3; ++i) q += (d[i] / len / axes[3 * e + i]) * (d[i] / len / axes[3 * e + i]);
                worst = std::max(worst, std::sqrt(q));
            }
            const double reach = uniform(0.3, 0.7) / worst;
            r.params.assign(axes, axes + 6);
            for (double x : d) r.params.push_back(x / len * reach);
            break;
        }
    }
    return r;
}

TriMesh build_recipe_mesh(const ShapeRecipe& r, int level) {
    const std::size_t expected = r.family == ShapeFamily::Ellipsoid ? 3 : r.family == ShapeFamily::RoundedBox ? 4 : 9;
    if (r.params.size() != expected)
        throw GeometryError(std::string("recipe for ") + family_name(r.family) + " needs " + std::to_string(expected) +
                            " parameters");
    const std::size_t extents = r.family == ShapeFamily::EllipsoidUnion ? 6 : 3;
    for (std::size_t i = 0; i < extents; ++i)
        if (!(r.params[i] > 0.0)) throw GeometryError("degenerate recipe: non-positive extent");

    TriMesh mesh = make_icosphere(level);
    for (Vertex& v : mesh.vertices) {
        const double u[3] = {v[0], v[1], v[2]};
        double radius = 0.0;
        switch (r.family) {
            case ShapeFamily::Ellipsoid: {
                const double zero[3] = {0, 0, 0};
                radius = ellipsoid_exit(u, zero, r.params.data());
                break;
            }
            case ShapeFamily::RoundedBox: {
                const double p = r.params[3];
                if (!(p >= 2.0)) throw GeometryError("degenerate recipe: superquadric exponent below 2");
                double s = 0.0;
                for (int i = 0; i < 3; ++i) s += std::pow(std::abs(u[i]) / r.params[i], p);
                radius = std::pow(s, -1.0 / p);
                break;
            }
            case ShapeFamily::EllipsoidUnion: {
                const double* d = r.params.data() + 6;
                const double c1[3] = {d[0], d[1], d[2]};
                const double c2[3] = {-d[0], -d[1], -d[2]};
                radius = std::max(ellipsoid_exit(u, c1, r.params.data()), ellipsoid_exit(u, c2, r.params.data() + 3));
                break;
            }
        }
        for (int i = 0; i < 3; ++i) v[i] = static_cast<float>(u[i] * radius);
    }
    return mesh;
}

DatasetManifest generate_synthetic_dataset(const SyntheticConfig& cfg, const std::filesystem::path& out) {
    if (cfg.instances == 0) throw ConfigError("instances must be positive");
    if (cfg.views_per_instance == 0 || cfg.views_per_instance > cfg.k)
        throw ConfigError("views per instance must lie in [1, K]");
    const ViewBinning binning = azimuth_binning(cfg.k);

    std::error_code ec;
    std::filesystem::create_directories(out / "images", ec);
    std::filesystem::create_directories(out / "gt_meshes", ec);
    if (ec || !std::filesystem::is_directory(out / "images"))
        throw IoError("cannot create dataset directory " + out.string());

    DatasetManifest m;
    m.name = cfg.name;
    m.k = cfg.k;
    m.pose_convention =
        "degrees; azimuth about +y from +z toward +x, elevation above the xz-plane, camera looks at the origin";
    m.image_resolution = kImageSize;
    m.single_view = cfg.views_per_instance == 1;
    m.binning = binning;

    RenderSettings render;
    render.height = render.width = kImageSize;
    render.sigma = cfg.render_sigma;
    for (std::size_t inst = 0; inst < cfg.instances; ++inst) {
        const std::uint64_t inst_seed = derive_seed(cfg.seed, inst);
        const ShapeRecipe recipe = sample_recipe(inst_seed);
        const TriMesh mesh = build_recipe_mesh(recipe);
        export_obj(mesh, out / gt_mesh_name(inst));

        std::vector<std::size_t> views(cfg.k);
        std::iota(views.begin(), views.end(), 0);
        std::mt19937_64 view_rng(derive_seed(inst_seed, 1));
        for (std::size_t j = 0; j < cfg.views_per_instance; ++j) {
            std::uniform_int_distribution<std::size_t> pick(j, cfg.k - 1);
            std::swap(views[j], views[pick(view_rng)]);
        }
        for (std::size_t j = 0; j < cfg.views_per_instance; ++j) {
            SampleRecord s;
            s.azimuth = static_cast<double>(views[j]) * 360.0 / static_cast<double>(cfg.k);
            s.elevation = cfg.elevation;
            s.distance = cfg.distance;
            s.view_bin = bin_viewpoint(s.azimuth, s.elevation, binning);
            s.instance_id = inst;
            char name[64];
            std::snprintf(name, sizeof name, "images/sample_%05zu.pgm", m.samples.size());
            s.image = name;

            Tensor sil = render_silhouette(mesh, Pose{s.azimuth, s.elevation, s.distance, s.view_bin}, render);
            for (float& v : sil.data()) v = v >= 0.5f ? 1.0f : 0.0f;
            write_pgm(out / s.image, sil);
            m.samples.push_back(std::move(s));
        }
    }
    write_text(out / "manifest.json", manifest_to_json(m));
    return m;
}

}  // namespace p3d
