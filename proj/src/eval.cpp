#include "p3d/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "p3d/error.h"

namespace p3d {

namespace {

struct Tri {
    double p[3][3];
    double ymin, ymax, zmin, zmax;
};

std::vector<Tri> triangles(const TriMesh& mesh) {
    std::vector<Tri> out;
    out.reserve(mesh.face_count());
    for (const Face& f : mesh.faces) {
        Tri t{};
        for (int v = 0; v < 3; ++v)
            for (int d = 0; d < 3; ++d) t.p[v][d] = mesh.vertices[f[v]][d];
        t.ymin = std::min({t.p[0][1], t.p[1][1], t.p[2][1]});
        t.ymax = std::max({t.p[0][1], t.p[1][1], t.p[2][1]});
        t.zmin = std::min({t.p[0][2], t.p[1][2], t.p[2][2]});
        t.zmax = std::max({t.p[0][2], t.p[1][2], t.p[2][2]});
        out.push_back(t);
    }
    return out;
}

// x coordinates where the line {(s, y, z)} crosses the triangles.
void row_hits(const std::vector<Tri>& tris, double y, double z, std::vector<double>& hits) {
    hits.clear();
    for (const Tri& t : tris) {
        if (y < t.ymin || y > t.ymax || z < t.zmin || z > t.zmax) continue;
        const double* a = t.p[0];
        const double* b = t.p[1];
        const double* c = t.p[2];
        const double det = (b[1] - a[1]) * (c[2] - a[2]) - (b[2] - a[2]) * (c[1] - a[1]);
        if (det == 0.0) continue;  // parallel to the ray
        const double l1 = ((y - a[1]) * (c[2] - a[2]) - (z - a[2]) * (c[1] - a[1])) / det;
        const double l2 = ((b[1] - a[1]) * (z - a[2]) - (b[2] - a[2]) * (y - a[1])) / det;
        const double l0 = 1.0 - l1 - l2;
        if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
        hits.push_back(l0 * a[0] + l1 * b[0] + l2 * c[0]);
    }
    std::sort(hits.begin(), hits.end());
}

bool parity_fill(const TriMesh& mesh, VoxelGrid& grid) {
    const std::size_t r = grid.resolution;
    const auto tris = triangles(mesh);
    // Off-center rays avoid passing exactly through shared edges and vertices.
    const double cell = 2.0 / static_cast<double>(r);
    const double dy = 1e-6 * cell * 0.3718, dz = 1e-6 * cell * 0.6161;
    std::vector<double> hits;
    for (std::size_t k = 0; k < r; ++k)
        for (std::size_t j = 0; j < r; ++j) {
            row_hits(tris, grid.center(j) + dy, grid.center(k) + dz, hits);
            if (hits.size() % 2 != 0) return false;
            std::size_t h = 0;
            for (std::size_t i = 0; i < r; ++i) {
                const double x = grid.center(i);
                while (h < hits.size() && hits[h] < x) ++h;
                grid.occupied[grid.index(i, j, k)] = h % 2;
            }
        }
    return true;
}

void surface_fill(const TriMesh& mesh, VoxelGrid& grid) {
    const std::size_t r = grid.resolution;
    const double cell = 2.0 / static_cast<double>(r);
    auto to_cell = [&](double v) -> long { return static_cast<long>(std::floor((v + 1.0) / cell)); };
    std::vector<std::uint8_t> surface(grid.occupied.size(), 0);
    for (const Face& f : mesh.faces) {
        const Vertex& a = mesh.vertices[f[0]];
        const Vertex& b = mesh.vertices[f[1]];
        const Vertex& c = mesh.vertices[f[2]];
        double longest = 0.0;
        for (auto [p, q] : {std::pair{&a, &b}, {&b, &c}, {&c, &a}}) {
            double d2 = 0.0;
            for (int d = 0; d < 3; ++d) d2 += double((*p)[d] - (*q)[d]) * ((*p)[d] - (*q)[d]);
            longest = std::max(longest, std::sqrt(d2));
        }
        const std::size_t n = static_cast<std::size_t>(std::ceil(longest / (0.25 * cell))) + 1;
        for (std::size_t s = 0; s <= n; ++s)
            for (std::size_t t = 0; s + t <= n; ++t) {
                const double u = double(s) / n, v = double(t) / n, w = 1.0 - u - v;
                long idx[3];
                bool inside = true;
                for (int d = 0; d < 3; ++d) {
                    idx[d] = to_cell(w * a[d] + u * b[d] + v * c[d]);
                    inside = inside && idx[d] >= 0 && idx[d] < static_cast<long>(r);
                }
                if (inside) surface[grid.index(idx[0], idx[1], idx[2])] = 1;
            }
    }
    // Flood the exterior from every boundary cell that is not surface.
    std::vector<std::uint8_t> outside(surface.size(), 0);
    std::vector<std::size_t> stack;
    auto seed = [&](std::size_t i, std::size_t j, std::size_t k) {
        const std::size_t id = grid.index(i, j, k);
        if (!surface[id] && !outside[id]) {
            outside[id] = 1;
            stack.push_back(id);
        }
    };
    for (std::size_t a = 0; a < r; ++a)
        for (std::size_t b = 0; b < r; ++b) {
            seed(0, a, b), seed(r - 1, a, b);
            seed(a, 0, b), seed(a, r - 1, b);
            seed(a, b, 0), seed(a, b, r - 1);
        }
    while (!stack.empty()) {
        const std::size_t id = stack.back();
        stack.pop_back();
        const std::size_t i = id % r, j = (id / r) % r, k = id / (r * r);
        if (i > 0) seed(i - 1, j, k);
        if (i + 1 < r) seed(i + 1, j, k);
        if (j > 0) seed(i, j - 1, k);
        if (j + 1 < r) seed(i, j + 1, k);
        if (k > 0) seed(i, j, k - 1);
        if (k + 1 < r) seed(i, j, k + 1);
    }
    for (std::size_t id = 0; id < outside.size(); ++id) grid.occupied[id] = outside[id] ? 0 : 1;
}

double sq_dist(const Sample& a, const Sample& b) {
    if (a.size() != b.size()) throw ContractViolation("samples differ in dimension");
    double s = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) {
        const double t = double(a[d]) - double(b[d]);
        s += t * t;
    }
    return s;
}

double kernel_sum(std::span<const Sample> x, std::span<const Sample> y, double gamma) {
    double s = 0.0;
    for (const Sample& a : x)
        for (const Sample& b : y) s += std::exp(-gamma * sq_dist(a, b));
    return s;
}

// Cross-term sum that is invariant under swapping x and y: row-major and
// column-major accumulations of the same matrix, added.
double symmetric_cross_sum(std::span<const Sample> x, std::span<const Sample> y, double gamma) {
    std::vector<double> k(x.size() * y.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j) k[i * y.size() + j] = std::exp(-gamma * sq_dist(x[i], y[j]));
    double by_rows = 0.0, by_cols = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j) by_rows += k[i * y.size() + j];
    for (std::size_t j = 0; j < y.size(); ++j)
        for (std::size_t i = 0; i < x.size(); ++i) by_cols += k[i * y.size() + j];
    return 0.5 * (by_rows + by_cols);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

VoxelGrid VoxelGrid::empty(std::size_t r) {
    if (r < 8) throw ConfigError("voxel resolution must be at least 8, got " + std::to_string(r));
    VoxelGrid g;
    g.resolution = r;
    g.occupied.assign(r * r * r, 0);
    return g;
}

std::size_t VoxelGrid::count() const { return static_cast<std::size_t>(std::count(occupied.begin(), occupied.end(), 1)); }

VoxelGrid voxelize(const TriMesh& mesh, std::size_t resolution, std::vector<std::string>* warnings) {
    VoxelGrid grid = VoxelGrid::empty(resolution);
    auto warn = [&](std::string w) {
        if (warnings) warnings->push_back(std::move(w));
    };
    std::size_t clipped = 0;
    for (const Vertex& v : mesh.vertices)
        if (std::abs(v[0]) > 1.2f || std::abs(v[1]) > 1.2f || std::abs(v[2]) > 1.2f) ++clipped;
    if (clipped > 0) warn(std::to_string(clipped) + " vertices lie outside [-1.2,1.2]^3 and are clipped");

    bool closed = true;
    try {
        build_edge_adjacency(mesh);
    } catch (const GeometryError&) {
        closed = false;
    }
    if (closed && parity_fill(mesh, grid)) return grid;
    warn("mesh is not closed; using surface rasterization with exterior flood fill");
    grid = VoxelGrid::empty(resolution);
    surface_fill(mesh, grid);
    return grid;
}

double voxel_iou(const VoxelGrid& a, const VoxelGrid& b) {
    if (a.resolution != b.resolution)
        throw ContractViolation("voxel_iou: resolutions differ (" + std::to_string(a.resolution) + " vs " +
                                std::to_string(b.resolution) + ")");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.occupied.size(); ++i) {
        inter += a.occupied[i] & b.occupied[i];
        uni += a.occupied[i] | b.occupied[i];
    }
    if (uni == 0) throw UndefinedMetric("voxel IoU undefined: both grids are empty");
    return static_cast<double>(inter) / static_cast<double>(uni);
}

void write_voxels(const VoxelGrid& grid, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    const std::size_t r = grid.resolution;
    out << r << ' ' << r << ' ' << r << '\n';
    std::string bits((grid.occupied.size() + 7) / 8, '\0');
    for (std::size_t i = 0; i < grid.occupied.size(); ++i)
        if (grid.occupied[i]) bits[i / 8] = static_cast<char>(bits[i / 8] | (1 << (i % 8)));
    out.write(bits.data(), static_cast<std::streamsize>(bits.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

VoxelGrid read_voxels(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open voxel file: " + path.string());
    std::size_t rx = 0, ry = 0, rz = 0;
    in >> rx >> ry >> rz;
    if (!in || rx != ry || ry != rz || in.get() != '\n') throw FormatError("bad voxel header in " + path.string());
    VoxelGrid g = VoxelGrid::empty(rx);
    std::string bits((g.occupied.size() + 7) / 8, '\0');
    in.read(bits.data(), static_cast<std::streamsize>(bits.size()));
    if (in.gcount() != static_cast<std::streamsize>(bits.size()))
        throw IoError("truncated voxel file: " + path.string());
    for (std::size_t i = 0; i < g.occupied.size(); ++i) g.occupied[i] = (bits[i / 8] >> (i % 8)) & 1;
    return g;
}

double mmd_squared(std::span<const Sample> x, std::span<const Sample> y, double bandwidth) {
    if (!(bandwidth > 0.0)) throw ConfigError("MMD kernel bandwidth must be positive");
    if (x.empty() || y.empty()) throw ContractViolation("MMD needs non-empty samples");
    const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    const double m = static_cast<double>(x.size()), n = static_cast<double>(y.size());
    const double within = kernel_sum(x, x, gamma) / (m * m) + kernel_sum(y, y, gamma) / (n * n);
    return within - 2.0 * symmetric_cross_sum(x, y, gamma) / (m * n);
}

double mmd(std::span<const Sample> x, std::span<const Sample> y, double bandwidth) {
    return std::sqrt(std::max(0.0, mmd_squared(x, y, bandwidth)));
}

double median_pairwise_distance(std::span<const Sample> s) {
    if (s.size() < 2) throw ContractViolation("median distance needs at least two samples");
    std::vector<double> d;
    d.reserve(s.size() * (s.size() - 1) / 2);
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = i + 1; j < s.size(); ++j) d.push_back(std::sqrt(sq_dist(s[i], s[j])));
    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + mid, d.end());
    if (d.size() % 2 == 1) return d[mid];
    const double upper = d[mid];
    return 0.5 * (upper + *std::max_element(d.begin(), d.begin() + mid));
}

PairwiseMmd pairwise_viewpoint_mmd(const EmbeddingSet& set, double bandwidth, std::vector<std::string>* warnings) {
    if (set.codes.size() != set.bins.size()) throw ContractViolation("embedding set: one bin per code required");
    std::map<std::size_t, std::vector<Sample>> groups;
    for (std::size_t i = 0; i < set.size(); ++i) groups[set.bins[i]].push_back(set.codes[i]);
    PairwiseMmd out;
    for (const auto& [bin, codes] : groups) {
        if (codes.size() < 2) {
            out.bins_excluded.push_back(bin);
            if (warnings) warnings->push_back("bin " + std::to_string(bin) + " has fewer than 2 samples; excluded");
        } else {
            out.bins_used.push_back(bin);
        }
    }
    if (out.bins_used.size() < 2) throw UndefinedMetric("pairwise MMD needs at least two populated bins");
    double total = 0.0;
    for (std::size_t a = 0; a < out.bins_used.size(); ++a)
        for (std::size_t b = a + 1; b < out.bins_used.size(); ++b) {
            total += mmd(groups[out.bins_used[a]], groups[out.bins_used[b]], bandwidth);
            ++out.pairs;
        }
    out.mean = total / static_cast<double>(out.pairs);
    return out;
}

void export_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
    if (set.codes.size() != set.bins.size()) throw ContractViolation("embedding set: one bin per code required");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    const std::size_t dim = set.codes.empty() ? kCodeDim : set.codes.front().size();
    out << "bin";
    for (std::size_t d = 0; d < dim; ++d) out << ",z" << d;
    out << "\n";
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (set.codes[i].size() != dim) throw ContractViolation("embedding set: codes differ in dimension");
        out << set.bins[i];
        for (float v : set.codes[i]) out << ',' << fmt(v);
        out << "\n";
    }
    if (!out) throw IoError("failed writing " + path.string());
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open embeddings: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("bin", 0) != 0) throw FormatError("missing embedding header in " + path.string());
    EmbeddingSet set;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::getline(row, cell, ',');
        try {
            set.bins.push_back(std::stoul(cell));
            Sample code;
            while (std::getline(row, cell, ',')) code.push_back(std::stof(cell));
            set.codes.push_back(std::move(code));
        } catch (const std::exception&) {
            throw FormatError("malformed embedding row in " + path.string());
        }
    }
    return set;
}

EmbeddingSet embed_dataset(const ModelParams& model, const Dataset& dataset) {
    EmbeddingSet set;
    constexpr std::size_t chunk = 32;
    const std::size_t img = kImageSize * kImageSize * kImageChannels;
    for (std::size_t start = 0; start < dataset.size(); start += chunk) {
        const std::size_t n = std::min(chunk, dataset.size() - start);
        Tensor images({n, kImageSize, kImageSize, kImageChannels});
        for (std::size_t k = 0; k < n; ++k) {
            const Tensor one = dataset.image(start + k);
            if (one.numel() != img) throw ConfigError("dataset images must be 64x64");
            std::copy(one.raw(), one.raw() + img, images.raw() + k * img);
        }
        const Tensor codes = encode_batch(model, images);
        for (std::size_t k = 0; k < n; ++k) {
            set.codes.emplace_back(codes.raw() + k * kCodeDim, codes.raw() + (k + 1) * kCodeDim);
            set.bins.push_back(dataset.record(start + k).view_bin);
        }
    }
    return set;
}

IouReport reconstruction_iou(const ModelParams& model, const Dataset& dataset, std::size_t resolution) {
    const EmbeddingSet codes = embed_dataset(model, dataset);
    std::map<std::filesystem::path, VoxelGrid> truth;
    IouReport report;
    double total = 0.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto gt = dataset.gt_mesh_path(i);
        if (!gt) continue;
        auto it = truth.find(*gt);
        if (it == truth.end()) it = truth.emplace(*gt, voxelize(load_obj(*gt), resolution)).first;
        const Tensor code({kCodeDim}, codes.codes[i]);
        total += voxel_iou(voxelize(generate(model, code), resolution), it->second);
        ++report.count;
    }
    if (report.count == 0) throw UndefinedMetric("no samples with ground-truth meshes");
    report.mean = total / static_cast<double>(report.count);
    return report;
}

IouReport directory_iou(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                        std::size_t resolution) {
    if (!std::filesystem::is_directory(pred_dir)) throw IoError("not a directory: " + pred_dir.string());
    if (!std::filesystem::is_directory(gt_dir)) throw IoError("not a directory: " + gt_dir.string());
    std::vector<std::filesystem::path> preds;
    for (const auto& e : std::filesystem::directory_iterator(pred_dir))
        if (e.is_regular_file() && e.path().extension() == ".obj") preds.push_back(e.path());
    std::sort(preds.begin(), preds.end());
    if (preds.empty()) throw IoError("no .obj meshes in " + pred_dir.string());
    IouReport report;
    double total = 0.0;
    for (const auto& p : preds) {
        const auto g = gt_dir / p.filename();
        if (!std::filesystem::exists(g)) throw IoError("no ground-truth mesh for " + p.string() + " at " + g.string());
        total += voxel_iou(voxelize(load_obj(p), resolution), voxelize(load_obj(g), resolution));
        ++report.count;
    }
    report.mean = total / static_cast<double>(report.count);
    return report;
}

}  // namespace p3d
