#include "p3d/mesh.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include "p3d/error.h"

namespace p3d {

Tensor TriMesh::vertex_tensor() const {
    std::vector<float> xyz;
    xyz.reserve(vertices.size() * 3);
    for (const Vertex& v : vertices) xyz.insert(xyz.end(), v.begin(), v.end());
    return Tensor({vertices.size(), 3}, std::move(xyz));
}

TriMesh TriMesh::with_vertices(std::span<const float> xyz) const {
    if (xyz.size() != vertices.size() * 3)
        throw ContractViolation("with_vertices: expected " + std::to_string(vertices.size() * 3) + " values, got " +
                                std::to_string(xyz.size()));
    TriMesh out{std::vector<Vertex>(vertices.size()), faces};
    for (std::size_t i = 0; i < vertices.size(); ++i) out.vertices[i] = {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]};
    return out;
}

void TriMesh::validate() const {
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const Face& t = faces[f];
        for (std::uint32_t i : t)
            if (i >= vertices.size())
                throw GeometryError("face " + std::to_string(f) + " references vertex " + std::to_string(i) +
                                    " of " + std::to_string(vertices.size()));
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
            throw GeometryError("face " + std::to_string(f) + " is degenerate (repeated vertex index)");
    }
}

namespace {

Vertex normalized(const Vertex& v) {
    const double n = std::sqrt(double(v[0]) * v[0] + double(v[1]) * v[1] + double(v[2]) * v[2]);
    return {static_cast<float>(v[0] / n), static_cast<float>(v[1] / n), static_cast<float>(v[2] / n)};
}

TriMesh icosahedron() {
    const float t = static_cast<float>((1.0 + std::sqrt(5.0)) / 2.0);
    TriMesh m;
    m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                  {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (Vertex& v : m.vertices) v = normalized(v);
    m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
               {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
               {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    return m;
}

using EdgeKey = std::pair<std::uint32_t, std::uint32_t>;

EdgeKey key(std::uint32_t a, std::uint32_t b) { return a < b ? EdgeKey{a, b} : EdgeKey{b, a}; }

TriMesh subdivide(const TriMesh& in) {
    std::map<EdgeKey, std::uint32_t> midpoint;
    for (const Face& f : in.faces)
        for (int k = 0; k < 3; ++k) midpoint.emplace(key(f[k], f[(k + 1) % 3]), 0);

    TriMesh out;
    out.vertices = in.vertices;
    out.vertices.reserve(in.vertices.size() + midpoint.size());
    for (auto& [edge, index] : midpoint) {
        const Vertex& a = in.vertices[edge.first];
        const Vertex& b = in.vertices[edge.second];
        index = static_cast<std::uint32_t>(out.vertices.size());
        out.vertices.push_back(normalized({a[0] + b[0], a[1] + b[1], a[2] + b[2]}));
    }
    out.faces.reserve(in.faces.size() * 4);
    for (const Face& f : in.faces) {
        const std::uint32_t ab = midpoint.at(key(f[0], f[1]));
        const std::uint32_t bc = midpoint.at(key(f[1], f[2]));
        const std::uint32_t ca = midpoint.at(key(f[2], f[0]));
        out.faces.push_back({f[0], ab, ca});
        out.faces.push_back({f[1], bc, ab});
        out.faces.push_back({f[2], ca, bc});
        out.faces.push_back({ab, bc, ca});
    }
    return out;
}

}  // namespace

TriMesh make_icosphere(int level) {
    if (level < 0 || level > kMaxIcosphereLevel)
        throw ConfigError("icosphere level " + std::to_string(level) + " outside [0," +
                          std::to_string(kMaxIcosphereLevel) + "]");
    TriMesh m = icosahedron();
    for (int i = 0; i < level; ++i) m = subdivide(m);
    return m;
}

TriMesh apply_displacements(const TriMesh& base, std::span<const float> delta) {
    if (delta.size() != base.vertices.size() * 3)
        throw ContractViolation("displacement length " + std::to_string(delta.size()) + " != 3*V = " +
                                std::to_string(base.vertices.size() * 3));
    TriMesh out = base;
    for (std::size_t i = 0; i < out.vertices.size(); ++i)
        for (int k = 0; k < 3; ++k) out.vertices[i][k] += delta[3 * i + k];
    return out;
}

EdgeAdjacency build_edge_adjacency(const TriMesh& mesh) {
    mesh.validate();
    struct Incidence {
        std::vector<std::uint32_t> forward;   // faces traversing low -> high
        std::vector<std::uint32_t> backward;  // faces traversing high -> low
    };
    std::map<EdgeKey, Incidence> incident;
    for (std::uint32_t f = 0; f < mesh.faces.size(); ++f) {
        const Face& t = mesh.faces[f];
        for (int k = 0; k < 3; ++k) {
            const std::uint32_t a = t[k], b = t[(k + 1) % 3];
            Incidence& inc = incident[key(a, b)];
            (a < b ? inc.forward : inc.backward).push_back(f);
        }
    }
    EdgeAdjacency adj;
    adj.edges.reserve(incident.size());
    for (const auto& [edge, inc] : incident) {
        const std::size_t count = inc.forward.size() + inc.backward.size();
        if (count != 2)
            throw GeometryError("non-manifold edge (" + std::to_string(edge.first) + "," +
                                std::to_string(edge.second) + ") has " + std::to_string(count) + " incident faces");
        std::vector<std::uint32_t> faces = inc.forward;
        faces.insert(faces.end(), inc.backward.begin(), inc.backward.end());
        adj.edges.push_back({edge.first, edge.second, faces[0], faces[1]});
    }
    return adj;
}

namespace {

struct Vec {
    double x = 0, y = 0, z = 0;
    Vec operator+(const Vec& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec operator-(const Vec& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec& operator+=(const Vec& o) {
        x += o.x, y += o.y, z += o.z;
        return *this;
    }
};

double dot(const Vec& a, const Vec& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec cross(const Vec& a, const Vec& b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }

// Face normals and smoothness energy for vertex positions `xyz` (3V floats).
struct SmoothnessKernel {
    const std::vector<Face>& faces;
    const EdgeAdjacency& adjacency;
    std::vector<Vec> unit;     // unit normal per face
    std::vector<double> norm;  // |cross| per face

    Vec vertex(std::span<const float> xyz, std::uint32_t i) const {
        return {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]};
    }

    double forward(std::span<const float> xyz) {
        unit.assign(faces.size(), Vec{});
        norm.assign(faces.size(), 0.0);
        std::vector<char> used(faces.size(), 0);
        for (const Edge& e : adjacency.edges) used[e.left_face] = used[e.right_face] = 1;
        for (std::size_t f = 0; f < faces.size(); ++f) {
            if (!used[f]) continue;
            const Vec a = vertex(xyz, faces[f][0]);
            const Vec n = cross(vertex(xyz, faces[f][1]) - a, vertex(xyz, faces[f][2]) - a);
            const double len = std::sqrt(dot(n, n));
            if (!(len > 1e-12)) throw GeometryError("zero-area face " + std::to_string(f) + " in smoothness loss");
            norm[f] = len;
            unit[f] = n * (1.0 / len);
        }
        double total = 0.0;
        for (const Edge& e : adjacency.edges) {
            const double t = 1.0 - dot(unit[e.left_face], unit[e.right_face]);
            total += t * t;
        }
        return total;
    }

    // Requires a prior forward() on the same positions.
    void backward(std::span<const float> xyz, double upstream, std::span<float> grad) const {
        std::vector<Vec> g_unit(faces.size());
        for (const Edge& e : adjacency.edges) {
            const Vec& ul = unit[e.left_face];
            const Vec& ur = unit[e.right_face];
            const double t = 1.0 - dot(ul, ur);
            g_unit[e.left_face] += ur * (-2.0 * t * upstream);
            g_unit[e.right_face] += ul * (-2.0 * t * upstream);
        }
        for (std::size_t f = 0; f < faces.size(); ++f) {
            if (norm[f] == 0.0) continue;
            const Vec& u = unit[f];
            const Vec gn = (g_unit[f] - u * dot(u, g_unit[f])) * (1.0 / norm[f]);
            const Vec a = vertex(xyz, faces[f][0]);
            const Vec e1 = vertex(xyz, faces[f][1]) - a;
            const Vec e2 = vertex(xyz, faces[f][2]) - a;
            const Vec g1 = cross(e2, gn);
            const Vec g2 = cross(gn, e1);
            const Vec g0 = (g1 + g2) * -1.0;
            const Vec gs[3] = {g0, g1, g2};
            for (int k = 0; k < 3; ++k) {
                const std::uint32_t v = faces[f][k];
                grad[3 * v] += static_cast<float>(gs[k].x);
                grad[3 * v + 1] += static_cast<float>(gs[k].y);
                grad[3 * v + 2] += static_cast<float>(gs[k].z);
            }
        }
    }
};

}  // namespace

double smoothness_loss(const TriMesh& mesh, const EdgeAdjacency& adjacency) {
    const Tensor xyz = mesh.vertex_tensor();
    SmoothnessKernel kernel{mesh.faces, adjacency, {}, {}};
    return kernel.forward(xyz.data());
}

Var smoothness_loss(Var vertices, const TriMesh& topology, const EdgeAdjacency& adjacency) {
    const Tensor& xyz = vertices.value();
    if (xyz.numel() != topology.vertex_count() * 3)
        throw ContractViolation("smoothness_loss: vertex tensor " + shape_to_string(xyz.shape()) + " for " +
                                std::to_string(topology.vertex_count()) + " vertices");
    auto kernel = std::make_shared<SmoothnessKernel>(SmoothnessKernel{topology.faces, adjacency, {}, {}});
    const double value = kernel->forward(xyz.data());
    Graph* g = vertices.graph;
    const std::size_t iv = vertices.id;
    return g->record("smoothness", Tensor::scalar(static_cast<float>(value)), {vertices},
                     [g, iv, kernel](const Tensor& gy, std::span<Tensor* const> gin) {
                         kernel->backward(g->value(iv).data(), gy[0], gin[0]->data());
                     });
}

void export_obj(const TriMesh& mesh, const std::filesystem::path& path) {
    if (path.empty()) throw IoError("export_obj: empty output path");
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    char line[128];
    for (const Vertex& v : mesh.vertices) {
        std::snprintf(line, sizeof line, "v %.6f %.6f %.6f\n", v[0], v[1], v[2]);
        out << line;
    }
    for (const Face& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

TriMesh load_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open mesh: " + path.string());
    TriMesh mesh;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag)) continue;
        if (tag == "v") {
            Vertex v{};
            if (!(ss >> v[0] >> v[1] >> v[2]))
                throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed vertex");
            mesh.vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<long> idx;
            std::string tok;
            while (ss >> tok) idx.push_back(std::stol(tok.substr(0, tok.find('/'))));
            if (idx.size() != 3)
                throw FormatError(path.string() + ":" + std::to_string(lineno) + ": only triangles are supported");
            Face f{};
            for (int k = 0; k < 3; ++k) {
                if (idx[k] < 1) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad index");
                f[k] = static_cast<std::uint32_t>(idx[k] - 1);
            }
            mesh.faces.push_back(f);
        }
    }
    mesh.validate();
    return mesh;
}

}  // namespace p3d
