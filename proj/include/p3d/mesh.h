#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "p3d/autograd.h"
#include "p3d/tensor.h"

namespace p3d {

using Vertex = std::array<float, 3>;
using Face = std::array<std::uint32_t, 3>;

/// Triangle mesh with counter-clockwise faces when viewed from outside.
struct TriMesh {
    std::vector<Vertex> vertices;
    std::vector<Face> faces;

    std::size_t vertex_count() const { return vertices.size(); }
    std::size_t face_count() const { return faces.size(); }

    /// Vertices as a [V,3] tensor.
    Tensor vertex_tensor() const;
    /// Same topology, vertices taken from a [V,3] (or 3V) buffer.
    TriMesh with_vertices(std::span<const float> xyz) const;

    /// Throws GeometryError for out-of-range or repeated face indices.
    void validate() const;
};

inline constexpr int kMaxIcosphereLevel = 6;
inline constexpr int kCanonicalLevel = 3;

/// Unit icosphere by repeated 4-to-1 subdivision of a regular icosahedron.
/// Midpoint vertices are appended in lexicographic order of their parent edge.
TriMesh make_icosphere(int level);

/// base.vertices + reshape(delta, V x 3).
TriMesh apply_displacements(const TriMesh& base, std::span<const float> delta);

struct Edge {
    std::uint32_t v0 = 0, v1 = 0;  // v0 < v1
    std::uint32_t left_face = 0;   // face traversing v0 -> v1
    std::uint32_t right_face = 0;  // face traversing v1 -> v0
};

struct EdgeAdjacency {
    std::vector<Edge> edges;  // sorted by (v0, v1)
    std::size_t size() const { return edges.size(); }
};

/// Every undirected edge once with both incident faces.
/// Throws GeometryError if an edge does not have exactly two faces.
EdgeAdjacency build_edge_adjacency(const TriMesh& mesh);

/// Sum over edges of (1 + cos theta)^2 with theta the dihedral angle between
/// the two incident faces; a flat pair contributes 0.
double smoothness_loss(const TriMesh& mesh, const EdgeAdjacency& adjacency);

/// Differentiable version over a [V,3] vertex variable sharing `topology`'s faces.
Var smoothness_loss(Var vertices, const TriMesh& topology, const EdgeAdjacency& adjacency);

void export_obj(const TriMesh& mesh, const std::filesystem::path& path);
/// Reads "v" and "f" records; other records are ignored.
TriMesh load_obj(const std::filesystem::path& path);

}  // namespace p3d
