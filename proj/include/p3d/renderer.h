#pragma once

#include <cstddef>
#include <vector>

#include "p3d/autograd.h"
#include "p3d/mesh.h"
#include "p3d/tensor.h"

namespace p3d {

/// Camera pose on a sphere around the origin, looking at the origin with +y up.
struct Pose {
    double azimuth_deg = 0.0;    // rotation about +y, 0 looks from +z
    double elevation_deg = 0.0;  // above the equatorial plane, [-90, 90]
    double distance = 2.732;
    std::size_t view_bin = 0;
};

struct RenderSettings {
    std::size_t height = 64;
    std::size_t width = 64;
    float sigma = 0.02f;  // sharpness, in normalized screen units
    /// Half-angle of the vertical viewing frustum; screen y = y_cam / (z_cam * tan(view_angle)).
    double view_angle_deg = 30.0;
    double near_plane = 0.1;
};

/// Per-vertex (screen x, screen y, camera depth) with the image spanning [-1,1]^2.
/// Throws GeometryError if a vertex is not beyond the near plane.
Tensor project_vertices(const Tensor& vertices, const Pose& pose, const RenderSettings& settings);
Var project_vertices(Var vertices, const Pose& pose, const RenderSettings& settings);

/// Soft silhouette: 1 - prod_f (1 - sigmoid(d_f / sigma)), d_f the signed
/// distance from the pixel center to triangle f (positive inside). Row 0 is
/// the top of the image. Faces are rasterized regardless of orientation.
Tensor rasterize_silhouette(const Tensor& projected, const std::vector<Face>& faces, const RenderSettings& settings);
/// `faces` must outlive the graph.
Var rasterize_silhouette(Var projected, const std::vector<Face>& faces, const RenderSettings& settings);

Tensor render_silhouette(const TriMesh& mesh, const Pose& pose, const RenderSettings& settings);
/// `faces` must outlive the graph.
Var render_silhouette(Var vertices, const std::vector<Face>& faces, const Pose& pose,
                      const RenderSettings& settings);

/// sum(a*b) / sum(a + b - a*b). Throws UndefinedMetric when both are all zero.
double soft_iou(const Tensor& a, const Tensor& b);
Var soft_iou(Var a, Var b);

}  // namespace p3d
