#include "p3d/renderer.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

#include "p3d/error.h"
#include "p3d/ops.h"

namespace p3d {

namespace {

// Beyond this many sigmas outside a triangle, 1 - sigmoid rounds to 1 in float.
constexpr double kCullSigmas = 18.0;

struct Camera {
    double eye[3];
    double right[3];
    double up[3];
    double forward[3];
    double tan_half;

    Camera(const Pose& pose, const RenderSettings& s) {
        if (!(pose.distance > 0.0)) throw ContractViolation("pose distance must be positive");
        if (!(s.view_angle_deg > 0.0 && s.view_angle_deg < 90.0))
            throw ContractViolation("view angle must lie in (0, 90) degrees");
        const double az = pose.azimuth_deg * std::numbers::pi / 180.0;
        const double el = pose.elevation_deg * std::numbers::pi / 180.0;
        const double ce = std::cos(el), se = std::sin(el), ca = std::cos(az), sa = std::sin(az);
        eye[0] = pose.distance * ce * sa;
        eye[1] = pose.distance * se;
        eye[2] = pose.distance * ce * ca;
        forward[0] = -ce * sa;
        forward[1] = -se;
        forward[2] = -ce * ca;
        // cross(forward, +y) normalized; closed form avoids the pole singularity.
        right[0] = ca;
        right[1] = 0.0;
        right[2] = -sa;
        up[0] = right[1] * forward[2] - right[2] * forward[1];
        up[1] = right[2] * forward[0] - right[0] * forward[2];
        up[2] = right[0] * forward[1] - right[1] * forward[0];
        tan_half = std::tan(s.view_angle_deg * std::numbers::pi / 180.0);
    }
};

double dot3(const double* a, const double* b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

void check_vertices(const Tensor& v, const char* op) {
    if (v.rank() != 2 || v.dim(1) != 3)
        throw ContractViolation(std::string(op) + ": expected [V,3], got " + shape_to_string(v.shape()));
}

void check_settings(const RenderSettings& s) {
    if (s.height < 8 || s.width < 8) throw ContractViolation("render resolution must be at least 8x8");
    if (!(s.sigma > 0.0f)) throw ContractViolation("render sharpness sigma must be positive");
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct P2 {
    double x, y;
};

// Signed distance from p to triangle (a,b,c), positive inside. Also reports
// the closest segment (k: a-b, b-c, c-a) and the clamped segment parameter.
struct SignedDistance {
    double d;
    int segment;
    double t;
    P2 closest;
};

SignedDistance signed_distance(P2 p, const P2 tri[3]) {
    SignedDistance best{std::numeric_limits<double>::infinity(), 0, 0.0, {0, 0}};
    double dist2 = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
        const P2 a = tri[k], b = tri[(k + 1) % 3];
        const double ex = b.x - a.x, ey = b.y - a.y;
        const double len2 = ex * ex + ey * ey;
        double t = len2 > 0.0 ? ((p.x - a.x) * ex + (p.y - a.y) * ey) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const P2 q{a.x + t * ex, a.y + t * ey};
        const double d2 = (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y);
        if (d2 < dist2) {
            dist2 = d2;
            best = {0.0, k, t, q};
        }
    }
    const double dist = std::sqrt(dist2);
    const P2 &a = tri[0], &b = tri[1], &c = tri[2];
    const double area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    bool inside = false;
    if (area != 0.0) {
        const double w0 = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        const double w1 = (c.x - b.x) * (p.y - b.y) - (c.y - b.y) * (p.x - b.x);
        const double w2 = (a.x - c.x) * (p.y - c.y) - (a.y - c.y) * (p.x - c.x);
        inside = area > 0.0 ? (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0) : (w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0);
    }
    best.d = inside ? dist : -dist;
    return best;
}

// Visits every (face, pixel) pair that can contribute, in fixed face-major order.
template <class Visit>
void for_each_contribution(const Tensor& projected, const std::vector<Face>& faces, const RenderSettings& s,
                           Visit&& visit) {
    const double margin = kCullSigmas * s.sigma;
    const double H = static_cast<double>(s.height), W = static_cast<double>(s.width);
    const std::size_t nv = projected.dim(0);
    for (std::size_t f = 0; f < faces.size(); ++f) {
        P2 tri[3];
        for (int k = 0; k < 3; ++k) {
            const std::uint32_t v = faces[f][k];
            if (v >= nv) throw ContractViolation("rasterize: face references missing vertex");
            tri[k] = {projected[3 * v], projected[3 * v + 1]};
        }
        const double xmin = std::min({tri[0].x, tri[1].x, tri[2].x}) - margin;
        const double xmax = std::max({tri[0].x, tri[1].x, tri[2].x}) + margin;
        const double ymin = std::min({tri[0].y, tri[1].y, tri[2].y}) - margin;
        const double ymax = std::max({tri[0].y, tri[1].y, tri[2].y}) + margin;
        // Pixel centers: x = (2j+1)/W - 1, y = 1 - (2i+1)/H.
        const double j0 = std::ceil((xmin + 1.0) * W / 2.0 - 0.5);
        const double j1 = std::floor((xmax + 1.0) * W / 2.0 - 0.5);
        const double i0 = std::ceil((1.0 - ymax) * H / 2.0 - 0.5);
        const double i1 = std::floor((1.0 - ymin) * H / 2.0 - 0.5);
        if (j1 < 0 || i1 < 0 || j0 > W - 1 || i0 > H - 1) continue;
        const auto jb = static_cast<std::size_t>(std::max(0.0, j0));
        const auto je = static_cast<std::size_t>(std::min(W - 1, j1));
        const auto ib = static_cast<std::size_t>(std::max(0.0, i0));
        const auto ie = static_cast<std::size_t>(std::min(H - 1, i1));
        for (std::size_t i = ib; i <= ie; ++i) {
            const double py = 1.0 - (2.0 * i + 1.0) / H;
            for (std::size_t j = jb; j <= je; ++j) {
                const double px = (2.0 * j + 1.0) / W - 1.0;
                const SignedDistance sd = signed_distance({px, py}, tri);
                const double x = sd.d / s.sigma;
                if (x < -kCullSigmas) continue;
                visit(f, i * s.width + j, P2{px, py}, sd, x);
            }
        }
    }
}

// log prod (1 - s_f) per pixel.
std::vector<double> log_background(const Tensor& projected, const std::vector<Face>& faces,
                                   const RenderSettings& s) {
    std::vector<double> logq(s.height * s.width, 0.0);
    for_each_contribution(projected, faces, s,
                          [&](std::size_t, std::size_t pix, P2, const SignedDistance&, double x) {
                              logq[pix] -= softplus(x);
                          });
    return logq;
}

}  // namespace

Tensor project_vertices(const Tensor& vertices, const Pose& pose, const RenderSettings& settings) {
    check_vertices(vertices, "project_vertices");
    const Camera cam(pose, settings);
    Tensor out(vertices.shape());
    for (std::size_t i = 0; i < vertices.dim(0); ++i) {
        const double p[3] = {vertices[3 * i] - cam.eye[0], vertices[3 * i + 1] - cam.eye[1],
                             vertices[3 * i + 2] - cam.eye[2]};
        const double zc = dot3(cam.forward, p);
        if (!(zc > settings.near_plane))
            throw GeometryError("vertex " + std::to_string(i) + " is behind the camera near plane (depth " +
                                std::to_string(zc) + ")");
        out[3 * i] = static_cast<float>(dot3(cam.right, p) / (zc * cam.tan_half));
        out[3 * i + 1] = static_cast<float>(dot3(cam.up, p) / (zc * cam.tan_half));
        out[3 * i + 2] = static_cast<float>(zc);
    }
    return out;
}

Var project_vertices(Var vertices, const Pose& pose, const RenderSettings& settings) {
    Tensor out = project_vertices(vertices.value(), pose, settings);
    const Camera cam(pose, settings);
    Graph* g = vertices.graph;
    const std::size_t iv = vertices.id;
    return g->record("project", std::move(out), {vertices},
                     [g, iv, cam](const Tensor& gy, std::span<Tensor* const> gin) {
                         const Tensor& v = g->value(iv);
                         Tensor& gv = *gin[0];
                         for (std::size_t i = 0; i < v.dim(0); ++i) {
                             const double p[3] = {v[3 * i] - cam.eye[0], v[3 * i + 1] - cam.eye[1],
                                                  v[3 * i + 2] - cam.eye[2]};
                             const double xc = dot3(cam.right, p), yc = dot3(cam.up, p), zc = dot3(cam.forward, p);
                             const double inv = 1.0 / (zc * cam.tan_half);
                             const double gx = gy[3 * i], gyy = gy[3 * i + 1], gz = gy[3 * i + 2];
                             for (int k = 0; k < 3; ++k) {
                                 const double dsx = cam.right[k] * inv - xc * inv / zc * cam.forward[k];
                                 const double dsy = cam.up[k] * inv - yc * inv / zc * cam.forward[k];
                                 gv[3 * i + k] += static_cast<float>(gx * dsx + gyy * dsy + gz * cam.forward[k]);
                             }
                         }
                     });
}

Tensor rasterize_silhouette(const Tensor& projected, const std::vector<Face>& faces, const RenderSettings& settings) {
    check_vertices(projected, "rasterize_silhouette");
    check_settings(settings);
    const std::vector<double> logq = log_background(projected, faces, settings);
    Tensor out({settings.height, settings.width});
    for (std::size_t i = 0; i < logq.size(); ++i) out[i] = static_cast<float>(-std::expm1(logq[i]));
    return out;
}

Var rasterize_silhouette(Var projected, const std::vector<Face>& faces, const RenderSettings& settings) {
    const Tensor& pv = projected.value();
    check_vertices(pv, "rasterize_silhouette");
    check_settings(settings);
    auto logq = std::make_shared<std::vector<double>>(log_background(pv, faces, settings));
    Tensor out({settings.height, settings.width});
    for (std::size_t i = 0; i < logq->size(); ++i) out[i] = static_cast<float>(-std::expm1((*logq)[i]));

    Graph* g = projected.graph;
    const std::size_t ip = projected.id;
    const std::vector<Face>* face_list = &faces;
    return g->record(
        "rasterize", std::move(out), {projected},
        [g, ip, face_list, settings, logq](const Tensor& gy, std::span<Tensor* const> gin) {
            const Tensor& pv = g->value(ip);
            Tensor& gp = *gin[0];
            const double inv_sigma = 1.0 / settings.sigma;
            for_each_contribution(
                pv, *face_list, settings,
                [&](std::size_t f, std::size_t pix, P2 p, const SignedDistance& sd, double x) {
                    // d value / d d_f = prod(1 - s) * s_f / sigma
                    const double gd = gy[pix] * std::exp((*logq)[pix]) * sigmoid(x) * inv_sigma;
                    if (gd == 0.0) return;
                    const double dx = p.x - sd.closest.x, dy = p.y - sd.closest.y;
                    const double dist = std::sqrt(dx * dx + dy * dy);
                    if (dist == 0.0) return;
                    // d dist / d endpoint = -(weight) * (p - q) / dist; inside flips the sign.
                    const double sign = sd.d >= 0.0 ? 1.0 : -1.0;
                    const double ux = -sign * dx / dist, uy = -sign * dy / dist;
                    const std::uint32_t va = (*face_list)[f][sd.segment];
                    const std::uint32_t vb = (*face_list)[f][(sd.segment + 1) % 3];
                    const double wa = 1.0 - sd.t, wb = sd.t;
                    gp[3 * va] += static_cast<float>(gd * wa * ux);
                    gp[3 * va + 1] += static_cast<float>(gd * wa * uy);
                    gp[3 * vb] += static_cast<float>(gd * wb * ux);
                    gp[3 * vb + 1] += static_cast<float>(gd * wb * uy);
                });
        });
}

Tensor render_silhouette(const TriMesh& mesh, const Pose& pose, const RenderSettings& settings) {
    return rasterize_silhouette(project_vertices(mesh.vertex_tensor(), pose, settings), mesh.faces, settings);
}

Var render_silhouette(Var vertices, const std::vector<Face>& faces, const Pose& pose,
                      const RenderSettings& settings) {
    return rasterize_silhouette(project_vertices(vertices, pose, settings), faces, settings);
}

double soft_iou(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw ContractViolation("soft_iou: resolution mismatch " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
    double inter = 0.0, total = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double ab = double(a[i]) * b[i];
        inter += ab;
        total += double(a[i]) + b[i] - ab;
    }
    if (total <= 0.0) throw UndefinedMetric("soft IoU undefined: both silhouettes are empty");
    return inter / total;
}

Var soft_iou(Var a, Var b) {
    if (!a.value().same_shape(b.value()))
        throw ContractViolation("soft_iou: resolution mismatch " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
    Var inter = sum(a * b);
    Var uni = sum(a) + sum(b) - inter;
    if (!(uni.value().item() > 0.0f)) throw UndefinedMetric("soft IoU undefined: both silhouettes are empty");
    return inter / uni;
}

}  // namespace p3d
