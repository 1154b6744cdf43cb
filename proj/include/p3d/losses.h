#pragma once

#include <atomic>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "p3d/autograd.h"
#include "p3d/networks.h"
#include "p3d/renderer.h"

namespace p3d {

struct LossWeights {
    float smooth = 0.001f;  // lambda1
    float cls = 1.0f;       // lambda2
    float adv = 1.0f;       // lambda3
    float prior = 1.0f;     // lambda4
};

inline constexpr float kProbabilityFloor = 1e-12f;

/// Mean over samples of 1 - soft_iou. Both inputs are [N,H,W].
Var projection_loss(Var rendered, Var truth);

/// -mean log p(label). Probabilities below 1e-12 are clamped; each clamp
/// increments `clamped` when given.
Var classification_loss(Var probs, std::span<const std::size_t> labels,
                        std::atomic<std::size_t>* clamped = nullptr);

/// mean_i sum_k (p_ik - 1/K)^2
Var adversarial_loss(Var probs);

/// mean_i ||z_i||, the plain Euclidean norm.
Var prior_loss(Var codes);

/// Mean of the per-mesh smoothness penalty; `positions` is [N,3V].
Var batch_smoothness_loss(Var positions, const TriMesh& topology, const EdgeAdjacency& adjacency);

enum class Phase { Encoder, Discriminator };

const char* phase_name(Phase phase);

/// The terms available to a phase; absent terms are not computed.
struct LossTerms {
    std::optional<Var> proj, smth, cls, adv, prior;
};

/// Encoder phase: proj + l1*smth + l3*adv + l4*prior. Discriminator phase: l2*cls.
Var combine_losses(Phase phase, const LossWeights& weights, const LossTerms& terms);

struct Batch {
    Tensor images;                    // [N,64,64,4]
    std::vector<Pose> poses;          // N
    std::vector<std::size_t> labels;  // N view bins
    Tensor silhouettes;               // [N,h,w] truth at render resolution
    std::size_t size() const { return poses.size(); }
};

struct PhaseLoss {
    Var total;
    LossTerms terms;
};

/// Builds one phase's objective on `g`. Encoder phase binds E and G as
/// trainable and D as frozen; discriminator phase binds only D as trainable
/// and feeds it codes from a frozen E.
PhaseLoss total_loss(Graph& g, const ModelParams& model, const Batch& batch, const LossWeights& weights,
                     Phase phase, const RenderSettings& render, std::atomic<std::size_t>* clamped = nullptr);

}  // namespace p3d
