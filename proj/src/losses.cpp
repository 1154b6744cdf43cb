#include "p3d/losses.h"

#include <string>

#include "p3d/error.h"
#include "p3d/ops.h"

namespace p3d {

Var projection_loss(Var rendered, Var truth) {
    const Tensor& r = rendered.value();
    if (!r.same_shape(truth.value()) || r.rank() != 3)
        throw ContractViolation("projection_loss: expected matching [N,H,W] silhouettes, got " +
                                shape_to_string(r.shape()) + " and " + shape_to_string(truth.shape()));
    const std::size_t n = r.dim(0);
    std::vector<Var> ious;
    ious.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        ious.push_back(reshape(soft_iou(slice_rows(rendered, i, 1), slice_rows(truth, i, 1)), {1}));
    return 1.0f - mean(concat_rows(ious));
}

Var classification_loss(Var probs, std::span<const std::size_t> labels, std::atomic<std::size_t>* clamped) {
    const Tensor& p = probs.value();
    if (p.rank() != 2 || labels.size() != p.dim(0))
        throw ContractViolation("classification_loss: need one label per row of " + shape_to_string(p.shape()));
    for (std::size_t label : labels)
        if (label >= p.dim(1))
            throw ContractViolation("classification_loss: label " + std::to_string(label) + " out of range");
    return -mean(log(clamp_min(pick(probs, labels), kProbabilityFloor, clamped)));
}

Var adversarial_loss(Var probs) {
    const Tensor& p = probs.value();
    if (p.rank() != 2) throw ContractViolation("adversarial_loss: expected [N,K], got " + shape_to_string(p.shape()));
    const float uniform = 1.0f / static_cast<float>(p.dim(1));
    const float inv_n = 1.0f / static_cast<float>(p.dim(0));
    return scale(sum(square(probs - uniform)), inv_n);
}

Var prior_loss(Var codes) {
    if (codes.value().rank() != 2)
        throw ContractViolation("prior_loss: expected [N,D], got " + shape_to_string(codes.shape()));
    return mean(sqrt(sum_rows(square(codes))));
}

Var batch_smoothness_loss(Var positions, const TriMesh& topology, const EdgeAdjacency& adjacency) {
    const std::size_t n = positions.value().dim(0);
    const std::size_t v = topology.vertex_count();
    std::vector<Var> per_mesh;
    for (std::size_t i = 0; i < n; ++i)
        per_mesh.push_back(smoothness_loss(reshape(slice_rows(positions, i, 1), {v, 3}), topology, adjacency));
    return mean(concat_rows(per_mesh));
}

const char* phase_name(Phase phase) {
    switch (phase) {
        case Phase::Encoder: return "E";
        case Phase::Discriminator: return "D";
    }
    throw ContractViolation("unknown training phase");
}

namespace {

Var need(const std::optional<Var>& v, const char* name) {
    if (!v) throw ContractViolation(std::string("combine_losses: missing term ") + name);
    return *v;
}

}  // namespace

Var combine_losses(Phase phase, const LossWeights& w, const LossTerms& t) {
    switch (phase) {
        case Phase::Encoder:
            return need(t.proj, "proj") + w.smooth * need(t.smth, "smth") + w.adv * need(t.adv, "adv") +
                   w.prior * need(t.prior, "prior");
        case Phase::Discriminator:
            return w.cls * need(t.cls, "cls");
    }
    throw ContractViolation("unknown training phase");
}

PhaseLoss total_loss(Graph& g, const ModelParams& model, const Batch& batch, const LossWeights& weights, Phase phase,
                     const RenderSettings& render, std::atomic<std::size_t>* clamped) {
    const std::size_t n = batch.size();
    if (n == 0 || batch.images.dim(0) != n || batch.labels.size() != n)
        throw ContractViolation("total_loss: inconsistent batch");
    for (std::size_t label : batch.labels)
        if (label >= model.num_views)
            throw ConfigError("view bin " + std::to_string(label) + " exceeds discriminator classes " +
                              std::to_string(model.num_views));
    Var images = g.constant_ref(batch.images);
    PhaseLoss out;

    if (phase == Phase::Discriminator) {
        Var codes = encode(model, images, Weights::Frozen);
        Var probs = discriminate(model, detach(codes), Weights::Trainable);
        out.terms.cls = classification_loss(probs, batch.labels, clamped);
        out.total = combine_losses(phase, weights, out.terms);
        return out;
    }
    if (phase != Phase::Encoder) throw ContractViolation("unknown training phase");

    Var codes = encode(model, images, Weights::Trainable);
    Var positions = generate(model, codes, Weights::Trainable);
    const std::size_t v = model.base_mesh.vertex_count();
    std::vector<Var> silhouettes;
    for (std::size_t i = 0; i < n; ++i) {
        Var verts = reshape(slice_rows(positions, i, 1), {v, 3});
        Var sil = render_silhouette(verts, model.base_mesh.faces, batch.poses[i], render);
        silhouettes.push_back(reshape(sil, {1, render.height, render.width}));
    }
    out.terms.proj = projection_loss(concat_rows(silhouettes), g.constant_ref(batch.silhouettes));
    out.terms.smth = batch_smoothness_loss(positions, model.base_mesh, model.adjacency);
    out.terms.adv = adversarial_loss(discriminate(model, codes, Weights::Frozen));
    out.terms.prior = prior_loss(codes);
    out.total = combine_losses(phase, weights, out.terms);
    return out;
}

}  // namespace p3d
