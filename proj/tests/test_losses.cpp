#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <numbers>

#include "p3d/data.h"
#include "p3d/error.h"
#include "p3d/gradcheck.h"
#include "p3d/losses.h"
#include "p3d/ops.h"
#include "test_util.h"

using namespace p3d;
using p3d::testing::Gen;

namespace {

Tensor rows(std::size_t n, std::size_t k, std::initializer_list<float> values) {
    return Tensor({n, k}, std::vector<float>(values));
}

Tensor uniform_rows(std::size_t n, std::size_t k) {
    Tensor t({n, k});
    for (float& v : t.data()) v = 1.0f / static_cast<float>(k);
    return t;
}

Tensor square_mask(std::size_t n, std::size_t r0, std::size_t c0, std::size_t side) {
    Tensor t({1, n, n});
    for (std::size_t i = r0; i < r0 + side; ++i)
        for (std::size_t j = c0; j < c0 + side; ++j) t[i * n + j] = 1.0f;
    return t;
}

double eval(const std::function<Var(Graph&)>& f) {
    Graph g;
    return f(g).value().item();
}

Tensor softmax_row(const std::vector<double>& logits) {
    Tensor t({1, logits.size()});
    double total = 0.0;
    for (double l : logits) total += std::exp(l);
    for (std::size_t k = 0; k < logits.size(); ++k) t[k] = static_cast<float>(std::exp(logits[k]) / total);
    return t;
}

RenderSettings small_render() {
    RenderSettings s;
    s.height = s.width = 16;
    s.sigma = 0.02f;
    return s;
}

// Level-1 model with a two-sample batch whose targets are renders of a
// slightly squashed sphere at 16x16.
struct Fixture {
    ModelParams model = init_networks(31, 8, 1);
    Batch batch;
    RenderSettings render = small_render();

    Fixture() {
        TriMesh target = make_icosphere(3);
        for (Vertex& v : target.vertices) v[1] *= 0.7f;
        batch.images = Tensor({2, 64, 64, 4});
        batch.silhouettes = Tensor({2, 16, 16});
        RenderSettings big;
        big.sigma = 1e-3f;
        for (std::size_t i = 0; i < 2; ++i) {
            Pose pose;
            pose.azimuth_deg = 45.0 * static_cast<double>(3 * i + 1);
            pose.elevation_deg = 30.0;
            batch.poses.push_back(pose);
            batch.labels.push_back(3 * i + 1);
            const Tensor image = silhouette_to_image(render_silhouette(target, pose, big));
            std::copy(image.data().begin(), image.data().end(), batch.images.raw() + i * image.numel());
            const Tensor sil = render_silhouette(target, pose, render);
            std::copy(sil.data().begin(), sil.data().end(), batch.silhouettes.raw() + i * 256);
        }
    }

    double total(Phase phase, const LossWeights& w = {}) {
        Graph g;
        return total_loss(g, model, batch, w, phase, render).total.value().item();
    }
};

// Reverse-mode gradient of total_loss against central differences on a few
// coordinates of one parameter tensor.
double parameter_check(Fixture& f, Phase phase, const std::string& name, std::size_t coords, Gen& gen, float h) {
    const ParamId id = f.model.params.id(name);
    Tensor analytic;
    {
        Graph g;
        analytic = g.backward(total_loss(g, f.model, f.batch, {}, phase, f.render).total)
                       .get(id, f.model.params.value(id).shape());
    }
    Tensor& w = f.model.params.value(id);
    double worst = 0.0;
    for (std::size_t c = 0; c < coords; ++c) {
        const std::size_t i = gen.index(w.numel());
        const float x0 = w[i];
        w[i] = x0 + h;
        const double fp = f.total(phase);
        w[i] = x0 - h;
        const double fm = f.total(phase);
        w[i] = x0;
        const double fd = (fp - fm) / (2.0 * h);
        worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
    }
    return worst;
}

}  // namespace

TEST(ProjectionLoss, PerfectReconstructionIsZero) {
    const Tensor t = square_mask(8, 2, 2, 4);
    EXPECT_NEAR(eval([&](Graph& g) { return projection_loss(g.constant(t), g.constant(t)); }), 0.0, 1e-7);
}

TEST(ProjectionLoss, DisjointIsOne) {
    const Tensor a = square_mask(8, 0, 0, 3), b = square_mask(8, 4, 4, 3);
    EXPECT_NEAR(eval([&](Graph& g) { return projection_loss(g.constant(a), g.constant(b)); }), 1.0, 1e-7);
}

TEST(ProjectionLoss, HalfOverlapSquares) {
    // 4x4 squares shifted by 2 columns: 8 shared pixels out of 24.
    const Tensor a = square_mask(8, 2, 0, 4), b = square_mask(8, 2, 2, 4);
    EXPECT_NEAR(eval([&](Graph& g) { return projection_loss(g.constant(a), g.constant(b)); }), 2.0 / 3.0, 1e-6);
}

TEST(ProjectionLoss, AveragesOverSamples) {
    Tensor a({2, 8, 8}), b({2, 8, 8});
    const Tensor same = square_mask(8, 1, 1, 4), far = square_mask(8, 5, 5, 2);
    std::copy(same.data().begin(), same.data().end(), a.raw());
    std::copy(same.data().begin(), same.data().end(), b.raw());
    std::copy(same.data().begin(), same.data().end(), a.raw() + 64);
    std::copy(far.data().begin(), far.data().end(), b.raw() + 64);
    EXPECT_NEAR(eval([&](Graph& g) { return projection_loss(g.constant(a), g.constant(b)); }), 0.5, 1e-7);
}

TEST(ProjectionLoss, EmptyPairPropagates) {
    const Tensor z({1, 8, 8});
    EXPECT_THROW(eval([&](Graph& g) { return projection_loss(g.constant(z), g.constant(z)); }), UndefinedMetric);
}

TEST(ProjectionLoss, ShapeMismatchRejected) {
    const Tensor a({1, 8, 8}), b({1, 16, 16});
    EXPECT_THROW(eval([&](Graph& g) { return projection_loss(g.constant(a), g.constant(b)); }), ContractViolation);
}

TEST(ClassificationLoss, ConfidentCorrectIsZero) {
    const Tensor p = rows(2, 3, {1, 0, 0, 0, 0, 1});
    const std::vector<std::size_t> labels{0, 2};
    EXPECT_NEAR(eval([&](Graph& g) { return classification_loss(g.constant(p), labels); }), 0.0, 1e-7);
}

TEST(ClassificationLoss, UniformK24IsLog24) {
    const Tensor p = uniform_rows(3, 24);
    const std::vector<std::size_t> labels{0, 7, 23};
    EXPECT_NEAR(eval([&](Graph& g) { return classification_loss(g.constant(p), labels); }), std::log(24.0), 1e-6);
}

TEST(ClassificationLoss, TwoSampleArithmetic) {
    const Tensor p = rows(2, 2, {0.5f, 0.5f, 0.75f, 0.25f});
    const std::vector<std::size_t> labels{0, 1};
    EXPECT_NEAR(eval([&](Graph& g) { return classification_loss(g.constant(p), labels); }),
                (std::log(2.0) + std::log(4.0)) / 2.0, 1e-6);
}

TEST(ClassificationLoss, ZeroProbabilityClampedAndCounted) {
    const Tensor p = rows(2, 2, {0, 1, 1, 0});
    const std::vector<std::size_t> labels{0, 0};
    std::atomic<std::size_t> clamped{0};
    const double v = eval([&](Graph& g) { return classification_loss(g.constant(p), labels, &clamped); });
    EXPECT_NEAR(v, -std::log(1e-12) / 2.0, 1e-3);
    EXPECT_EQ(clamped.load(), 1u);
}

TEST(ClassificationLoss, LabelOutOfRangeRejected) {
    const Tensor p = uniform_rows(1, 4);
    const std::vector<std::size_t> labels{4};
    EXPECT_THROW(eval([&](Graph& g) { return classification_loss(g.constant(p), labels); }), ContractViolation);
}

TEST(ClassificationLoss, DecreasesAsMassMovesToTrueLabel) {
    Gen gen(41);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t k = 2 + gen.index(30), label = gen.index(k);
        std::vector<double> logits(k);
        for (double& l : logits) l = gen.uniform(-3, 3);
        Tensor start = softmax_row(logits);
        start[label] = 0.0f;
        float rest = 0.0f;
        for (float v : start.data()) rest += v;
        for (float& v : start.data()) v /= rest;  // true label starts at zero mass
        Tensor target({1, k});
        target[label] = 1.0f;
        const std::vector<std::size_t> labels{label};
        double previous = std::numeric_limits<double>::infinity();
        for (int step = 1; step <= 10; ++step) {
            const float t = static_cast<float>(step) / 10.0f;
            Tensor p({1, k});
            for (std::size_t j = 0; j < k; ++j) p[j] = (1 - t) * start[j] + t * target[j];
            const double loss = eval([&](Graph& g) { return classification_loss(g.constant(p), labels); });
            EXPECT_LT(loss, previous) << "k=" << k << " t=" << t;
            EXPECT_GE(loss, 0.0);
            previous = loss;
        }
    }
}

TEST(AdversarialLoss, UniformRowsAreZero) {
    const Tensor p = uniform_rows(4, 24);
    EXPECT_EQ(eval([&](Graph& g) { return adversarial_loss(g.constant(p)); }), 0.0);
}

TEST(AdversarialLoss, OneHotK24) {
    Tensor p({1, 24});
    p[5] = 1.0f;
    EXPECT_NEAR(eval([&](Graph& g) { return adversarial_loss(g.constant(p)); }), 23.0 / 24.0, 1e-6);
}

TEST(AdversarialLoss, TwoClassRow) {
    const Tensor p = rows(1, 2, {0.75f, 0.25f});
    EXPECT_NEAR(eval([&](Graph& g) { return adversarial_loss(g.constant(p)); }), 0.125, 1e-7);
}

TEST(AdversarialLoss, ZeroExactlyWhenUniform) {
    Gen gen(42);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + gen.index(4), k = 2 + gen.index(30);
        Tensor p = uniform_rows(n, k);
        // Move mass between two classes of one row; deviation at least 1e-3.
        const std::size_t row = gen.index(n), a = gen.index(k), b = (a + 1 + gen.index(k - 1)) % k;
        const float delta = static_cast<float>(gen.uniform(1e-3, 0.5 / static_cast<double>(k)));
        p[row * k + a] += delta;
        p[row * k + b] -= delta;
        const double v = eval([&](Graph& g) { return adversarial_loss(g.constant(p)); });
        EXPECT_GT(v, 0.0);
        EXPECT_NEAR(v, 2.0 * delta * delta / static_cast<double>(n), 1e-6);
    }
}

TEST(PriorLoss, Examples) {
    const Tensor zero({3, 512});
    EXPECT_EQ(eval([&](Graph& g) { return prior_loss(g.constant(zero)); }), 0.0);
    Tensor c({1, 512});
    c[0] = 3.0f;
    c[1] = 4.0f;
    EXPECT_NEAR(eval([&](Graph& g) { return prior_loss(g.constant(c)); }), 5.0, 1e-6);
    Tensor two({2, 512});
    two[7] = -1.0f;
    two[512 + 100] = 3.0f;
    EXPECT_NEAR(eval([&](Graph& g) { return prior_loss(g.constant(two)); }), 2.0, 1e-6);
}

TEST(PriorLoss, ZeroCodeHasFiniteGradient) {
    Graph g;
    const Tensor z({1, 512});
    Var c = g.parameter(0, z);
    const Tensor grad = g.backward(prior_loss(c)).get(0, z.shape());
    for (float v : grad.data()) EXPECT_EQ(v, 0.0f);
}

TEST(CombineLosses, EncoderPhaseWeightedSum) {
    Graph g;
    Var one = g.constant(Tensor({1}, {1.0f}));
    const LossTerms t{one, one, one, one, one};
    EXPECT_NEAR(combine_losses(Phase::Encoder, {}, t).value().item(), 3.001, 1e-6);
}

TEST(CombineLosses, DiscriminatorPhaseUsesClassificationOnly) {
    Graph g;
    const LossTerms t{std::nullopt, std::nullopt, g.constant(Tensor({1}, {0.0f})), std::nullopt, std::nullopt};
    EXPECT_EQ(combine_losses(Phase::Discriminator, {}, t).value().item(), 0.0f);
    LossWeights w;
    w.cls = 2.5f;
    const LossTerms u{std::nullopt, std::nullopt, g.constant(Tensor({1}, {2.0f})), std::nullopt, std::nullopt};
    EXPECT_NEAR(combine_losses(Phase::Discriminator, w, u).value().item(), 5.0, 1e-6);
}

TEST(CombineLosses, MissingTermOrUnknownPhaseRejected) {
    Graph g;
    Var one = g.constant(Tensor({1}, {1.0f}));
    EXPECT_THROW(combine_losses(Phase::Encoder, {}, LossTerms{one, one, one, std::nullopt, one}), ContractViolation);
    EXPECT_THROW(combine_losses(static_cast<Phase>(7), {}, LossTerms{one, one, one, one, one}), ContractViolation);
    EXPECT_THROW(phase_name(static_cast<Phase>(7)), ContractViolation);
}

TEST(TotalLoss, EncoderPhaseNeverReachesDiscriminator) {
    Fixture f;
    Graph g;
    const PhaseLoss loss = total_loss(g, f.model, f.batch, {}, Phase::Encoder, f.render);
    const GradientMap grads = g.backward(loss.total);
    for (ParamId id : f.model.discriminator_ids) {
        const Tensor grad = grads.get(id, f.model.params.value(id).shape());
        for (float v : grad.data()) ASSERT_EQ(v, 0.0f) << f.model.params.name(id);
    }
    // Every encoder and generator tensor receives some signal.
    for (const auto* ids : {&f.model.encoder_ids, &f.model.generator_ids})
        for (ParamId id : *ids) EXPECT_TRUE(grads.contains(id)) << f.model.params.name(id);
}

TEST(TotalLoss, DiscriminatorPhaseOnlyReachesDiscriminator) {
    Fixture f;
    Graph g;
    const PhaseLoss loss = total_loss(g, f.model, f.batch, {}, Phase::Discriminator, f.render);
    EXPECT_TRUE(loss.terms.cls.has_value());
    EXPECT_FALSE(loss.terms.proj.has_value());
    const GradientMap grads = g.backward(loss.total);
    for (const auto* ids : {&f.model.encoder_ids, &f.model.generator_ids})
        for (ParamId id : *ids) {
            const Tensor grad = grads.get(id, f.model.params.value(id).shape());
            for (float v : grad.data()) ASSERT_EQ(v, 0.0f) << f.model.params.name(id);
        }
    for (ParamId id : f.model.discriminator_ids) EXPECT_TRUE(grads.contains(id)) << f.model.params.name(id);
}

TEST(TotalLoss, EncoderPhaseTotalMatchesTerms) {
    Fixture f;
    Graph g;
    LossWeights w;
    w.smooth = 0.5f;
    w.adv = 2.0f;
    w.prior = 0.25f;
    const PhaseLoss loss = total_loss(g, f.model, f.batch, w, Phase::Encoder, f.render);
    const double expected = loss.terms.proj->value().item() + 0.5 * loss.terms.smth->value().item() +
                            2.0 * loss.terms.adv->value().item() + 0.25 * loss.terms.prior->value().item();
    EXPECT_NEAR(loss.total.value().item(), expected, 1e-5 * std::max(1.0, std::abs(expected)));
    EXPECT_GT(loss.terms.proj->value().item(), 0.0f);
    EXPECT_LT(loss.terms.proj->value().item(), 1.0f);
}

TEST(TotalLoss, LabelBeyondKIsConfigError) {
    Fixture f;
    f.batch.labels[0] = 8;
    Graph g;
    EXPECT_THROW(total_loss(g, f.model, f.batch, {}, Phase::Encoder, f.render), ConfigError);
}

// Finite-difference checks through each loss's full path on a level-1 mesh
// rendered at 16x16.
TEST(LossGradients, ProjectionThroughRenderer) {
    Fixture f;
    Gen gen(51);
    Tensor verts({42, 3});
    for (std::size_t i = 0; i < 42; ++i)
        for (std::size_t k = 0; k < 3; ++k)
            verts[i * 3 + k] = f.model.base_mesh.vertices[i][k] * static_cast<float>(gen.uniform(0.8, 1.1));
    const Tensor truth = f.batch.silhouettes;
    const auto& faces = f.model.base_mesh.faces;
    const auto r = finite_difference_check(
        [&](Graph& g, Var x) {
            std::vector<Var> sil;
            for (std::size_t i = 0; i < 2; ++i)
                sil.push_back(reshape(render_silhouette(x, faces, f.batch.poses[i], f.render), {1, 16, 16}));
            return projection_loss(concat_rows(sil), g.constant_ref(truth));
        },
        verts, 1e-3f);
    EXPECT_LT(r.max_rel_error, 1e-2) << "coordinate " << r.worst_index;
}

TEST(LossGradients, Smoothness) {
    Fixture f;
    Gen gen(52);
    Tensor pos({2, 126});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 126; ++i)
            pos[n * 126 + i] = f.model.base_offsets[i] * static_cast<float>(gen.uniform(0.8, 1.2));
    const auto r = finite_difference_check(
        [&](Graph&, Var x) { return batch_smoothness_loss(x, f.model.base_mesh, f.model.adjacency); }, pos, 1e-3f);
    EXPECT_LT(r.max_rel_error, 1e-2) << "coordinate " << r.worst_index;
}

TEST(LossGradients, ClassificationThroughDiscriminator) {
    Fixture f;
    Gen gen(53);
    const Tensor codes = gen.tensor({2, 512}, -1, 1);
    const auto r = finite_difference_check(
        [&](Graph&, Var x) {
            return classification_loss(discriminate(f.model, x, Weights::Frozen), f.batch.labels);
        },
        codes, 1e-3f);
    EXPECT_LT(r.max_rel_error, 1e-2) << "coordinate " << r.worst_index;
}

TEST(LossGradients, AdversarialThroughDiscriminator) {
    Fixture f;
    Gen gen(54);
    const Tensor codes = gen.tensor({2, 512}, -1, 1);
    const auto r = finite_difference_check(
        [&](Graph&, Var x) { return adversarial_loss(discriminate(f.model, x, Weights::Frozen)); }, codes, 1e-3f);
    EXPECT_LT(r.max_rel_error, 1e-2) << "coordinate " << r.worst_index;
}

TEST(LossGradients, Prior) {
    Gen gen(55);
    const Tensor codes = gen.tensor({3, 512}, -1, 1);
    const auto r = finite_difference_check([](Graph&, Var x) { return prior_loss(x); }, codes, 1e-3f);
    EXPECT_LT(r.max_rel_error, 1e-2) << "coordinate " << r.worst_index;
}

// The whole image -> E -> G -> renderer -> loss path, differentiated w.r.t.
// weights at both ends of the pipeline.
TEST(LossGradients, FullEncoderPhasePath) {
    Fixture f;
    Gen gen(56);
    for (const char* name : {"generator.fc3.weight", "generator.fc3.bias", "encoder.fc3.bias", "encoder.fc3.weight"})
        EXPECT_LT(parameter_check(f, Phase::Encoder, name, 12, gen, 1e-3f), 1e-2) << name;
}

TEST(LossGradients, FullDiscriminatorPhasePath) {
    Fixture f;
    Gen gen(57);
    for (const char* name : {"discriminator.fc3.weight", "discriminator.fc3.bias", "discriminator.fc1.bias"})
        EXPECT_LT(parameter_check(f, Phase::Discriminator, name, 12, gen, 1e-3f), 1e-2) << name;
}
