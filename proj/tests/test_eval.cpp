#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "p3d/data.h"
#include "p3d/error.h"
#include "p3d/eval.h"
#include "p3d/mesh.h"
#include "p3d/networks.h"
#include "test_util.h"

using namespace p3d;
using p3d::testing::Gen;
using p3d::testing::TempDir;

namespace {

TriMesh sphere(double radius, int level = 3) {
    TriMesh m = make_icosphere(level);
    for (Vertex& v : m.vertices)
        for (float& c : v) c = static_cast<float>(c * radius);
    return m;
}

// Occupancy of the analytic ball |c| <= radius sampled at the voxel centers.
VoxelGrid analytic_ball(std::size_t r, double radius) {
    VoxelGrid g = VoxelGrid::empty(r);
    for (std::size_t k = 0; k < r; ++k)
        for (std::size_t j = 0; j < r; ++j)
            for (std::size_t i = 0; i < r; ++i) {
                const double x = g.center(i), y = g.center(j), z = g.center(k);
                g.occupied[g.index(i, j, k)] = std::sqrt(x * x + y * y + z * z) <= radius;
            }
    return g;
}

// Straightforward biased MMD^2 by the three-term definition, in long double.
long double mmd2_oracle(const std::vector<Sample>& x, const std::vector<Sample>& y, double s) {
    auto k = [s](const Sample& a, const Sample& b) {
        long double d2 = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const long double t = (long double)a[i] - (long double)b[i];
            d2 += t * t;
        }
        return std::exp(-d2 / (2.0L * s * s));
    };
    long double xx = 0, yy = 0, xy = 0;
    for (const Sample& a : x)
        for (const Sample& b : x) xx += k(a, b);
    for (const Sample& a : y)
        for (const Sample& b : y) yy += k(a, b);
    for (const Sample& a : x)
        for (const Sample& b : y) xy += k(a, b);
    const long double m = x.size(), n = y.size();
    return xx / (m * m) + yy / (n * n) - 2 * xy / (m * n);
}

std::vector<Sample> random_samples(Gen& gen, std::size_t n, std::size_t dim, double lo, double hi) {
    std::vector<Sample> out(n, Sample(dim));
    for (Sample& s : out)
        for (float& v : s) v = static_cast<float>(gen.uniform(lo, hi));
    return out;
}

std::size_t line_count(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

}  // namespace

TEST(Voxelize, UnitSphereOccupancyNearBallVolume) {
    const VoxelGrid g = voxelize(sphere(1.0), 32);
    const double expected = std::numbers::pi / 6.0 * 32 * 32 * 32;
    EXPECT_NEAR(static_cast<double>(g.count()), expected, 0.02 * expected);
}

TEST(Voxelize, IcosphereMatchesAnalyticBall) {
    EXPECT_GE(voxel_iou(voxelize(sphere(1.0), 32), analytic_ball(32, 1.0)), 0.95);
}

TEST(Voxelize, MeshOutsideRowLeavesItEmpty) {
    const VoxelGrid g = voxelize(sphere(0.4), 32);
    for (std::size_t i = 0; i < 32; ++i) {
        EXPECT_FALSE(g.at(i, 0, 0));
        EXPECT_FALSE(g.at(i, 31, 16));
        EXPECT_FALSE(g.at(i, 16, 31));
    }
    EXPECT_TRUE(g.at(16, 16, 16));
}

TEST(Voxelize, CoarseGridExactAwayFromSurface) {
    const VoxelGrid g = voxelize(sphere(1.0), 8);
    const double diagonal = std::sqrt(3.0) * 2.0 / 8.0;
    std::size_t checked = 0;
    for (std::size_t k = 0; k < 8; ++k)
        for (std::size_t j = 0; j < 8; ++j)
            for (std::size_t i = 0; i < 8; ++i) {
                const double x = g.center(i), y = g.center(j), z = g.center(k);
                const double r = std::sqrt(x * x + y * y + z * z);
                if (std::abs(r - 1.0) <= diagonal) continue;
                EXPECT_EQ(g.at(i, j, k), r < 1.0) << i << "," << j << "," << k;
                ++checked;
            }
    EXPECT_GT(checked, 0u);
}

TEST(Voxelize, TranslatedBoxMatchesCellCount) {
    // Axis-aligned box [-0.5,0.5]x[-0.25,0.75]x[-1,0]: centers strictly inside
    // along x number 8 of 16, along y 8, along z 8 (boundaries fall between centers).
    TriMesh cube;
    cube.vertices = {{-0.5f, -0.25f, -1}, {0.5f, -0.25f, -1}, {0.5f, 0.75f, -1}, {-0.5f, 0.75f, -1},
                     {-0.5f, -0.25f, 0},  {0.5f, -0.25f, 0},  {0.5f, 0.75f, 0},  {-0.5f, 0.75f, 0}};
    cube.faces = {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7}, {0, 1, 5}, {0, 5, 4},
                  {2, 3, 7}, {2, 7, 6}, {1, 2, 6}, {1, 6, 5}, {0, 4, 7}, {0, 7, 3}};
    EXPECT_EQ(voxelize(cube, 16).count(), 8u * 8u * 8u);
}

TEST(Voxelize, OpenMeshFallsBackWithWarning) {
    TriMesh m = sphere(0.9, 3);
    const VoxelGrid closed = voxelize(m, 16);
    m.faces.pop_back();
    std::vector<std::string> warnings;
    const VoxelGrid g = voxelize(m, 16, &warnings);
    ASSERT_FALSE(warnings.empty());
    EXPECT_NE(warnings.back().find("not closed"), std::string::npos);
    // Surface cells count as occupied, so the fallback is a superset of the parity fill.
    for (std::size_t i = 0; i < g.occupied.size(); ++i)
        if (closed.occupied[i]) EXPECT_TRUE(g.occupied[i]) << i;
    EXPECT_GE(voxel_iou(g, closed), 0.7);
}

TEST(Voxelize, ClippingWarns) {
    std::vector<std::string> warnings;
    voxelize(sphere(1.3), 16, &warnings);
    ASSERT_FALSE(warnings.empty());
    EXPECT_NE(warnings.front().find("outside"), std::string::npos);
    warnings.clear();
    voxelize(sphere(1.0), 16, &warnings);
    EXPECT_TRUE(warnings.empty());
}

TEST(Voxelize, ResolutionBelowEightRejected) { EXPECT_THROW(voxelize(sphere(1.0), 7), ConfigError); }

TEST(VoxelIou, IdenticalIsOne) {
    const VoxelGrid g = voxelize(sphere(0.7), 16);
    EXPECT_EQ(voxel_iou(g, g), 1.0);
}

TEST(VoxelIou, DisjointIsZero) {
    VoxelGrid a = VoxelGrid::empty(8), b = VoxelGrid::empty(8);
    a.occupied[0] = 1;
    b.occupied[1] = 1;
    EXPECT_EQ(voxel_iou(a, b), 0.0);
}

TEST(VoxelIou, NestedSpheresVolumeRatio) {
    const double iou = voxel_iou(voxelize(sphere(0.5), 32), voxelize(sphere(1.0), 32));
    EXPECT_NEAR(iou, 0.125, 0.02);
}

TEST(VoxelIou, EmptyUnionUndefined) {
    EXPECT_THROW(voxel_iou(VoxelGrid::empty(8), VoxelGrid::empty(8)), UndefinedMetric);
}

TEST(VoxelIou, ResolutionMismatchRejected) {
    EXPECT_THROW(voxel_iou(VoxelGrid::empty(8), VoxelGrid::empty(16)), ContractViolation);
}

TEST(VoxelIou, MonotoneUnderShrinkingIntersection) {
    Gen gen(71);
    for (int trial = 0; trial < 20; ++trial) {
        VoxelGrid a = VoxelGrid::empty(8), b = VoxelGrid::empty(8);
        for (std::size_t i = 0; i < a.occupied.size(); ++i) {
            a.occupied[i] = gen.uniform(0, 1) < 0.5;
            b.occupied[i] = a.occupied[i] && gen.uniform(0, 1) < 0.8;
        }
        double previous = voxel_iou(a, b);
        EXPECT_NEAR(previous, double(b.count()) / double(a.count()), 1e-12);
        // Remove cells of b one at a time; b stays inside a, so IoU = |b|/|a| falls.
        for (std::size_t i = 0; i < b.occupied.size() && b.count() > 1; ++i)
            if (b.occupied[i]) {
                b.occupied[i] = 0;
                const double now = voxel_iou(a, b);
                EXPECT_LT(now, previous);
                previous = now;
            }
    }
}

TEST(VoxelIou, SymmetricAndMatchesCounts) {
    Gen gen(72);
    VoxelGrid a = VoxelGrid::empty(8), b = VoxelGrid::empty(8);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.occupied.size(); ++i) {
        a.occupied[i] = gen.uniform(0, 1) < 0.3;
        b.occupied[i] = gen.uniform(0, 1) < 0.4;
        inter += a.occupied[i] && b.occupied[i];
        uni += a.occupied[i] || b.occupied[i];
    }
    EXPECT_EQ(voxel_iou(a, b), voxel_iou(b, a));
    EXPECT_DOUBLE_EQ(voxel_iou(a, b), double(inter) / double(uni));
}

TEST(VoxelFile, RoundTripAndHeader) {
    TempDir dir("vox");
    const VoxelGrid g = voxelize(sphere(0.8), 16);
    write_voxels(g, dir / "g.vox");
    const VoxelGrid r = read_voxels(dir / "g.vox");
    EXPECT_EQ(r.resolution, 16u);
    EXPECT_EQ(r.occupied, g.occupied);
    std::ifstream in(dir / "g.vox");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "16 16 16");
    EXPECT_EQ(std::filesystem::file_size(dir / "g.vox"), header.size() + 1 + 16 * 16 * 16 / 8);
}

TEST(VoxelFile, BadFilesRejected) {
    TempDir dir("voxbad");
    EXPECT_THROW(read_voxels(dir / "missing.vox"), IoError);
    std::ofstream(dir / "h.vox") << "8 8 9\n";
    EXPECT_THROW(read_voxels(dir / "h.vox"), FormatError);
    std::ofstream(dir / "t.vox") << "8 8 8\nabc";
    EXPECT_THROW(read_voxels(dir / "t.vox"), IoError);
}

TEST(Mmd, IdenticalSamplesZero) {
    Gen gen(73);
    const auto x = random_samples(gen, 12, 16, -1, 1);
    EXPECT_NEAR(mmd(x, x, 1.5), 0.0, 1e-6);
}

TEST(Mmd, SinglePairClosedForm) {
    for (double d : {0.1, 0.5, 1.0, 2.0, 3.5})
        for (double s : {0.5, 1.0, 2.0}) {
            const std::vector<Sample> x{{0.0f, 0.0f, 0.0f}}, y{{0.0f, static_cast<float>(d), 0.0f}};
            EXPECT_NEAR(mmd(x, y, s), std::sqrt(2.0 * (1.0 - std::exp(-d * d / (2.0 * s * s)))), 1e-7);
        }
}

TEST(Mmd, FarApartApproachesRootTwo) {
    const std::vector<Sample> x{{0.0f}}, y{{1000.0f}};
    EXPECT_NEAR(mmd(x, y, 1.0), std::sqrt(2.0), 1e-12);
}

TEST(Mmd, MatchesThreeTermOracleAndIsSymmetric) {
    Gen gen(74);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + gen.index(12), n = 1 + gen.index(12), dim = 1 + gen.index(20);
        const auto x = random_samples(gen, m, dim, -1, 1);
        const auto y = random_samples(gen, n, dim, -0.5, 1.5);
        const double s = gen.uniform(0.3, 3.0);
        const double sq = mmd_squared(x, y, s);
        EXPECT_NEAR(sq, static_cast<double>(mmd2_oracle(x, y, s)), 1e-10);
        EXPECT_GE(sq, -1e-6);
        EXPECT_EQ(mmd(x, y, s), mmd(y, x, s));
        EXPECT_GE(mmd(x, y, s), 0.0);
    }
}

TEST(Mmd, BadArgumentsRejected) {
    const std::vector<Sample> x{{1.0f}}, none;
    EXPECT_THROW(mmd(x, x, 0.0), ConfigError);
    EXPECT_THROW(mmd(x, x, -1.0), ConfigError);
    EXPECT_THROW(mmd(x, none, 1.0), ContractViolation);
}

TEST(MedianDistance, OddAndEvenCounts) {
    const std::vector<Sample> three{{0.0f}, {1.0f}, {3.0f}};  // 1, 3, 2
    EXPECT_DOUBLE_EQ(median_pairwise_distance(three), 2.0);
    const std::vector<Sample> four{{0.0f}, {1.0f}, {3.0f}, {7.0f}};  // 1,3,7,2,6,4
    EXPECT_DOUBLE_EQ(median_pairwise_distance(four), 3.5);
    EXPECT_THROW(median_pairwise_distance(std::vector<Sample>{{0.0f}}), ContractViolation);
}

TEST(PairwiseMmd, FullK24Has276Pairs) {
    Gen gen(75);
    EmbeddingSet set;
    for (std::size_t b = 0; b < 24; ++b)
        for (const Sample& s : random_samples(gen, 3, 8, -1, 1)) {
            set.codes.push_back(s);
            set.bins.push_back(b);
        }
    const PairwiseMmd r = pairwise_viewpoint_mmd(set, 1.0);
    EXPECT_EQ(r.pairs, 276u);
    EXPECT_EQ(r.bins_used.size(), 24u);
    EXPECT_GT(r.mean, 0.0);
}

TEST(PairwiseMmd, IdenticalCodesZero) {
    EmbeddingSet set;
    for (std::size_t b = 0; b < 5; ++b)
        for (int i = 0; i < 2; ++i) {
            set.codes.push_back({0.5f, -1.0f, 2.0f});
            set.bins.push_back(b);
        }
    EXPECT_NEAR(pairwise_viewpoint_mmd(set, 1.0).mean, 0.0, 1e-6);
}

TEST(PairwiseMmd, TwoBinsEqualsSingleMmd) {
    Gen gen(76);
    const auto a = random_samples(gen, 4, 6, -1, 1), b = random_samples(gen, 5, 6, 0, 2);
    EmbeddingSet set;
    for (const Sample& s : a) set.codes.push_back(s), set.bins.push_back(3);
    for (const Sample& s : b) set.codes.push_back(s), set.bins.push_back(7);
    const PairwiseMmd r = pairwise_viewpoint_mmd(set, 0.8);
    EXPECT_EQ(r.pairs, 1u);
    EXPECT_DOUBLE_EQ(r.mean, mmd(a, b, 0.8));
}

TEST(PairwiseMmd, SparseBinsExcludedWithWarning) {
    EmbeddingSet set{{{0.0f}, {1.0f}, {2.0f}, {3.0f}, {4.0f}}, {0, 0, 1, 1, 2}};
    std::vector<std::string> warnings;
    const PairwiseMmd r = pairwise_viewpoint_mmd(set, 1.0, &warnings);
    EXPECT_EQ(r.pairs, 1u);
    EXPECT_EQ(r.bins_excluded, std::vector<std::size_t>{2});
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("bin 2"), std::string::npos);
}

TEST(PairwiseMmd, FewerThanTwoBinsUndefined) {
    EmbeddingSet set{{{0.0f}, {1.0f}, {2.0f}}, {0, 0, 1}};
    EXPECT_THROW(pairwise_viewpoint_mmd(set, 1.0), UndefinedMetric);
}

TEST(Embeddings, ThreeRowsGiveFourLines) {
    TempDir dir("emb");
    Gen gen(77);
    EmbeddingSet set;
    set.codes = random_samples(gen, 3, 512, -2, 2);
    set.bins = {0, 5, 2};
    export_embeddings(set, dir / "e.csv");
    EXPECT_EQ(line_count(dir / "e.csv"), 4u);
    std::ifstream in(dir / "e.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header.rfind("bin,z0,z1,", 0), 0u);
    EXPECT_EQ(header.substr(header.size() - 5), ",z511");
}

TEST(Embeddings, RoundTripWithinTolerance) {
    TempDir dir("emb2");
    Gen gen(78);
    EmbeddingSet set;
    set.codes = random_samples(gen, 6, 512, -10, 10);
    set.bins = {1, 1, 2, 3, 5, 8};
    export_embeddings(set, dir / "e.csv");
    const EmbeddingSet r = load_embeddings(dir / "e.csv");
    ASSERT_EQ(r.size(), 6u);
    EXPECT_EQ(r.bins, set.bins);
    for (std::size_t i = 0; i < 6; ++i) {
        ASSERT_EQ(r.codes[i].size(), 512u);
        for (std::size_t d = 0; d < 512; ++d) EXPECT_NEAR(r.codes[i][d], set.codes[i][d], 1e-5);
    }
}

TEST(Embeddings, EmptySetHeaderOnly) {
    TempDir dir("emb3");
    export_embeddings(EmbeddingSet{}, dir / "e.csv");
    EXPECT_EQ(line_count(dir / "e.csv"), 1u);
    EXPECT_EQ(load_embeddings(dir / "e.csv").size(), 0u);
}

TEST(Embeddings, UnwritablePathIsIoError) {
    TempDir dir("emb4");
    EXPECT_THROW(export_embeddings(EmbeddingSet{}, dir / "no" / "such" / "e.csv"), IoError);
}

TEST(DatasetEval, EmbedAndReconstructionIou) {
    TempDir dir("evalds");
    SyntheticConfig c;
    c.instances = 4;
    c.k = 4;
    c.seed = 3;
    generate_synthetic_dataset(c, dir.path());
    const Dataset d = Dataset::load(dir.path());
    const ModelParams model = init_networks(5, 4);
    const EmbeddingSet set = embed_dataset(model, d);
    ASSERT_EQ(set.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(set.bins[i], d.record(i).view_bin);
        const Tensor single = encode(model, d.image(i));
        for (std::size_t k = 0; k < kCodeDim; ++k)
            EXPECT_NEAR(set.codes[i][k], single[k], 1e-4 * std::max(1.0f, std::abs(single[k])));
    }
    const IouReport r = reconstruction_iou(model, d, 16);
    EXPECT_EQ(r.count, 4u);
    EXPECT_GT(r.mean, 0.0);
    EXPECT_LE(r.mean, 1.0);
}

TEST(DirectoryIou, IdenticalDirectoriesGiveOne) {
    TempDir dir("diriou");
    std::filesystem::create_directories(dir / "pred");
    for (int i = 0; i < 3; ++i) export_obj(sphere(0.4 + 0.2 * i, 2), dir / "pred" / ("m" + std::to_string(i) + ".obj"));
    const IouReport r = directory_iou(dir / "pred", dir / "pred", 16);
    EXPECT_EQ(r.count, 3u);
    EXPECT_EQ(r.mean, 1.0);
}

TEST(DirectoryIou, MissingGroundTruthNamed) {
    TempDir dir("diriou2");
    std::filesystem::create_directories(dir / "pred");
    std::filesystem::create_directories(dir / "gt");
    export_obj(sphere(0.5, 1), dir / "pred" / "a.obj");
    try {
        directory_iou(dir / "pred", dir / "gt", 16);
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("a.obj"), std::string::npos);
    }
}
