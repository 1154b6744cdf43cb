#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "p3d/data.h"
#include "p3d/losses.h"
#include "p3d/networks.h"

namespace p3d {

struct TrainConfig {
    std::size_t iterations = 20000;
    std::size_t batch_size = 128;
    float learning_rate = 1e-4f;
    LossWeights weights;
    std::size_t num_views = 0;  // 0 takes K from the dataset
    std::uint64_t seed = 0;
    std::size_t render_resolution = 64;
    float sigma = 0.02f;
    std::size_t checkpoint_every = 1000;
    std::size_t log_every = 100;
    int mesh_level = kCanonicalLevel;
};

/// Flat key=value text; '#' starts a comment. Unknown keys and malformed
/// values raise ConfigError.
TrainConfig parse_train_config(const std::string& text);
/// Throws IoError naming the path when it cannot be read.
TrainConfig load_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& config);

/// Losses of one iteration; terms the phase does not compute are absent.
struct LossRecord {
    std::size_t iteration = 0;
    Phase phase = Phase::Encoder;
    std::optional<double> proj, smth, cls, adv, prior;
    double total = 0.0;
};

std::string loss_csv_header();
std::string format_loss_row(const LossRecord& record);

/// Even iterations train E and G, odd iterations train D.
inline Phase phase_for_iteration(std::size_t t) { return t % 2 == 0 ? Phase::Encoder : Phase::Discriminator; }

/// Box-filter downsampling of an [R,R] silhouette to [r,r]; r must divide R.
Tensor downsample_silhouette(const Tensor& silhouette, std::size_t resolution);

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices, std::size_t render_resolution);

RenderSettings training_render_settings(const TrainConfig& config);

/// One optimization step of the given phase; only that phase's networks move.
LossRecord train_step(ModelParams& model, const Batch& batch, Phase phase, const TrainConfig& config,
                      std::size_t iteration);

struct TrainOptions {
    /// When set, losses.csv and checkpoints are written here.
    std::optional<std::filesystem::path> out_dir;
    std::ostream* progress = nullptr;
    /// Called after every step with the updated model.
    std::function<void(std::size_t iteration, Phase phase, const ModelParams& model)> after_step;
    /// Starting point; a fresh seeded initialization otherwise.
    std::optional<ModelParams> initial;
};

struct TrainResult {
    ModelParams model;
    std::vector<LossRecord> losses;
};

/// Alternating optimization. Throws ConfigError on a K mismatch and
/// NumericalError naming the iteration when a loss stops being finite.
TrainResult train(const TrainConfig& config, const Dataset& dataset, const TrainOptions& options = {});

/// G(E(image)) for a single [64,64,4] image.
TriMesh reconstruct(const ModelParams& model, const Tensor& image);
TriMesh reconstruct(const std::filesystem::path& checkpoint, const Tensor& image);

}  // namespace p3d
