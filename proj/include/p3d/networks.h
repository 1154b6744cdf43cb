#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "p3d/adam.h"
#include "p3d/autograd.h"
#include "p3d/checkpoint.h"
#include "p3d/mesh.h"
#include "p3d/parameters.h"

namespace p3d {

inline constexpr std::size_t kImageSize = 64;
inline constexpr std::size_t kImageChannels = 4;  // RGB + binary silhouette
inline constexpr std::size_t kCodeDim = 512;

/// Weights of the encoder E, generator G and discriminator D plus one
/// optimizer state per weight tensor.
struct ModelParams {
    ParameterSet params;
    std::vector<AdamState> optimizer;
    std::size_t num_views = 0;  // K, discriminator classes
    int mesh_level = kCanonicalLevel;

    std::vector<ParamId> encoder_ids;
    std::vector<ParamId> generator_ids;
    std::vector<ParamId> discriminator_ids;

    // Template mesh the generator displaces.
    TriMesh base_mesh;
    EdgeAdjacency adjacency;
    Tensor base_offsets;  // [3V], base vertices flattened

    std::size_t displacement_dim() const { return base_mesh.vertex_count() * 3; }

    Checkpoint to_checkpoint() const;
    /// Throws FormatError when the checkpoint does not describe a model.
    static ModelParams from_checkpoint(const Checkpoint& checkpoint);
};

/// The generator's output layer starts this much smaller than the other layers
/// so the initial meshes stay close to the template sphere.
inline constexpr float kGeneratorOutputInitScale = 0.01f;

/// He-style normal weights (std sqrt(2 / fan_in)), zero biases, seeded. The
/// generator output layer is further scaled by kGeneratorOutputInitScale.
ModelParams init_networks(std::uint64_t seed, std::size_t num_views, int mesh_level = kCanonicalLevel);

/// How a network's weights enter a graph.
enum class Weights { Trainable, Frozen };

/// images [N,64,64,4] -> codes [N,512]. Final layer has no activation.
/// If `trace` is given, each layer's output is appended to it.
Var encode(const ModelParams& model, Var images, Weights weights, std::vector<Var>* trace = nullptr);
/// codes [N,512] -> displaced vertex positions [N,3V].
Var generate(const ModelParams& model, Var codes, Weights weights);
/// codes [N,512] -> viewpoint probabilities [N,K].
Var discriminate(const ModelParams& model, Var codes, Weights weights);

/// Single-sample evaluation. image [64,64,4] -> [512].
Tensor encode(const ModelParams& model, const Tensor& image);
/// Batched encoder for evaluation: [N,64,64,4] -> [N,512].
Tensor encode_batch(const ModelParams& model, const Tensor& images);
TriMesh generate(const ModelParams& model, const Tensor& code);
Tensor discriminate(const ModelParams& model, const Tensor& code);

}  // namespace p3d
