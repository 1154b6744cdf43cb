#include "p3d/networks.h"

#include <cmath>
#include <random>
#include <string>

#include "p3d/error.h"
#include "p3d/ops.h"

namespace p3d {

namespace {

enum class Group { Encoder, Generator, Discriminator };

struct TensorSpec {
    std::string name;
    Shape shape;
    std::size_t fan_in;  // 0 for biases
    Group group;
    float init_scale = 1.0f;
};

void add_conv(std::vector<TensorSpec>& out, const std::string& name, std::size_t cin, std::size_t cout) {
    out.push_back({name + ".weight", {5, 5, cin, cout}, 25 * cin, Group::Encoder});
    out.push_back({name + ".bias", {cout}, 0, Group::Encoder});
}

void add_fc(std::vector<TensorSpec>& out, const std::string& name, std::size_t in, std::size_t outdim, Group g,
            float init_scale = 1.0f) {
    out.push_back({name + ".weight", {in, outdim}, in, g, init_scale});
    out.push_back({name + ".bias", {outdim}, 0, g});
}

std::vector<TensorSpec> layout(std::size_t num_views, std::size_t displacement_dim) {
    std::vector<TensorSpec> s;
    add_conv(s, "encoder.conv1", kImageChannels, 64);
    add_conv(s, "encoder.conv2", 64, 128);
    add_conv(s, "encoder.conv3", 128, 256);
    add_fc(s, "encoder.fc1", 8 * 8 * 256, 1024, Group::Encoder);
    add_fc(s, "encoder.fc2", 1024, 1024, Group::Encoder);
    add_fc(s, "encoder.fc3", 1024, kCodeDim, Group::Encoder);
    add_fc(s, "generator.fc1", kCodeDim, 1024, Group::Generator);
    add_fc(s, "generator.fc2", 1024, 2048, Group::Generator);
    add_fc(s, "generator.fc3", 2048, displacement_dim, Group::Generator, kGeneratorOutputInitScale);
    add_fc(s, "discriminator.fc1", kCodeDim, 256, Group::Discriminator);
    add_fc(s, "discriminator.fc2", 256, 128, Group::Discriminator);
    add_fc(s, "discriminator.fc3", 128, num_views, Group::Discriminator);
    return s;
}

// Shared setup for freshly initialized and loaded models.
void attach_topology(ModelParams& m) {
    m.base_mesh = make_icosphere(m.mesh_level);
    m.adjacency = build_edge_adjacency(m.base_mesh);
    m.base_offsets = m.base_mesh.vertex_tensor().reshaped({m.displacement_dim()});
    m.encoder_ids.clear();
    m.generator_ids.clear();
    m.discriminator_ids.clear();
    for (const TensorSpec& spec : layout(m.num_views, m.displacement_dim())) {
        const ParamId id = m.params.id(spec.name);
        switch (spec.group) {
            case Group::Encoder: m.encoder_ids.push_back(id); break;
            case Group::Generator: m.generator_ids.push_back(id); break;
            case Group::Discriminator: m.discriminator_ids.push_back(id); break;
        }
    }
}

Var bind_weight(const ModelParams& m, Graph& g, const std::string& name, Weights w) {
    const ParamId id = m.params.id(name);
    return w == Weights::Trainable ? g.parameter(id, m.params.value(id)) : g.constant_ref(m.params.value(id));
}

Var dense(const ModelParams& m, Var x, const std::string& layer, Weights w) {
    Graph& g = *x.graph;
    return add_bias(matmul(x, bind_weight(m, g, layer + ".weight", w)), bind_weight(m, g, layer + ".bias", w));
}

Var conv(const ModelParams& m, Var x, const std::string& layer, Weights w) {
    Graph& g = *x.graph;
    return conv2d(x, bind_weight(m, g, layer + ".weight", w), bind_weight(m, g, layer + ".bias", w), 2, 2);
}

void check_codes(const Tensor& codes, const char* op) {
    if (codes.rank() != 2 || codes.dim(1) != kCodeDim)
        throw ContractViolation(std::string(op) + ": expected codes [N,512], got " + shape_to_string(codes.shape()));
}

}  // namespace

ModelParams init_networks(std::uint64_t seed, std::size_t num_views, int mesh_level) {
    if (num_views < 2) throw ConfigError("number of viewpoint classes K must be at least 2, got " +
                                         std::to_string(num_views));
    ModelParams m;
    m.num_views = num_views;
    m.mesh_level = mesh_level;
    const std::size_t dim = make_icosphere(mesh_level).vertex_count() * 3;

    std::mt19937_64 rng(seed);
    for (const TensorSpec& spec : layout(num_views, dim)) {
        Tensor t(spec.shape, 0.0f);
        if (spec.fan_in > 0) {
            std::normal_distribution<float> normal(0.0f, spec.init_scale * std::sqrt(2.0f / static_cast<float>(spec.fan_in)));
            for (float& v : t.data()) v = normal(rng);
        }
        m.optimizer.push_back(AdamState::for_shape(t.shape()));
        m.params.add(spec.name, std::move(t));
    }
    attach_topology(m);
    return m;
}

Checkpoint ModelParams::to_checkpoint() const {
    Checkpoint cp;
    cp.params = params;
    cp.optimizer = optimizer;
    cp.scalars["num_views"] = static_cast<double>(num_views);
    cp.scalars["mesh_level"] = mesh_level;
    return cp;
}

ModelParams ModelParams::from_checkpoint(const Checkpoint& cp) {
    auto scalar = [&](const char* key) {
        auto it = cp.scalars.find(key);
        if (it == cp.scalars.end()) throw FormatError(std::string("checkpoint lacks scalar '") + key + "'");
        return it->second;
    };
    ModelParams m;
    m.num_views = static_cast<std::size_t>(scalar("num_views"));
    m.mesh_level = static_cast<int>(scalar("mesh_level"));
    if (m.num_views < 2 || m.mesh_level < 0 || m.mesh_level > kMaxIcosphereLevel)
        throw FormatError("checkpoint has invalid model scalars");
    const std::size_t dim = make_icosphere(m.mesh_level).vertex_count() * 3;
    const auto specs = layout(m.num_views, dim);
    if (cp.params.size() != specs.size())
        throw FormatError("checkpoint has " + std::to_string(cp.params.size()) + " tensors, model expects " +
                          std::to_string(specs.size()));
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (cp.params.name(i) != specs[i].name || cp.params.value(i).shape() != specs[i].shape)
            throw FormatError("checkpoint tensor " + std::to_string(i) + " is " + cp.params.name(i) + " " +
                              shape_to_string(cp.params.value(i).shape()) + ", expected " + specs[i].name + " " +
                              shape_to_string(specs[i].shape));
    }
    m.params = cp.params;
    if (cp.optimizer.empty()) {
        for (ParamId id = 0; id < m.params.size(); ++id)
            m.optimizer.push_back(AdamState::for_shape(m.params.value(id).shape()));
    } else {
        m.optimizer = cp.optimizer;
    }
    attach_topology(m);
    return m;
}

Var encode(const ModelParams& model, Var images, Weights weights, std::vector<Var>* trace) {
    const Tensor& x = images.value();
    if (x.rank() != 4 || x.dim(1) != kImageSize || x.dim(2) != kImageSize || x.dim(3) != kImageChannels)
        throw ContractViolation("encode: expected images [N,64,64,4], got " + shape_to_string(x.shape()));
    // `x` may live in the graph's node storage, which moves as nodes are added.
    const std::size_t n = x.dim(0);
    auto keep = [trace](Var v) {
        if (trace) trace->push_back(v);
        return v;
    };
    Var h = keep(relu(conv(model, images, "encoder.conv1", weights)));
    h = keep(relu(conv(model, h, "encoder.conv2", weights)));
    h = keep(relu(conv(model, h, "encoder.conv3", weights)));
    h = reshape(h, {n, 8 * 8 * 256});
    h = keep(relu(dense(model, h, "encoder.fc1", weights)));
    h = keep(relu(dense(model, h, "encoder.fc2", weights)));
    return keep(dense(model, h, "encoder.fc3", weights));
}

Var generate(const ModelParams& model, Var codes, Weights weights) {
    check_codes(codes.value(), "generate");
    Var h = relu(dense(model, codes, "generator.fc1", weights));
    h = relu(dense(model, h, "generator.fc2", weights));
    Var displacement = dense(model, h, "generator.fc3", weights);
    return add_bias(displacement, codes.graph->constant_ref(model.base_offsets));
}

Var discriminate(const ModelParams& model, Var codes, Weights weights) {
    check_codes(codes.value(), "discriminate");
    Var h = relu(dense(model, codes, "discriminator.fc1", weights));
    h = relu(dense(model, h, "discriminator.fc2", weights));
    return softmax_rows(dense(model, h, "discriminator.fc3", weights));
}

Tensor encode(const ModelParams& model, const Tensor& image) {
    if (image.numel() != kImageSize * kImageSize * kImageChannels)
        throw ContractViolation("encode: expected a 64x64x4 image, got " + shape_to_string(image.shape()));
    Tensor codes = encode_batch(model, image.reshaped({1, kImageSize, kImageSize, kImageChannels}));
    return codes.reshaped({kCodeDim});
}

Tensor encode_batch(const ModelParams& model, const Tensor& images) {
    Graph g;
    return encode(model, g.constant_ref(images), Weights::Frozen).value();
}

TriMesh generate(const ModelParams& model, const Tensor& code) {
    if (code.numel() != kCodeDim) throw ContractViolation("generate: code must have 512 entries");
    Graph g;
    Var v = generate(model, g.constant(code.reshaped({1, kCodeDim})), Weights::Frozen);
    return model.base_mesh.with_vertices(v.value().data());
}

Tensor discriminate(const ModelParams& model, const Tensor& code) {
    if (code.numel() != kCodeDim) throw ContractViolation("discriminate: code must have 512 entries");
    Graph g;
    Var p = discriminate(model, g.constant(code.reshaped({1, kCodeDim})), Weights::Frozen);
    return p.value().reshaped({model.num_views});
}

}  // namespace p3d
