#include "p3d/trainer.h"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "p3d/checkpoint.h"
#include "p3d/error.h"

namespace p3d {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    return out;
}

float parse_float(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d))
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    return static_cast<float>(d);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

double value_of(const std::optional<Var>& v) { return v ? static_cast<double>(v->value().item()) : 0.0; }

void write_checkpoint(const ModelParams& model, std::size_t iteration, const std::filesystem::path& path) {
    Checkpoint cp = model.to_checkpoint();
    cp.scalars["iteration"] = static_cast<double>(iteration);
    save_checkpoint(path, cp);
}

std::string breakdown(const LossRecord& r) {
    std::string s = "L_proj=" + opt(r.proj) + " L_smth=" + opt(r.smth) + " L_cls=" + opt(r.cls) +
                    " L_adv=" + opt(r.adv) + " L_prior=" + opt(r.prior) + " total=" + fmt(r.total);
    return s;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig c;
    std::map<std::string, std::function<void(const std::string&)>> setters{
        {"iterations", [&](const std::string& v) { c.iterations = parse_integer<std::size_t>("iterations", v); }},
        {"batch_size", [&](const std::string& v) { c.batch_size = parse_integer<std::size_t>("batch_size", v); }},
        {"learning_rate", [&](const std::string& v) { c.learning_rate = parse_float("learning_rate", v); }},
        {"lambda_smooth", [&](const std::string& v) { c.weights.smooth = parse_float("lambda_smooth", v); }},
        {"lambda_cls", [&](const std::string& v) { c.weights.cls = parse_float("lambda_cls", v); }},
        {"lambda_adv", [&](const std::string& v) { c.weights.adv = parse_float("lambda_adv", v); }},
        {"lambda_prior", [&](const std::string& v) { c.weights.prior = parse_float("lambda_prior", v); }},
        {"num_views", [&](const std::string& v) { c.num_views = parse_integer<std::size_t>("num_views", v); }},
        {"seed", [&](const std::string& v) { c.seed = parse_integer<std::uint64_t>("seed", v); }},
        {"render_resolution",
         [&](const std::string& v) { c.render_resolution = parse_integer<std::size_t>("render_resolution", v); }},
        {"sigma", [&](const std::string& v) { c.sigma = parse_float("sigma", v); }},
        {"checkpoint_every",
         [&](const std::string& v) { c.checkpoint_every = parse_integer<std::size_t>("checkpoint_every", v); }},
        {"log_every", [&](const std::string& v) { c.log_every = parse_integer<std::size_t>("log_every", v); }},
        {"mesh_level", [&](const std::string& v) { c.mesh_level = parse_integer<int>("mesh_level", v); }},
    };
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second(trim(line.substr(eq + 1)));
    }
    for (float w : {c.weights.smooth, c.weights.cls, c.weights.adv, c.weights.prior})
        if (w < 0.0f) throw ConfigError("loss weights must be non-negative");
    if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(c.learning_rate > 0.0f)) throw ConfigError("learning_rate must be positive");
    if (!(c.sigma > 0.0f)) throw ConfigError("sigma must be positive");
    if (c.mesh_level < 0 || c.mesh_level > kMaxIcosphereLevel) throw ConfigError("mesh_level out of range");
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str());
}

std::string format_train_config(const TrainConfig& c) {
    std::ostringstream out;
    out << "iterations=" << c.iterations << "\nbatch_size=" << c.batch_size
        << "\nlearning_rate=" << fmt(c.learning_rate) << "\nlambda_smooth=" << fmt(c.weights.smooth)
        << "\nlambda_cls=" << fmt(c.weights.cls) << "\nlambda_adv=" << fmt(c.weights.adv)
        << "\nlambda_prior=" << fmt(c.weights.prior) << "\nnum_views=" << c.num_views << "\nseed=" << c.seed
        << "\nrender_resolution=" << c.render_resolution << "\nsigma=" << fmt(c.sigma)
        << "\ncheckpoint_every=" << c.checkpoint_every << "\nlog_every=" << c.log_every
        << "\nmesh_level=" << c.mesh_level << "\n";
    return out.str();
}

std::string loss_csv_header() { return "iteration,phase,L_proj,L_smth,L_cls,L_adv,L_prior,total"; }

std::string format_loss_row(const LossRecord& r) {
    return std::to_string(r.iteration) + "," + phase_name(r.phase) + "," + opt(r.proj) + "," + opt(r.smth) + "," +
           opt(r.cls) + "," + opt(r.adv) + "," + opt(r.prior) + "," + fmt(r.total);
}

Tensor downsample_silhouette(const Tensor& sil, std::size_t r) {
    if (sil.rank() != 2 || sil.dim(0) != sil.dim(1))
        throw ContractViolation("downsample_silhouette: expected a square [R,R] image");
    const std::size_t big = sil.dim(0);
    if (r == 0 || big % r != 0)
        throw ConfigError("render resolution " + std::to_string(r) + " must divide image resolution " +
                          std::to_string(big));
    if (r == big) return sil;
    const std::size_t f = big / r;
    Tensor out({r, r});
    const float inv = 1.0f / static_cast<float>(f * f);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) {
            float s = 0.0f;
            for (std::size_t a = 0; a < f; ++a)
                for (std::size_t b = 0; b < f; ++b) s += sil[(i * f + a) * big + j * f + b];
            out[i * r + j] = s * inv;
        }
    return out;
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices, std::size_t res) {
    const std::size_t n = indices.size();
    Batch b;
    b.images = Tensor({n, kImageSize, kImageSize, kImageChannels});
    b.silhouettes = Tensor({n, res, res});
    const std::size_t img_size = kImageSize * kImageSize * kImageChannels;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = indices[k];
        const Tensor img = dataset.image(i);
        if (img.numel() != img_size)
            throw ConfigError("dataset images must be 64x64, got " + shape_to_string(dataset.silhouette(i).shape()));
        std::copy(img.raw(), img.raw() + img_size, b.images.raw() + k * img_size);
        const Tensor sil = downsample_silhouette(dataset.silhouette(i), res);
        std::copy(sil.raw(), sil.raw() + res * res, b.silhouettes.raw() + k * res * res);
        b.poses.push_back(dataset.pose(i));
        b.labels.push_back(dataset.record(i).view_bin);
    }
    return b;
}

RenderSettings training_render_settings(const TrainConfig& c) {
    RenderSettings s;
    s.height = s.width = c.render_resolution;
    s.sigma = c.sigma;
    return s;
}

LossRecord train_step(ModelParams& model, const Batch& batch, Phase phase, const TrainConfig& config,
                      std::size_t iteration) {
    Graph g;
    PhaseLoss loss = total_loss(g, model, batch, config.weights, phase, training_render_settings(config));
    LossRecord r;
    r.iteration = iteration;
    r.phase = phase;
    r.total = loss.total.value().item();
    auto grab = [](const std::optional<Var>& v) -> std::optional<double> {
        if (!v) return std::nullopt;
        return value_of(v);
    };
    r.proj = grab(loss.terms.proj);
    r.smth = grab(loss.terms.smth);
    r.cls = grab(loss.terms.cls);
    r.adv = grab(loss.terms.adv);
    r.prior = grab(loss.terms.prior);
    if (!std::isfinite(r.total))
        throw NumericalError("non-finite loss at iteration " + std::to_string(iteration) + ": " + breakdown(r));

    const GradientMap grads = g.backward(loss.total);
    AdamConfig adam;
    adam.learning_rate = config.learning_rate;
    std::vector<ParamId> ids;
    if (phase == Phase::Encoder) {
        ids = model.encoder_ids;
        ids.insert(ids.end(), model.generator_ids.begin(), model.generator_ids.end());
    } else {
        ids = model.discriminator_ids;
    }
    adam_update(model.params, grads, model.optimizer, ids, adam);
    return r;
}

TrainResult train(const TrainConfig& config, const Dataset& dataset, const TrainOptions& options) {
    if (dataset.size() == 0) throw ConfigError("training dataset is empty");
    const std::size_t k = config.num_views == 0 ? dataset.num_views() : config.num_views;
    if (k != dataset.num_views())
        throw ConfigError("config K = " + std::to_string(k) + " but dataset K = " +
                          std::to_string(dataset.num_views()));

    TrainResult result{options.initial ? *options.initial : init_networks(config.seed, k, config.mesh_level), {}};
    ModelParams& model = result.model;
    if (model.num_views != k) throw ConfigError("initial model K does not match the dataset");

    std::ofstream csv;
    if (options.out_dir) {
        std::filesystem::create_directories(*options.out_dir);
        const auto path = *options.out_dir / "losses.csv";
        csv.open(path, std::ios::trunc);
        if (!csv) throw IoError("cannot open for writing: " + path.string());
        csv << loss_csv_header() << "\n" << std::flush;
    }

    for (std::size_t t = 0; t < config.iterations; ++t) {
        const Phase phase = phase_for_iteration(t);
        const auto idx = sample_batch(dataset.size(), config.batch_size, derive_seed(config.seed, t));
        const Batch batch = make_batch(dataset, idx, config.render_resolution);
        LossRecord rec = train_step(model, batch, phase, config, t);
        if (csv.is_open()) csv << format_loss_row(rec) << "\n" << std::flush;
        if (options.progress && config.log_every > 0 && (t % config.log_every == 0 || t + 1 == config.iterations))
            *options.progress << "iter " << t << " phase=" << phase_name(phase) << " " << breakdown(rec) << "\n"
                              << std::flush;
        result.losses.push_back(rec);
        if (options.after_step) options.after_step(t, phase, model);
        if (options.out_dir && config.checkpoint_every > 0 && (t + 1) % config.checkpoint_every == 0) {
            char name[48];
            std::snprintf(name, sizeof name, "checkpoint_%06zu.p3d", t + 1);
            write_checkpoint(model, t + 1, *options.out_dir / name);
        }
    }
    if (options.out_dir) write_checkpoint(model, config.iterations, *options.out_dir / "final.p3d");
    return result;
}

TriMesh reconstruct(const ModelParams& model, const Tensor& image) { return generate(model, encode(model, image)); }

TriMesh reconstruct(const std::filesystem::path& checkpoint, const Tensor& image) {
    return reconstruct(ModelParams::from_checkpoint(load_checkpoint(checkpoint)), image);
}

}  // namespace p3d
