#include "p3d/cli.h"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <ostream>

#include "p3d/checkpoint.h"
#include "p3d/data.h"
#include "p3d/error.h"
#include "p3d/eval.h"
#include "p3d/image.h"
#include "p3d/trainer.h"

namespace p3d {

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

ModelParams load_model(const std::string& path) { return ModelParams::from_checkpoint(load_checkpoint(path)); }

Tensor load_input_image(const std::string& path) {
    const Tensor sil = read_pgm(path);
    if (sil.dim(0) != kImageSize || sil.dim(1) != kImageSize)
        throw ConfigError("input image " + path + " must be 64x64, got " + shape_to_string(sil.shape()));
    Tensor bin = sil;
    for (float& v : bin.data()) v = v >= 0.5f ? 1.0f : 0.0f;
    return silhouette_to_image(bin);
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Pose-invariant mesh reconstruction from single-view silhouettes", "p3d"};
    app.require_subcommand(0, 1);
    std::uint64_t seed = 0;

    // gen-data
    SyntheticConfig gen;
    std::string gen_out;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic single-view silhouette dataset");
    gen_cmd->add_option("--out", gen_out, "Output directory")->required();
    gen_cmd->add_option("--instances", gen.instances, "Number of shape instances")->capture_default_str();
    gen_cmd->add_option("--k", gen.k, "Number of azimuth viewpoints K")->capture_default_str();
    gen_cmd->add_option("--elevation", gen.elevation, "Camera elevation in degrees")->capture_default_str();
    gen_cmd->add_option("--distance", gen.distance, "Camera distance")->capture_default_str();
    gen_cmd->add_option("--views-per-instance", gen.views_per_instance,
                        "Distinct views rendered per instance (1 = single-view)")
        ->capture_default_str();
    gen_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();

    // train
    std::string train_config, train_data, train_out;
    std::optional<std::uint64_t> train_seed;
    std::optional<std::size_t> train_iters;
    auto* train_cmd = app.add_subcommand("train", "Train E, G and D with alternating phases");
    train_cmd->add_option("--config", train_config, "key=value training config")->required();
    // Checked after the config loads, so a bad config path is reported first.
    train_cmd->add_option("--dataset", train_data, "Dataset directory (required)");
    train_cmd->add_option("--out", train_out, "Output directory for losses.csv and checkpoints (required)");
    train_cmd->add_option("--seed", train_seed, "Override the config seed");
    train_cmd->add_option("--iterations", train_iters, "Override the config iteration count");

    // reconstruct
    std::string rec_image, rec_ckpt, rec_out;
    auto* rec_cmd = app.add_subcommand("reconstruct", "Reconstruct a mesh from one 64x64 silhouette image");
    rec_cmd->add_option("--image", rec_image, "Input PGM silhouette")->required();
    rec_cmd->add_option("--checkpoint", rec_ckpt, "Model checkpoint")->required();
    rec_cmd->add_option("--out", rec_out, "Output OBJ mesh")->required();
    rec_cmd->add_option("--seed", seed, "Random seed (unused; reconstruction is deterministic)");

    // render
    std::string ren_mesh, ren_out;
    Pose ren_pose;
    RenderSettings ren_settings;
    std::size_t ren_res = 64;
    bool ren_binary = false;
    auto* ren_cmd = app.add_subcommand("render", "Render a mesh silhouette to PGM");
    ren_cmd->add_option("--mesh", ren_mesh, "Input OBJ mesh")->required();
    ren_cmd->add_option("--azimuth", ren_pose.azimuth_deg, "Azimuth in degrees")->required();
    ren_cmd->add_option("--elevation", ren_pose.elevation_deg, "Elevation in degrees")->required();
    ren_cmd->add_option("--distance", ren_pose.distance, "Camera distance")->capture_default_str();
    ren_cmd->add_option("--out", ren_out, "Output PGM image")->required();
    ren_cmd->add_option("--resolution", ren_res, "Image size in pixels")->capture_default_str();
    ren_cmd->add_option("--sigma", ren_settings.sigma, "Rasterizer sharpness")->capture_default_str();
    ren_cmd->add_flag("--binary", ren_binary, "Threshold the silhouette at 0.5");
    ren_cmd->add_option("--seed", seed, "Random seed (unused; rendering is deterministic)");

    // eval-iou
    std::string iou_pred, iou_gt;
    std::size_t iou_res = kVoxelResolution;
    auto* iou_cmd = app.add_subcommand("eval-iou", "Mean voxel IoU between matching OBJ files");
    iou_cmd->add_option("--pred-dir", iou_pred, "Directory of predicted meshes")->required();
    iou_cmd->add_option("--gt-dir", iou_gt, "Directory of ground-truth meshes")->required();
    iou_cmd->add_option("--res", iou_res, "Voxel resolution")->capture_default_str();
    iou_cmd->add_option("--seed", seed, "Random seed (unused)");

    // eval-mmd
    std::string mmd_ckpt, mmd_data;
    std::optional<double> mmd_bw;
    auto* mmd_cmd = app.add_subcommand("eval-mmd", "Mean pairwise MMD of shape codes across viewpoint bins");
    mmd_cmd->add_option("--checkpoint", mmd_ckpt, "Model checkpoint")->required();
    mmd_cmd->add_option("--dataset", mmd_data, "Dataset directory")->required();
    mmd_cmd->add_option("--bandwidth", mmd_bw, "RBF bandwidth (default: median pairwise distance)");
    mmd_cmd->add_option("--seed", seed, "Random seed (unused)");

    // export-embeddings
    std::string emb_ckpt, emb_data, emb_out;
    auto* emb_cmd = app.add_subcommand("export-embeddings", "Write shape codes and view bins as CSV");
    emb_cmd->add_option("--checkpoint", emb_ckpt, "Model checkpoint")->required();
    emb_cmd->add_option("--dataset", emb_data, "Dataset directory")->required();
    emb_cmd->add_option("--out", emb_out, "Output CSV")->required();
    emb_cmd->add_option("--seed", seed, "Random seed (unused)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }
    if (app.get_subcommands().empty()) {
        err << app.help();
        return kExitUsage;
    }

    try {
        if (*gen_cmd) {
            gen.seed = seed;
            const DatasetManifest m = generate_synthetic_dataset(gen, gen_out);
            out << "samples=" << m.samples.size() << " k=" << m.k << " single_view=" << (m.single_view ? 1 : 0)
                << " out=" << gen_out << "\n";
        } else if (*train_cmd) {
            TrainConfig cfg = load_train_config(train_config);
            if (train_data.empty() || train_out.empty()) {
                err << "train: --dataset and --out are required\n" << train_cmd->help();
                return kExitUsage;
            }
            if (train_seed) cfg.seed = *train_seed;
            if (train_iters) cfg.iterations = *train_iters;
            const Dataset data = Dataset::load(train_data);
            TrainOptions opts;
            opts.out_dir = train_out;
            opts.progress = &err;
            const TrainResult r = train(cfg, data, opts);
            out << "iterations=" << cfg.iterations;
            if (!r.losses.empty()) out << " final_total=" << num(r.losses.back().total);
            out << " checkpoint=" << (std::filesystem::path(train_out) / "final.p3d").string() << "\n";
        } else if (*rec_cmd) {
            const TriMesh mesh = reconstruct(load_model(rec_ckpt), load_input_image(rec_image));
            export_obj(mesh, rec_out);
            out << "vertices=" << mesh.vertex_count() << " faces=" << mesh.face_count() << " out=" << rec_out << "\n";
        } else if (*ren_cmd) {
            ren_settings.height = ren_settings.width = ren_res;
            Tensor img = render_silhouette(load_obj(ren_mesh), ren_pose, ren_settings);
            if (ren_binary)
                for (float& v : img.data()) v = v >= 0.5f ? 1.0f : 0.0f;
            write_pgm(ren_out, img);
            double cover = 0.0;
            for (float v : img.data()) cover += v;
            out << "coverage=" << num(cover / static_cast<double>(img.numel())) << " out=" << ren_out << "\n";
        } else if (*iou_cmd) {
            const IouReport r = directory_iou(iou_pred, iou_gt, iou_res);
            out << "mean_iou=" << num(r.mean) << " n=" << r.count << "\n";
        } else if (*mmd_cmd) {
            const EmbeddingSet set = embed_dataset(load_model(mmd_ckpt), Dataset::load(mmd_data));
            const double bw = mmd_bw ? *mmd_bw : median_pairwise_distance(set.codes);
            std::vector<std::string> warnings;
            const PairwiseMmd r = pairwise_viewpoint_mmd(set, bw, &warnings);
            for (const auto& w : warnings) err << "warning: " << w << "\n";
            out << "mean_mmd=" << num(r.mean) << " pairs=" << r.pairs << " bandwidth=" << num(bw) << "\n";
        } else if (*emb_cmd) {
            const EmbeddingSet set = embed_dataset(load_model(emb_ckpt), Dataset::load(emb_data));
            export_embeddings(set, emb_out);
            out << "rows=" << set.size() << " out=" << emb_out << "\n";
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace p3d
