// fundus cup/disc source-free domain adaptation toolbox.
//
// Subcommands: synth-data, train-source, adapt, evaluate, ablate, overlay.
// Every artifact-producing command writes a manifest.json with the fully
// resolved configuration, seed and input checksums next to its outputs.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "sfda/adapt.hpp"
#include "sfda/data.hpp"
#include "sfda/error.hpp"
#include "sfda/image.hpp"
#include "sfda/manifest.hpp"
#include "sfda/metrics.hpp"
#include "sfda/nn/checkpoint.hpp"
#include "sfda/nn/train.hpp"
#include "sfda/pseudolabel.hpp"
#include "sfda/saliency.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw sfda::DataError("cannot read file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw sfda::DataError("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

json section(const json& cfg, const char* name) {
    return cfg.contains(name) ? cfg.at(name) : json::object();
}

sfda::nn::ModelConfig model_config(const json& cfg) {
    const json m = section(cfg, "model");
    sfda::nn::ModelConfig out;
    out.architecture = m.value("architecture", out.architecture);
    out.dropout = m.value("dropout", out.dropout);
    out.base_width = m.value("base_width", out.base_width);
    out.feature_channels = m.value("feature_channels", out.feature_channels);
    out.width_mult = m.value("width_mult", out.width_mult);
    out.init_seed = m.value("init_seed", out.init_seed);
    return out;
}

json model_config_json(const sfda::nn::ModelConfig& mc) {
    return {{"architecture", mc.architecture},
            {"dropout", mc.dropout},
            {"base_width", mc.base_width},
            {"feature_channels", mc.feature_channels},
            {"width_mult", mc.width_mult},
            {"init_seed", mc.init_seed}};
}

sfda::AdaptConfig adapt_config(const json& cfg) {
    const json a = section(cfg, "adapt");
    sfda::AdaptConfig out;
    out.gamma = a.value("gamma", out.gamma);
    out.eta = a.value("eta", out.eta);
    out.mc_passes = a.value("mc_passes", out.mc_passes);
    out.lambda = a.value("lambda", out.lambda);
    out.epochs = a.value("epochs", out.epochs);
    out.batch_size = a.value("batch_size", out.batch_size);
    out.lr = a.value("lr", out.lr);
    out.beta1 = a.value("beta1", out.beta1);
    out.beta2 = a.value("beta2", out.beta2);
    out.metric = sfda::parse_metric(a.value("metric", std::string("cosine")));
    out.seed = a.value("seed", out.seed);
    out.augment = a.value("augment", out.augment);
    out.refresh_pseudolabels = a.value("refresh_pseudolabels", out.refresh_pseudolabels);
    out.train_dropout = a.value("train_dropout", out.train_dropout);
    out.pixel_cosine = a.value("pixel_cosine", out.pixel_cosine);
    return out;
}

json adapt_config_json(const sfda::AdaptConfig& c) {
    return {{"gamma", c.gamma},
            {"eta", c.eta},
            {"mc_passes", c.mc_passes},
            {"lambda", c.lambda},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"metric", sfda::metric_name(c.metric)},
            {"seed", c.seed},
            {"augment", c.augment},
            {"refresh_pseudolabels", c.refresh_pseudolabels},
            {"train_dropout", c.train_dropout},
            {"pixel_cosine", c.pixel_cosine},
            {"force_unit_saliency", c.force_unit_saliency},
            {"pseudolabel_cache", c.pseudolabel_cache},
            {"debug_dump", c.debug_dump}};
}

void ensure_out_dir(const std::string& dir) {
    fs::create_directories(dir);
}

void refuse_nonempty(const std::string& dir, bool force) {
    if (force || !fs::exists(dir)) return;
    if (fs::is_directory(dir) && fs::directory_iterator(dir) != fs::directory_iterator{})
        throw sfda::DataError("output directory not empty: " + dir + " (use --force to overwrite)");
}

void finish_manifest(sfda::RunManifest& m, const std::string& out_dir) {
    m.timestamp = sfda::iso8601_now();
    sfda::write_manifest(m, (fs::path(out_dir) / "manifest.json").string());
}

void add_input(sfda::RunManifest& m, const std::string& path) {
    m.inputs.emplace_back(path, sfda::checksum_hex(sfda::fnv1a64_file(path)));
}

// ---------------------------------------------------------------------------

int cmd_synth_data(const std::string& spec_path, const std::string& out_dir, bool force) {
    const json spec_json = load_json(spec_path);
    sfda::SyntheticDomainSpec spec;
    spec.image_size = spec_json.value("image_size", spec.image_size);
    if (spec_json.contains("disc_radius")) {
        spec.disc_radius_min = spec_json["disc_radius"][0].get<float>();
        spec.disc_radius_max = spec_json["disc_radius"][1].get<float>();
    }
    if (spec_json.contains("cup_ratio")) {
        spec.cup_ratio_min = spec_json["cup_ratio"][0].get<float>();
        spec.cup_ratio_max = spec_json["cup_ratio"][1].get<float>();
    }
    spec.intensity_shift = spec_json.value("intensity_shift", spec.intensity_shift);
    spec.contrast_scale = spec_json.value("contrast_scale", spec.contrast_scale);
    spec.blur_sigma = spec_json.value("blur_sigma", spec.blur_sigma);
    spec.noise_sigma = spec_json.value("noise_sigma", spec.noise_sigma);
    spec.seed = spec_json.value("seed", spec.seed);
    const int n_train = spec_json.value("n_train", 20);
    const int n_test = spec_json.value("n_test", 10);

    refuse_nonempty(out_dir, force);
    ensure_out_dir(out_dir);

    const std::string domain = fs::path(out_dir).filename().string();
    spec.n_samples = n_train;
    sfda::DatasetSplit train = generate_synthetic_domain(spec, sfda::Split::train, domain);
    sfda::save_synthetic_dir(train, (fs::path(out_dir) / "train").string());
    spec.n_samples = n_test;
    sfda::DatasetSplit test = generate_synthetic_domain(spec, sfda::Split::test, domain);
    sfda::save_synthetic_dir(test, (fs::path(out_dir) / "test").string());

    sfda::RunManifest m;
    m.command = "synth-data";
    m.seed = spec.seed;
    m.config = spec_json;
    m.config["resolved"] = {{"n_train", n_train}, {"n_test", n_test},
                            {"image_size", spec.image_size}};
    add_input(m, spec_path);
    m.outputs = {(fs::path(out_dir) / "train").string(), (fs::path(out_dir) / "test").string()};
    finish_manifest(m, out_dir);
    std::cout << "wrote " << n_train << " train + " << n_test << " test samples to " << out_dir
              << "\n";
    return 0;
}

int cmd_train_source(const json& cfg, const std::string& data_dir, const std::string& layout,
                     const std::string& out_dir) {
    const json t = section(cfg, "train");
    sfda::nn::SourceTrainConfig tc;
    tc.epochs = t.value("epochs", tc.epochs);
    tc.batch_size = t.value("batch_size", tc.batch_size);
    tc.lr = t.value("lr", tc.lr);
    tc.beta1 = t.value("beta1", tc.beta1);
    tc.beta2 = t.value("beta2", tc.beta2);
    tc.seed = t.value("seed", tc.seed);
    tc.augment = t.value("augment", tc.augment);

    sfda::LoadOptions lo;
    lo.roi_size = section(cfg, "data").value("roi_size", 0);
    sfda::DatasetSplit data =
        sfda::load_dataset(data_dir, sfda::parse_layout(layout), sfda::Split::train, lo);
    std::cout << "loaded " << data.samples.size() << " training samples from " << data_dir << "\n";

    const sfda::nn::ModelConfig mc = model_config(cfg);
    auto model = sfda::nn::make_model(mc);
    const sfda::nn::SourceTrainReport rep = train_source(*model, data, tc);

    ensure_out_dir(out_dir);
    const std::string ckpt = (fs::path(out_dir) / "source.ckpt").string();
    sfda::nn::save_checkpoint(*model, ckpt);

    const std::string curve = (fs::path(out_dir) / "loss_curve.jsonl").string();
    std::ofstream cf(curve);
    for (size_t e = 0; e < rep.epoch_bce.size(); ++e)
        cf << json{{"epoch", e}, {"bce", rep.epoch_bce[e]}}.dump() << "\n";

    sfda::RunManifest m;
    m.command = "train-source";
    m.seed = tc.seed;
    m.config = {{"model", model_config_json(mc)},
                {"train",
                 {{"epochs", tc.epochs},
                  {"batch_size", tc.batch_size},
                  {"lr", tc.lr},
                  {"beta1", tc.beta1},
                  {"beta2", tc.beta2},
                  {"seed", tc.seed},
                  {"augment", tc.augment}}},
                {"data", {{"dir", data_dir}, {"layout", layout}}}};
    m.outputs = {ckpt, curve};
    finish_manifest(m, out_dir);
    if (!rep.epoch_bce.empty())
        std::cout << "bce " << rep.epoch_bce.front() << " -> " << rep.epoch_bce.back() << "\n";
    std::cout << "checkpoint: " << ckpt << "\n";
    return 0;
}

int cmd_adapt(const json& cfg, sfda::AdaptConfig ac, const std::string& source_ckpt,
              const std::string& target_dir, const std::string& layout,
              const std::string& out_dir) {
    auto source = sfda::nn::load_checkpoint(source_ckpt);

    sfda::LoadOptions lo;
    lo.roi_size = section(cfg, "data").value("roi_size", 0);
    lo.masks = sfda::MaskPolicy::optional; // target is unlabeled by contract
    sfda::DatasetSplit target_full =
        sfda::load_dataset(target_dir, sfda::parse_layout(layout), sfda::Split::train, lo);
    const sfda::UnlabeledSplit target = sfda::UnlabeledSplit::from(target_full);
    std::cout << "adapting on " << target.images.size() << " unlabeled target samples\n";

    ensure_out_dir(out_dir);
    ac.checkpoint_dir = out_dir;
    auto [model, report] = sfda::adapt(*source, target, ac);
    if (report.last_checkpoint.empty()) {
        // epochs == 0: still persist the (unchanged) model
        report.last_checkpoint = (fs::path(out_dir) / "last.ckpt").string();
        sfda::nn::save_checkpoint(*model, report.last_checkpoint);
    }

    const std::string report_path = (fs::path(out_dir) / "report.jsonl").string();
    std::ofstream rf(report_path);
    for (const auto& e : report.epochs)
        rf << json{{"epoch", e.epoch},
                   {"l_seg", e.l_seg},
                   {"l_sim", e.l_sim},
                   {"l_total", e.l_total},
                   {"kept_frac_cup", e.kept_frac_cup},
                   {"kept_frac_disc", e.kept_frac_disc},
                   {"seconds", e.seconds}}
                  .dump()
           << "\n";

    const std::string summary_path = (fs::path(out_dir) / "summary.json").string();
    {
        json s;
        s["epochs"] = report.epochs.size();
        s["best_epoch"] = report.best_epoch;
        s["last_checkpoint"] = report.last_checkpoint;
        s["best_checkpoint"] = report.best_checkpoint;
        if (!report.epochs.empty()) {
            s["final_l_total"] = report.epochs.back().l_total;
            s["final_l_seg"] = report.epochs.back().l_seg;
            s["final_l_sim"] = report.epochs.back().l_sim;
        }
        std::ofstream sf(summary_path);
        sf << s.dump(2) << "\n";
    }

    sfda::RunManifest m;
    m.command = "adapt";
    m.seed = ac.seed;
    m.config = {{"adapt", adapt_config_json(ac)},
                {"data", {{"target", target_dir}, {"layout", layout}}},
                {"model", model_config_json(source->config())}};
    add_input(m, source_ckpt);
    m.outputs = {report.last_checkpoint, report.best_checkpoint, report_path, summary_path};
    finish_manifest(m, out_dir);
    std::cout << "adapted checkpoint: " << report.last_checkpoint << "\n";
    return 0;
}

int cmd_evaluate(const json& cfg, const std::string& ckpt, const std::string& data_dir,
                 const std::string& layout, const std::string& split_name,
                 const std::string& out_dir, float threshold, bool postprocess) {
    auto model = sfda::nn::load_checkpoint(ckpt);
    sfda::LoadOptions lo;
    lo.roi_size = section(cfg, "data").value("roi_size", 0);
    const sfda::Split split = split_name == "train" ? sfda::Split::train : sfda::Split::test;
    sfda::DatasetSplit data =
        sfda::load_dataset(data_dir, sfda::parse_layout(layout), split, lo);

    sfda::EvalConfig ec;
    ec.threshold = threshold;
    ec.postprocess = postprocess;
    const sfda::MetricsReport report = evaluate(*model, data, ec);
    write_report_text(report, std::cout);

    ensure_out_dir(out_dir);
    const std::string json_path = (fs::path(out_dir) / "report.json").string();
    write_report_json(report, json_path);
    const std::string text_path = (fs::path(out_dir) / "report.txt").string();
    std::ofstream tf(text_path);
    write_report_text(report, tf);

    sfda::RunManifest m;
    m.command = "evaluate";
    m.config = {{"eval", {{"threshold", ec.threshold}, {"postprocess", ec.postprocess}}},
                {"data", {{"dir", data_dir}, {"layout", layout}, {"split", split_name}}}};
    add_input(m, ckpt);
    m.outputs = {json_path, text_path};
    finish_manifest(m, out_dir);
    return 0;
}

int cmd_ablate(const json& cfg, sfda::AdaptConfig ac, const std::string& source_ckpt,
               const std::string& target_dir, const std::string& test_dir,
               const std::string& layout, const std::string& metrics_csv,
               const std::string& out_dir, float threshold, bool postprocess) {
    auto source = sfda::nn::load_checkpoint(source_ckpt);
    sfda::LoadOptions lo;
    lo.roi_size = section(cfg, "data").value("roi_size", 0);
    lo.masks = sfda::MaskPolicy::optional;
    sfda::DatasetSplit target_full =
        sfda::load_dataset(target_dir, sfda::parse_layout(layout), sfda::Split::train, lo);
    const sfda::UnlabeledSplit target = sfda::UnlabeledSplit::from(target_full);
    sfda::LoadOptions lo_test;
    lo_test.roi_size = lo.roi_size;
    sfda::DatasetSplit test =
        sfda::load_dataset(test_dir, sfda::parse_layout(layout), sfda::Split::test, lo_test);

    std::vector<sfda::ContrastiveMetric> metrics;
    {
        std::stringstream ss(metrics_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) metrics.push_back(sfda::parse_metric(tok));
        if (metrics.empty()) throw sfda::InvalidArgument("ablate: empty metric list");
    }

    ensure_out_dir(out_dir);
    ac.checkpoint_dir = (fs::path(out_dir) / "runs").string();
    sfda::EvalConfig ec;
    ec.threshold = threshold;
    ec.postprocess = postprocess;
    const sfda::AblationTable table = ablate(*source, target, test, ac, metrics, ec);
    write_ablation_text(table, std::cout);

    const std::string json_path = (fs::path(out_dir) / "ablation.json").string();
    write_ablation_json(table, json_path);
    const std::string text_path = (fs::path(out_dir) / "ablation.txt").string();
    std::ofstream tf(text_path);
    write_ablation_text(table, tf);

    sfda::RunManifest m;
    m.command = "ablate";
    m.seed = ac.seed;
    m.config = {{"adapt", adapt_config_json(ac)},
                {"metrics", metrics_csv},
                {"data", {{"target", target_dir}, {"test", test_dir}, {"layout", layout}}},
                {"eval", {{"threshold", ec.threshold}, {"postprocess", ec.postprocess}}}};
    add_input(m, source_ckpt);
    m.outputs = {json_path, text_path};
    finish_manifest(m, out_dir);
    return 0;
}

// contour pixels of a binary H x W mask (4-adjacency, border counts as background)
void draw_contour(sfda::Tensor& rgb, const sfda::Tensor& mask, float r, float g, float b) {
    const int H = mask.dim(0), W = mask.dim(1);
    auto fg = [&](int y, int x) {
        if (y < 0 || y >= H || x < 0 || x >= W) return false;
        return mask.at(y, x) >= 0.5f;
    };
    const size_t plane = static_cast<size_t>(H) * W;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!fg(y, x)) continue;
            if (fg(y - 1, x) && fg(y + 1, x) && fg(y, x - 1) && fg(y, x + 1)) continue;
            const size_t i = static_cast<size_t>(y) * W + x;
            rgb.data()[i] = r;
            rgb.data()[plane + i] = g;
            rgb.data()[2 * plane + i] = b;
        }
}

int cmd_overlay(const std::string& ckpt, const std::string& input, const std::string& out_dir,
                float threshold, bool postprocess) {
    auto model = sfda::nn::load_checkpoint(ckpt);

    std::vector<fs::path> files;
    if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
    } else if (fs::exists(input)) {
        files.push_back(input);
    } else {
        throw sfda::DataError("overlay input does not exist: " + input);
    }

    ensure_out_dir(out_dir);
    sfda::RunManifest m;
    m.command = "overlay";
    m.config = {{"threshold", threshold}, {"postprocess", postprocess}};
    add_input(m, ckpt);

    for (const auto& f : files) {
        sfda::Tensor img = sfda::load_image_chw(f.string());
        const int div = model->size_divisor();
        const int side = std::min(img.dim(1), img.dim(2)) / div * div;
        if (side < div) throw sfda::DataError("image too small for the model: " + f.string());
        img = sfda::crop_roi(img, std::nullopt, side);

        sfda::Tensor batch({1, 3, side, side});
        std::copy(img.data(), img.data() + img.numel(), batch.data());
        const sfda::nn::ForwardResult fr = model->forward(batch); // recorded: saliency needs it

        sfda::Tensor overlay = img;
        // paper convention: blue cup contour, green disc contour
        for (int ch = 1; ch >= 0; --ch) {
            sfda::Tensor plane({side, side});
            const size_t off = static_cast<size_t>(ch) * side * side;
            for (size_t i = 0; i < plane.numel(); ++i)
                plane[i] = fr.probs.data()[off + i] >= threshold ? 1.0f : 0.0f;
            if (postprocess) plane = sfda::postprocess_mask(plane);
            if (ch == sfda::nn::kCupChannel)
                draw_contour(overlay, plane, 0.0f, 0.0f, 1.0f);
            else
                draw_contour(overlay, plane, 0.0f, 1.0f, 0.0f);
        }
        const std::string stem = f.stem().string();
        const std::string overlay_path = (fs::path(out_dir) / (stem + "_overlay.png")).string();
        sfda::save_image_chw(overlay_path, overlay);
        m.outputs.push_back(overlay_path);

        for (sfda::SegClass c : {sfda::SegClass::cup, sfda::SegClass::disc}) {
            const sfda::SaliencyMap sal = class_saliency(*model, fr, c);
            sfda::Tensor cam({1, 1, sal.e_gc.dim(1), sal.e_gc.dim(2)});
            std::copy(sal.e_gc.data(), sal.e_gc.data() + sal.e_gc.numel(), cam.data());
            cam = sfda::nn::bilinear_resize(cam, side, side);
            sfda::Tensor gray({side, side});
            std::copy(cam.data(), cam.data() + gray.numel(), gray.data());
            const std::string cam_path =
                (fs::path(out_dir) / (stem + "_cam_" + seg_class_name(c) + ".png")).string();
            sfda::save_gray(cam_path, gray);
            m.outputs.push_back(cam_path);
        }
    }
    finish_manifest(m, out_dir);
    std::cout << "wrote overlays for " << files.size() << " image(s) to " << out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"source-free cup/disc segmentation adaptation toolbox"};
    app.require_subcommand(1);

    std::string config_path, spec_path, out_dir, data_dir, target_dir, test_dir, ckpt_path,
        source_ckpt, input_path;
    std::string layout = "synthetic_dir", split_name = "test", metrics_csv = "cosine,euclidean";
    bool force = false, no_postprocess = false, no_augment = false;
    float threshold = 0.5f;

    // overrides shared by adapt/ablate; NAN/INT_MIN mean "not set on the command line"
    double ov_lambda = NAN, ov_lr = NAN, ov_gamma = NAN, ov_eta = NAN;
    int ov_epochs = INT_MIN, ov_batch = INT_MIN, ov_mc = INT_MIN;
    long long ov_seed = LLONG_MIN;
    std::string ov_metric, pl_cache, debug_dump;
    bool refresh_pl = false, train_dropout = false, no_train_dropout = false, unit_saliency = false;

    auto add_adapt_flags = [&](CLI::App* c) {
        c->add_option("--lambda", ov_lambda, "contrastive weight override");
        c->add_option("--lr", ov_lr, "learning rate override");
        c->add_option("--gamma", ov_gamma, "pseudolabel threshold override");
        c->add_option("--eta", ov_eta, "uncertainty threshold override");
        c->add_option("--epochs", ov_epochs, "epoch count override");
        c->add_option("--batch-size", ov_batch, "batch size override");
        c->add_option("--mc-passes", ov_mc, "MC dropout pass count override");
        c->add_option("--seed", ov_seed, "seed override");
        c->add_option("--metric", ov_metric, "contrastive metric override");
        c->add_option("--pseudolabel-cache", pl_cache, "cache directory for pseudolabel records");
        c->add_option("--debug-dump", debug_dump, "per-batch refinement JSONL dump path");
        c->add_flag("--refresh-pseudolabels", refresh_pl,
                    "recompute pseudolabels from the evolving model each epoch");
        c->add_flag("--train-dropout", train_dropout, "keep dropout active in adaptation forwards");
        c->add_flag("--no-train-dropout", no_train_dropout, "deterministic adaptation forwards");
        c->add_flag("--unit-saliency", unit_saliency, "force all-ones saliency maps (regression)");
        c->add_flag("--no-augment", no_augment, "disable weak augmentations");
    };
    auto apply_adapt_overrides = [&](sfda::AdaptConfig& ac) {
        if (!std::isnan(ov_lambda)) ac.lambda = static_cast<float>(ov_lambda);
        if (!std::isnan(ov_lr)) ac.lr = ov_lr;
        if (!std::isnan(ov_gamma)) ac.gamma = static_cast<float>(ov_gamma);
        if (!std::isnan(ov_eta)) ac.eta = static_cast<float>(ov_eta);
        if (ov_epochs != INT_MIN) ac.epochs = ov_epochs;
        if (ov_batch != INT_MIN) ac.batch_size = ov_batch;
        if (ov_mc != INT_MIN) ac.mc_passes = ov_mc;
        if (ov_seed != LLONG_MIN) ac.seed = static_cast<uint64_t>(ov_seed);
        if (!ov_metric.empty()) ac.metric = sfda::parse_metric(ov_metric);
        if (!pl_cache.empty()) ac.pseudolabel_cache = pl_cache;
        if (!debug_dump.empty()) ac.debug_dump = debug_dump;
        if (refresh_pl) ac.refresh_pseudolabels = true;
        if (train_dropout) ac.train_dropout = true;
        if (no_train_dropout) ac.train_dropout = false;
        if (unit_saliency) ac.force_unit_saliency = true;
        if (no_augment) ac.augment = false;
    };

    CLI::App* synth = app.add_subcommand("synth-data", "generate a synthetic cup/disc dataset");
    synth->add_option("--spec", spec_path, "domain spec JSON")->required();
    synth->add_option("--out", out_dir, "output dataset directory")->required();
    synth->add_flag("--force", force, "overwrite a non-empty output directory");

    CLI::App* train = app.add_subcommand("train-source", "train a desk-scale source model");
    train->add_option("--config", config_path, "config JSON");
    train->add_option("--data", data_dir, "labeled dataset directory")->required();
    train->add_option("--layout", layout, "dataset layout");
    train->add_option("--out-dir", out_dir, "output directory")->required();
    int tr_epochs = INT_MIN;
    long long tr_seed = LLONG_MIN;
    double tr_lr = NAN;
    bool tr_augment = false;
    train->add_option("--epochs", tr_epochs, "epoch override");
    train->add_option("--seed", tr_seed, "seed override");
    train->add_option("--lr", tr_lr, "learning rate override");
    train->add_flag("--augment", tr_augment, "weak augmentations during source training");

    CLI::App* ad = app.add_subcommand("adapt", "source-free adaptation to an unlabeled target");
    ad->add_option("--config", config_path, "config JSON");
    ad->add_option("--source-ckpt", source_ckpt, "source model checkpoint")->required();
    ad->add_option("--target", target_dir, "unlabeled target dataset directory")->required();
    ad->add_option("--layout", layout, "dataset layout");
    ad->add_option("--out-dir", out_dir, "output run directory")->required();
    add_adapt_flags(ad);

    CLI::App* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a labeled split");
    ev->add_option("--config", config_path, "config JSON");
    ev->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
    ev->add_option("--data", data_dir, "labeled dataset directory")->required();
    ev->add_option("--layout", layout, "dataset layout");
    ev->add_option("--split", split_name, "train or test split");
    ev->add_option("--out-dir", out_dir, "output directory")->required();
    ev->add_option("--threshold", threshold, "per-class probability threshold");
    ev->add_flag("--no-postprocess", no_postprocess, "disable largest-component + hole fill");

    CLI::App* ab = app.add_subcommand("ablate", "adapt once per contrastive metric and compare");
    ab->add_option("--config", config_path, "config JSON");
    ab->add_option("--source-ckpt", source_ckpt, "source model checkpoint")->required();
    ab->add_option("--target", target_dir, "unlabeled target train directory")->required();
    ab->add_option("--test", test_dir, "labeled target test directory")->required();
    ab->add_option("--layout", layout, "dataset layout");
    ab->add_option("--metrics", metrics_csv, "comma-separated metric list");
    ab->add_option("--out-dir", out_dir, "output directory")->required();
    ab->add_option("--threshold", threshold, "evaluation threshold");
    ab->add_flag("--no-postprocess", no_postprocess, "disable evaluation post-processing");
    add_adapt_flags(ab);

    CLI::App* ov = app.add_subcommand("overlay", "export segmentation overlays and heatmaps");
    ov->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
    ov->add_option("--input", input_path, "image file or directory")->required();
    ov->add_option("--out-dir", out_dir, "output directory")->required();
    ov->add_option("--threshold", threshold, "per-class probability threshold");
    ov->add_flag("--no-postprocess", no_postprocess, "disable post-processing");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        const json cfg = config_path.empty() ? json::object() : load_json(config_path);
        if (synth->parsed()) return cmd_synth_data(spec_path, out_dir, force);
        if (train->parsed()) {
            json patched = cfg;
            if (tr_epochs != INT_MIN) patched["train"]["epochs"] = tr_epochs;
            if (tr_seed != LLONG_MIN) patched["train"]["seed"] = tr_seed;
            if (!std::isnan(tr_lr)) patched["train"]["lr"] = tr_lr;
            if (tr_augment) patched["train"]["augment"] = true;
            return cmd_train_source(patched, data_dir, layout, out_dir);
        }
        if (ad->parsed()) {
            sfda::AdaptConfig ac = adapt_config(cfg);
            apply_adapt_overrides(ac);
            return cmd_adapt(cfg, ac, source_ckpt, target_dir, layout, out_dir);
        }
        if (ev->parsed())
            return cmd_evaluate(cfg, ckpt_path, data_dir, layout, split_name, out_dir, threshold,
                                !no_postprocess);
        if (ab->parsed()) {
            sfda::AdaptConfig ac = adapt_config(cfg);
            apply_adapt_overrides(ac);
            return cmd_ablate(cfg, ac, source_ckpt, target_dir, test_dir, layout, metrics_csv,
                              out_dir, threshold, !no_postprocess);
        }
        if (ov->parsed())
            return cmd_overlay(ckpt_path, input_path, out_dir, threshold, !no_postprocess);
    } catch (const sfda::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const sfda::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const sfda::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
