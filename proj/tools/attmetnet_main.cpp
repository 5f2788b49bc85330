#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "attmetnet/data.hpp"
#include "attmetnet/error.hpp"
#include "attmetnet/mbmp.hpp"
#include "attmetnet/metrics.hpp"
#include "attmetnet/model.hpp"
#include "attmetnet/spectral.hpp"
#include "attmetnet/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace attmetnet;

namespace {

// ---------------------------------------------------------------------------
// config file plumbing: flag > file > built-in default, applied field-wise

json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("config file " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ValueError("config file " + path + " must be an object");
    return j;
}

template <class T>
void take(json& section, const std::string& where, const char* key, T& out) {
    const auto it = section.find(key);
    if (it == section.end()) return;
    try {
        it->get_to(out);
    } catch (const json::exception&) {
        throw ValueError("config key " + where + "." + key + " has the wrong type");
    }
    section.erase(it);
}

void reject_leftovers(const json& section, const std::string& where) {
    if (section.empty()) return;
    std::string keys;
    for (const auto& [k, v] : section.items()) {
        if (!keys.empty()) keys += ", ";
        keys += k;
    }
    throw ValueError("unknown config key(s) in " + where + ": " + keys);
}

void apply_model(json sec, model::AttMetNetConfig& cfg) {
    take(sec, "model", "in_channels", cfg.in_channels);
    take(sec, "model", "base_filters", cfg.base_filters);
    take(sec, "model", "depth", cfg.depth);
    take(sec, "model", "att_inter_ratio", cfg.att_inter_ratio);
    std::string order = model::to_string(cfg.block_order);
    take(sec, "model", "block_order", order);
    cfg.block_order = model::block_order_from_string(order);
    reject_leftovers(sec, "model");
}

void apply_loss(json sec, loss::LossConfig& cfg) {
    std::string kind = loss::to_string(cfg.kind);
    take(sec, "loss", "kind", kind);
    cfg.kind = loss::loss_kind_from_string(kind);
    take(sec, "loss", "alpha", cfg.alpha);
    take(sec, "loss", "gamma", cfg.gamma);
    take(sec, "loss", "pos_weight", cfg.pos_weight);
    reject_leftovers(sec, "loss");
}

void apply_optimizer(json sec, trainer::AdamConfig& cfg) {
    take(sec, "optimizer", "beta1", cfg.beta1);
    take(sec, "optimizer", "beta2", cfg.beta2);
    take(sec, "optimizer", "eps", cfg.eps);
    reject_leftovers(sec, "optimizer");
}

void apply_scheduler(json sec, trainer::SchedulerConfig& cfg) {
    take(sec, "scheduler", "factor", cfg.factor);
    take(sec, "scheduler", "patience", cfg.patience);
    take(sec, "scheduler", "min_delta", cfg.min_delta);
    reject_leftovers(sec, "scheduler");
}

void apply_train(json sec, trainer::TrainConfig& cfg) {
    take(sec, "train", "lr", cfg.lr);
    take(sec, "train", "epochs", cfg.epochs);
    take(sec, "train", "batch_size", cfg.batch_size);
    take(sec, "train", "neg_ratio", cfg.neg_ratio);
    take(sec, "train", "seed", cfg.seed);
    take(sec, "train", "val_split", cfg.val_split);
    take(sec, "train", "crop_size", cfg.crop_size);
    take(sec, "train", "augment", cfg.augment);
    take(sec, "train", "noise_frac", cfg.noise_frac);
    take(sec, "train", "grad_clip", cfg.grad_clip);
    take(sec, "train", "stop_train_loss", cfg.stop_train_loss);
    reject_leftovers(sec, "train");
}

void apply_synth(json sec, data::CorpusConfig& cfg) {
    take(sec, "synth", "scenes", cfg.n_scenes);
    take(sec, "synth", "positive_fraction", cfg.positive_fraction);
    take(sec, "synth", "height", cfg.scene.height);
    take(sec, "synth", "width", cfg.scene.width);
    take(sec, "synth", "base", cfg.scene.base);
    take(sec, "synth", "noise", cfg.scene.noise);
    take(sec, "synth", "amplitude", cfg.scene.amplitude);
    take(sec, "synth", "sigma_x", cfg.scene.sigma_x);
    take(sec, "synth", "sigma_y", cfg.scene.sigma_y);
    take(sec, "synth", "center_x", cfg.scene.center_x);
    take(sec, "synth", "center_y", cfg.scene.center_y);
    take(sec, "synth", "seed", cfg.scene.seed);
    reject_leftovers(sec, "synth");
}

void apply_eval(json sec, trainer::EvalConfig& cfg) {
    take(sec, "eval", "threshold", cfg.threshold);
    take(sec, "eval", "min_pixels", cfg.min_pixels);
    take(sec, "eval", "connectivity", cfg.connectivity);
    take(sec, "eval", "crop_size", cfg.crop_size);
    reject_leftovers(sec, "eval");
}

struct MbmpCli {
    double threshold = mbmp::kDefaultThreshold;
    int min_pixels = metrics::kMinPlumePixels;
    int connectivity = 8;
};

void apply_mbmp(json sec, MbmpCli& cfg) {
    take(sec, "mbmp", "threshold", cfg.threshold);
    take(sec, "mbmp", "min_pixels", cfg.min_pixels);
    take(sec, "mbmp", "connectivity", cfg.connectivity);
    reject_leftovers(sec, "mbmp");
}

struct PredictCli {
    double threshold = 0.5;
    int crop_size = 0;
    int min_pixels = metrics::kMinPlumePixels;
    int connectivity = 8;
};

void apply_predict(json sec, PredictCli& cfg) {
    take(sec, "predict", "threshold", cfg.threshold);
    take(sec, "predict", "crop_size", cfg.crop_size);
    take(sec, "predict", "min_pixels", cfg.min_pixels);
    take(sec, "predict", "connectivity", cfg.connectivity);
    reject_leftovers(sec, "predict");
}

struct GradcamCli {
    std::string layer = "dec1";
    int crop_size = 0;
};

void apply_gradcam(json sec, GradcamCli& cfg) {
    take(sec, "gradcam", "layer", cfg.layer);
    take(sec, "gradcam", "crop_size", cfg.crop_size);
    reject_leftovers(sec, "gradcam");
}

// Every section is checked even when the subcommand ignores it, so a typo
// anywhere in the file fails fast.
void validate_config(const json& file) {
    json copy = file;
    model::AttMetNetConfig m;
    loss::LossConfig l;
    trainer::AdamConfig a;
    trainer::SchedulerConfig s;
    trainer::TrainConfig t;
    data::CorpusConfig c;
    trainer::EvalConfig e;
    MbmpCli mb;
    PredictCli pr;
    GradcamCli gc;
    if (copy.contains("model")) apply_model(copy["model"], m), copy.erase("model");
    if (copy.contains("loss")) apply_loss(copy["loss"], l), copy.erase("loss");
    if (copy.contains("optimizer")) {
        apply_optimizer(copy["optimizer"], a), copy.erase("optimizer");
    }
    if (copy.contains("scheduler")) {
        apply_scheduler(copy["scheduler"], s), copy.erase("scheduler");
    }
    if (copy.contains("train")) apply_train(copy["train"], t), copy.erase("train");
    if (copy.contains("synth")) apply_synth(copy["synth"], c), copy.erase("synth");
    if (copy.contains("eval")) apply_eval(copy["eval"], e), copy.erase("eval");
    if (copy.contains("mbmp")) apply_mbmp(copy["mbmp"], mb), copy.erase("mbmp");
    if (copy.contains("predict")) apply_predict(copy["predict"], pr), copy.erase("predict");
    if (copy.contains("gradcam")) apply_gradcam(copy["gradcam"], gc), copy.erase("gradcam");
    reject_leftovers(copy, "config");
}

json section(const json& file, const char* name) {
    return file.contains(name) ? file.at(name) : json::object();
}

// ---------------------------------------------------------------------------
// resolved-config echo

ordered_json model_json(const model::AttMetNetConfig& c) {
    return {{"in_channels", c.in_channels},
            {"base_filters", c.base_filters},
            {"depth", c.depth},
            {"att_inter_ratio", c.att_inter_ratio},
            {"block_order", model::to_string(c.block_order)}};
}

ordered_json loss_json(const loss::LossConfig& c) {
    return {{"kind", loss::to_string(c.kind)},
            {"alpha", c.alpha},
            {"gamma", c.gamma},
            {"pos_weight", c.pos_weight}};
}

ordered_json train_json(const trainer::TrainConfig& c) {
    return {{"lr", c.lr},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"neg_ratio", c.neg_ratio},
            {"seed", c.seed},
            {"val_split", c.val_split},
            {"crop_size", c.crop_size},
            {"augment", c.augment},
            {"noise_frac", c.noise_frac},
            {"grad_clip", c.grad_clip},
            {"stop_train_loss", c.stop_train_loss}};
}

ordered_json synth_json(const data::CorpusConfig& c) {
    return {{"scenes", c.n_scenes},
            {"positive_fraction", c.positive_fraction},
            {"height", c.scene.height},
            {"width", c.scene.width},
            {"base", c.scene.base},
            {"noise", c.scene.noise},
            {"amplitude", c.scene.amplitude},
            {"sigma_x", c.scene.sigma_x},
            {"sigma_y", c.scene.sigma_y},
            {"center_x", c.scene.center_x},
            {"center_y", c.scene.center_y},
            {"seed", c.scene.seed}};
}

ordered_json eval_json(const trainer::EvalConfig& c) {
    return {{"threshold", c.threshold},
            {"min_pixels", c.min_pixels},
            {"connectivity", c.connectivity},
            {"crop_size", c.crop_size}};
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out.good()) throw IoError("short write to " + path);
}

void echo_config(const std::string& out_dir, const ordered_json& j) {
    write_text((fs::path(out_dir) / "config.json").string(), j.dump(2) + "\n");
}

std::string ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
    return dir;
}

std::string manifest_path(const std::string& data) {
    if (fs::is_directory(data)) return (fs::path(data) / "manifest.jsonl").string();
    return data;
}

std::string input_stem(const std::string& path) {
    fs::path p(path);
    if (p.extension() == ".json" || p.extension() == ".bin") p.replace_extension();
    return p.filename().string();
}

std::string verdict(const spectral::PlumeMask& mask, int min_pixels, int connectivity) {
    const auto comps = metrics::connected_components(mask, connectivity);
    const bool hit = comps.largest() > min_pixels;
    return std::string("plume: ") + (hit ? "true" : "false") + " (largest region " +
           std::to_string(comps.largest()) + " px)";
}

spectral::MultispectralPatch plane_as_patch(const std::vector<double>& values, int height,
                                            int width, const std::string& band,
                                            const spectral::MultispectralPatch& like) {
    spectral::MultispectralPatch p;
    p.bands = Tensor::from({1, height, width}, values);
    p.band_names = {band};
    p.resolution_m = like.resolution_m;
    p.geo = like.geo;
    return p;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"methane plume detection over multispectral patches"};
    app.require_subcommand(1);

    // --- synth ---------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "generate a synthetic labelled corpus");
    struct {
        std::string out, config;
        data::CorpusConfig cfg;
    } sy;
    synth->add_option("--out", sy.out, "corpus directory")->required();
    auto* sy_cfgf = synth->add_option("--config", sy.config, "JSON config file");
    auto* sy_scenes = synth->add_option("--scenes", sy.cfg.n_scenes, "number of scenes");
    auto* sy_posfrac = synth->add_option("--positive-fraction", sy.cfg.positive_fraction,
                                         "fraction of scenes with a plume");
    auto* sy_h = synth->add_option("--height", sy.cfg.scene.height, "scene height");
    auto* sy_w = synth->add_option("--width", sy.cfg.scene.width, "scene width");
    auto* sy_noise = synth->add_option("--noise", sy.cfg.scene.noise, "background noise sd");
    auto* sy_amp = synth->add_option("--amplitude", sy.cfg.scene.amplitude,
                                     "peak fractional B12 absorption");
    auto* sy_sx = synth->add_option("--sigma-x", sy.cfg.scene.sigma_x, "plume x extent");
    auto* sy_sy = synth->add_option("--sigma-y", sy.cfg.scene.sigma_y, "plume y extent");
    auto* sy_cx = synth->add_option("--center-x", sy.cfg.scene.center_x,
                                    "plume center x, negative for random");
    auto* sy_cy = synth->add_option("--center-y", sy.cfg.scene.center_y,
                                    "plume center y, negative for random");
    auto* sy_seed = synth->add_option("--seed", sy.cfg.scene.seed, "corpus seed");
    synth->callback([&] {
        data::CorpusConfig cfg;
        if (sy_cfgf->count()) {
            const json file = load_config_file(sy.config);
            validate_config(file);
            apply_synth(section(file, "synth"), cfg);
        }
        if (sy_scenes->count()) cfg.n_scenes = sy.cfg.n_scenes;
        if (sy_posfrac->count()) cfg.positive_fraction = sy.cfg.positive_fraction;
        if (sy_h->count()) cfg.scene.height = sy.cfg.scene.height;
        if (sy_w->count()) cfg.scene.width = sy.cfg.scene.width;
        if (sy_noise->count()) cfg.scene.noise = sy.cfg.scene.noise;
        if (sy_amp->count()) cfg.scene.amplitude = sy.cfg.scene.amplitude;
        if (sy_sx->count()) cfg.scene.sigma_x = sy.cfg.scene.sigma_x;
        if (sy_sy->count()) cfg.scene.sigma_y = sy.cfg.scene.sigma_y;
        if (sy_cx->count()) cfg.scene.center_x = sy.cfg.scene.center_x;
        if (sy_cy->count()) cfg.scene.center_y = sy.cfg.scene.center_y;
        if (sy_seed->count()) cfg.scene.seed = sy.cfg.scene.seed;

        ensure_out_dir(sy.out);
        const auto manifest = data::write_synth_corpus(sy.out, cfg);
        echo_config(sy.out, ordered_json{{"command", "synth"}, {"synth", synth_json(cfg)}});
        int train_n = 0, val_n = 0, test_n = 0;
        for (const auto& e : manifest.entries) {
            if (e.split == "train") ++train_n;
            else if (e.split == "val") ++val_n;
            else ++test_n;
        }
        std::printf("wrote %d scenes to %s (train %d, val %d, test %d)\n", cfg.n_scenes,
                    sy.out.c_str(), train_n, val_n, test_n);
    });

    // --- ndmi ----------------------------------------------------------
    auto* ndmi = app.add_subcommand("ndmi", "append an NDMI plane to a 12-band patch");
    struct {
        std::string in, out;
    } nd;
    ndmi->add_option("--in", nd.in, "input patch file or stem")->required();
    ndmi->add_option("--out", nd.out, "output patch stem")->required();
    ndmi->callback([&] {
        const auto patch = spectral::load_patch(nd.in);
        if (patch.band_index("NDMI") >= 0 || patch.channels() == 13) {
            throw ValueError(nd.in + ": already 13 bands");
        }
        spectral::save_patch(spectral::stack_ndmi(patch), nd.out);
        std::printf("wrote 13-band patch %s\n", nd.out.c_str());
    });

    // --- mbmp ----------------------------------------------------------
    auto* mb = app.add_subcommand("mbmp", "multi-band multi-pass retrieval for one scene");
    struct {
        std::string plume, ref, out, config;
        MbmpCli cfg;
    } mm;
    mb->add_option("--plume", mm.plume, "plume-pass patch")->required();
    mb->add_option("--ref", mm.ref, "reference-pass patch")->required();
    mb->add_option("--out", mm.out, "output directory")->required();
    auto* mb_cfgf = mb->add_option("--config", mm.config, "JSON config file");
    auto* mb_thr = mb->add_option("--threshold", mm.cfg.threshold,
                                  "mask pixels where retrieval < threshold (< 0)");
    auto* mb_minpx = mb->add_option("--min-pixels", mm.cfg.min_pixels,
                                    "scene-rule region size");
    auto* mb_conn = mb->add_option("--connectivity", mm.cfg.connectivity, "4 or 8");
    mb->callback([&] {
        MbmpCli cfg;
        if (mb_cfgf->count()) {
            const json file = load_config_file(mm.config);
            validate_config(file);
            apply_mbmp(section(file, "mbmp"), cfg);
        }
        if (mb_thr->count()) cfg.threshold = mm.cfg.threshold;
        if (mb_minpx->count()) cfg.min_pixels = mm.cfg.min_pixels;
        if (mb_conn->count()) cfg.connectivity = mm.cfg.connectivity;

        mbmp::PassPair pair;
        pair.plume_pass = spectral::load_patch(mm.plume);
        pair.ref_pass = spectral::load_patch(mm.ref);
        const auto retrieval = mbmp::mbmp_retrieval(pair);
        const int h = pair.plume_pass.height(), w = pair.plume_pass.width();
        const auto mask = mbmp::mbmp_mask(retrieval, h, w, cfg.threshold);

        ensure_out_dir(mm.out);
        spectral::save_patch(plane_as_patch(retrieval, h, w, "MBMP", pair.plume_pass),
                             (fs::path(mm.out) / "retrieval").string());
        spectral::save_mask(mask, (fs::path(mm.out) / "mask").string());
        echo_config(mm.out, ordered_json{{"command", "mbmp"},
                                         {"plume", mm.plume},
                                         {"ref", mm.ref},
                                         {"mbmp",
                                          {{"threshold", cfg.threshold},
                                           {"min_pixels", cfg.min_pixels},
                                           {"connectivity", cfg.connectivity}}}});
        std::printf("%s\n", verdict(mask, cfg.min_pixels, cfg.connectivity).c_str());
    });

    // --- train ---------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train a model on a corpus");
    struct {
        std::string data, out, config, loss_kind, block_order;
        trainer::TrainConfig cfg;
    } tt;
    tr->add_option("--data", tt.data, "corpus directory or manifest path")->required();
    tr->add_option("--out", tt.out, "output directory")->required();
    auto* tr_cfgf = tr->add_option("--config", tt.config, "JSON config file");
    auto* tr_lr = tr->add_option("--lr", tt.cfg.lr, "learning rate");
    auto* tr_epochs = tr->add_option("--epochs", tt.cfg.epochs, "epoch budget");
    auto* tr_batch = tr->add_option("--batch-size", tt.cfg.batch_size, "batch size");
    auto* tr_negr = tr->add_option("--neg-ratio", tt.cfg.neg_ratio,
                                   "negatives sampled per positive each epoch");
    auto* tr_seed = tr->add_option("--seed", tt.cfg.seed, "run seed");
    auto* tr_vsplit = tr->add_option("--val-split", tt.cfg.val_split,
                                     "split used for validation");
    auto* tr_crop = tr->add_option("--crop-size", tt.cfg.crop_size,
                                   "training crop, 0 for automatic");
    auto* tr_aug = tr->add_flag("--augment,!--no-augment", tt.cfg.augment,
                                "rotate and add band noise");
    auto* tr_noisef = tr->add_option("--noise-frac", tt.cfg.noise_frac,
                                     "augment noise as a fraction of band sd");
    auto* tr_clip = tr->add_option("--grad-clip", tt.cfg.grad_clip,
                                   "max gradient norm, 0 disables");
    auto* tr_stop = tr->add_option("--stop-train-loss", tt.cfg.stop_train_loss,
                                   "finish early below this train loss");
    auto* tr_loss = tr->add_option("--loss", tt.loss_kind, "focal | bce | weighted_bce");
    auto* tr_alpha = tr->add_option("--alpha", tt.cfg.loss.alpha, "focal alpha");
    auto* tr_gamma = tr->add_option("--gamma", tt.cfg.loss.gamma, "focal gamma");
    auto* tr_posw = tr->add_option("--pos-weight", tt.cfg.loss.pos_weight,
                                   "weighted BCE positive weight");
    auto* tr_inch = tr->add_option("--in-channels", tt.cfg.model.in_channels,
                                   "12 raw bands or 13 with NDMI");
    auto* tr_bf = tr->add_option("--base-filters", tt.cfg.model.base_filters,
                                 "first-stage width");
    auto* tr_depth = tr->add_option("--depth", tt.cfg.model.depth, "pooling stages");
    auto* tr_ratio = tr->add_option("--att-inter-ratio", tt.cfg.model.att_inter_ratio,
                                    "gate bottleneck ratio");
    auto* tr_border = tr->add_option("--block-order", tt.block_order,
                                     "conv_relu_bn | conv_bn_relu");
    auto* tr_factor = tr->add_option("--factor", tt.cfg.scheduler.factor,
                                     "plateau decay factor");
    auto* tr_patience = tr->add_option("--patience", tt.cfg.scheduler.patience,
                                       "plateau patience in epochs");
    tr->callback([&] {
        trainer::TrainConfig cfg;
        if (tr_cfgf->count()) {
            const json file = load_config_file(tt.config);
            validate_config(file);
            apply_model(section(file, "model"), cfg.model);
            apply_loss(section(file, "loss"), cfg.loss);
            apply_optimizer(section(file, "optimizer"), cfg.optimizer);
            apply_scheduler(section(file, "scheduler"), cfg.scheduler);
            apply_train(section(file, "train"), cfg);
        }
        if (tr_lr->count()) cfg.lr = tt.cfg.lr;
        if (tr_epochs->count()) cfg.epochs = tt.cfg.epochs;
        if (tr_batch->count()) cfg.batch_size = tt.cfg.batch_size;
        if (tr_negr->count()) cfg.neg_ratio = tt.cfg.neg_ratio;
        if (tr_seed->count()) cfg.seed = tt.cfg.seed;
        if (tr_vsplit->count()) cfg.val_split = tt.cfg.val_split;
        if (tr_crop->count()) cfg.crop_size = tt.cfg.crop_size;
        if (tr_aug->count()) cfg.augment = tt.cfg.augment;
        if (tr_noisef->count()) cfg.noise_frac = tt.cfg.noise_frac;
        if (tr_clip->count()) cfg.grad_clip = tt.cfg.grad_clip;
        if (tr_stop->count()) cfg.stop_train_loss = tt.cfg.stop_train_loss;
        if (tr_loss->count()) cfg.loss.kind = loss::loss_kind_from_string(tt.loss_kind);
        if (tr_alpha->count()) cfg.loss.alpha = tt.cfg.loss.alpha;
        if (tr_gamma->count()) cfg.loss.gamma = tt.cfg.loss.gamma;
        if (tr_posw->count()) cfg.loss.pos_weight = tt.cfg.loss.pos_weight;
        if (tr_inch->count()) cfg.model.in_channels = tt.cfg.model.in_channels;
        if (tr_bf->count()) cfg.model.base_filters = tt.cfg.model.base_filters;
        if (tr_depth->count()) cfg.model.depth = tt.cfg.model.depth;
        if (tr_ratio->count()) cfg.model.att_inter_ratio = tt.cfg.model.att_inter_ratio;
        if (tr_border->count()) {
            cfg.model.block_order = model::block_order_from_string(tt.block_order);
        }
        if (tr_factor->count()) cfg.scheduler.factor = tt.cfg.scheduler.factor;
        if (tr_patience->count()) cfg.scheduler.patience = tt.cfg.scheduler.patience;

        auto manifest = data::load_manifest(manifest_path(tt.data));
        data::validate_manifest(manifest);
        ensure_out_dir(tt.out);
        echo_config(tt.out, ordered_json{{"command", "train"},
                                         {"data", tt.data},
                                         {"model", model_json(cfg.model)},
                                         {"loss", loss_json(cfg.loss)},
                                         {"optimizer",
                                          {{"beta1", cfg.optimizer.beta1},
                                           {"beta2", cfg.optimizer.beta2},
                                           {"eps", cfg.optimizer.eps}}},
                                         {"scheduler",
                                          {{"factor", cfg.scheduler.factor},
                                           {"patience", cfg.scheduler.patience},
                                           {"min_delta", cfg.scheduler.min_delta}}},
                                         {"train", train_json(cfg)}});

        const auto res = trainer::train(cfg, manifest, [&](const trainer::EpochRecord& e) {
            std::fprintf(stderr, "epoch %d/%d train %.6f val %.6f lr %.3g\n", e.epoch,
                         cfg.epochs, e.train_loss, e.val_loss, e.lr);
        });

        model::save_checkpoint(res.best_params, res.normalization,
                               (fs::path(tt.out) / "model_best").string());
        model::save_checkpoint(res.final_params, res.normalization,
                               (fs::path(tt.out) / "model_final").string());
        trainer::save_history(res.history, (fs::path(tt.out) / "history.csv").string());
        if (res.history.epochs.empty()) {
            std::printf("trained 0 epochs; wrote initialized checkpoints to %s\n",
                        tt.out.c_str());
        } else {
            const auto& last = res.history.epochs.back();
            std::printf("trained %d epochs; best epoch %d; final train loss %.6f\n",
                        last.epoch, res.best_epoch, last.train_loss);
        }
    });

    // --- eval ----------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "score a checkpoint against a corpus split");
    struct {
        std::string checkpoint, data, split = "test", out, config;
        trainer::EvalConfig cfg;
    } ee;
    ev->add_option("--checkpoint", ee.checkpoint, "checkpoint stem or file")->required();
    ev->add_option("--data", ee.data, "corpus directory or manifest path")->required();
    ev->add_option("--split", ee.split, "manifest split to score");
    ev->add_option("--out", ee.out, "output directory")->required();
    auto* ev_cfgf = ev->add_option("--config", ee.config, "JSON config file");
    auto* ev_thr = ev->add_option("--threshold", ee.cfg.threshold, "mask probability cut");
    auto* ev_minpx = ev->add_option("--min-pixels", ee.cfg.min_pixels,
                                    "scene-rule region size");
    auto* ev_conn = ev->add_option("--connectivity", ee.cfg.connectivity, "4 or 8");
    auto* ev_crop = ev->add_option("--crop-size", ee.cfg.crop_size,
                                   "evaluation crop, 0 for automatic");
    ev->callback([&] {
        trainer::EvalConfig cfg;
        if (ev_cfgf->count()) {
            const json file = load_config_file(ee.config);
            validate_config(file);
            apply_eval(section(file, "eval"), cfg);
        }
        if (ev_thr->count()) cfg.threshold = ee.cfg.threshold;
        if (ev_minpx->count()) cfg.min_pixels = ee.cfg.min_pixels;
        if (ev_conn->count()) cfg.connectivity = ee.cfg.connectivity;
        if (ev_crop->count()) cfg.crop_size = ee.cfg.crop_size;

        auto ckpt = model::load_checkpoint(ee.checkpoint);
        const auto manifest = data::load_manifest(manifest_path(ee.data));
        const auto report =
            trainer::evaluate(ckpt.params, ckpt.normalization, manifest, ee.split, cfg);

        ensure_out_dir(ee.out);
        write_text((fs::path(ee.out) / "report.json").string(),
                   metrics::to_json(report) + "\n");
        echo_config(ee.out, ordered_json{{"command", "eval"},
                                         {"checkpoint", ee.checkpoint},
                                         {"data", ee.data},
                                         {"split", ee.split},
                                         {"eval", eval_json(cfg)}});
        std::printf("%s", metrics::to_table(report).c_str());
    });

    // --- predict -------------------------------------------------------
    auto* pr = app.add_subcommand("predict", "segment one scene and apply the scene rule");
    struct {
        std::string checkpoint, in, out, config;
        PredictCli cfg;
    } pp;
    pr->add_option("--checkpoint", pp.checkpoint, "checkpoint stem or file")->required();
    pr->add_option("--in", pp.in, "scene patch file or stem")->required();
    pr->add_option("--out", pp.out, "output directory")->required();
    auto* pr_cfgf = pr->add_option("--config", pp.config, "JSON config file");
    auto* pr_thr = pr->add_option("--threshold", pp.cfg.threshold, "mask probability cut");
    auto* pr_crop = pr->add_option("--crop-size", pp.cfg.crop_size,
                                   "inference crop, 0 for automatic");
    auto* pr_minpx = pr->add_option("--min-pixels", pp.cfg.min_pixels,
                                    "scene-rule region size");
    auto* pr_conn = pr->add_option("--connectivity", pp.cfg.connectivity, "4 or 8");
    pr->callback([&] {
        PredictCli cfg;
        if (pr_cfgf->count()) {
            const json file = load_config_file(pp.config);
            validate_config(file);
            apply_predict(section(file, "predict"), cfg);
        }
        if (pr_thr->count()) cfg.threshold = pp.cfg.threshold;
        if (pr_crop->count()) cfg.crop_size = pp.cfg.crop_size;
        if (pr_minpx->count()) cfg.min_pixels = pp.cfg.min_pixels;
        if (pr_conn->count()) cfg.connectivity = pp.cfg.connectivity;

        auto ckpt = model::load_checkpoint(pp.checkpoint);
        const auto patch = spectral::load_patch(pp.in);
        auto mask = trainer::predict_mask(ckpt.params, ckpt.normalization, patch,
                                          cfg.threshold, cfg.crop_size);
        mask.patch_id = input_stem(pp.in);

        ensure_out_dir(pp.out);
        spectral::save_mask(mask,
                            (fs::path(pp.out) / (input_stem(pp.in) + "_pred")).string());
        echo_config(pp.out, ordered_json{{"command", "predict"},
                                         {"checkpoint", pp.checkpoint},
                                         {"in", pp.in},
                                         {"predict",
                                          {{"threshold", cfg.threshold},
                                           {"crop_size", cfg.crop_size},
                                           {"min_pixels", cfg.min_pixels},
                                           {"connectivity", cfg.connectivity}}}});
        std::printf("%s\n", verdict(mask, cfg.min_pixels, cfg.connectivity).c_str());
    });

    // --- gradcam -------------------------------------------------------
    auto* gc = app.add_subcommand("gradcam", "gradient-weighted activation map");
    struct {
        std::string checkpoint, in, out, config;
        GradcamCli cfg;
    } gg;
    gc->add_option("--checkpoint", gg.checkpoint, "checkpoint stem or file")->required();
    gc->add_option("--in", gg.in, "scene patch file or stem")->required();
    gc->add_option("--out", gg.out, "output directory")->required();
    auto* gc_cfgf = gc->add_option("--config", gg.config, "JSON config file");
    auto* gc_layer = gc->add_option("--layer", gg.cfg.layer,
                                    "encN | decN | bottleneck activation to explain");
    auto* gc_crop = gc->add_option("--crop-size", gg.cfg.crop_size,
                                   "inference crop, 0 for automatic");
    gc->callback([&] {
        GradcamCli cfg;
        if (gc_cfgf->count()) {
            const json file = load_config_file(gg.config);
            validate_config(file);
            apply_gradcam(section(file, "gradcam"), cfg);
        }
        if (gc_layer->count()) cfg.layer = gg.cfg.layer;
        if (gc_crop->count()) cfg.crop_size = gg.cfg.crop_size;

        auto ckpt = model::load_checkpoint(gg.checkpoint);
        const auto patch = spectral::load_patch(gg.in);
        const Tensor x =
            trainer::scene_input(ckpt.params.config, ckpt.normalization, patch,
                                 cfg.crop_size);
        const Tensor heat = model::gradcam(ckpt.params, x, cfg.layer);

        ensure_out_dir(gg.out);
        const std::string stem = input_stem(gg.in) + "_gradcam_" + cfg.layer;
        spectral::save_patch(plane_as_patch(heat.vec(), heat.size(0), heat.size(1),
                                            "GRADCAM", patch),
                             (fs::path(gg.out) / stem).string());
        echo_config(gg.out, ordered_json{{"command", "gradcam"},
                                         {"checkpoint", gg.checkpoint},
                                         {"in", gg.in},
                                         {"gradcam",
                                          {{"layer", cfg.layer},
                                           {"crop_size", cfg.crop_size}}}});
        std::printf("wrote %s\n", (fs::path(gg.out) / stem).string().c_str());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValueError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
