#include "attmetnet/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>

#include "attmetnet/error.hpp"

namespace attmetnet::trainer {

namespace {

std::string utc_now() {
    const std::time_t t =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Shortest round-trip decimal form keeps CSVs byte-stable across runs.
std::string fmt(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void validate_train_config(const TrainConfig& cfg) {
    if (!(cfg.lr > 0.0)) throw ValueError("train: lr must be positive");
    if (cfg.epochs < 0) throw ValueError("train: epochs must be >= 0");
    if (cfg.batch_size < 1) throw ValueError("train: batch_size must be >= 1");
    if (cfg.neg_ratio < 0) throw ValueError("train: neg_ratio must be >= 0");
    if (!(cfg.scheduler.factor > 0.0 && cfg.scheduler.factor < 1.0)) {
        throw ValueError("train: scheduler factor must be in (0,1)");
    }
    if (cfg.scheduler.patience < 0) throw ValueError("train: patience must be >= 0");
    if (cfg.noise_frac < 0.0) throw ValueError("train: noise_frac must be >= 0");
    if (cfg.grad_clip < 0.0) throw ValueError("train: grad_clip must be >= 0");
}

spectral::PlumeMask zero_mask(const spectral::MultispectralPatch& patch) {
    spectral::PlumeMask m;
    m.height = patch.height();
    m.width = patch.width();
    m.values.assign(static_cast<std::size_t>(m.height) * m.width, 0);
    return m;
}

spectral::PlumeMask load_truth(const data::DatasetManifest& manifest,
                               const data::ManifestEntry& entry,
                               const spectral::MultispectralPatch& patch) {
    if (entry.mask_path.empty()) return zero_mask(patch);
    return spectral::load_mask(manifest.resolve(entry.mask_path));
}

Tensor batch_input(const std::vector<Tensor>& samples) {
    const Tensor& first = samples.front();
    const int c = first.size(0), h = first.size(1), w = first.size(2);
    Tensor out = Tensor::zeros({static_cast<int>(samples.size()), c, h, w});
    const long stride = first.numel();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].numel() != stride) {
            throw ShapeError("train: patches disagree on extent within a batch");
        }
        std::memcpy(out.data() + static_cast<long>(i) * stride, samples[i].data(),
                    sizeof(double) * stride);
    }
    return out;
}

void clip_grads(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (Tensor& p : params) {
        const double* g = p.grad();
        for (long j = 0; j < p.numel(); ++j) sq += g[j] * g[j];
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const double scale = max_norm / norm;
    for (Tensor& p : params) {
        double* g = p.grad();
        for (long j = 0; j < p.numel(); ++j) g[j] *= scale;
    }
}

spectral::PlumeMask binarize(const Tensor& prob, double threshold) {
    spectral::PlumeMask m;
    m.height = prob.size(2);
    m.width = prob.size(3);
    m.values.resize(static_cast<std::size_t>(m.height) * m.width);
    const double* p = prob.data();
    for (long i = 0; i < prob.numel(); ++i) m.values[i] = p[i] > threshold ? 1 : 0;
    return m;
}

struct ValStats {
    double loss = 0.0;
    std::optional<double> f1;
};

ValStats validation_pass(model::AttMetNetParams& params, const TrainConfig& cfg,
                         const data::DatasetManifest& manifest,
                         const data::Normalization& norm, int crop_px) {
    Rng dummy(0);
    double loss_sum = 0.0;
    long n = 0;
    std::vector<bool> pred_labels, true_labels;
    for (const auto& entry : manifest.entries) {
        if (entry.split != cfg.val_split) continue;
        const auto patch = spectral::load_patch(manifest.resolve(entry.patch_path));
        const auto truth = load_truth(manifest, entry, patch);
        const data::Sample s =
            data::crop(patch, truth, data::CropMode::center, crop_px, dummy);
        const Tensor x = batch_input({data::patch_to_input(s.patch, norm,
                                                           cfg.model.in_channels)});
        const Tensor y = batch_input({data::mask_to_target(s.mask)});
        Graph g;
        const auto res = model::forward(g, params, x, {});
        loss_sum += loss::make_loss(g, cfg.loss, res.prob, y).item();
        ++n;
        pred_labels.push_back(metrics::scene_label(binarize(res.prob, 0.5)));
        true_labels.push_back(metrics::scene_label(s.mask));
    }
    if (n == 0) {
        throw ValueError("train: manifest has no '" + cfg.val_split + "' entries");
    }
    ValStats out;
    out.loss = loss_sum / static_cast<double>(n);
    out.f1 = metrics::scene_metrics(pred_labels, true_labels).f1;
    return out;
}

}  // namespace

bool plateau_step(const SchedulerConfig& cfg, PlateauState& state, double val_loss) {
    if (!(cfg.factor > 0.0 && cfg.factor < 1.0)) {
        throw ValueError("plateau_step: factor must be in (0,1)");
    }
    if (cfg.patience < 0) throw ValueError("plateau_step: patience must be >= 0");
    if (!std::isfinite(val_loss)) {
        throw ValueError("plateau_step: non-finite validation loss");
    }
    if (val_loss < state.best - cfg.min_delta) {
        state.best = val_loss;
        state.counter = 0;
        return true;
    }
    ++state.counter;
    if (state.counter > cfg.patience) {
        state.lr *= cfg.factor;
        state.counter = 0;
    }
    return false;
}

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg,
               double lr) {
    if (state.m.empty() && state.step == 0) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0);
            state.v[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0);
        }
    }
    if (state.m.size() != params.size()) {
        throw ValueError("adam_step: parameter list does not match optimizer state");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (state.m[i].size() != static_cast<std::size_t>(p.numel())) {
            throw ValueError("adam_step: tensor " + std::to_string(i) + " changed size");
        }
        const double* g = p.grad();
        double* d = p.data();
        double* m = state.m[i].data();
        double* v = state.v[i].data();
        for (long j = 0; j < p.numel(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            d[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
        }
    }
}

std::string history_csv(const TrainHistory& history) {
    std::string out = "epoch,train_loss,val_loss,lr,val_f1\n";
    for (const auto& e : history.epochs) {
        out += std::to_string(e.epoch) + ',' + fmt(e.train_loss) + ',' +
               fmt(e.val_loss) + ',' + fmt(e.lr) + ',' +
               (e.val_f1 ? fmt(*e.val_f1) : "nan") + '\n';
    }
    return out;
}

void save_history(const TrainHistory& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << history_csv(history);
    if (!out.good()) throw IoError("short write to " + path);
}

int resolve_crop(int height, int width, int depth, int requested) {
    const int unit = 1 << depth;
    const int cap = std::min(height, width);
    if (requested > 0) {
        if (requested % unit != 0) {
            throw ValueError("crop size " + std::to_string(requested) +
                             " is not a multiple of " + std::to_string(unit));
        }
        if (requested > cap) {
            throw ShapeError("crop size " + std::to_string(requested) +
                             " exceeds the patch extent");
        }
        return requested;
    }
    int size = std::min(cap, 128);
    size -= size % unit;
    if (size <= 0) {
        throw ShapeError("patch smaller than one downsampling unit of " +
                         std::to_string(unit) + " px");
    }
    return size;
}

Tensor scene_input(const model::AttMetNetConfig& cfg, const data::Normalization& norm,
                   const spectral::MultispectralPatch& patch, int crop_size) {
    const int size = resolve_crop(patch.height(), patch.width(), cfg.depth, crop_size);
    Rng dummy(0);
    const auto empty = zero_mask(patch);
    const data::Sample s = data::crop(patch, empty, data::CropMode::center, size, dummy);
    return batch_input({data::patch_to_input(s.patch, norm, cfg.in_channels)});
}

spectral::PlumeMask predict_mask(model::AttMetNetParams& params,
                                 const data::Normalization& norm,
                                 const spectral::MultispectralPatch& patch,
                                 double threshold, int crop_size) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ValueError("predict: threshold must be in (0,1)");
    }
    const Tensor x = scene_input(params.config, norm, patch, crop_size);
    Graph g;
    const auto res = model::forward(g, params, x, {});
    return binarize(res.prob, threshold);
}

TrainResult train(const TrainConfig& cfg, const data::DatasetManifest& manifest,
                  const EpochHook& on_epoch) {
    validate_train_config(cfg);
    const data::Normalization norm = manifest.normalization.empty()
                                         ? data::compute_normalization(manifest)
                                         : manifest.normalization;

    const data::ManifestEntry* first_train = nullptr;
    bool has_val = false;
    for (const auto& entry : manifest.entries) {
        if (entry.split == "train" && !first_train) first_train = &entry;
        if (entry.split == cfg.val_split) has_val = true;
    }
    if (!first_train || !has_val) {
        throw ValueError("train: manifest needs non-empty train and '" + cfg.val_split +
                         "' splits");
    }
    const auto probe = spectral::load_patch(manifest.resolve(first_train->patch_path));
    const int crop_px =
        resolve_crop(probe.height(), probe.width(), cfg.model.depth, cfg.crop_size);

    data::AugmentConfig acfg;
    acfg.noise_frac = cfg.noise_frac;
    acfg.band_std = norm.stddev;

    auto params = model::build_model(cfg.model, cfg.seed);
    std::vector<Tensor> trainable = model::trainable_tensors(params);
    AdamState adam;
    PlateauState sched;
    sched.lr = cfg.lr;

    TrainResult out;
    out.normalization = norm;
    out.best_params = model::clone_params(params);
    out.best_epoch = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng sampler_rng = Rng::derive(cfg.seed, {1, static_cast<std::uint64_t>(epoch)});
        const std::vector<int> order =
            data::epoch_sampler(manifest, "train", cfg.neg_ratio, sampler_rng);
        const double epoch_lr = sched.lr;
        double loss_sum = 0.0;
        long seen = 0;

        for (std::size_t start = 0, batch = 1; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size), ++batch) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> inputs, targets;
            for (std::size_t i = start; i < stop; ++i) {
                const auto& entry = manifest.entries[static_cast<std::size_t>(order[i])];
                const auto patch =
                    spectral::load_patch(manifest.resolve(entry.patch_path));
                const auto truth = load_truth(manifest, entry, patch);
                Rng srng = Rng::derive(cfg.seed, {2, static_cast<std::uint64_t>(epoch),
                                                  static_cast<std::uint64_t>(i)});
                data::Sample s =
                    data::crop(patch, truth, data::CropMode::random, crop_px, srng);
                if (cfg.augment) s = data::augment(s.patch, s.mask, srng, acfg);
                inputs.push_back(data::patch_to_input(s.patch, norm,
                                                      cfg.model.in_channels));
                targets.push_back(data::mask_to_target(s.mask));
            }
            const Tensor x = batch_input(inputs);
            const Tensor y = batch_input(targets);

            Graph g;
            model::ForwardOptions fopt;
            fopt.mode = model::RunMode::train;
            const auto res = model::forward(g, params, x, fopt);
            const Tensor batch_loss = loss::make_loss(g, cfg.loss, res.prob, y);
            const double lval = batch_loss.item();
            if (!std::isfinite(lval)) {
                throw ValueError("train: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(batch));
            }
            g.backward(batch_loss);
            if (cfg.grad_clip > 0.0) clip_grads(trainable, cfg.grad_clip);
            adam_step(trainable, adam, cfg.optimizer, epoch_lr);
            loss_sum += lval * static_cast<double>(stop - start);
            seen += static_cast<long>(stop - start);
        }
        const double train_loss = loss_sum / static_cast<double>(seen);
        const ValStats val = validation_pass(params, cfg, manifest, norm, crop_px);
        if (!std::isfinite(val.loss)) {
            throw ValueError("train: non-finite validation loss at epoch " +
                             std::to_string(epoch));
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = train_loss;
        rec.val_loss = val.loss;
        rec.lr = epoch_lr;
        rec.val_f1 = val.f1;
        rec.timestamp = utc_now();
        out.history.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (plateau_step(cfg.scheduler, sched, val.loss)) {
            out.best_params = model::clone_params(params);
            out.best_epoch = epoch;
        }
        if (cfg.stop_train_loss > 0.0 && train_loss < cfg.stop_train_loss) break;
    }
    out.final_params = params;
    return out;
}

metrics::MetricsReport evaluate(model::AttMetNetParams& params,
                                const data::Normalization& norm,
                                const data::DatasetManifest& manifest,
                                const std::string& split, const EvalConfig& cfg) {
    if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) {
        throw ValueError("evaluate: threshold must be in (0,1)");
    }
    Rng dummy(0);
    std::vector<spectral::PlumeMask> preds, truths;
    for (const auto& entry : manifest.entries) {
        if (entry.split != split) continue;
        const auto patch = spectral::load_patch(manifest.resolve(entry.patch_path));
        const auto truth = load_truth(manifest, entry, patch);
        const int size =
            resolve_crop(patch.height(), patch.width(), params.config.depth,
                         cfg.crop_size);
        const data::Sample s =
            data::crop(patch, truth, data::CropMode::center, size, dummy);
        const Tensor x = batch_input({data::patch_to_input(s.patch, norm,
                                                           params.config.in_channels)});
        Graph g;
        const auto res = model::forward(g, params, x, {});
        preds.push_back(binarize(res.prob, cfg.threshold));
        truths.push_back(s.mask);
    }
    if (preds.empty()) {
        throw ValueError("evaluate: split '" + split + "' is empty");
    }
    return metrics::evaluate_masks(preds, truths, cfg.min_pixels, cfg.connectivity);
}

}  // namespace attmetnet::trainer
