#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "attmetnet/data.hpp"
#include "attmetnet/loss.hpp"
#include "attmetnet/metrics.hpp"
#include "attmetnet/model.hpp"

namespace attmetnet::trainer {

struct SchedulerConfig {
    double factor = 0.5;
    int patience = 7;
    double min_delta = 1e-6;
};

struct PlateauState {
    double best = std::numeric_limits<double>::infinity();
    int counter = 0;
    double lr = 0.0;
};

// Returns true when val_loss beats best by more than min_delta (counter
// resets); otherwise the counter grows and, once past patience, lr shrinks by
// factor.
bool plateau_step(const SchedulerConfig& cfg, PlateauState& state, double val_loss);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m, v;
    long step = 0;
};

// One bias-corrected update in place from the tensors' accumulated grads.
void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg,
               double lr);

struct TrainConfig {
    model::AttMetNetConfig model;
    loss::LossConfig loss;
    AdamConfig optimizer;
    SchedulerConfig scheduler;
    double lr = 1e-4;
    int epochs = 100;
    int batch_size = 16;
    int neg_ratio = 2;
    std::uint64_t seed = 0;
    std::string val_split = "val";  // "train" turns validation into memorization
    int crop_size = 0;  // 0 picks the largest pyramid-compatible size up to 128
    bool augment = false;
    double noise_frac = 0.5;       // noise scale as a fraction of band stddev
    double grad_clip = 0.0;        // max global grad norm, 0 disables
    double stop_train_loss = 0.0;  // finish early below this train loss, 0 disables
};

struct EpochRecord;
using EpochHook = std::function<void(const EpochRecord&)>;

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;  // rate used during this epoch's updates
    std::optional<double> val_f1;
    std::string timestamp;  // wall clock, kept out of the CSV
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
};

// epoch,train_loss,val_loss,lr,val_f1 rows; undefined F1 prints as nan.
std::string history_csv(const TrainHistory& history);
void save_history(const TrainHistory& history, const std::string& path);

struct TrainResult {
    model::AttMetNetParams best_params;   // lowest validation loss
    model::AttMetNetParams final_params;  // state after the last epoch
    TrainHistory history;
    data::Normalization normalization;
    int best_epoch = 0;  // 0 when no epoch beat the initialization
};

// Per epoch: resample, walk fixed-size batches, train-mode forward, loss,
// backward, Adam step; then an eval-mode validation pass drives the plateau
// scheduler and best-checkpoint tracking. Deterministic given the seed; the
// hook only observes.
TrainResult train(const TrainConfig& cfg, const data::DatasetManifest& manifest,
                  const EpochHook& on_epoch = {});

struct EvalConfig {
    double threshold = 0.5;
    int min_pixels = metrics::kMinPlumePixels;
    int connectivity = 8;
    int crop_size = 0;
};

// Largest multiple of 2^depth fitting the extent, capped at 128; an explicit
// request is validated instead.
int resolve_crop(int height, int width, int depth, int requested);

// Center-crop and standardize one scene into a [1,C,S,S] network input.
Tensor scene_input(const model::AttMetNetConfig& cfg, const data::Normalization& norm,
                   const spectral::MultispectralPatch& patch, int crop_size = 0);

spectral::PlumeMask predict_mask(model::AttMetNetParams& params,
                                 const data::Normalization& norm,
                                 const spectral::MultispectralPatch& patch,
                                 double threshold = 0.5, int crop_size = 0);

// Center-crop, eval-mode forward, threshold binarization, scene rule, full
// report over one split. Deterministic.
metrics::MetricsReport evaluate(model::AttMetNetParams& params,
                                const data::Normalization& norm,
                                const data::DatasetManifest& manifest,
                                const std::string& split, const EvalConfig& cfg = {});

}  // namespace attmetnet::trainer
