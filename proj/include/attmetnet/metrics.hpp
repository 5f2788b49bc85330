#pragma once

#include <optional>
#include <string>
#include <vector>

#include "attmetnet/spectral.hpp"

namespace attmetnet::metrics {

// A predicted region must be strictly larger than this to count as a scene hit.
inline constexpr int kMinPlumePixels = 90;

struct Components {
    std::vector<int> labels;  // row-major, 0 background, regions numbered from 1
    std::vector<long> sizes;  // sizes[i] is the pixel count of region i+1
    int count() const { return static_cast<int>(sizes.size()); }
    long largest() const;
};

Components connected_components(const spectral::PlumeMask& mask, int connectivity = 8);

bool scene_label(const spectral::PlumeMask& mask, int min_pixels = kMinPlumePixels,
                 int connectivity = 8);

// Ratios with a zero denominator are reported as nullopt, never silently 0.
struct SceneMetrics {
    long tp = 0, fp = 0, fn = 0, tn = 0;
    std::optional<double> accuracy, balanced_accuracy, precision, recall, f1, fpr, fnr;
};

SceneMetrics scene_metrics(const std::vector<bool>& pred_labels,
                           const std::vector<bool>& true_labels);

struct PixelMetrics {
    std::optional<double> miou;
    std::optional<double> balanced_accuracy;  // pooled over the corpus
};

PixelMetrics pixel_metrics(const std::vector<spectral::PlumeMask>& pred_masks,
                           const std::vector<spectral::PlumeMask>& truth_masks);

struct MetricsReport {
    SceneMetrics scene;
    PixelMetrics pixel;
    int n_scenes = 0;
};

MetricsReport evaluate_masks(const std::vector<spectral::PlumeMask>& pred_masks,
                             const std::vector<spectral::PlumeMask>& truth_masks,
                             int min_pixels = kMinPlumePixels, int connectivity = 8);

std::string to_json(const MetricsReport& report);
// Fixed-order human-readable table; undefined ratios print as "undefined".
std::string to_table(const MetricsReport& report);

}  // namespace attmetnet::metrics
