#include "attmetnet/metrics.hpp"

#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "attmetnet/error.hpp"

namespace attmetnet::metrics {

namespace {

int find_root(std::vector<int>& parent, int i) {
    while (parent[i] != i) {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    return i;
}

void unite(std::vector<int>& parent, std::vector<int>& rank_, int a, int b) {
    a = find_root(parent, a);
    b = find_root(parent, b);
    if (a == b) return;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
}

std::optional<double> ratio(long num, long den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

long Components::largest() const {
    long m = 0;
    for (long s : sizes) {
        if (s > m) m = s;
    }
    return m;
}

Components connected_components(const spectral::PlumeMask& mask, int connectivity) {
    if (connectivity != 4 && connectivity != 8) {
        throw ValueError("connected_components: connectivity must be 4 or 8, got " +
                         std::to_string(connectivity));
    }
    const int h = mask.height, w = mask.width;
    const long total = static_cast<long>(h) * w;
    if (static_cast<long>(mask.values.size()) != total) {
        throw ShapeError("connected_components: mask has " +
                         std::to_string(mask.values.size()) + " values for " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
    std::vector<int> parent(static_cast<std::size_t>(total));
    std::iota(parent.begin(), parent.end(), 0);
    std::vector<int> rank_(static_cast<std::size_t>(total), 0);
    const auto& v = mask.values;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int i = y * w + x;
            if (!v[static_cast<std::size_t>(i)]) continue;
            if (x > 0 && v[static_cast<std::size_t>(i - 1)]) unite(parent, rank_, i, i - 1);
            if (y > 0 && v[static_cast<std::size_t>(i - w)]) unite(parent, rank_, i, i - w);
            if (connectivity == 8 && y > 0) {
                if (x > 0 && v[static_cast<std::size_t>(i - w - 1)])
                    unite(parent, rank_, i, i - w - 1);
                if (x < w - 1 && v[static_cast<std::size_t>(i - w + 1)])
                    unite(parent, rank_, i, i - w + 1);
            }
        }
    }
    Components out;
    out.labels.assign(static_cast<std::size_t>(total), 0);
    std::vector<int> root_label(static_cast<std::size_t>(total), 0);
    for (long i = 0; i < total; ++i) {
        if (!v[static_cast<std::size_t>(i)]) continue;
        const int r = find_root(parent, static_cast<int>(i));
        if (root_label[static_cast<std::size_t>(r)] == 0) {
            out.sizes.push_back(0);
            root_label[static_cast<std::size_t>(r)] = static_cast<int>(out.sizes.size());
        }
        const int lbl = root_label[static_cast<std::size_t>(r)];
        out.labels[static_cast<std::size_t>(i)] = lbl;
        ++out.sizes[static_cast<std::size_t>(lbl - 1)];
    }
    return out;
}

bool scene_label(const spectral::PlumeMask& mask, int min_pixels, int connectivity) {
    return connected_components(mask, connectivity).largest() > min_pixels;
}

SceneMetrics scene_metrics(const std::vector<bool>& pred_labels,
                           const std::vector<bool>& true_labels) {
    if (pred_labels.size() != true_labels.size()) {
        throw ShapeError("scene_metrics: " + std::to_string(pred_labels.size()) +
                         " predictions for " + std::to_string(true_labels.size()) +
                         " truths");
    }
    if (pred_labels.empty()) throw ValueError("scene_metrics: empty label lists");
    SceneMetrics m;
    for (std::size_t i = 0; i < pred_labels.size(); ++i) {
        if (pred_labels[i] && true_labels[i]) ++m.tp;
        else if (pred_labels[i] && !true_labels[i]) ++m.fp;
        else if (!pred_labels[i] && true_labels[i]) ++m.fn;
        else ++m.tn;
    }
    m.accuracy = ratio(m.tp + m.tn, m.tp + m.fp + m.fn + m.tn);
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    m.fpr = ratio(m.fp, m.fp + m.tn);
    m.fnr = ratio(m.fn, m.tp + m.fn);
    m.f1 = ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn);
    if (m.recall && m.fpr) m.balanced_accuracy = (*m.recall + (1.0 - *m.fpr)) / 2.0;
    return m;
}

PixelMetrics pixel_metrics(const std::vector<spectral::PlumeMask>& pred_masks,
                           const std::vector<spectral::PlumeMask>& truth_masks) {
    if (pred_masks.size() != truth_masks.size()) {
        throw ShapeError("pixel_metrics: " + std::to_string(pred_masks.size()) +
                         " predictions for " + std::to_string(truth_masks.size()) +
                         " truths");
    }
    PixelMetrics out;
    if (pred_masks.empty()) return out;
    double miou_sum = 0.0;
    long tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t s = 0; s < pred_masks.size(); ++s) {
        const auto& p = pred_masks[s];
        const auto& t = truth_masks[s];
        if (p.height != t.height || p.width != t.width) {
            throw ShapeError("pixel_metrics: scene " + std::to_string(s) + " extents " +
                             std::to_string(p.height) + "x" + std::to_string(p.width) +
                             " vs " + std::to_string(t.height) + "x" +
                             std::to_string(t.width));
        }
        long i_pos = 0, u_pos = 0, i_neg = 0, u_neg = 0;
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            const bool a = p.values[i] != 0;
            const bool b = t.values[i] != 0;
            if (a && b) {
                ++i_pos;
                ++tp;
            } else if (!a && !b) {
                ++i_neg;
                ++tn;
            } else if (a) {
                ++fp;
            } else {
                ++fn;
            }
            if (a || b) ++u_pos;
            if (!a || !b) ++u_neg;
        }
        // empty union counts as a perfect match for that class
        const double iou_pos = u_pos ? static_cast<double>(i_pos) / u_pos : 1.0;
        const double iou_neg = u_neg ? static_cast<double>(i_neg) / u_neg : 1.0;
        miou_sum += (iou_pos + iou_neg) / 2.0;
    }
    out.miou = miou_sum / static_cast<double>(pred_masks.size());
    const auto tpr = ratio(tp, tp + fn);
    const auto tnr = ratio(tn, tn + fp);
    if (tpr && tnr) out.balanced_accuracy = (*tpr + *tnr) / 2.0;
    return out;
}

MetricsReport evaluate_masks(const std::vector<spectral::PlumeMask>& pred_masks,
                             const std::vector<spectral::PlumeMask>& truth_masks,
                             int min_pixels, int connectivity) {
    if (pred_masks.size() != truth_masks.size()) {
        throw ShapeError("evaluate_masks: " + std::to_string(pred_masks.size()) +
                         " predictions for " + std::to_string(truth_masks.size()) +
                         " truths");
    }
    std::vector<bool> pred_labels, true_labels;
    pred_labels.reserve(pred_masks.size());
    true_labels.reserve(truth_masks.size());
    for (std::size_t i = 0; i < pred_masks.size(); ++i) {
        pred_labels.push_back(scene_label(pred_masks[i], min_pixels, connectivity));
        true_labels.push_back(scene_label(truth_masks[i], min_pixels, connectivity));
    }
    MetricsReport r;
    r.scene = scene_metrics(pred_labels, true_labels);
    r.pixel = pixel_metrics(pred_masks, truth_masks);
    r.n_scenes = static_cast<int>(pred_masks.size());
    return r;
}

std::string to_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    auto put = [&j](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v;
        else j[key] = nullptr;
    };
    j["n_scenes"] = report.n_scenes;
    j["scene_tp"] = report.scene.tp;
    j["scene_fp"] = report.scene.fp;
    j["scene_fn"] = report.scene.fn;
    j["scene_tn"] = report.scene.tn;
    put("scene_accuracy", report.scene.accuracy);
    put("scene_balanced_accuracy", report.scene.balanced_accuracy);
    put("scene_precision", report.scene.precision);
    put("scene_recall", report.scene.recall);
    put("scene_f1", report.scene.f1);
    put("scene_fpr", report.scene.fpr);
    put("scene_fnr", report.scene.fnr);
    put("pixel_miou", report.pixel.miou);
    put("pixel_balanced_accuracy", report.pixel.balanced_accuracy);
    return j.dump(2);
}

std::string to_table(const MetricsReport& report) {
    std::string out;
    char buf[128];
    auto row = [&](const char* name, const std::optional<double>& v) {
        if (v) {
            std::snprintf(buf, sizeof(buf), "%-26s %.6f\n", name, *v);
        } else {
            std::snprintf(buf, sizeof(buf), "%-26s undefined\n", name);
        }
        out += buf;
    };
    std::snprintf(buf, sizeof(buf), "%-26s %d\n", "scenes", report.n_scenes);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-26s tp=%ld fp=%ld fn=%ld tn=%ld\n", "scene confusion",
                  report.scene.tp, report.scene.fp, report.scene.fn, report.scene.tn);
    out += buf;
    row("scene accuracy", report.scene.accuracy);
    row("scene balanced accuracy", report.scene.balanced_accuracy);
    row("scene precision", report.scene.precision);
    row("scene recall", report.scene.recall);
    row("scene f1", report.scene.f1);
    row("scene fpr", report.scene.fpr);
    row("scene fnr", report.scene.fnr);
    row("pixel miou", report.pixel.miou);
    row("pixel balanced accuracy", report.pixel.balanced_accuracy);
    return out;
}

}  // namespace attmetnet::metrics
