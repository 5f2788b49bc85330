#include "attmetnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <unordered_map>

#include <json.hpp>

#include "attmetnet/error.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace attmetnet::data {

namespace {

std::string stats_path_for(const std::string& manifest_path) {
    std::string stem = manifest_path;
    const auto dot = stem.rfind(".jsonl");
    if (dot != std::string::npos && dot == stem.size() - 6) stem.resize(dot);
    return stem + ".stats.json";
}

const char* label_str(bool plume) { return plume ? "plume" : "no_plume"; }

}  // namespace

std::string DatasetManifest::resolve(const std::string& rel) const {
    if (rel.empty() || root.empty()) return rel;
    if (fs::path(rel).is_absolute()) return rel;
    return (fs::path(root) / rel).string();
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    DatasetManifest m;
    m.root = fs::path(path).parent_path().string();
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("manifest " + path + " line " + std::to_string(lineno) + ": " +
                          e.what());
        }
        ManifestEntry e;
        e.patch_path = j.value("patch_path", std::string());
        e.mask_path = j.value("mask_path", std::string());
        const std::string label = j.value("label", std::string());
        if (label == "plume") e.plume = true;
        else if (label == "no_plume") e.plume = false;
        else
            throw IoError("manifest line " + std::to_string(lineno) + ": bad label '" +
                          label + "'");
        e.split = j.value("split", std::string());
        if (e.split != "train" && e.split != "val" && e.split != "test") {
            throw IoError("manifest line " + std::to_string(lineno) + ": bad split '" +
                          e.split + "'");
        }
        if (e.patch_path.empty()) {
            throw IoError("manifest line " + std::to_string(lineno) + ": missing patch_path");
        }
        m.entries.push_back(std::move(e));
    }
    const std::string sp = stats_path_for(path);
    if (fs::exists(sp)) {
        std::ifstream sf(sp);
        ordered_json j;
        try {
            sf >> j;
        } catch (const nlohmann::json::exception& e) {
            throw IoError("stats sidecar " + sp + ": " + e.what());
        }
        m.normalization.band_names = j.value("band_names", std::vector<std::string>{});
        m.normalization.mean = j.value("mean", std::vector<double>{});
        m.normalization.stddev = j.value("std", std::vector<double>{});
        if (m.normalization.mean.size() != m.normalization.band_names.size() ||
            m.normalization.stddev.size() != m.normalization.band_names.size()) {
            throw IoError("stats sidecar " + sp + ": array lengths disagree");
        }
    }
    return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    for (const auto& e : manifest.entries) {
        ordered_json j;
        j["patch_path"] = e.patch_path;
        if (!e.mask_path.empty()) j["mask_path"] = e.mask_path;
        j["label"] = label_str(e.plume);
        j["split"] = e.split;
        f << j.dump() << "\n";
    }
    if (!f) throw IoError("short write to " + path);
    if (!manifest.normalization.empty()) {
        ordered_json j;
        j["band_names"] = manifest.normalization.band_names;
        j["mean"] = manifest.normalization.mean;
        j["std"] = manifest.normalization.stddev;
        std::ofstream sf(stats_path_for(path), std::ios::trunc);
        if (!sf) throw IoError("cannot write stats sidecar for " + path);
        sf << j.dump(2) << "\n";
    }
}

void validate_manifest(const DatasetManifest& manifest) {
    std::unordered_map<std::string, std::string> split_of;
    for (const auto& e : manifest.entries) {
        const auto it = split_of.find(e.patch_path);
        if (it != split_of.end() && it->second != e.split) {
            throw ValueError("manifest: " + e.patch_path + " appears in splits " +
                             it->second + " and " + e.split);
        }
        split_of.emplace(e.patch_path, e.split);
        if (e.plume) {
            if (e.mask_path.empty()) {
                throw ValueError("manifest: plume entry " + e.patch_path + " has no mask");
            }
            const auto mask = spectral::load_mask(manifest.resolve(e.mask_path));
            long positives = 0;
            for (auto v : mask.values) positives += v;
            if (positives == 0) {
                throw ValueError("manifest: plume entry " + e.patch_path +
                                 " has an empty mask");
            }
        } else if (!e.mask_path.empty()) {
            const auto mask = spectral::load_mask(manifest.resolve(e.mask_path));
            for (auto v : mask.values) {
                if (v) {
                    throw ValueError("manifest: no_plume entry " + e.patch_path +
                                     " has positive mask pixels");
                }
            }
        }
    }
}

Normalization compute_normalization(const DatasetManifest& manifest) {
    Normalization norm;
    std::vector<double> sum, sumsq;
    long count = 0;
    for (const auto& e : manifest.entries) {
        if (e.split != "train") continue;
        spectral::MultispectralPatch p = spectral::load_patch(manifest.resolve(e.patch_path));
        if (p.channels() == 12) p = spectral::stack_ndmi(p);
        const int c = p.channels();
        if (norm.band_names.empty()) {
            norm.band_names = p.band_names;
            sum.assign(static_cast<std::size_t>(c), 0.0);
            sumsq.assign(static_cast<std::size_t>(c), 0.0);
        } else if (norm.band_names != p.band_names) {
            throw ValueError("normalization: band sets differ across train patches");
        }
        const long hw = static_cast<long>(p.height()) * p.width();
        for (int b = 0; b < c; ++b) {
            const double* plane = p.bands.data() + b * hw;
            double s = 0.0, s2 = 0.0;
            for (long i = 0; i < hw; ++i) {
                s += plane[i];
                s2 += plane[i] * plane[i];
            }
            sum[static_cast<std::size_t>(b)] += s;
            sumsq[static_cast<std::size_t>(b)] += s2;
        }
        count += hw;
    }
    if (count == 0) throw ValueError("normalization: train split is empty");
    norm.mean.resize(sum.size());
    norm.stddev.resize(sum.size());
    for (std::size_t b = 0; b < sum.size(); ++b) {
        const double mean = sum[b] / static_cast<double>(count);
        double var = sumsq[b] / static_cast<double>(count) - mean * mean;
        if (var < 0.0) var = 0.0;
        norm.mean[b] = mean;
        norm.stddev[b] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return norm;
}

Sample crop(const spectral::MultispectralPatch& patch, const spectral::PlumeMask& mask,
            CropMode mode, int size, Rng& rng) {
    const int h = patch.height(), w = patch.width();
    if (mask.height != h || mask.width != w) {
        throw ShapeError("crop: mask " + std::to_string(mask.height) + "x" +
                         std::to_string(mask.width) + " does not match patch " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
    if (size > h || size > w) {
        throw ShapeError("crop: source " + std::to_string(h) + "x" + std::to_string(w) +
                         " is smaller than crop size " + std::to_string(size));
    }
    long mask_positives = 0;
    for (auto v : mask.values) mask_positives += v;

    auto window_positives = [&](int oy, int ox) {
        long n = 0;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                n += mask.values[static_cast<std::size_t>((oy + y) * w + (ox + x))];
        return n;
    };

    int oy = 0, ox = 0;
    if (mode == CropMode::center) {
        oy = (h - size) / 2;
        ox = (w - size) / 2;
    } else {
        for (int attempt = 0; attempt < 16; ++attempt) {
            oy = rng.uniform_int(h - size + 1);
            ox = rng.uniform_int(w - size + 1);
            if (mask_positives == 0 || window_positives(oy, ox) > 0) break;
            if (attempt == 15) {
                // force the window over the first plume pixel
                for (long i = 0; i < static_cast<long>(mask.values.size()); ++i) {
                    if (mask.values[static_cast<std::size_t>(i)]) {
                        const int py = static_cast<int>(i) / w;
                        const int px = static_cast<int>(i) % w;
                        oy = std::clamp(py - size / 2, 0, h - size);
                        ox = std::clamp(px - size / 2, 0, w - size);
                        break;
                    }
                }
            }
        }
    }

    Sample out;
    out.patch.bands = Tensor::zeros({patch.channels(), size, size});
    out.patch.band_names = patch.band_names;
    out.patch.resolution_m = patch.resolution_m;
    out.patch.geo = patch.geo;
    const long hw_src = static_cast<long>(h) * w;
    const long hw_dst = static_cast<long>(size) * size;
    for (int b = 0; b < patch.channels(); ++b) {
        const double* src = patch.bands.data() + b * hw_src;
        double* dst = out.patch.bands.data() + b * hw_dst;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                dst[y * size + x] = src[static_cast<long>(oy + y) * w + (ox + x)];
    }
    out.mask.height = size;
    out.mask.width = size;
    out.mask.patch_id = mask.patch_id;
    out.mask.values.resize(static_cast<std::size_t>(hw_dst));
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            out.mask.values[static_cast<std::size_t>(y * size + x)] =
                mask.values[static_cast<std::size_t>((oy + y) * w + (ox + x))];
    return out;
}

void rotate90(spectral::MultispectralPatch& patch, spectral::PlumeMask& mask,
              int quarter_turns) {
    const int n = patch.height();
    if (patch.width() != n) {
        throw ValueError("rotate90: patch must be square, got " + std::to_string(n) + "x" +
                         std::to_string(patch.width()));
    }
    const int k = ((quarter_turns % 4) + 4) % 4;
    const long hw = static_cast<long>(n) * n;
    std::vector<double> tmp(static_cast<std::size_t>(hw));
    for (int turn = 0; turn < k; ++turn) {
        for (int b = 0; b < patch.channels(); ++b) {
            double* plane = patch.bands.data() + b * hw;
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x)
                    tmp[static_cast<std::size_t>(y * n + x)] =
                        plane[static_cast<long>(n - 1 - x) * n + y];
            std::copy(tmp.begin(), tmp.end(), plane);
        }
        std::vector<std::uint8_t> mt(mask.values.size());
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                mt[static_cast<std::size_t>(y * n + x)] =
                    mask.values[static_cast<std::size_t>((n - 1 - x) * n + y)];
        mask.values = std::move(mt);
    }
}

Sample augment(const spectral::MultispectralPatch& patch, const spectral::PlumeMask& mask,
               Rng& rng, const AugmentConfig& cfg) {
    Sample out;
    out.patch.bands = patch.bands.clone();
    out.patch.band_names = patch.band_names;
    out.patch.resolution_m = patch.resolution_m;
    out.patch.geo = patch.geo;
    out.mask = mask;

    const int k = rng.uniform_int(4);
    rotate90(out.patch, out.mask, k);

    if (cfg.noise_frac > 0.0) {
        const int spectral_bands = std::min(out.patch.channels(), 12);
        if (static_cast<int>(cfg.band_std.size()) < spectral_bands) {
            throw ValueError("augment: band_std has " + std::to_string(cfg.band_std.size()) +
                             " entries for " + std::to_string(spectral_bands) + " bands");
        }
        const long hw = static_cast<long>(out.patch.height()) * out.patch.width();
        for (int b = 0; b < spectral_bands; ++b) {
            const double sigma = cfg.noise_frac * cfg.band_std[static_cast<std::size_t>(b)];
            double* plane = out.patch.bands.data() + b * hw;
            for (long i = 0; i < hw; ++i) plane[i] += sigma * rng.gaussian();
        }
    }
    const int indmi = out.patch.band_index("NDMI");
    if (indmi >= 0) {
        const auto ndmi = spectral::compute_ndmi(out.patch);
        const long hw = static_cast<long>(out.patch.height()) * out.patch.width();
        double* plane = out.patch.bands.data() + indmi * hw;
        for (long i = 0; i < hw; ++i) plane[i] = ndmi[static_cast<std::size_t>(i)];
    }
    return out;
}

std::vector<int> epoch_sampler(const DatasetManifest& manifest, const std::string& split,
                               int neg_ratio, Rng& rng) {
    if (neg_ratio < 0) throw ValueError("epoch_sampler: neg_ratio must be >= 0");
    std::vector<int> positives, negatives;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        if (manifest.entries[i].split != split) continue;
        (manifest.entries[i].plume ? positives : negatives).push_back(static_cast<int>(i));
    }
    if (positives.empty() && negatives.empty()) {
        throw ValueError("epoch_sampler: split '" + split + "' is empty");
    }
    if (positives.empty()) {
        throw ValueError("epoch_sampler: split '" + split + "' has no positives");
    }
    const long need = static_cast<long>(neg_ratio) * static_cast<long>(positives.size());
    std::vector<int> picked;
    picked.reserve(static_cast<std::size_t>(need));
    if (negatives.empty()) {
        // positives-only split, nothing to balance against
    } else if (need >= static_cast<long>(negatives.size())) {
        if (need > static_cast<long>(negatives.size())) {
            std::cerr << "epoch_sampler: only " << negatives.size() << " negatives for "
                      << need << " requested, sampling with replacement\n";
            for (long i = 0; i < need; ++i) {
                picked.push_back(negatives[static_cast<std::size_t>(
                    rng.uniform_int(static_cast<int>(negatives.size())))]);
            }
        } else {
            picked = negatives;
        }
    } else {
        // partial Fisher-Yates: the first `need` slots become the sample
        std::vector<int> pool = negatives;
        for (long i = 0; i < need; ++i) {
            const long j =
                i + rng.uniform_int(static_cast<int>(static_cast<long>(pool.size()) - i));
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
            picked.push_back(pool[static_cast<std::size_t>(i)]);
        }
    }
    std::vector<int> order = positives;
    order.insert(order.end(), picked.begin(), picked.end());
    for (long i = static_cast<long>(order.size()) - 1; i > 0; --i) {
        const long j = rng.uniform_int(static_cast<int>(i + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    return order;
}

SynthScene synth_scene(const SynthConfig& cfg) {
    if (cfg.amplitude < 0.0 || cfg.amplitude >= 1.0) {
        throw ValueError("synth_scene: amplitude must be in [0,1), got " +
                         std::to_string(cfg.amplitude));
    }
    if (cfg.sigma_x <= 0.0 || cfg.sigma_y <= 0.0) {
        throw ValueError("synth_scene: sigmas must be > 0");
    }
    if (cfg.base.size() != 12) {
        throw ValueError("synth_scene: base must list 12 band reflectances, got " +
                         std::to_string(cfg.base.size()));
    }
    if (cfg.height < 1 || cfg.width < 1 || cfg.noise < 0.0) {
        throw ValueError("synth_scene: bad extents or noise level");
    }
    Rng rng(cfg.seed);
    const int h = cfg.height, w = cfg.width;
    const long hw = static_cast<long>(h) * w;

    spectral::MultispectralPatch background;
    background.bands = Tensor::zeros({12, h, w});
    background.band_names = spectral::default_band_names();
    background.geo = spectral::Geo{0.0, 0.0, "2021-06-01T10:30:00Z"};
    for (int b = 0; b < 12; ++b) {
        double* plane = background.bands.data() + b * hw;
        for (long i = 0; i < hw; ++i) {
            const double v = cfg.base[static_cast<std::size_t>(b)] + cfg.noise * rng.gaussian();
            plane[i] = std::clamp(v, 0.001, 1.5);
        }
    }

    double cx = cfg.center_x, cy = cfg.center_y;
    if (cx < 0.0) cx = static_cast<double>(rng.uniform_int(w));
    if (cy < 0.0) cy = static_cast<double>(rng.uniform_int(h));

    SynthScene out;
    out.patch.bands = background.bands.clone();
    out.patch.band_names = background.band_names;
    out.patch.geo = spectral::Geo{0.0, 0.0, "2021-06-11T10:30:00Z"};
    out.mask.height = h;
    out.mask.width = w;
    out.mask.values.assign(static_cast<std::size_t>(hw), 0);

    const int i12 = 11;  // B12 plane
    double* b12 = out.patch.bands.data() + i12 * hw;
    const double tx = 2.0 * cfg.sigma_x * cfg.sigma_x;
    const double ty = 2.0 * cfg.sigma_y * cfg.sigma_y;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double dx = static_cast<double>(x) - cx;
            const double dy = static_cast<double>(y) - cy;
            const double g = std::exp(-(dx * dx / tx + dy * dy / ty));
            b12[static_cast<long>(y) * w + x] *= 1.0 - cfg.amplitude * g;
            if (cfg.amplitude > 0.0 && g > kPlumeCutoff) {
                out.mask.values[static_cast<std::size_t>(y * w + x)] = 1;
            }
        }
    }
    out.pair.plume_pass = out.patch;
    out.pair.ref_pass = background;
    return out;
}

DatasetManifest write_synth_corpus(const std::string& dir, const CorpusConfig& cfg) {
    if (cfg.n_scenes < 1) throw ValueError("write_synth_corpus: n_scenes must be >= 1");
    if (cfg.positive_fraction < 0.0 || cfg.positive_fraction > 1.0) {
        throw ValueError("write_synth_corpus: positive_fraction must be in [0,1]");
    }
    fs::create_directories(dir);
    DatasetManifest manifest;
    manifest.root = dir;
    char name[32];
    for (int i = 0; i < cfg.n_scenes; ++i) {
        std::snprintf(name, sizeof(name), "scene_%05d", i);
        const bool positive =
            static_cast<long>(std::floor((i + 1) * cfg.positive_fraction)) >
            static_cast<long>(std::floor(i * cfg.positive_fraction));
        SynthConfig sc = cfg.scene;
        sc.seed = Rng::derive(cfg.scene.seed, {static_cast<std::uint64_t>(i)}).next_u64();
        if (!positive) sc.amplitude = 0.0;
        SynthScene scene = synth_scene(sc);
        scene.mask.patch_id = name;
        spectral::save_patch(scene.patch, (fs::path(dir) / name).string());
        spectral::save_mask(scene.mask, (fs::path(dir) / (std::string(name) + "_mask")).string());
        spectral::save_patch(scene.pair.ref_pass,
                             (fs::path(dir) / (std::string(name) + "_ref")).string());
        ManifestEntry e;
        e.patch_path = name;
        e.mask_path = std::string(name) + "_mask";
        e.plume = positive;
        // slots 8 and 9 hold out 1:1; their order flips each cycle so the
        // alternating labels land in both val and test
        const int slot = i % 10;
        const int val_slot = (i / 10) % 2 == 0 ? 8 : 9;
        e.split = slot < 8 ? "train" : (slot == val_slot ? "val" : "test");
        manifest.entries.push_back(std::move(e));
    }
    manifest.normalization = compute_normalization(manifest);
    save_manifest(manifest, (fs::path(dir) / "manifest.jsonl").string());
    return manifest;
}

Tensor patch_to_input(const spectral::MultispectralPatch& patch, const Normalization& norm,
                      int in_channels) {
    if (in_channels != 12 && in_channels != 13) {
        throw ValueError("patch_to_input: in_channels must be 12 or 13, got " +
                         std::to_string(in_channels));
    }
    const spectral::MultispectralPatch* src = &patch;
    spectral::MultispectralPatch stacked;
    if (patch.channels() == 12 && in_channels == 13) {
        stacked = spectral::stack_ndmi(patch);
        src = &stacked;
    }
    if (src->channels() < in_channels) {
        throw ShapeError("patch_to_input: patch has " + std::to_string(src->channels()) +
                         " bands, need " + std::to_string(in_channels));
    }
    if (norm.empty() || static_cast<int>(norm.mean.size()) < in_channels) {
        throw ValueError("patch_to_input: normalization stats missing or too short");
    }
    const int h = src->height(), w = src->width();
    const long hw = static_cast<long>(h) * w;
    Tensor out = Tensor::zeros({in_channels, h, w});
    for (int b = 0; b < in_channels; ++b) {
        const double* plane = src->bands.data() + b * hw;
        double* dst = out.data() + b * hw;
        const double mean = norm.mean[static_cast<std::size_t>(b)];
        const double inv = 1.0 / norm.stddev[static_cast<std::size_t>(b)];
        for (long i = 0; i < hw; ++i) dst[i] = (plane[i] - mean) * inv;
    }
    return out;
}

Tensor mask_to_target(const spectral::PlumeMask& mask) {
    Tensor t = Tensor::zeros({1, mask.height, mask.width});
    for (std::size_t i = 0; i < mask.values.size(); ++i) {
        t.data()[i] = mask.values[i] ? 1.0 : 0.0;
    }
    return t;
}

}  // namespace attmetnet::data
