#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attmetnet/mbmp.hpp"
#include "attmetnet/rng.hpp"
#include "attmetnet/spectral.hpp"
#include "attmetnet/tensor.hpp"

namespace attmetnet::data {

// A pixel belongs to the synthetic plume mask where the unit-peak Gaussian
// exceeds this.
inline constexpr double kPlumeCutoff = 0.05;

struct ManifestEntry {
    std::string patch_path;
    std::string mask_path;  // empty when absent
    bool plume = false;
    std::string split;  // train|val|test
};

struct Normalization {
    std::vector<std::string> band_names;
    std::vector<double> mean;
    std::vector<double> stddev;
    bool empty() const { return band_names.empty(); }
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    Normalization normalization;
    std::string root;  // directory the entry paths are relative to

    std::string resolve(const std::string& rel) const;
};

// JSON-lines manifest plus a <stem>.stats.json normalization sidecar.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);
// Loads every mask to check label consistency and split disjointness.
void validate_manifest(const DatasetManifest& manifest);

// Per-band mean/std over all pixels of the train split, bands B01..B12 + NDMI.
Normalization compute_normalization(const DatasetManifest& manifest);

struct Sample {
    spectral::MultispectralPatch patch;
    spectral::PlumeMask mask;
};

enum class CropMode { random, center };

// Aligned crop. Random crops on positive masks that would drop every plume
// pixel are resampled (16 tries), then forced to cover one.
Sample crop(const spectral::MultispectralPatch& patch, const spectral::PlumeMask& mask,
            CropMode mode, int size, Rng& rng);

// k quarter turns clockwise, applied to every band and the mask.
void rotate90(spectral::MultispectralPatch& patch, spectral::PlumeMask& mask,
              int quarter_turns);

struct AugmentConfig {
    double noise_frac = 0.0;
    std::vector<double> band_std;  // raw-band noise scale, first 12 bands
};

// Random right-angle rotation plus per-band Gaussian noise; the mask only
// rotates, and an NDMI plane is recomputed from the noised B11/B12.
Sample augment(const spectral::MultispectralPatch& patch, const spectral::PlumeMask& mask,
               Rng& rng, const AugmentConfig& cfg);

// Every positive of the split once, plus neg_ratio*|positives| sampled
// negatives, shuffled. Returns indices into manifest.entries.
std::vector<int> epoch_sampler(const DatasetManifest& manifest, const std::string& split,
                               int neg_ratio, Rng& rng);

struct SynthConfig {
    int height = 128;
    int width = 128;
    std::vector<double> base = {0.12, 0.10, 0.09, 0.08, 0.10, 0.15,
                                0.18, 0.20, 0.05, 0.02, 0.25, 0.22};
    double noise = 0.02;
    double amplitude = 0.1;  // peak fractional B12 absorption, in [0,1)
    double sigma_x = 8.0;
    double sigma_y = 8.0;
    double center_x = -1.0;  // negative draws a random center
    double center_y = -1.0;
    std::uint64_t seed = 0;
};

struct SynthScene {
    spectral::MultispectralPatch patch;  // the plume pass, 12 bands
    spectral::PlumeMask mask;
    mbmp::PassPair pair;
};

SynthScene synth_scene(const SynthConfig& cfg);

struct CorpusConfig {
    int n_scenes = 40;
    double positive_fraction = 0.5;
    SynthConfig scene;  // template; the per-scene seed derives from scene.seed
};

// Writes scene_NNNNN patch/mask/ref files, manifest.jsonl, and the stats
// sidecar into dir. Splits interleave 8:1:1.
DatasetManifest write_synth_corpus(const std::string& dir, const CorpusConfig& cfg);

// Standardized [C,H,W] network input; stacks NDMI when in_channels is 13.
Tensor patch_to_input(const spectral::MultispectralPatch& patch, const Normalization& norm,
                      int in_channels);
Tensor mask_to_target(const spectral::PlumeMask& mask);

}  // namespace attmetnet::data
