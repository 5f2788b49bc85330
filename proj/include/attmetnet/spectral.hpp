#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "attmetnet/tensor.hpp"

namespace attmetnet::spectral {

// Where B11+B12 falls at or below this, NDMI is defined as 0.
inline constexpr double kDenomFloor = 1e-9;

struct Geo {
    double lat = 0.0;
    double lon = 0.0;
    std::string timestamp;  // UTC ISO-8601
};

// L2A surface reflectance planes, channel-major. Bands stay unnormalized on
// disk and in this struct; standardization is the data pipeline's job.
struct MultispectralPatch {
    Tensor bands;  // [C,H,W]
    std::vector<std::string> band_names;
    double resolution_m = 20.0;
    std::optional<Geo> geo;

    int channels() const { return bands.size(0); }
    int height() const { return bands.size(1); }
    int width() const { return bands.size(2); }
    // -1 when absent
    int band_index(const std::string& name) const;
};

struct PlumeMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> values;  // 0/1, row-major
    std::string patch_id;
};

// The fixed first-12 ordering for Sentinel-2 style patches.
const std::vector<std::string>& default_band_names();

// (B12 - B11) / (B12 + B11) per pixel, 0 where the denominator is floored.
std::vector<double> compute_ndmi(const MultispectralPatch& patch);

// Appends the NDMI plane as band 13; the original 12 planes are copied bit-identically.
MultispectralPatch stack_ndmi(const MultispectralPatch& patch);

// File pair <stem>.json + <stem>.bin. `path` may be the stem or either file.
void save_patch(const MultispectralPatch& patch, const std::string& path);
MultispectralPatch load_patch(const std::string& path);

void save_mask(const PlumeMask& mask, const std::string& path);
PlumeMask load_mask(const std::string& path);

}  // namespace attmetnet::spectral
