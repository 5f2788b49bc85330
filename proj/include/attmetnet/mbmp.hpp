#pragma once

#include <cstdint>
#include <vector>

#include "attmetnet/spectral.hpp"

namespace attmetnet::mbmp {

// Separates the synthetic generator's default enhancement from background
// noise; tune per sensor.
inline constexpr double kDefaultThreshold = -0.05;

// Two acquisitions of the same location, one plume-free.
struct PassPair {
    spectral::MultispectralPatch plume_pass;
    spectral::MultispectralPatch ref_pass;
};

struct SinglePassResult {
    std::vector<double> delta;        // H*W, 0 where invalid
    std::vector<std::uint8_t> valid;  // 1 where B11 exceeds the denominator floor
    double c = 0.0;                   // least-squares scale, c*B12 ~ B11
};

// delta = c*B12/B11 - 1 with c = sum(B11*B12)/sum(B12^2) over the scene.
SinglePassResult single_pass_mb(const spectral::MultispectralPatch& patch);

// single_pass_mb(plume) - single_pass_mb(ref); methane shows up negative.
std::vector<double> mbmp_retrieval(const PassPair& pair);

spectral::PlumeMask mbmp_mask(const std::vector<double>& retrieval, int height, int width,
                              double threshold = kDefaultThreshold);

}  // namespace attmetnet::mbmp
