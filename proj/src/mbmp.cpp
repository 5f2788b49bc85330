#include "attmetnet/mbmp.hpp"

#include "attmetnet/error.hpp"

namespace attmetnet::mbmp {

namespace {

void check_pair(const PassPair& pair) {
    const auto& a = pair.plume_pass;
    const auto& b = pair.ref_pass;
    if (a.height() != b.height() || a.width() != b.width()) {
        throw ShapeError("mbmp: pass extents " + std::to_string(a.height()) + "x" +
                         std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                         "x" + std::to_string(b.width()));
    }
    if (a.band_names != b.band_names) {
        throw ValueError("mbmp: passes carry different band sets");
    }
    if (a.geo && b.geo && !a.geo->timestamp.empty() &&
        a.geo->timestamp == b.geo->timestamp) {
        throw ValueError("mbmp: passes share timestamp " + a.geo->timestamp);
    }
}

}  // namespace

SinglePassResult single_pass_mb(const spectral::MultispectralPatch& patch) {
    const int i11 = patch.band_index("B11");
    const int i12 = patch.band_index("B12");
    if (i11 < 0) throw ValueError("single_pass_mb: patch has no band named B11");
    if (i12 < 0) throw ValueError("single_pass_mb: patch has no band named B12");
    const long hw = static_cast<long>(patch.height()) * patch.width();
    const double* b11 = patch.bands.data() + i11 * hw;
    const double* b12 = patch.bands.data() + i12 * hw;
    double num = 0.0, den = 0.0;
    for (long i = 0; i < hw; ++i) {
        num += b11[i] * b12[i];
        den += b12[i] * b12[i];
    }
    SinglePassResult out;
    out.delta.assign(static_cast<std::size_t>(hw), 0.0);
    out.valid.assign(static_cast<std::size_t>(hw), 0);
    long n_valid = 0;
    if (den > 0.0) {
        out.c = num / den;
        for (long i = 0; i < hw; ++i) {
            if (b11[i] > spectral::kDenomFloor) {
                out.delta[static_cast<std::size_t>(i)] = out.c * b12[i] / b11[i] - 1.0;
                out.valid[static_cast<std::size_t>(i)] = 1;
                ++n_valid;
            }
        }
    }
    if (n_valid == 0) throw ValueError("single_pass_mb: no valid pixels in scene");
    return out;
}

std::vector<double> mbmp_retrieval(const PassPair& pair) {
    check_pair(pair);
    const SinglePassResult plume = single_pass_mb(pair.plume_pass);
    const SinglePassResult ref = single_pass_mb(pair.ref_pass);
    std::vector<double> out(plume.delta.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = plume.delta[i] - ref.delta[i];
    return out;
}

spectral::PlumeMask mbmp_mask(const std::vector<double>& retrieval, int height, int width,
                              double threshold) {
    if (threshold >= 0.0) {
        throw ValueError("mbmp_mask: threshold must be negative, got " +
                         std::to_string(threshold));
    }
    if (static_cast<long>(retrieval.size()) != static_cast<long>(height) * width) {
        throw ShapeError("mbmp_mask: " + std::to_string(retrieval.size()) +
                         " retrieval values for " + std::to_string(height) + "x" +
                         std::to_string(width));
    }
    spectral::PlumeMask m;
    m.height = height;
    m.width = width;
    m.values.resize(retrieval.size());
    for (std::size_t i = 0; i < retrieval.size(); ++i) {
        m.values[i] = retrieval[i] < threshold ? 1 : 0;
    }
    return m;
}

}  // namespace attmetnet::mbmp
