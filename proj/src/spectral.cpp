#include "attmetnet/spectral.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "attmetnet/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "patch binaries are little-endian; big-endian hosts unsupported");

namespace attmetnet::spectral {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string strip_ext(const std::string& path) {
    for (const char* ext : {".json", ".bin"}) {
        const std::string e(ext);
        if (path.size() > e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0) {
            return path.substr(0, path.size() - e.size());
        }
    }
    return path;
}

void check_band_names(const std::vector<std::string>& names, int channels) {
    if (static_cast<int>(names.size()) != channels) {
        throw IoError("patch header: " + std::to_string(names.size()) +
                      " band names for " + std::to_string(channels) + " channels");
    }
    std::unordered_set<std::string> seen;
    for (const auto& n : names) {
        if (!seen.insert(n).second) throw IoError("patch header: duplicate band name " + n);
    }
}

ordered_json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    ordered_json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed header " + path + ": " + e.what());
    }
    return j;
}

std::vector<char> read_binary_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open " + path);
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<char> buf(static_cast<std::size_t>(size));
    if (size > 0 && !f.read(buf.data(), size)) throw IoError("cannot read " + path);
    return buf;
}

void write_file(const std::string& path, const char* data, std::size_t n) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(data, static_cast<std::streamsize>(n));
    if (!f) throw IoError("short write to " + path);
}

}  // namespace

int MultispectralPatch::band_index(const std::string& name) const {
    for (std::size_t i = 0; i < band_names.size(); ++i) {
        if (band_names[i] == name) return static_cast<int>(i);
    }
    return -1;
}

const std::vector<std::string>& default_band_names() {
    static const std::vector<std::string> names = {"B01", "B02", "B03", "B04",
                                                   "B05", "B06", "B07", "B08",
                                                   "B09", "B10", "B11", "B12"};
    return names;
}

std::vector<double> compute_ndmi(const MultispectralPatch& patch) {
    const int i11 = patch.band_index("B11");
    const int i12 = patch.band_index("B12");
    if (i11 < 0) throw ValueError("compute_ndmi: patch has no band named B11");
    if (i12 < 0) throw ValueError("compute_ndmi: patch has no band named B12");
    const long hw = static_cast<long>(patch.height()) * patch.width();
    const double* b11 = patch.bands.data() + i11 * hw;
    const double* b12 = patch.bands.data() + i12 * hw;
    std::vector<double> out(static_cast<std::size_t>(hw));
    for (long i = 0; i < hw; ++i) {
        const double denom = b12[i] + b11[i];
        out[static_cast<std::size_t>(i)] =
            denom <= kDenomFloor ? 0.0 : (b12[i] - b11[i]) / denom;
    }
    return out;
}

MultispectralPatch stack_ndmi(const MultispectralPatch& patch) {
    if (patch.channels() != 12) {
        throw ValueError("stack_ndmi: expected 12 bands, got " +
                         std::to_string(patch.channels()));
    }
    const std::vector<double> ndmi = compute_ndmi(patch);
    const int h = patch.height(), w = patch.width();
    MultispectralPatch out;
    out.bands = Tensor::zeros({13, h, w});
    const long hw = static_cast<long>(h) * w;
    for (long i = 0; i < 12 * hw; ++i) out.bands.data()[i] = patch.bands.data()[i];
    for (long i = 0; i < hw; ++i) out.bands.data()[12 * hw + i] = ndmi[static_cast<std::size_t>(i)];
    out.band_names = patch.band_names;
    out.band_names.push_back("NDMI");
    out.resolution_m = patch.resolution_m;
    out.geo = patch.geo;
    return out;
}

void save_patch(const MultispectralPatch& patch, const std::string& path) {
    if (patch.bands.ndim() != 3) {
        throw ShapeError("save_patch: bands must be [C,H,W], got shape " +
                         shape_str(patch.bands.shape()));
    }
    check_band_names(patch.band_names, patch.channels());
    const std::string stem = strip_ext(path);
    ordered_json j;
    j["magic"] = "PLMPATCH1";
    j["channels"] = patch.channels();
    j["height"] = patch.height();
    j["width"] = patch.width();
    j["dtype"] = "f64";
    j["order"] = "CHW";
    j["band_names"] = patch.band_names;
    j["resolution_m"] = patch.resolution_m;
    if (patch.geo) {
        j["geo"] = {{"lat", patch.geo->lat},
                    {"lon", patch.geo->lon},
                    {"timestamp", patch.geo->timestamp}};
    }
    const std::string header = j.dump(2) + "\n";
    write_file(stem + ".json", header.data(), header.size());
    write_file(stem + ".bin", reinterpret_cast<const char*>(patch.bands.data()),
               sizeof(double) * static_cast<std::size_t>(patch.bands.numel()));
}

MultispectralPatch load_patch(const std::string& path) {
    const std::string stem = strip_ext(path);
    const ordered_json j = read_json_file(stem + ".json");
    if (!j.contains("magic") || j["magic"] != "PLMPATCH1") {
        throw IoError("bad magic in " + stem + ".json, expected PLMPATCH1");
    }
    const std::string dtype = j.value("dtype", "");
    if (dtype != "f64") throw IoError("unknown dtype '" + dtype + "' in " + stem + ".json");
    if (j.value("order", "") != "CHW") {
        throw IoError("unknown order '" + j.value("order", std::string()) + "' in " +
                      stem + ".json");
    }
    const int c = j.value("channels", 0);
    const int h = j.value("height", 0);
    const int w = j.value("width", 0);
    if (c <= 0 || h <= 0 || w <= 0) {
        throw IoError("patch header: non-positive extents in " + stem + ".json");
    }
    MultispectralPatch p;
    p.band_names = j.value("band_names", std::vector<std::string>{});
    check_band_names(p.band_names, c);
    p.resolution_m = j.value("resolution_m", 20.0);
    if (j.contains("geo")) {
        Geo geo;
        geo.lat = j["geo"].value("lat", 0.0);
        geo.lon = j["geo"].value("lon", 0.0);
        geo.timestamp = j["geo"].value("timestamp", std::string());
        p.geo = geo;
    }
    const std::vector<char> raw = read_binary_file(stem + ".bin");
    const std::size_t want = sizeof(double) * static_cast<std::size_t>(c) * h * w;
    if (raw.size() != want) {
        throw IoError("payload length mismatch in " + stem + ".bin: expected " +
                      std::to_string(want) + " bytes, got " + std::to_string(raw.size()));
    }
    p.bands = Tensor::zeros({c, h, w});
    std::memcpy(p.bands.data(), raw.data(), want);
    return p;
}

void save_mask(const PlumeMask& mask, const std::string& path) {
    if (static_cast<long>(mask.values.size()) !=
        static_cast<long>(mask.height) * mask.width) {
        throw ShapeError("save_mask: " + std::to_string(mask.values.size()) +
                         " values for " + std::to_string(mask.height) + "x" +
                         std::to_string(mask.width));
    }
    for (std::uint8_t v : mask.values) {
        if (v > 1) throw ValueError("save_mask: mask values must be 0 or 1");
    }
    const std::string stem = strip_ext(path);
    ordered_json j;
    j["magic"] = "PLMMASK1";
    j["channels"] = 1;
    j["height"] = mask.height;
    j["width"] = mask.width;
    j["dtype"] = "u8";
    j["order"] = "CHW";
    j["patch"] = mask.patch_id;
    const std::string header = j.dump(2) + "\n";
    write_file(stem + ".json", header.data(), header.size());
    write_file(stem + ".bin", reinterpret_cast<const char*>(mask.values.data()),
               mask.values.size());
}

PlumeMask load_mask(const std::string& path) {
    const std::string stem = strip_ext(path);
    const ordered_json j = read_json_file(stem + ".json");
    if (!j.contains("magic") || j["magic"] != "PLMMASK1") {
        throw IoError("bad magic in " + stem + ".json, expected PLMMASK1");
    }
    const std::string dtype = j.value("dtype", "");
    if (dtype != "u8") throw IoError("unknown dtype '" + dtype + "' in " + stem + ".json");
    PlumeMask m;
    m.height = j.value("height", 0);
    m.width = j.value("width", 0);
    if (m.height <= 0 || m.width <= 0) {
        throw IoError("mask header: non-positive extents in " + stem + ".json");
    }
    m.patch_id = j.value("patch", std::string());
    const std::vector<char> raw = read_binary_file(stem + ".bin");
    const std::size_t want = static_cast<std::size_t>(m.height) * m.width;
    if (raw.size() != want) {
        throw IoError("payload length mismatch in " + stem + ".bin: expected " +
                      std::to_string(want) + " bytes, got " + std::to_string(raw.size()));
    }
    m.values.assign(raw.begin(), raw.end());
    for (std::uint8_t v : m.values) {
        if (v > 1) throw IoError("mask payload in " + stem + ".bin has values outside 0/1");
    }
    return m;
}

}  // namespace attmetnet::spectral
