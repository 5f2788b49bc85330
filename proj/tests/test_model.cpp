#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "attmetnet/error.hpp"
#include "attmetnet/model.hpp"
#include "attmetnet/rng.hpp"

using namespace attmetnet;
using namespace attmetnet::model;
namespace fs = std::filesystem;

namespace {

AttMetNetConfig reduced_config() {
    AttMetNetConfig c;
    c.in_channels = 4;
    c.base_filters = 4;
    c.depth = 2;
    return c;
}

Tensor random_input(int n, int c, int h, int w, Rng& rng) {
    Tensor x = Tensor::zeros({n, c, h, w});
    for (long i = 0; i < x.numel(); ++i) x.data()[i] = rng.gaussian();
    return x;
}

std::map<std::string, Tensor> named(AttMetNetParams& p) {
    std::map<std::string, Tensor> out;
    for_each_tensor(p, [&](const std::string& name, Tensor& t) { out.emplace(name, t); });
    return out;
}

bool same_bits(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (long i = 0; i < a.numel(); ++i) {
        if (a.data()[i] != b.data()[i]) return false;
    }
    return true;
}

long numel_of(const std::vector<int>& shape) {
    long n = 1;
    for (int d : shape) n *= d;
    return n;
}

struct TmpDir {
    fs::path path;
    TmpDir() {
        path = fs::temp_directory_path() / ("attmetnet_model_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string stem(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("shape audit pins the architecture") {
    AttMetNetConfig c;
    const auto audit = shape_audit(c);
    REQUIRE(!audit.empty());
    CHECK(audit.front().name == "enc1.conv1.kernel");
    CHECK(audit.front().shape == std::vector<int>{64, 13, 3, 3});
    CHECK(audit.back().name == "head.bias");

    std::map<std::string, std::vector<int>> by_name;
    for (const auto& s : audit) by_name[s.name] = s.shape;
    CHECK(by_name.at("enc2.conv2.kernel") == std::vector<int>{128, 128, 3, 3});
    CHECK(by_name.at("enc3.conv2.kernel") == std::vector<int>{256, 256, 3, 3});
    CHECK(by_name.at("enc4.conv2.kernel") == std::vector<int>{512, 512, 3, 3});
    CHECK(by_name.at("bottleneck.conv1.kernel") == std::vector<int>{1024, 512, 3, 3});
    CHECK(by_name.at("dec4.up.kernel") == std::vector<int>{1024, 512, 2, 2});
    CHECK(by_name.at("att4.wg.kernel") == std::vector<int>{256, 512, 1, 1});
    CHECK(by_name.at("att1.psi.kernel") == std::vector<int>{1, 32, 1, 1});
    CHECK(by_name.at("dec1.conv1.kernel") == std::vector<int>{64, 128, 3, 3});
    CHECK(by_name.at("head.kernel") == std::vector<int>{1, 64, 1, 1});

    CHECK(param_count(c) == 31409221L);
    long trainable = 0;
    for (const auto& s : audit) {
        if (s.name.find(".running_") == std::string::npos) trainable += numel_of(s.shape);
    }
    CHECK(trainable == 31397445L);

    SUBCASE("dropping the index band only narrows the first kernel") {
        AttMetNetConfig c12 = c;
        c12.in_channels = 12;
        const auto a12 = shape_audit(c12);
        CHECK(a12.front().shape == std::vector<int>{64, 12, 3, 3});
        CHECK(param_count(c12) == 31408645L);
    }
    SUBCASE("width-reduced test model") {
        CHECK(param_count(reduced_config()) == 7907L);
    }
    SUBCASE("invalid configs are rejected") {
        AttMetNetConfig bad;
        bad.in_channels = 0;
        CHECK_THROWS_AS(shape_audit(bad), ValueError);
        bad = AttMetNetConfig{};
        bad.depth = 0;
        CHECK_THROWS_AS(shape_audit(bad), ValueError);
        bad = AttMetNetConfig{};
        bad.att_inter_ratio = 0.0;
        CHECK_THROWS_AS(shape_audit(bad), ValueError);
        bad = AttMetNetConfig{};
        bad.att_inter_ratio = 1.5;
        CHECK_THROWS_AS(shape_audit(bad), ValueError);
        bad = AttMetNetConfig{};
        bad.base_filters = -1;
        CHECK_THROWS_AS(shape_audit(bad), ValueError);
    }
}

TEST_CASE("initialization is seeded and follows the scheme") {
    auto a = build_model(reduced_config(), 7);
    auto b = build_model(reduced_config(), 7);
    auto c = build_model(reduced_config(), 8);
    auto na = named(a), nb = named(b), nc = named(c);
    bool all_equal = true, any_diff_seed = false;
    for (auto& [name, t] : na) {
        all_equal = all_equal && same_bits(t, nb.at(name));
        if (name.find(".kernel") != std::string::npos) {
            any_diff_seed = any_diff_seed || !same_bits(t, nc.at(name));
        }
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);

    const Tensor& k = a.enc[0].conv1.kernel;
    const double bound = std::sqrt(6.0 / (4.0 * 9.0));
    double peak = 0.0;
    for (long i = 0; i < k.numel(); ++i) {
        CHECK(std::abs(k.data()[i]) < bound);
        peak = std::max(peak, std::abs(k.data()[i]));
    }
    CHECK(peak > 0.5 * bound);

    for (auto& [name, t] : na) {
        if (name.find(".bias") != std::string::npos ||
            name.find(".beta") != std::string::npos ||
            name.find(".running_mean") != std::string::npos) {
            for (long i = 0; i < t.numel(); ++i) CHECK(t.data()[i] == 0.0);
        }
        if (name.find(".gamma") != std::string::npos ||
            name.find(".running_var") != std::string::npos) {
            for (long i = 0; i < t.numel(); ++i) CHECK(t.data()[i] == 1.0);
        }
        CHECK(t.requires_grad() == (name.find(".running_") == std::string::npos));
    }

    CHECK_NOTHROW(verify_shapes(a));
    a.head_bias = Tensor::zeros({2});
    CHECK_THROWS_AS(verify_shapes(a), ShapeError);

    SUBCASE("trainable set excludes running stats") {
        auto model = build_model(reduced_config(), 3);
        const auto train = trainable_tensors(model);
        long total = 0;
        for (const auto& t : train) total += t.numel();
        long want = 0;
        for (const auto& s : shape_audit(reduced_config())) {
            if (s.name.find(".running_") == std::string::npos) want += numel_of(s.shape);
        }
        CHECK(total == want);
    }
}

TEST_CASE("attention gate matches a composed scalar oracle") {
    Rng rng(21);
    const int n = 2, cg = 3, cx = 3, fint = 2, h = 5, w = 6;
    GateParams gp;
    gp.wg_kernel = random_input(fint, cg, 1, 1, rng);
    gp.wg_bias = Tensor::zeros({fint});
    gp.wg_bias.data()[0] = 0.3;
    gp.wg_bias.data()[1] = -0.2;
    gp.wx_kernel = random_input(fint, cx, 1, 1, rng);
    gp.psi_kernel = random_input(1, fint, 1, 1, rng);
    gp.psi_bias = Tensor::full({1}, 0.1);

    const Tensor gating = random_input(n, cg, h, w, rng);
    const Tensor skip = random_input(n, cx, h, w, rng);
    Graph g;
    const auto res = attention_gate(g, gating, skip, gp);
    REQUIRE(res.alpha.shape() == std::vector<int>{n, 1, h, w});
    REQUIRE(res.gated.shape() == std::vector<int>{n, cx, h, w});

    const long hw = h * w;
    for (int b = 0; b < n; ++b) {
        for (long i = 0; i < hw; ++i) {
            double z = 0.1;
            for (int f = 0; f < fint; ++f) {
                double pre = gp.wg_bias.data()[f];
                for (int ch = 0; ch < cg; ++ch) {
                    pre += gp.wg_kernel.data()[f * cg + ch] *
                           gating.data()[(b * cg + ch) * hw + i];
                }
                for (int ch = 0; ch < cx; ++ch) {
                    pre += gp.wx_kernel.data()[f * cx + ch] *
                           skip.data()[(b * cx + ch) * hw + i];
                }
                z += gp.psi_kernel.data()[f] * std::max(pre, 0.0);
            }
            const double alpha = 1.0 / (1.0 + std::exp(-z));
            CHECK(res.alpha.data()[b * hw + i] ==
                  doctest::Approx(alpha).epsilon(1e-12));
            for (int ch = 0; ch < cx; ++ch) {
                const long at = (b * cx + ch) * hw + i;
                CHECK(res.gated.data()[at] ==
                      doctest::Approx(alpha * skip.data()[at]).epsilon(1e-12));
            }
        }
    }

    SUBCASE("alpha stays strictly inside the unit interval") {
        for (long i = 0; i < res.alpha.numel(); ++i) {
            CHECK(res.alpha.data()[i] > 0.0);
            CHECK(res.alpha.data()[i] < 1.0);
        }
    }
    SUBCASE("mismatched extents are rejected") {
        Graph g2;
        const Tensor small = random_input(n, cg, 4, 4, rng);
        CHECK_THROWS_AS(attention_gate(g2, small, skip, gp), ShapeError);
    }
}

TEST_CASE("zeroed psi pins alpha at one half") {
    Rng rng(22);
    GateParams gp;
    gp.wg_kernel = random_input(2, 3, 1, 1, rng);
    gp.wg_bias = Tensor::zeros({2});
    gp.wx_kernel = random_input(2, 3, 1, 1, rng);
    gp.psi_kernel = Tensor::zeros({1, 2, 1, 1});
    gp.psi_bias = Tensor::zeros({1});
    const Tensor gating = random_input(1, 3, 4, 4, rng);
    const Tensor skip = random_input(1, 3, 4, 4, rng);
    Graph g;
    const auto res = attention_gate(g, gating, skip, gp);
    for (long i = 0; i < res.alpha.numel(); ++i) CHECK(res.alpha.data()[i] == 0.5);
    for (long i = 0; i < skip.numel(); ++i) {
        CHECK(res.gated.data()[i] == 0.5 * skip.data()[i]);
    }
}

TEST_CASE("full-width forward obeys the published shape chain") {
    AttMetNetConfig c;
    auto p = build_model(c, 1);
    Rng rng(23);
    const Tensor x = random_input(1, 13, 128, 128, rng);
    Graph g;
    const auto res = forward(g, p, x, {});

    REQUIRE(res.prob.shape() == std::vector<int>{1, 1, 128, 128});
    for (long i = 0; i < res.prob.numel(); ++i) {
        CHECK(res.prob.data()[i] > 0.0);
        CHECK(res.prob.data()[i] < 1.0);
    }
    const std::map<std::string, std::vector<int>> want = {
        {"enc1", {1, 64, 128, 128}},  {"enc2", {1, 128, 64, 64}},
        {"enc3", {1, 256, 32, 32}},   {"enc4", {1, 512, 16, 16}},
        {"bottleneck", {1, 1024, 8, 8}}, {"dec4", {1, 512, 16, 16}},
        {"dec3", {1, 256, 32, 32}},   {"dec2", {1, 128, 64, 64}},
        {"dec1", {1, 64, 128, 128}},  {"att4", {1, 1, 16, 16}},
        {"att1", {1, 1, 128, 128}},   {"logits", {1, 1, 128, 128}},
    };
    for (const auto& [name, shape] : want) {
        REQUIRE(res.activations.count(name) == 1);
        CHECK(res.activations.at(name).shape() == shape);
    }
}

TEST_CASE("zero head emits one half everywhere") {
    auto p = build_model(reduced_config(), 2);
    p.head_kernel = Tensor::zeros(p.head_kernel.shape());
    p.head_bias = Tensor::zeros(p.head_bias.shape());
    Rng rng(24);
    const Tensor x = random_input(2, 4, 16, 16, rng);
    Graph g;
    const auto res = forward(g, p, x, {});
    for (long i = 0; i < res.prob.numel(); ++i) CHECK(res.prob.data()[i] == 0.5);
}

TEST_CASE("forced-open gates reproduce the plain skip path bit for bit") {
    auto p = build_model(reduced_config(), 3);
    Rng rng(25);
    const Tensor x = random_input(2, 4, 16, 16, rng);

    Graph g1, g2, g3;
    ForwardOptions ones;
    ones.alpha_override_one = true;
    ForwardOptions plain;
    plain.plain_unet = true;
    const auto r_ones = forward(g1, p, x, ones);
    const auto r_plain = forward(g2, p, x, plain);
    const auto r_gated = forward(g3, p, x, {});

    CHECK(same_bits(r_ones.prob, r_plain.prob));
    CHECK(same_bits(r_ones.logits, r_plain.logits));
    CHECK_FALSE(same_bits(r_gated.prob, r_plain.prob));
    CHECK(r_plain.activations.count("att1") == 0);
    CHECK(r_ones.activations.count("att1") == 1);
}

TEST_CASE("eval forward is pure, train forward moves the running stats") {
    auto p = build_model(reduced_config(), 4);
    Rng rng(26);
    const Tensor x = random_input(2, 4, 16, 16, rng);

    const Tensor rm_before = p.enc[0].conv1.bn.state.running_mean.clone();
    Graph g1, g2;
    const auto r1 = forward(g1, p, x, {});
    const auto r2 = forward(g2, p, x, {});
    CHECK(same_bits(r1.prob, r2.prob));
    CHECK(same_bits(rm_before, p.enc[0].conv1.bn.state.running_mean));

    ForwardOptions train;
    train.mode = RunMode::train;
    Graph g3;
    (void)forward(g3, p, x, train);
    CHECK_FALSE(same_bits(rm_before, p.enc[0].conv1.bn.state.running_mean));
}

TEST_CASE("end-to-end gradients agree with finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto p = build_model(reduced_config(), 100 + seed);
        auto f = [&p](Graph& g, const Tensor& x) {
            return g.sum(forward(g, p, x, {}).prob);
        };
        Rng rng(seed);
        const Tensor x = random_input(1, 4, 16, 16, rng);
        CHECK(grad_check(f, x, 1e-6) < 1e-5);
    }

    SUBCASE("same bound holds for first-layer and head kernels") {
        auto p = build_model(reduced_config(), 200);
        Rng rng(9);
        const Tensor x = random_input(1, 4, 16, 16, rng);
        auto through_first = [&](Graph& g, const Tensor& k) {
            p.enc[0].conv1.kernel = k;
            return g.sum(forward(g, p, x, {}).prob);
        };
        CHECK(grad_check(through_first, p.enc[0].conv1.kernel.clone(), 1e-6) < 1e-5);
        auto through_head = [&](Graph& g, const Tensor& k) {
            p.head_kernel = k;
            return g.sum(forward(g, p, x, {}).prob);
        };
        CHECK(grad_check(through_head, p.head_kernel.clone(), 1e-6) < 1e-5);
    }
}

TEST_CASE("bilinear resize fundamentals") {
    const std::vector<double> src = {0.0, 1.0, 2.0, 3.0};
    SUBCASE("identity at equal extents") {
        CHECK(bilinear_resize(src, 2, 2, 2, 2) == src);
    }
    SUBCASE("constants stay constant") {
        const std::vector<double> flat(12, 0.7);
        for (double v : bilinear_resize(flat, 3, 4, 7, 9)) CHECK(v == doctest::Approx(0.7));
    }
    SUBCASE("single pixel broadcasts") {
        for (double v : bilinear_resize({2.5}, 1, 1, 3, 3)) CHECK(v == 2.5);
    }
    SUBCASE("2x2 to 4x4 hand values") {
        const auto up = bilinear_resize(src, 2, 2, 4, 4);
        CHECK(up[0] == 0.0);
        CHECK(up[3] == 1.0);
        CHECK(up[12] == 2.0);
        CHECK(up[15] == 3.0);
        const double want = 0.75 * 0.75 * 0.0 + 0.75 * 0.25 * 1.0 +
                            0.25 * 0.75 * 2.0 + 0.25 * 0.25 * 3.0;
        CHECK(up[5] == doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("bad extents are rejected") {
        CHECK_THROWS_AS(bilinear_resize(src, 3, 2, 2, 2), ShapeError);
        CHECK_THROWS_AS(bilinear_resize(src, 2, 2, 0, 2), ShapeError);
    }
}

TEST_CASE("gradcam localizes, normalizes, and validates") {
    auto p = build_model(reduced_config(), 5);
    Rng rng(27);
    const Tensor x = random_input(1, 4, 16, 16, rng);

    for (const char* layer : {"dec1", "enc2", "bottleneck"}) {
        const Tensor heat = gradcam(p, x, layer);
        REQUIRE(heat.shape() == std::vector<int>{16, 16});
        double mx = 0.0;
        for (long i = 0; i < heat.numel(); ++i) {
            CHECK(heat.data()[i] >= 0.0);
            CHECK(heat.data()[i] <= 1.0);
            mx = std::max(mx, heat.data()[i]);
        }
        CHECK((mx == 0.0 || mx == 1.0));
    }

    SUBCASE("an all-zero model yields an all-zero map, not NaN") {
        auto z = build_model(reduced_config(), 6);
        for_each_tensor(z, [](const std::string&, Tensor& t) {
            t = Tensor::zeros(t.shape());
        });
        const Tensor heat = gradcam(z, x, "dec1");
        for (long i = 0; i < heat.numel(); ++i) CHECK(heat.data()[i] == 0.0);
    }
    SUBCASE("layer and input validation") {
        CHECK_THROWS_AS(gradcam(p, x, "enc9"), ValueError);
        CHECK_THROWS_AS(gradcam(p, x, "att1"), ValueError);
        CHECK_THROWS_AS(gradcam(p, x, "logits"), ValueError);
        CHECK_THROWS_AS(gradcam(p, x, "prob"), ValueError);
        Rng r2(1);
        const Tensor batch2 = random_input(2, 4, 16, 16, r2);
        CHECK_THROWS_AS(gradcam(p, batch2, "dec1"), ShapeError);
    }
}

TEST_CASE("checkpoints round-trip bit for bit") {
    TmpDir tmp;
    auto p = build_model(reduced_config(), 11);
    // nudge running stats away from init so they round-trip nontrivially
    Rng rng(28);
    const Tensor x = random_input(2, 4, 16, 16, rng);
    ForwardOptions train;
    train.mode = RunMode::train;
    Graph g;
    (void)forward(g, p, x, train);

    data::Normalization norm;
    norm.band_names = {"B11", "B12", "B8A", "NDMI"};
    norm.mean = {0.1, 0.2, 0.3, -0.05};
    norm.stddev = {1.0, 2.0, 3.0, 0.5};
    save_checkpoint(p, norm, tmp.stem("m"));

    auto loaded = load_checkpoint(tmp.stem("m.ckpt.json"));
    CHECK(loaded.params.config.in_channels == 4);
    CHECK(loaded.params.config.base_filters == 4);
    CHECK(loaded.params.config.depth == 2);
    CHECK(loaded.normalization.band_names == norm.band_names);
    CHECK(loaded.normalization.mean == norm.mean);
    CHECK(loaded.normalization.stddev == norm.stddev);

    auto na = named(p), nb = named(loaded.params);
    REQUIRE(na.size() == nb.size());
    for (auto& [name, t] : na) {
        CHECK(same_bits(t, nb.at(name)));
        CHECK(t.requires_grad() == nb.at(name).requires_grad());
    }

    Graph ga, gb;
    const auto ra = forward(ga, p, x, {});
    const auto rb = forward(gb, loaded.params, x, {});
    CHECK(same_bits(ra.prob, rb.prob));

    SUBCASE("corruption and truncation are detected") {
        CHECK_THROWS_AS(load_checkpoint(tmp.stem("absent")), IoError);

        std::ifstream in(tmp.stem("m.ckpt.json"));
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        in.close();
        const auto at = text.find("enc1.conv1.kernel");
        REQUIRE(at != std::string::npos);
        std::string tampered = text;
        tampered.replace(at, 4, "encX");
        {
            fs::copy_file(tmp.stem("m.ckpt.bin"), tmp.stem("t.ckpt.bin"));
            std::ofstream out(tmp.stem("t.ckpt.json"));
            out << tampered;
        }
        CHECK_THROWS_AS(load_checkpoint(tmp.stem("t")), IoError);

        {
            fs::copy_file(tmp.stem("m.ckpt.json"), tmp.stem("u.ckpt.json"));
            std::ofstream out(tmp.stem("u.ckpt.bin"), std::ios::binary);
            out << "short";
        }
        CHECK_THROWS_AS(load_checkpoint(tmp.stem("u")), IoError);

        {
            fs::copy_file(tmp.stem("m.ckpt.json"), tmp.stem("v.ckpt.json"));
            fs::copy_file(tmp.stem("m.ckpt.bin"), tmp.stem("v.ckpt.bin"));
            std::ofstream out(tmp.stem("v.ckpt.bin"), std::ios::binary | std::ios::app);
            const double extra = 1.0;
            out.write(reinterpret_cast<const char*>(&extra), sizeof extra);
        }
        CHECK_THROWS_AS(load_checkpoint(tmp.stem("v")), IoError);
    }
}

TEST_CASE("forward validates its input") {
    auto p = build_model(reduced_config(), 12);
    Rng rng(29);
    Graph g;
    const Tensor wrong_c = random_input(1, 3, 16, 16, rng);
    CHECK_THROWS_AS(forward(g, p, wrong_c, {}), ShapeError);
    const Tensor odd = random_input(1, 4, 18, 18, rng);
    CHECK_THROWS_AS(forward(g, p, odd, {}), ShapeError);
    const Tensor flat = Tensor::zeros({4, 16, 16});
    CHECK_THROWS_AS(forward(g, p, flat, {}), ShapeError);
    const Tensor tiny = random_input(1, 4, 2, 2, rng);
    CHECK_THROWS_AS(forward(g, p, tiny, {}), ShapeError);
}
