#include "attmetnet/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "attmetnet/error.hpp"
#include "attmetnet/rng.hpp"

using ordered_json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "checkpoints are little-endian; big-endian hosts unsupported");

namespace attmetnet::model {

BlockOrder block_order_from_string(const std::string& s) {
    if (s == "conv_relu_bn") return BlockOrder::conv_relu_bn;
    if (s == "conv_bn_relu") return BlockOrder::conv_bn_relu;
    throw ValueError("unknown block order '" + s + "'");
}

std::string to_string(BlockOrder order) {
    return order == BlockOrder::conv_relu_bn ? "conv_relu_bn" : "conv_bn_relu";
}

namespace {

void validate_config(const AttMetNetConfig& c) {
    if (c.in_channels < 1) throw ValueError("model config: in_channels must be >= 1");
    if (c.base_filters < 1) throw ValueError("model config: base_filters must be >= 1");
    if (c.depth < 1) throw ValueError("model config: depth must be >= 1");
    if (!(c.att_inter_ratio > 0.0) || c.att_inter_ratio > 1.0) {
        throw ValueError("model config: att_inter_ratio must be in (0,1]");
    }
}

int stage_width(const AttMetNetConfig& c, int stage) { return c.base_filters << (stage - 1); }

int gate_width(const AttMetNetConfig& c, int stage) {
    const int f = static_cast<int>(std::llround(stage_width(c, stage) * c.att_inter_ratio));
    return std::max(1, f);
}

using SlotFn = std::function<void(const std::string&, const std::vector<int>&, Tensor*)>;

void walk_block(const std::string& conv, const std::string& bn, int cout, int cin,
                ConvBlock* b, const SlotFn& fn) {
    fn(conv + ".kernel", {cout, cin, 3, 3}, b ? &b->kernel : nullptr);
    fn(conv + ".bias", {cout}, b ? &b->bias : nullptr);
    fn(bn + ".gamma", {cout}, b ? &b->bn.gamma : nullptr);
    fn(bn + ".beta", {cout}, b ? &b->bn.beta : nullptr);
    fn(bn + ".running_mean", {cout}, b ? &b->bn.state.running_mean : nullptr);
    fn(bn + ".running_var", {cout}, b ? &b->bn.state.running_var : nullptr);
}

// Single source of manifest order: audit, init, IO, and optimizers all walk this.
void walk(const AttMetNetConfig& c, AttMetNetParams* p, const SlotFn& fn) {
    for (int s = 1; s <= c.depth; ++s) {
        const int cin = s == 1 ? c.in_channels : stage_width(c, s - 1);
        const int cout = stage_width(c, s);
        EncoderStage* e = p ? &p->enc[static_cast<std::size_t>(s - 1)] : nullptr;
        const std::string tag = "enc" + std::to_string(s);
        walk_block(tag + ".conv1", tag + ".bn1", cout, cin, e ? &e->conv1 : nullptr, fn);
        walk_block(tag + ".conv2", tag + ".bn2", cout, cout, e ? &e->conv2 : nullptr, fn);
    }
    const int cb = c.base_filters << c.depth;
    EncoderStage* bt = p ? &p->bottleneck : nullptr;
    walk_block("bottleneck.conv1", "bottleneck.bn1", cb, stage_width(c, c.depth),
               bt ? &bt->conv1 : nullptr, fn);
    walk_block("bottleneck.conv2", "bottleneck.bn2", cb, cb, bt ? &bt->conv2 : nullptr, fn);
    for (int s = c.depth; s >= 1; --s) {
        const int cw = stage_width(c, s);
        const int fint = gate_width(c, s);
        DecoderStage* d = p ? &p->dec[static_cast<std::size_t>(s - 1)] : nullptr;
        const std::string dt = "dec" + std::to_string(s);
        const std::string at = "att" + std::to_string(s);
        fn(dt + ".up.kernel", {2 * cw, cw, 2, 2}, d ? &d->up_kernel : nullptr);
        fn(at + ".wg.kernel", {fint, cw, 1, 1}, d ? &d->gate.wg_kernel : nullptr);
        fn(at + ".wg.bias", {fint}, d ? &d->gate.wg_bias : nullptr);
        fn(at + ".wx.kernel", {fint, cw, 1, 1}, d ? &d->gate.wx_kernel : nullptr);
        fn(at + ".psi.kernel", {1, fint, 1, 1}, d ? &d->gate.psi_kernel : nullptr);
        fn(at + ".psi.bias", {1}, d ? &d->gate.psi_bias : nullptr);
        walk_block(dt + ".conv1", dt + ".bn1", cw, 2 * cw, d ? &d->conv1 : nullptr, fn);
        walk_block(dt + ".conv2", dt + ".bn2", cw, cw, d ? &d->conv2 : nullptr, fn);
    }
    fn("head.kernel", {1, stage_width(c, 1), 1, 1}, p ? &p->head_kernel : nullptr);
    fn("head.bias", {1}, p ? &p->head_bias : nullptr);
}

bool ends_with(const std::string& s, const std::string& tail) {
    return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

bool is_running_stat(const std::string& name) {
    return ends_with(name, ".running_mean") || ends_with(name, ".running_var");
}

AttMetNetParams make_skeleton(const AttMetNetConfig& c) {
    validate_config(c);
    AttMetNetParams p;
    p.config = c;
    p.enc.resize(static_cast<std::size_t>(c.depth));
    p.dec.resize(static_cast<std::size_t>(c.depth));
    return p;
}

long numel_of(const std::vector<int>& shape) {
    long n = 1;
    for (int d : shape) n *= d;
    return n;
}

}  // namespace

std::vector<TensorSpec> shape_audit(const AttMetNetConfig& config) {
    validate_config(config);
    std::vector<TensorSpec> out;
    walk(config, nullptr, [&](const std::string& name, const std::vector<int>& shape, Tensor*) {
        out.push_back({name, shape});
    });
    return out;
}

long param_count(const AttMetNetConfig& config) {
    long total = 0;
    for (const auto& spec : shape_audit(config)) total += numel_of(spec.shape);
    return total;
}

void verify_shapes(const AttMetNetParams& params) {
    auto* p = const_cast<AttMetNetParams*>(&params);
    walk(params.config, p, [](const std::string& name, const std::vector<int>& shape, Tensor* t) {
        if (!t->defined()) throw ShapeError("shape audit: " + name + " is missing");
        if (t->shape() != shape) {
            throw ShapeError("shape audit: " + name + " is " + shape_str(t->shape()) +
                             ", expected " + shape_str(shape));
        }
    });
}

AttMetNetParams build_model(const AttMetNetConfig& config, std::uint64_t seed) {
    AttMetNetParams p = make_skeleton(config);
    Rng rng(seed);
    walk(config, &p, [&](const std::string& name, const std::vector<int>& shape, Tensor* t) {
        if (ends_with(name, ".kernel")) {
            const long n = numel_of(shape);
            const long fan_in = n / shape[0];
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            std::vector<double> v(static_cast<std::size_t>(n));
            for (auto& x : v) x = rng.uniform(-bound, bound);
            *t = Tensor::from(shape, std::move(v));
        } else if (ends_with(name, ".gamma") || ends_with(name, ".running_var")) {
            *t = Tensor::full(shape, 1.0);
        } else {
            *t = Tensor::zeros(shape);
        }
        t->set_requires_grad(!is_running_stat(name));
    });
    return p;
}

AttMetNetParams clone_params(const AttMetNetParams& params) {
    AttMetNetParams out = params;
    walk(out.config, &out, [](const std::string&, const std::vector<int>&, Tensor* t) {
        *t = t->clone();
    });
    return out;
}

void for_each_tensor(AttMetNetParams& params,
                     const std::function<void(const std::string&, Tensor&)>& fn) {
    walk(params.config, &params,
         [&](const std::string& name, const std::vector<int>&, Tensor* t) { fn(name, *t); });
}

std::vector<Tensor> trainable_tensors(AttMetNetParams& params) {
    std::vector<Tensor> out;
    for_each_tensor(params, [&](const std::string& name, Tensor& t) {
        if (!is_running_stat(name)) out.push_back(t);
    });
    return out;
}

namespace {

Tensor conv_block(Graph& g, Tensor x, ConvBlock& b, BlockOrder order, BnMode mode) {
    Tensor y = g.conv2d(std::move(x), b.kernel, b.bias, 1, 1);
    if (order == BlockOrder::conv_relu_bn) {
        y = g.relu(y);
        y = g.batchnorm2d(y, b.bn.gamma, b.bn.beta, b.bn.state, mode);
    } else {
        y = g.batchnorm2d(y, b.bn.gamma, b.bn.beta, b.bn.state, mode);
        y = g.relu(y);
    }
    return y;
}

}  // namespace

GateResult attention_gate(Graph& g, const Tensor& gating, const Tensor& skip,
                          GateParams& params) {
    if (gating.ndim() != 4 || skip.ndim() != 4 || gating.shape()[0] != skip.shape()[0] ||
        gating.shape()[2] != skip.shape()[2] || gating.shape()[3] != skip.shape()[3]) {
        throw ShapeError("attention gate: gating " + shape_str(gating.shape()) +
                         " and skip " + shape_str(skip.shape()) + " do not line up");
    }
    const int fint = params.wg_kernel.shape()[0];
    Tensor tg = g.conv2d(gating, params.wg_kernel, params.wg_bias, 1, 0);
    Tensor tx = g.conv2d(skip, params.wx_kernel, Tensor::zeros({fint}), 1, 0);
    Tensor pre = g.relu(g.add_ew(tg, tx));
    GateResult out;
    out.alpha = g.sigmoid(g.conv2d(pre, params.psi_kernel, params.psi_bias, 1, 0));
    out.gated = g.mul_bcast(out.alpha, skip);
    return out;
}

ForwardResult forward(Graph& g, AttMetNetParams& params, const Tensor& x,
                      const ForwardOptions& opt) {
    const AttMetNetConfig& cfg = params.config;
    if (x.ndim() != 4) {
        throw ShapeError("forward: input must be [N,C,H,W], got " + shape_str(x.shape()));
    }
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (c != cfg.in_channels) {
        throw ShapeError("forward: input has " + std::to_string(c) +
                         " channels, the model expects " + std::to_string(cfg.in_channels));
    }
    const int div = 1 << cfg.depth;
    if (h % div != 0 || w % div != 0 || h < div || w < div) {
        throw ShapeError("forward: extent " + std::to_string(h) + "x" + std::to_string(w) +
                         " does not divide by the " + std::to_string(div) + "x pooling chain");
    }
    const BnMode bn_mode = opt.mode == RunMode::train ? BnMode::train : BnMode::eval;

    ForwardResult out;
    std::vector<Tensor> skips;
    Tensor cur = x;
    for (int s = 1; s <= cfg.depth; ++s) {
        EncoderStage& st = params.enc[static_cast<std::size_t>(s - 1)];
        Tensor f = conv_block(g, cur, st.conv1, cfg.block_order, bn_mode);
        f = conv_block(g, f, st.conv2, cfg.block_order, bn_mode);
        out.activations["enc" + std::to_string(s)] = f;
        skips.push_back(f);
        cur = g.maxpool2d(f);
    }
    cur = conv_block(g, cur, params.bottleneck.conv1, cfg.block_order, bn_mode);
    cur = conv_block(g, cur, params.bottleneck.conv2, cfg.block_order, bn_mode);
    out.activations["bottleneck"] = cur;

    for (int s = cfg.depth; s >= 1; --s) {
        DecoderStage& st = params.dec[static_cast<std::size_t>(s - 1)];
        Tensor up = g.conv_transpose2d(cur, st.up_kernel, 2);
        Tensor skip = skips[static_cast<std::size_t>(s - 1)];
        Tensor gated;
        if (opt.plain_unet) {
            gated = skip;
        } else if (opt.alpha_override_one) {
            Tensor alpha = Tensor::full({n, 1, up.shape()[2], up.shape()[3]}, 1.0);
            out.activations["att" + std::to_string(s)] = alpha;
            gated = g.mul_bcast(alpha, skip);
        } else {
            GateResult gate = attention_gate(g, up, skip, st.gate);
            out.activations["att" + std::to_string(s)] = gate.alpha;
            gated = gate.gated;
        }
        cur = g.concat_channels(gated, up);
        cur = conv_block(g, cur, st.conv1, cfg.block_order, bn_mode);
        cur = conv_block(g, cur, st.conv2, cfg.block_order, bn_mode);
        out.activations["dec" + std::to_string(s)] = cur;
    }
    out.logits = g.conv2d(cur, params.head_kernel, params.head_bias, 1, 0);
    out.prob = g.sigmoid(out.logits);
    out.activations["logits"] = out.logits;
    out.activations["prob"] = out.prob;
    return out;
}

std::vector<double> bilinear_resize(const std::vector<double>& src, int h, int w, int oh,
                                    int ow) {
    if (h < 1 || w < 1 || oh < 1 || ow < 1 ||
        static_cast<long>(src.size()) != static_cast<long>(h) * w) {
        throw ShapeError("bilinear_resize: bad extents");
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    const double sy = static_cast<double>(h) / oh;
    const double sx = static_cast<double>(w) / ow;
    for (int y = 0; y < oh; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const double ty = fy - y0;
        for (int xo = 0; xo < ow; ++xo) {
            double fx = (xo + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const double tx = fx - x0;
            const double top = (1.0 - tx) * src[static_cast<std::size_t>(y0 * w + x0)] +
                               tx * src[static_cast<std::size_t>(y0 * w + x1)];
            const double bot = (1.0 - tx) * src[static_cast<std::size_t>(y1 * w + x0)] +
                               tx * src[static_cast<std::size_t>(y1 * w + x1)];
            out[static_cast<std::size_t>(y) * ow + xo] = (1.0 - ty) * top + ty * bot;
        }
    }
    return out;
}

Tensor gradcam(AttMetNetParams& params, const Tensor& x, const std::string& layer_name) {
    if (x.ndim() != 4 || x.shape()[0] != 1) {
        throw ShapeError("gradcam: expected a [1,C,H,W] input, got " + shape_str(x.shape()));
    }
    bool known = layer_name == "bottleneck";
    for (int s = 1; s <= params.config.depth; ++s) {
        known = known || layer_name == "enc" + std::to_string(s) ||
                layer_name == "dec" + std::to_string(s);
    }
    if (!known) {
        throw ValueError("gradcam: '" + layer_name + "' is not a conv block output");
    }

    Tensor input = x.clone();
    input.set_requires_grad(true);
    Graph g;
    ForwardResult res = forward(g, params, input, {});

    Tensor mask = Tensor::zeros(res.prob.shape());
    long hits = 0;
    for (long i = 0; i < res.prob.numel(); ++i) {
        if (res.prob.data()[i] > 0.5) {
            mask.data()[i] = 1.0;
            ++hits;
        }
    }
    // with nothing past 0.5 the map explains the whole logit field instead
    Tensor target = hits > 0 ? g.sum(g.mul_ew(res.logits, mask)) : g.sum(res.logits);
    g.backward(target);

    Tensor act = res.activations.at(layer_name);
    const int k = act.shape()[1], ah = act.shape()[2], aw = act.shape()[3];
    const long hw = static_cast<long>(ah) * aw;
    std::vector<double> heat(static_cast<std::size_t>(hw), 0.0);
    for (int ch = 0; ch < k; ++ch) {
        const double* a = act.data() + ch * hw;
        const double* da = act.grad() + ch * hw;
        double wsum = 0.0;
        for (long i = 0; i < hw; ++i) wsum += da[i];
        const double wk = wsum / static_cast<double>(hw);
        for (long i = 0; i < hw; ++i) heat[static_cast<std::size_t>(i)] += wk * a[i];
    }
    for (auto& v : heat) v = std::max(v, 0.0);

    const int h = x.shape()[2], w = x.shape()[3];
    std::vector<double> up = bilinear_resize(heat, ah, aw, h, w);
    double mx = 0.0;
    for (double v : up) mx = std::max(mx, v);
    if (mx > 0.0) {
        for (auto& v : up) v /= mx;
    }
    return Tensor::from({h, w}, std::move(up));
}

namespace {

std::string ckpt_stem(const std::string& path) {
    for (const char* tail : {".ckpt.json", ".ckpt.bin", ".ckpt"}) {
        const std::string t(tail);
        if (ends_with(path, t)) return path.substr(0, path.size() - t.size());
    }
    return path;
}

}  // namespace

void save_checkpoint(const AttMetNetParams& params, const data::Normalization& norm,
                     const std::string& path) {
    verify_shapes(params);
    const std::string stem = ckpt_stem(path);
    std::ofstream bin(stem + ".ckpt.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("cannot open " + stem + ".ckpt.bin for writing");

    ordered_json j;
    j["format"] = "attmetnet-ckpt-1";
    j["config"] = {{"in_channels", params.config.in_channels},
                   {"base_filters", params.config.base_filters},
                   {"depth", params.config.depth},
                   {"att_inter_ratio", params.config.att_inter_ratio},
                   {"block_order", to_string(params.config.block_order)}};
    if (!norm.empty()) {
        j["normalization"] = {{"band_names", norm.band_names},
                              {"mean", norm.mean},
                              {"std", norm.stddev}};
    }
    ordered_json manifest = ordered_json::array();
    long offset = 0;
    auto* p = const_cast<AttMetNetParams*>(&params);
    walk(params.config, p, [&](const std::string& name, const std::vector<int>& shape, Tensor* t) {
        manifest.push_back({{"name", name}, {"shape", shape}, {"offset", offset}});
        const long bytes = t->numel() * static_cast<long>(sizeof(double));
        bin.write(reinterpret_cast<const char*>(t->data()), bytes);
        offset += bytes;
    });
    if (!bin) throw IoError("short write to " + stem + ".ckpt.bin");
    j["tensors"] = std::move(manifest);

    std::ofstream js(stem + ".ckpt.json", std::ios::trunc);
    if (!js) throw IoError("cannot open " + stem + ".ckpt.json for writing");
    js << j.dump(2) << "\n";
    if (!js) throw IoError("short write to " + stem + ".ckpt.json");
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string stem = ckpt_stem(path);
    std::ifstream js(stem + ".ckpt.json");
    if (!js) throw IoError("cannot open " + stem + ".ckpt.json");
    ordered_json j;
    try {
        js >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint " + stem + ".ckpt.json: " + std::string(e.what()));
    }
    if (j.value("format", std::string()) != "attmetnet-ckpt-1") {
        throw IoError("checkpoint " + stem + ": unknown format tag");
    }
    Checkpoint out;
    try {
        const auto& jc = j.at("config");
        out.params.config.in_channels = jc.at("in_channels").get<int>();
        out.params.config.base_filters = jc.at("base_filters").get<int>();
        out.params.config.depth = jc.at("depth").get<int>();
        out.params.config.att_inter_ratio = jc.at("att_inter_ratio").get<double>();
        out.params.config.block_order =
            block_order_from_string(jc.at("block_order").get<std::string>());
        if (j.contains("normalization")) {
            const auto& jn = j.at("normalization");
            out.normalization.band_names = jn.at("band_names").get<std::vector<std::string>>();
            out.normalization.mean = jn.at("mean").get<std::vector<double>>();
            out.normalization.stddev = jn.at("std").get<std::vector<double>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint " + stem + ": " + std::string(e.what()));
    }

    const auto specs = shape_audit(out.params.config);
    if (!j.contains("tensors") || !j["tensors"].is_array() || j["tensors"].size() != specs.size()) {
        throw IoError("checkpoint " + stem + ": tensor manifest does not match the config");
    }
    std::ifstream bin(stem + ".ckpt.bin", std::ios::binary);
    if (!bin) throw IoError("cannot open " + stem + ".ckpt.bin");

    AttMetNetParams p = make_skeleton(out.params.config);
    long offset = 0;
    std::size_t idx = 0;
    walk(p.config, &p, [&](const std::string& name, const std::vector<int>& shape, Tensor* t) {
        const auto& entry = j["tensors"][idx];
        if (entry.value("name", std::string()) != name ||
            entry.value("shape", std::vector<int>{}) != shape ||
            entry.value("offset", -1L) != offset) {
            throw IoError("checkpoint " + stem + ": manifest entry " + std::to_string(idx) +
                          " does not match " + name);
        }
        *t = Tensor::zeros(shape);
        const long bytes = t->numel() * static_cast<long>(sizeof(double));
        bin.read(reinterpret_cast<char*>(t->data()), bytes);
        t->set_requires_grad(!is_running_stat(name));
        offset += bytes;
        ++idx;
    });
    if (!bin || bin.gcount() == 0) throw IoError("checkpoint " + stem + ": payload truncated");
    bin.peek();
    if (!bin.eof()) throw IoError("checkpoint " + stem + ": trailing payload bytes");
    out.params = std::move(p);
    return out;
}

}  // namespace attmetnet::model
