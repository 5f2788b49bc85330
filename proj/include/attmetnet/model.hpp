#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "attmetnet/data.hpp"
#include "attmetnet/tensor.hpp"

namespace attmetnet::model {

enum class BlockOrder { conv_relu_bn, conv_bn_relu };

BlockOrder block_order_from_string(const std::string& s);
std::string to_string(BlockOrder order);

struct AttMetNetConfig {
    int in_channels = 13;  // 12 spectral bands, plus the moisture index by default
    int base_filters = 64;
    int depth = 4;
    double att_inter_ratio = 0.5;  // gate bottleneck width as a fraction of the skip width
    BlockOrder block_order = BlockOrder::conv_relu_bn;
};

struct BnParams {
    Tensor gamma;
    Tensor beta;
    BnState state;
};

// 3x3 same-padding conv followed by activation and batch norm (order per config).
struct ConvBlock {
    Tensor kernel;
    Tensor bias;
    BnParams bn;
};

// wx carries no bias; the gate adds its offsets on the gating path and on psi.
struct GateParams {
    Tensor wg_kernel;
    Tensor wg_bias;
    Tensor wx_kernel;
    Tensor psi_kernel;
    Tensor psi_bias;
};

struct EncoderStage {
    ConvBlock conv1;
    ConvBlock conv2;
};

struct DecoderStage {
    Tensor up_kernel;  // 2x2 stride-2 transposed conv, halves channels
    GateParams gate;
    ConvBlock conv1;
    ConvBlock conv2;
};

struct AttMetNetParams {
    AttMetNetConfig config;
    std::vector<EncoderStage> enc;  // enc[0] is the shallowest stage
    EncoderStage bottleneck;
    std::vector<DecoderStage> dec;  // dec[i] consumes the skip from enc[i]
    Tensor head_kernel;
    Tensor head_bias;
};

struct TensorSpec {
    std::string name;
    std::vector<int> shape;
};

// Every tensor's name and shape, in checkpoint manifest order, recomputed
// from the config alone.
std::vector<TensorSpec> shape_audit(const AttMetNetConfig& config);
long param_count(const AttMetNetConfig& config);
// Checks every stored tensor against the audit; throws ShapeError on drift.
void verify_shapes(const AttMetNetParams& params);

// Kaiming-uniform kernels, zero biases, unit gamma / zero beta, fresh running
// stats; fully determined by the seed.
AttMetNetParams build_model(const AttMetNetConfig& config, std::uint64_t seed);
AttMetNetParams clone_params(const AttMetNetParams& params);

void for_each_tensor(AttMetNetParams& params,
                     const std::function<void(const std::string&, Tensor&)>& fn);
// Parameters the optimizer owns; excludes bn running stats.
std::vector<Tensor> trainable_tensors(AttMetNetParams& params);

enum class RunMode { train, eval };

struct ForwardOptions {
    RunMode mode = RunMode::eval;
    bool plain_unet = false;          // bypass the gates, splice skips directly
    bool alpha_override_one = false;  // keep the gates wired but force alpha to 1
};

struct ForwardResult {
    Tensor logits;
    Tensor prob;
    // encN / bottleneck / decN conv outputs, attN alpha maps, logits, prob
    std::map<std::string, Tensor> activations;
};

struct GateResult {
    Tensor gated;  // alpha broadcast onto the skip
    Tensor alpha;  // [N,1,H,W], strictly inside (0,1)
};

// Soft mask from the gating signal and the skip, applied to the skip.
GateResult attention_gate(Graph& g, const Tensor& gating, const Tensor& skip,
                          GateParams& params);

ForwardResult forward(Graph& g, AttMetNetParams& params, const Tensor& x,
                      const ForwardOptions& opt = {});

// Half-pixel-centered bilinear resampling of one plane.
std::vector<double> bilinear_resize(const std::vector<double>& src, int h, int w, int oh,
                                    int ow);

// Gradient-weighted activation map for one conv block output, upsampled to the
// input extent and max-normalized into [0,1]. The target is the logit sum over
// pixels predicted positive, or over all pixels when nothing crosses 0.5.
Tensor gradcam(AttMetNetParams& params, const Tensor& x, const std::string& layer_name);

struct Checkpoint {
    AttMetNetParams params;
    data::Normalization normalization;
};

// <stem>.ckpt.json holds the config, input normalization, and an ordered
// tensor manifest; <stem>.ckpt.bin holds the raw little-endian doubles.
void save_checkpoint(const AttMetNetParams& params, const data::Normalization& norm,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace attmetnet::model
