#pragma once

#include <string>

#include "attmetnet/tensor.hpp"

namespace attmetnet::loss {

// Probabilities are clamped to [eps, 1-eps] before any log.
inline constexpr double kProbClamp = 1e-7;

enum class LossKind { focal, bce, weighted_bce };

LossKind loss_kind_from_string(const std::string& s);
std::string to_string(LossKind k);

struct LossConfig {
    LossKind kind = LossKind::focal;
    double alpha = 0.75;
    double gamma = 2.0;
    double pos_weight = 3.0;  // weighted_bce only
};

// All losses take probabilities and a same-shape 0/1 target, reduce by mean
// over every pixel in the batch, and differentiate wrt pred only.
Tensor focal_loss(Graph& g, Tensor pred, Tensor target, double alpha = 0.75,
                  double gamma = 2.0);
Tensor bce_loss(Graph& g, Tensor pred, Tensor target);
Tensor weighted_bce_loss(Graph& g, Tensor pred, Tensor target, double pos_weight);

Tensor make_loss(Graph& g, const LossConfig& cfg, Tensor pred, Tensor target);

}  // namespace attmetnet::loss
