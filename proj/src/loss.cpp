#include "attmetnet/loss.hpp"

#include <cmath>
#include <memory>

#include "attmetnet/error.hpp"

namespace attmetnet::loss {

namespace {

void check_shapes(const char* op, const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError(std::string(op) + ": pred shape " + shape_str(pred.shape()) +
                         " does not match target shape " + shape_str(target.shape()));
    }
}

inline double clamp_prob(double p) {
    if (p < kProbClamp) return kProbClamp;
    if (p > 1.0 - kProbClamp) return 1.0 - kProbClamp;
    return p;
}

struct FocalLossNode final : Node {
    Tensor target;
    double alpha, gamma;
    FocalLossNode(Tensor pred, Tensor target_, double alpha_, double gamma_)
        : target(std::move(target_)), alpha(alpha_), gamma(gamma_) {
        inputs = {std::move(pred)};
        const Tensor& p = inputs[0];
        const long n = p.numel();
        double acc = 0.0;
        for (long i = 0; i < n; ++i) {
            const bool pos = target.data()[i] > 0.5;
            const double pc = clamp_prob(p.data()[i]);
            const double pt = pos ? pc : 1.0 - pc;
            const double at = pos ? alpha : 1.0 - alpha;
            acc += -at * std::pow(1.0 - pt, gamma) * std::log(pt);
        }
        out = Tensor::scalar(acc / static_cast<double>(n));
        out.set_requires_grad(p.requires_grad());
    }
    void backward() override {
        if (!out.requires_grad() || !inputs[0].requires_grad()) return;
        const double g = out.grad()[0];
        const Tensor& p = inputs[0];
        double* dp = inputs[0].grad();
        const long n = p.numel();
        const double inv_n = 1.0 / static_cast<double>(n);
        for (long i = 0; i < n; ++i) {
            const double raw = p.data()[i];
            if (raw < kProbClamp || raw > 1.0 - kProbClamp) continue;  // flat under clamp
            const bool pos = target.data()[i] > 0.5;
            const double pt = pos ? raw : 1.0 - raw;
            const double at = pos ? alpha : 1.0 - alpha;
            const double one_mt = 1.0 - pt;
            double dl_dpt = -at * std::pow(one_mt, gamma) / pt;
            if (gamma != 0.0) dl_dpt += at * gamma * std::pow(one_mt, gamma - 1.0) * std::log(pt);
            const double dpt_dp = pos ? 1.0 : -1.0;
            dp[i] += g * inv_n * dl_dpt * dpt_dp;
        }
    }
};

struct BceLossNode final : Node {
    Tensor target;
    double pos_weight;
    BceLossNode(Tensor pred, Tensor target_, double pos_weight_)
        : target(std::move(target_)), pos_weight(pos_weight_) {
        inputs = {std::move(pred)};
        const Tensor& p = inputs[0];
        const long n = p.numel();
        double acc = 0.0;
        for (long i = 0; i < n; ++i) {
            const bool pos = target.data()[i] > 0.5;
            const double pc = clamp_prob(p.data()[i]);
            acc += pos ? pos_weight * -std::log(pc) : -std::log(1.0 - pc);
        }
        out = Tensor::scalar(acc / static_cast<double>(n));
        out.set_requires_grad(p.requires_grad());
    }
    void backward() override {
        if (!out.requires_grad() || !inputs[0].requires_grad()) return;
        const double g = out.grad()[0];
        const Tensor& p = inputs[0];
        double* dp = inputs[0].grad();
        const long n = p.numel();
        const double inv_n = 1.0 / static_cast<double>(n);
        for (long i = 0; i < n; ++i) {
            const double raw = p.data()[i];
            if (raw < kProbClamp || raw > 1.0 - kProbClamp) continue;
            const bool pos = target.data()[i] > 0.5;
            const double d = pos ? -pos_weight / raw : 1.0 / (1.0 - raw);
            dp[i] += g * inv_n * d;
        }
    }
};

}  // namespace

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "focal") return LossKind::focal;
    if (s == "bce") return LossKind::bce;
    if (s == "weighted_bce") return LossKind::weighted_bce;
    throw ValueError("unknown loss kind '" + s + "' (focal|bce|weighted_bce)");
}

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::focal: return "focal";
        case LossKind::bce: return "bce";
        case LossKind::weighted_bce: return "weighted_bce";
    }
    return "?";
}

Tensor focal_loss(Graph& g, Tensor pred, Tensor target, double alpha, double gamma) {
    check_shapes("focal_loss", pred, target);
    if (alpha <= 0.0 || alpha >= 1.0) throw ValueError("focal_loss: alpha must be in (0,1)");
    if (gamma < 0.0) throw ValueError("focal_loss: gamma must be >= 0");
    return g.add(std::make_unique<FocalLossNode>(std::move(pred), std::move(target),
                                                 alpha, gamma));
}

Tensor bce_loss(Graph& g, Tensor pred, Tensor target) {
    check_shapes("bce_loss", pred, target);
    return g.add(std::make_unique<BceLossNode>(std::move(pred), std::move(target), 1.0));
}

Tensor weighted_bce_loss(Graph& g, Tensor pred, Tensor target, double pos_weight) {
    check_shapes("weighted_bce_loss", pred, target);
    if (pos_weight <= 0.0) throw ValueError("weighted_bce_loss: pos_weight must be > 0");
    return g.add(std::make_unique<BceLossNode>(std::move(pred), std::move(target), pos_weight));
}

Tensor make_loss(Graph& g, const LossConfig& cfg, Tensor pred, Tensor target) {
    switch (cfg.kind) {
        case LossKind::focal:
            return focal_loss(g, std::move(pred), std::move(target), cfg.alpha, cfg.gamma);
        case LossKind::bce:
            return bce_loss(g, std::move(pred), std::move(target));
        case LossKind::weighted_bce:
            return weighted_bce_loss(g, std::move(pred), std::move(target), cfg.pos_weight);
    }
    throw ValueError("make_loss: unhandled loss kind");
}

}  // namespace attmetnet::loss
