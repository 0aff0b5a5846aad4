#include "focusnet/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "focusnet/json_util.hpp"

namespace focusnet {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

void LossConfig::validate() const {
    if (!(gamma >= 0.0)) throw ConfigError("loss.gamma must be >= 0");
    if (!(dice_epsilon > 0.0)) throw ConfigError("loss.dice_epsilon must be > 0");
    if (!(prob_epsilon > 0.0 && prob_epsilon < 0.5))
        throw ConfigError("loss.prob_epsilon must lie in (0, 0.5)");
    if (!use_focal && !use_dice) throw ConfigError("loss.components must not be empty");
}

void to_json(nlohmann::json& j, const LossConfig& c) {
    std::vector<std::string> comps;
    if (c.use_focal) comps.emplace_back("focal");
    if (c.use_dice) comps.emplace_back("dice");
    j = {{"gamma", c.gamma},
         {"alpha_mode", c.alpha_mode == AlphaMode::Uniform ? "uniform" : "inverse-size"},
         {"dice_epsilon", c.dice_epsilon},
         {"prob_epsilon", c.prob_epsilon},
         {"components", comps}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
    check_keys(j, {"gamma", "alpha_mode", "dice_epsilon", "prob_epsilon", "components"}, "loss");
    read_opt(j, "gamma", c.gamma, "loss");
    read_opt(j, "dice_epsilon", c.dice_epsilon, "loss");
    read_opt(j, "prob_epsilon", c.prob_epsilon, "loss");
    if (j.contains("alpha_mode")) {
        const auto m = j.at("alpha_mode").get<std::string>();
        if (m == "uniform") c.alpha_mode = AlphaMode::Uniform;
        else if (m == "inverse-size") c.alpha_mode = AlphaMode::InverseSize;
        else throw ConfigError("loss.alpha_mode must be 'uniform' or 'inverse-size'");
    }
    if (j.contains("components")) {
        c.use_focal = c.use_dice = false;
        for (const auto& s : j.at("components")) {
            const auto name = s.get<std::string>();
            if (name == "focal") c.use_focal = true;
            else if (name == "dice") c.use_dice = true;
            else throw ConfigError("loss.components: unknown component '" + name + "'");
        }
    }
    c.validate();
}

std::vector<double> compute_alphas(const std::vector<double>& mean_counts) {
    if (mean_counts.empty()) throw std::invalid_argument("compute_alphas: no classes");
    double mean_inv = 0.0;
    for (double n : mean_counts) {
        if (!(n > 0.0)) throw std::invalid_argument("compute_alphas: class count must be > 0");
        mean_inv += 1.0 / n;
    }
    mean_inv /= static_cast<double>(mean_counts.size());
    std::vector<double> alphas;
    alphas.reserve(mean_counts.size());
    for (double n : mean_counts) alphas.push_back((1.0 / n) / mean_inv);
    return alphas;
}

torch::Tensor alpha_tensor(const LossConfig& cfg, const std::vector<double>& inverse_size_alphas,
                           torch::Dtype dtype) {
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    auto t = torch::tensor(inverse_size_alphas, opts);
    if (cfg.alpha_mode == AlphaMode::Uniform) t = torch::ones_like(t);
    return t.to(dtype);
}

torch::Tensor one_hot_channels(const torch::Tensor& labels, int64_t channels, torch::Dtype dtype) {
    auto oh = torch::one_hot(labels.to(torch::kInt64), channels);   // (N, ..., C)
    std::vector<int64_t> perm{0, oh.dim() - 1};
    for (int64_t d = 1; d < oh.dim() - 1; ++d) perm.push_back(d);
    return oh.permute(perm).contiguous().to(dtype);
}

namespace {

void check_prob_label_geometry(const torch::Tensor& probs, const torch::Tensor& labels) {
    if (probs.dim() < 2 || labels.dim() != probs.dim() - 1)
        throw std::invalid_argument("loss: labels must be probs without the channel dim");
    for (int64_t d = 0; d < labels.dim(); ++d) {
        const int64_t pd = d == 0 ? 0 : d + 1;
        if (labels.size(d) != probs.size(pd))
            throw std::invalid_argument("loss: geometry mismatch between probabilities and labels");
    }
}

std::vector<int64_t> reduce_dims_except_channel(const torch::Tensor& t) {
    std::vector<int64_t> dims{0};
    for (int64_t d = 2; d < t.dim(); ++d) dims.push_back(d);
    return dims;
}

class FocalFn : public torch::autograd::Function<FocalFn> {
public:
    static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& probs,
                                 const torch::Tensor& labels, const torch::Tensor& alphas,
                                 double gamma, double eps) {
        auto idx = labels.unsqueeze(1);
        auto pt = probs.gather(1, idx).squeeze(1);
        auto ptc = pt.clamp(eps, 1.0 - eps);
        auto a = alphas.to(probs.dtype()).index_select(0, labels.flatten()).view_as(pt);
        auto per_voxel = -a * torch::pow(1.0 - ptc, gamma) * torch::log(ptc);
        ctx->save_for_backward({probs, labels, alphas});
        ctx->saved_data["gamma"] = gamma;
        ctx->saved_data["eps"] = eps;
        return per_voxel.mean();
    }

    static variable_list backward(AutogradContext* ctx, variable_list grad_out) {
        auto saved = ctx->get_saved_variables();
        const auto& probs = saved[0];
        const auto& labels = saved[1];
        const auto& alphas = saved[2];
        const double gamma = ctx->saved_data["gamma"].toDouble();
        const double eps = ctx->saved_data["eps"].toDouble();

        auto idx = labels.unsqueeze(1);
        auto pt = probs.gather(1, idx).squeeze(1);
        auto ptc = pt.clamp(eps, 1.0 - eps);
        auto a = alphas.to(probs.dtype()).index_select(0, labels.flatten()).view_as(pt);
        // d/dp [-(1-p)^g log p] = g (1-p)^(g-1) log p - (1-p)^g / p
        auto d = -torch::pow(1.0 - ptc, gamma) / ptc;
        if (gamma != 0.0) d = d + gamma * torch::pow(1.0 - ptc, gamma - 1.0) * torch::log(ptc);
        auto inside = (pt >= eps).logical_and(pt <= 1.0 - eps).to(probs.dtype());
        const double m = static_cast<double>(pt.numel());
        auto g = a * d * inside * (grad_out[0] / m);
        auto grad = torch::zeros_like(probs).scatter_(1, idx, g.unsqueeze(1));
        return {grad, torch::Tensor(), torch::Tensor(), torch::Tensor(), torch::Tensor()};
    }
};

class DiceFn : public torch::autograd::Function<DiceFn> {
public:
    static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& probs,
                                 const torch::Tensor& target, double eps) {
        const auto dims = reduce_dims_except_channel(probs);
        auto inter = (target * probs).sum(dims);
        auto denom = target.sum(dims) + probs.sum(dims) + eps;
        ctx->save_for_backward({probs, target});
        ctx->saved_data["eps"] = eps;
        return (1.0 - (2.0 * inter + eps) / denom).sum();
    }

    static variable_list backward(AutogradContext* ctx, variable_list grad_out) {
        auto saved = ctx->get_saved_variables();
        const auto& probs = saved[0];
        const auto& target = saved[1];
        const double eps = ctx->saved_data["eps"].toDouble();
        const auto dims = reduce_dims_except_channel(probs);
        std::vector<int64_t> bshape(static_cast<size_t>(probs.dim()), 1);
        bshape[1] = probs.size(1);
        auto inter = (target * probs).sum(dims).view(bshape);
        auto denom = (target.sum(dims) + probs.sum(dims) + eps).view(bshape);
        // d/dp_v [1 - (2I + e)/D] = -(2 y_v D - (2I + e)) / D^2
        auto grad = -(2.0 * target * denom - (2.0 * inter + eps)) / (denom * denom);
        return {grad * grad_out[0], torch::Tensor(), torch::Tensor()};
    }
};

class MseFn : public torch::autograd::Function<MseFn> {
public:
    static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& pred,
                                 const torch::Tensor& target) {
        auto diff = pred - target;
        ctx->save_for_backward({diff});
        return (diff * diff).mean();
    }

    static variable_list backward(AutogradContext* ctx, variable_list grad_out) {
        auto diff = ctx->get_saved_variables()[0];
        const double n = static_cast<double>(diff.numel());
        return {diff * (2.0 / n) * grad_out[0], torch::Tensor()};
    }
};

}  // namespace

torch::Tensor focal_loss(const torch::Tensor& probs, const torch::Tensor& labels,
                         const torch::Tensor& alphas, double gamma, double prob_epsilon) {
    check_prob_label_geometry(probs, labels);
    if (alphas.dim() != 1 || alphas.size(0) != probs.size(1))
        throw std::invalid_argument("focal_loss: need one alpha per channel");
    if (gamma < 0.0) throw std::invalid_argument("focal_loss: gamma must be >= 0");
    return FocalFn::apply(probs, labels.to(torch::kInt64), alphas, gamma, prob_epsilon);
}

torch::Tensor generalized_dice_loss(const torch::Tensor& probs, const torch::Tensor& target,
                                    double epsilon) {
    if (probs.sizes() != target.sizes())
        throw std::invalid_argument("generalized_dice_loss: geometry mismatch");
    return DiceFn::apply(probs, target.to(probs.dtype()), epsilon);
}

torch::Tensor heatmap_mse(const torch::Tensor& pred, const torch::Tensor& target) {
    if (pred.sizes() != target.sizes()) throw std::invalid_argument("heatmap_mse: shape mismatch");
    return MseFn::apply(pred, target.to(pred.dtype()));
}

LossTerms total_loss(const torch::Tensor& probs, const torch::Tensor& labels,
                     const torch::Tensor& alphas, const LossConfig& cfg) {
    if (!cfg.use_focal && !cfg.use_dice)
        throw std::invalid_argument("total_loss: empty component set");
    check_prob_label_geometry(probs, labels);
    LossTerms terms;
    if (cfg.use_focal) terms.focal = focal_loss(probs, labels, alphas, cfg.gamma, cfg.prob_epsilon);
    if (cfg.use_dice)
        terms.dice = generalized_dice_loss(
            probs, one_hot_channels(labels, probs.size(1), probs.scalar_type()), cfg.dice_epsilon);
    if (terms.focal.defined() && terms.dice.defined()) terms.total = terms.focal + terms.dice;
    else terms.total = terms.focal.defined() ? terms.focal : terms.dice;
    return terms;
}

LossTerms total_loss_from_logits(const torch::Tensor& logits, const torch::Tensor& labels,
                                 const torch::Tensor& alphas, const LossConfig& cfg) {
    return total_loss(torch::softmax(logits, 1), labels, alphas, cfg);
}

LossTerms binary_roi_loss(const torch::Tensor& fg_prob, const torch::Tensor& mask, double gamma,
                          double dice_epsilon, double prob_epsilon) {
    if (fg_prob.dim() < 2 || fg_prob.size(1) != 1)
        throw std::invalid_argument("binary_roi_loss: expected a single foreground channel");
    auto labels = mask.to(torch::kInt64);
    check_prob_label_geometry(fg_prob, labels);
    auto two = torch::cat({1.0 - fg_prob, fg_prob}, 1);
    auto ones = torch::ones({2}, fg_prob.options());
    LossTerms terms;
    terms.focal = focal_loss(two, labels, ones, gamma, prob_epsilon);
    terms.dice = generalized_dice_loss(fg_prob, mask.unsqueeze(1).to(fg_prob.dtype()), dice_epsilon);
    terms.total = terms.focal + terms.dice;
    return terms;
}

}  // namespace focusnet
