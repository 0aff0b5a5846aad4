#pragma once

#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace focusnet {

enum class AlphaMode { Uniform, InverseSize };

struct LossConfig {
    double gamma = 2.0;
    AlphaMode alpha_mode = AlphaMode::InverseSize;
    double dice_epsilon = 1e-5;
    double prob_epsilon = 1e-7;   // clamp applied before logarithms
    bool use_focal = true;
    bool use_dice = true;

    void validate() const;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

/// alpha_t = (1/n_t) / mean_j(1/n_j). Throws std::invalid_argument on a non-positive count.
std::vector<double> compute_alphas(const std::vector<double>& mean_counts);

/// Per-class weights for the focal term: the stored inverse-size alphas, or all ones.
torch::Tensor alpha_tensor(const LossConfig& cfg, const std::vector<double>& inverse_size_alphas,
                           torch::Dtype dtype = torch::kFloat32);

/// (N, D, H, W) integer labels -> (N, C, D, H, W) indicator tensor of `dtype`.
torch::Tensor one_hot_channels(const torch::Tensor& labels, int64_t channels,
                               torch::Dtype dtype = torch::kFloat32);

// All losses below take probabilities laid out (N, C, ...) and integer labels (N, ...).
// Gradients with respect to the probabilities are closed-form; chaining through a
// softmax or sigmoid is left to autograd.

/// Mean over voxels of -alpha_y (1 - p_y)^gamma log p_y, p clamped to [eps, 1 - eps].
torch::Tensor focal_loss(const torch::Tensor& probs, const torch::Tensor& labels,
                         const torch::Tensor& alphas, double gamma, double prob_epsilon = 1e-7);

/// Sum over channels of 1 - (2 sum(y p) + eps) / (sum(y) + sum(p) + eps); `target` has the
/// layout of `probs`.
torch::Tensor generalized_dice_loss(const torch::Tensor& probs, const torch::Tensor& target,
                                    double epsilon = 1e-5);

/// Mean squared difference over every element.
torch::Tensor heatmap_mse(const torch::Tensor& pred, const torch::Tensor& target);

struct LossTerms {
    torch::Tensor focal;   // undefined when disabled
    torch::Tensor dice;
    torch::Tensor total;
};

/// Unit-weight sum of the enabled components. Throws when neither is enabled.
LossTerms total_loss(const torch::Tensor& probs, const torch::Tensor& labels,
                     const torch::Tensor& alphas, const LossConfig& cfg);

/// Convenience wrapper: softmax over channel dim 1 then total_loss.
LossTerms total_loss_from_logits(const torch::Tensor& logits, const torch::Tensor& labels,
                                 const torch::Tensor& alphas, const LossConfig& cfg);

/// Binary ROI objective: two-channel focal (alpha = 1) plus foreground dice.
/// `fg_prob` is (N, 1, ...) in (0,1); `mask` is (N, ...) with values {0, 1}.
LossTerms binary_roi_loss(const torch::Tensor& fg_prob, const torch::Tensor& mask,
                          double gamma = 2.0, double dice_epsilon = 1e-5,
                          double prob_epsilon = 1e-7);

}  // namespace focusnet
