#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "focusnet/layers.hpp"
#include "focusnet/voldata.hpp"

namespace focusnet {

struct SNetConfig {
    int64_t in_channels = 1;
    int64_t num_classes = 8;   // background + organs
    int64_t base_width = 24;
    double width_multiplier = 1.0;
    int64_t num_downsamples = 1;
    int64_t blocks_per_stage = 2;
    std::vector<int64_t> aspp_rates{3, 6, 12, 18};
    int64_t se_reduction = 4;

    void validate() const;
    /// Channel count at resolution level l (stride 2^l).
    int64_t width_at(int64_t level) const;
    int64_t aspp_branch_width() const;
    int64_t decoder_channels() const { return width_at(0); }
    int64_t encoder_hr_channels() const { return width_at(0); }
    bool operator==(const SNetConfig&) const = default;
};

void to_json(nlohmann::json& j, const SNetConfig& c);
void from_json(const nlohmann::json& j, SNetConfig& c);

/// Activation grid (N, C, D, H, W) with its spatial reduction relative to the input.
struct FeatureVolume {
    torch::Tensor data;
    int64_t stride = 1;
};

struct SNetOutput {
    torch::Tensor logits;                 // (N, num_classes, D, H, W)
    FeatureVolume decoder_features;       // last decoder layer, stride 1
    FeatureVolume encoder_hr_features;    // first encoder stage, stride 1
};

/// Backbone: stem -> SE-residual stages with `num_downsamples` stride-2 reductions ->
/// DenseASPP at the deepest stride -> transposed-conv decoder with skips -> 1x1x1 head.
class SNetImpl : public torch::nn::Module {
public:
    explicit SNetImpl(const SNetConfig& cfg);

    SNetOutput forward(const torch::Tensor& x);

    const SNetConfig& config() const { return cfg_; }
    int64_t deepest_stride() const { return int64_t{1} << cfg_.num_downsamples; }
    int64_t num_strided_stages() const { return static_cast<int64_t>(down_.size()); }
    DenseASPP& aspp() { return aspp_; }

private:
    SNetConfig cfg_;
    torch::nn::Conv3d stem_{nullptr};
    torch::nn::Sequential stage0_{nullptr};
    std::vector<torch::nn::Conv3d> down_;
    std::vector<torch::nn::Sequential> enc_;
    DenseASPP aspp_{nullptr};
    std::vector<torch::nn::ConvTranspose3d> up_;
    std::vector<torch::nn::Sequential> dec_;
    torch::nn::InstanceNorm3d head_norm_{nullptr};
    torch::nn::Conv3d head_{nullptr};
};
TORCH_MODULE(SNet);

/// Parameters are drawn from torch's global generator reseeded with `seed`.
SNet build_snet(const SNetConfig& cfg, uint64_t seed);

/// Converts a Volume to a (1, 1, D, H, W) float tensor.
torch::Tensor volume_tensor(const Volume& v);

/// Inference-mode forward on one volume. Throws std::invalid_argument when the
/// spatial dims are not divisible by 2^num_downsamples.
SNetOutput snet_forward(SNet& model, const Volume& v);

void check_divisible(const SNetConfig& cfg, const Shape3& shape);

}  // namespace focusnet
