#pragma once

#include <utility>
#include <vector>

#include <torch/torch.h>

namespace focusnet {

/// Squeeze-and-excitation gate: global average pool -> bottleneck -> sigmoid.
/// Returns per-channel gates shaped (N, C, 1, 1, 1).
class SEGateImpl : public torch::nn::Module {
public:
    SEGateImpl(int64_t channels, int64_t reduction);
    torch::Tensor forward(const torch::Tensor& x);

    int64_t bottleneck() const { return bottleneck_; }

private:
    int64_t bottleneck_;
    torch::nn::Linear squeeze_{nullptr}, excite_{nullptr};
};
TORCH_MODULE(SEGate);

/// Pre-activation residual block: (norm, relu, conv3) x 2, SE gating, then the
/// residual sum with a 1x1x1 projection when the channel count changes.
class SEResBlockImpl : public torch::nn::Module {
public:
    SEResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t se_reduction,
                   int64_t dilation = 1);

    torch::Tensor forward(const torch::Tensor& x);
    std::pair<torch::Tensor, torch::Tensor> forward_with_gates(const torch::Tensor& x);

    torch::nn::InstanceNorm3d norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv3d conv1{nullptr}, conv2{nullptr};
    SEGate se{nullptr};
    torch::nn::Conv3d proj{nullptr};   // null when in == out
};
TORCH_MODULE(SEResBlock);

/// Densely connected dilated convolutions. Branch i sees the input concatenated
/// with the outputs of branches 0..i-1; the final 1x1x1 projection sees the input
/// concatenated with every branch output.
class DenseASPPImpl : public torch::nn::Module {
public:
    DenseASPPImpl(int64_t in_channels, std::vector<int64_t> rates, int64_t branch_width,
                  int64_t out_channels);

    torch::Tensor forward(const torch::Tensor& x);

    int64_t branch_input_channels(size_t i) const;
    size_t num_branches() const { return branches_.size(); }
    int64_t projection_input_channels() const;

private:
    struct Branch {
        torch::nn::InstanceNorm3d norm{nullptr};
        torch::nn::Conv3d conv{nullptr};
    };
    int64_t in_channels_;
    int64_t branch_width_;
    std::vector<Branch> branches_;
    torch::nn::Conv3d project_{nullptr};
};
TORCH_MODULE(DenseASPP);

torch::nn::InstanceNorm3d make_norm(int64_t channels);

}  // namespace focusnet
