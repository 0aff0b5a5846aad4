#include "focusnet/layers.hpp"

#include <stdexcept>
#include <string>

namespace focusnet {

namespace nn = torch::nn;

nn::InstanceNorm3d make_norm(int64_t channels) {
    return nn::InstanceNorm3d(nn::InstanceNorm3dOptions(channels).affine(true));
}

SEGateImpl::SEGateImpl(int64_t channels, int64_t reduction)
    : bottleneck_(std::max<int64_t>(1, channels / std::max<int64_t>(1, reduction))) {
    squeeze_ = register_module("squeeze", nn::Linear(channels, bottleneck_));
    excite_ = register_module("excite", nn::Linear(bottleneck_, channels));
}

torch::Tensor SEGateImpl::forward(const torch::Tensor& x) {
    auto pooled = x.mean({2, 3, 4});
    auto g = torch::sigmoid(excite_(torch::relu(squeeze_(pooled))));
    return g.view({x.size(0), x.size(1), 1, 1, 1});
}

SEResBlockImpl::SEResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t se_reduction,
                               int64_t dilation) {
    norm1 = register_module("norm1", make_norm(in_channels));
    conv1 = register_module(
        "conv1", nn::Conv3d(nn::Conv3dOptions(in_channels, out_channels, 3)
                                .padding(dilation)
                                .dilation(dilation)));
    norm2 = register_module("norm2", make_norm(out_channels));
    conv2 = register_module("conv2",
                            nn::Conv3d(nn::Conv3dOptions(out_channels, out_channels, 3).padding(1)));
    se = register_module("se", SEGate(out_channels, se_reduction));
    if (in_channels != out_channels)
        proj = register_module("proj", nn::Conv3d(nn::Conv3dOptions(in_channels, out_channels, 1)));
}

std::pair<torch::Tensor, torch::Tensor> SEResBlockImpl::forward_with_gates(const torch::Tensor& x) {
    auto h = conv1(torch::relu(norm1(x)));
    h = conv2(torch::relu(norm2(h)));
    auto gates = se(h);
    auto shortcut = proj ? proj(x) : x;
    return {shortcut + h * gates, gates};
}

torch::Tensor SEResBlockImpl::forward(const torch::Tensor& x) { return forward_with_gates(x).first; }

DenseASPPImpl::DenseASPPImpl(int64_t in_channels, std::vector<int64_t> rates, int64_t branch_width,
                             int64_t out_channels)
    : in_channels_(in_channels), branch_width_(branch_width) {
    for (size_t i = 0; i < rates.size(); ++i) {
        if (rates[i] <= 0 || (i > 0 && rates[i] <= rates[i - 1]))
            throw std::invalid_argument("DenseASPP rates must be positive and strictly increasing");
        const int64_t cin = branch_input_channels(i);
        Branch b;
        b.norm = register_module("norm" + std::to_string(i), make_norm(cin));
        b.conv = register_module(
            "conv" + std::to_string(i),
            nn::Conv3d(nn::Conv3dOptions(cin, branch_width, 3).padding(rates[i]).dilation(rates[i])));
        branches_.push_back(b);
    }
    project_ = register_module(
        "project", nn::Conv3d(nn::Conv3dOptions(projection_input_channels(), out_channels, 1)));
}

int64_t DenseASPPImpl::branch_input_channels(size_t i) const {
    return in_channels_ + static_cast<int64_t>(i) * branch_width_;
}

int64_t DenseASPPImpl::projection_input_channels() const {
    return branch_input_channels(branches_.size());
}

torch::Tensor DenseASPPImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> features{x};
    for (auto& b : branches_) {
        auto in = features.size() == 1 ? x : torch::cat(features, 1);
        features.push_back(b.conv(torch::relu(b.norm(in))));
    }
    return project_(features.size() == 1 ? x : torch::cat(features, 1));
}

}  // namespace focusnet
