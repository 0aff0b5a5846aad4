#include "focusnet/sol.hpp"

#include <cmath>
#include <stdexcept>

namespace focusnet {

namespace nn = torch::nn;

double default_sigma(const OrganSpec& organ, double min_sigma) {
    return std::max(min_sigma, organ.mean_diameter / 2.0);
}

HeatmapSet make_target_heatmaps(const LabelMap& lm, const std::vector<OrganSpec>& small_organs,
                                const std::vector<double>& sigmas) {
    if (sigmas.size() != small_organs.size())
        throw std::invalid_argument("make_target_heatmaps: one sigma per organ expected");
    const auto& s = lm.shape;
    HeatmapSet out;
    out.data = torch::zeros({static_cast<int64_t>(small_organs.size()), s[0], s[1], s[2]},
                            torch::kFloat32);
    auto acc = out.data.accessor<float, 4>();
    for (size_t k = 0; k < small_organs.size(); ++k) {
        const double sigma = sigmas[k];
        if (!(sigma > 0.0)) throw std::invalid_argument("make_target_heatmaps: sigma must be > 0");
        out.organ_ids.push_back(small_organs[k].id);
        const auto c = organ_centroid(lm, small_organs[k].id);
        if (!c) continue;
        // The grid point nearest the centroid is the per-axis rounding; its distance
        // fixes the normalisation so that voxel reads exactly 1.
        double peak_d2 = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double d = std::round((*c)[a]) - (*c)[a];
            peak_d2 += d * d;
        }
        const double inv = 1.0 / (2.0 * sigma * sigma);
        for (int64_t z = 0; z < s[0]; ++z)
            for (int64_t y = 0; y < s[1]; ++y)
                for (int64_t x = 0; x < s[2]; ++x) {
                    const double dz = static_cast<double>(z) - (*c)[0];
                    const double dy = static_cast<double>(y) - (*c)[1];
                    const double dx = static_cast<double>(x) - (*c)[2];
                    const double d2 = dz * dz + dy * dy + dx * dx;
                    acc[static_cast<int64_t>(k)][z][y][x] =
                        static_cast<float>(std::exp(-(d2 - peak_d2) * inv));
                }
    }
    return out;
}

HeatmapSet make_target_heatmaps(const LabelMap& lm, const std::vector<OrganSpec>& small_organs,
                                double sigma) {
    return make_target_heatmaps(lm, small_organs, std::vector<double>(small_organs.size(), sigma));
}

std::optional<Index3> locate_peak(const torch::Tensor& heatmap, double presence_threshold) {
    if (heatmap.dim() != 3) throw std::invalid_argument("locate_peak: expected a (D, H, W) map");
    auto h = heatmap.detach().to(torch::kFloat32).contiguous();
    const float* p = h.data_ptr<float>();
    const int64_t n = h.numel();
    if (n == 0) return std::nullopt;
    int64_t best = 0;
    for (int64_t i = 1; i < n; ++i)
        if (p[i] > p[best]) best = i;   // raster order = lexicographic (z, y, x)
    if (static_cast<double>(p[best]) < presence_threshold) return std::nullopt;
    const Shape3 shape{h.size(0), h.size(1), h.size(2)};
    return unravel(shape, best);
}

SolNetImpl::SolNetImpl(int64_t num_small, int64_t in_channels, int64_t se_reduction)
    : num_small_(num_small) {
    if (num_small < 1) throw std::invalid_argument("SolNet needs at least one small organ");
    block1_ = register_module("block1", SEResBlock(in_channels, in_channels, se_reduction));
    block2_ = register_module("block2", SEResBlock(in_channels, in_channels, se_reduction));
    norm_ = register_module("norm", make_norm(in_channels));
    head_ = register_module("head", nn::Conv3d(nn::Conv3dOptions(in_channels, num_small, 1)));
    // Heatmaps are almost all background: start the sigmoid near 0.01, not 0.5.
    torch::NoGradGuard no_grad;
    head_->bias.fill_(std::log(0.01 / 0.99));
}

torch::Tensor SolNetImpl::forward(const torch::Tensor& decoder_features) {
    auto h = block2_(block1_(decoder_features));
    return torch::sigmoid(head_(torch::relu(norm_(h))));
}

SolNet build_solnet(int64_t num_small, int64_t in_channels, uint64_t seed, int64_t se_reduction) {
    torch::manual_seed(seed);
    return SolNet(num_small, in_channels, se_reduction);
}

HeatmapSet sol_forward(SolNet& model, const FeatureVolume& decoder_features,
                       const std::vector<int>& organ_ids) {
    if (decoder_features.stride != 1)
        throw std::invalid_argument("sol_forward: decoder features must have stride 1");
    if (static_cast<int64_t>(organ_ids.size()) != model->num_small())
        throw std::invalid_argument("sol_forward: organ id list does not match the head count");
    torch::NoGradGuard guard;
    const bool was_training = model->is_training();
    model->eval();
    auto maps = model->forward(decoder_features.data);
    model->train(was_training);
    return {maps.squeeze(0).contiguous(), organ_ids};
}

}  // namespace focusnet
