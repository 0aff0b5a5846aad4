#pragma once

#include <optional>
#include <vector>

#include <torch/torch.h>

#include "focusnet/layers.hpp"
#include "focusnet/snet.hpp"
#include "focusnet/voldata.hpp"

namespace focusnet {

/// One centre-likelihood map per small organ, values in [0, 1].
struct HeatmapSet {
    torch::Tensor data;            // (K, D, H, W) float
    std::vector<int> organ_ids;    // channel k -> class id
};

/// Default Gaussian width in voxels: max(min_sigma, mean_diameter / 2).
double default_sigma(const OrganSpec& organ, double min_sigma = 2.0);

/// Gaussian centred on each organ's centroid, scaled so the voxel nearest the
/// centroid holds exactly 1; all-zero channel for an absent organ. Distances are
/// in voxel units. `sigmas` runs parallel to `small_organs`.
HeatmapSet make_target_heatmaps(const LabelMap& lm, const std::vector<OrganSpec>& small_organs,
                                const std::vector<double>& sigmas);
HeatmapSet make_target_heatmaps(const LabelMap& lm, const std::vector<OrganSpec>& small_organs,
                                double sigma);

/// Argmax of a single (D, H, W) channel; ties go to the smallest (z, y, x).
/// nullopt when the maximum is below `presence_threshold`.
std::optional<Index3> locate_peak(const torch::Tensor& heatmap, double presence_threshold = 0.1);

/// Localization head: two SE-residual blocks and a sigmoid 1x1x1 projection.
class SolNetImpl : public torch::nn::Module {
public:
    SolNetImpl(int64_t num_small, int64_t in_channels, int64_t se_reduction = 4);

    /// (N, C, D, H, W) decoder features -> (N, num_small, D, H, W) maps in (0, 1).
    torch::Tensor forward(const torch::Tensor& decoder_features);

    int64_t num_small() const { return num_small_; }

private:
    int64_t num_small_;
    SEResBlock block1_{nullptr}, block2_{nullptr};
    torch::nn::InstanceNorm3d norm_{nullptr};
    torch::nn::Conv3d head_{nullptr};
};
TORCH_MODULE(SolNet);

SolNet build_solnet(int64_t num_small, int64_t in_channels, uint64_t seed,
                    int64_t se_reduction = 4);

/// Inference-mode forward on batch-1 features. Throws std::invalid_argument for
/// features whose stride is not 1.
HeatmapSet sol_forward(SolNet& model, const FeatureVolume& decoder_features,
                       const std::vector<int>& organ_ids);

}  // namespace focusnet
