#pragma once

#include <set>
#include <vector>

#include <torch/torch.h>

#include "focusnet/layers.hpp"
#include "focusnet/voldata.hpp"

namespace focusnet {

/// Fixed-size cubic crop. The in-volume part starts at `start` and spans
/// size - pad_before - pad_after voxels per axis; the rest is zero padding.
struct RoiBox {
    int organ_id = 0;
    Index3 start{0, 0, 0};
    Shape3 size{0, 0, 0};
    Index3 pad_before{0, 0, 0};
    Index3 pad_after{0, 0, 0};

    int64_t inner_extent(int a) const { return size[a] - pad_before[a] - pad_after[a]; }
    bool operator==(const RoiBox&) const = default;
};

/// Side length for an organ: round(factor * diameter), at least 8, rounded up to even.
int64_t roi_side(const OrganSpec& organ, double factor);

/// Box of roi_side() centred on `center`, clamped to the volume with the
/// overhang recorded as padding.
RoiBox roi_box(const Index3& center, const OrganSpec& organ, double factor,
               const Shape3& volume_shape);

/// Crops (1, C, D, H, W) `source` to the box with zero padding; differentiable.
torch::Tensor crop_roi(const torch::Tensor& source, const RoiBox& box);

/// Concatenates decoder features, raw image, encoder features and the heatmap
/// channel (each (1, C_i, D, H, W)) and crops the result to the box. Output is
/// (1, dec + 1 + enc + 1, size...).
torch::Tensor assemble_roi_input(const RoiBox& box, const torch::Tensor& decoder_features,
                                 const torch::Tensor& raw, const torch::Tensor& encoder_hr_features,
                                 const torch::Tensor& heatmap);

/// Per-organ binary head: two SE-residual blocks, then a sigmoid 1x1x1 projection.
class SosNetImpl : public torch::nn::Module {
public:
    SosNetImpl(int64_t in_channels, int64_t width, int64_t se_reduction = 4);

    /// (N, in_channels, s, s, s) -> (N, 1, s, s, s) foreground probability.
    torch::Tensor forward(const torch::Tensor& roi_input);

    int64_t in_channels() const { return in_channels_; }

private:
    int64_t in_channels_;
    SEResBlock block1_{nullptr}, block2_{nullptr};
    torch::nn::InstanceNorm3d norm_{nullptr};
    torch::nn::Conv3d head_{nullptr};
};
TORCH_MODULE(SosNet);

SosNet build_sosnet(int64_t in_channels, int64_t width, uint64_t seed, int64_t se_reduction = 4);

/// Throws std::invalid_argument when the channel count differs from the build config.
torch::Tensor sos_forward(SosNet& model, const torch::Tensor& roi_input);

struct SmallOrganResult {
    RoiBox box;
    torch::Tensor prob;   // (s, s, s) foreground probability over the box
};

/// Combines dense labels with per-organ ROI probabilities:
///  1. argmax of the logits (lower class wins ties);
///  2. voxels labelled with a small organ outside that organ's ROI become background;
///  3. inside each ROI, voxels whose probability exceeds `threshold` take that organ,
///     the highest probability winning between organs (lower id on ties).
/// `logits` is (C, D, H, W).
LabelMap fuse_predictions(const torch::Tensor& logits, const std::vector<SmallOrganResult>& results,
                          const std::set<int>& small_ids, const Spacing3& spacing,
                          double threshold = 0.5);

}  // namespace focusnet
