#include "focusnet/sos.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace focusnet {

namespace nn = torch::nn;

int64_t roi_side(const OrganSpec& organ, double factor) {
    if (!(factor > 0.0)) throw std::invalid_argument("roi factor must be > 0");
    int64_t side = std::llround(factor * organ.mean_diameter);
    side = std::max<int64_t>(side, 8);
    if (side % 2 != 0) ++side;
    return side;
}

RoiBox roi_box(const Index3& center, const OrganSpec& organ, double factor,
               const Shape3& volume_shape) {
    for (int a = 0; a < 3; ++a)
        if (center[a] < 0 || center[a] >= volume_shape[a])
            throw std::invalid_argument("roi_box: centre outside the volume");
    const int64_t side = roi_side(organ, factor);
    RoiBox box;
    box.organ_id = organ.id;
    box.size = {side, side, side};
    for (int a = 0; a < 3; ++a) {
        const int64_t lo = center[a] - side / 2;
        const int64_t hi = lo + side;
        box.pad_before[a] = std::max<int64_t>(0, -lo);
        box.pad_after[a] = std::max<int64_t>(0, hi - volume_shape[a]);
        box.start[a] = std::max<int64_t>(0, lo);
    }
    return box;
}

torch::Tensor crop_roi(const torch::Tensor& source, const RoiBox& box) {
    if (source.dim() != 5) throw std::invalid_argument("crop_roi: expected (N, C, D, H, W)");
    auto t = source;
    for (int a = 0; a < 3; ++a) {
        const int64_t extent = box.inner_extent(a);
        if (extent < 1 || box.start[a] + extent > source.size(2 + a))
            throw std::invalid_argument("crop_roi: box does not fit the source volume");
        t = t.slice(2 + a, box.start[a], box.start[a] + extent);
    }
    if (box.pad_before == Index3{0, 0, 0} && box.pad_after == Index3{0, 0, 0}) return t;
    return torch::constant_pad_nd(t, {box.pad_before[2], box.pad_after[2], box.pad_before[1],
                                      box.pad_after[1], box.pad_before[0], box.pad_after[0]},
                                  0.0);
}

torch::Tensor assemble_roi_input(const RoiBox& box, const torch::Tensor& decoder_features,
                                 const torch::Tensor& raw, const torch::Tensor& encoder_hr_features,
                                 const torch::Tensor& heatmap) {
    const auto spatial = decoder_features.sizes().slice(2);
    for (const auto* t : {&raw, &encoder_hr_features, &heatmap}) {
        if (t->dim() != 5 || t->sizes().slice(2) != spatial || t->size(0) != decoder_features.size(0))
            throw std::invalid_argument("assemble_roi_input: sources do not share one geometry");
    }
    if (raw.size(1) != 1 || heatmap.size(1) != 1)
        throw std::invalid_argument("assemble_roi_input: raw image and heatmap must be one channel");
    return torch::cat({crop_roi(decoder_features, box), crop_roi(raw, box),
                       crop_roi(encoder_hr_features, box), crop_roi(heatmap, box)},
                      1);
}

SosNetImpl::SosNetImpl(int64_t in_channels, int64_t width, int64_t se_reduction)
    : in_channels_(in_channels) {
    block1_ = register_module("block1", SEResBlock(in_channels, width, se_reduction));
    block2_ = register_module("block2", SEResBlock(width, width, se_reduction));
    norm_ = register_module("norm", make_norm(width));
    head_ = register_module("head", nn::Conv3d(nn::Conv3dOptions(width, 1, 1)));
}

torch::Tensor SosNetImpl::forward(const torch::Tensor& roi_input) {
    auto h = block2_(block1_(roi_input));
    return torch::sigmoid(head_(torch::relu(norm_(h))));
}

SosNet build_sosnet(int64_t in_channels, int64_t width, uint64_t seed, int64_t se_reduction) {
    torch::manual_seed(seed);
    return SosNet(in_channels, width, se_reduction);
}

torch::Tensor sos_forward(SosNet& model, const torch::Tensor& roi_input) {
    if (roi_input.dim() != 5 || roi_input.size(1) != model->in_channels())
        throw std::invalid_argument("sos_forward: expected " + std::to_string(model->in_channels()) +
                                    " input channels");
    torch::NoGradGuard guard;
    const bool was_training = model->is_training();
    model->eval();
    auto out = model->forward(roi_input);
    model->train(was_training);
    return out;
}

LabelMap fuse_predictions(const torch::Tensor& logits, const std::vector<SmallOrganResult>& results,
                          const std::set<int>& small_ids, const Spacing3& spacing,
                          double threshold) {
    if (logits.dim() != 4) throw std::invalid_argument("fuse_predictions: expected (C, D, H, W)");
    const Shape3 shape{logits.size(1), logits.size(2), logits.size(3)};
    const int64_t channels = logits.size(0);
    LabelMap out = LabelMap::zeros(shape, spacing, static_cast<int>(channels - 1));
    auto lg = logits.detach().to(torch::kFloat32).contiguous();
    const float* lp = lg.data_ptr<float>();
    const int64_t n = voxel_count(shape);

    for (int64_t i = 0; i < n; ++i) {
        int64_t best = 0;
        for (int64_t c = 1; c < channels; ++c)
            if (lp[c * n + i] > lp[best * n + i]) best = c;
        out.data[static_cast<size_t>(i)] = static_cast<uint16_t>(best);
    }

    // Which voxels lie inside each organ's own ROI.
    std::vector<std::vector<uint8_t>> in_roi(static_cast<size_t>(channels));
    for (const auto& r : results) {
        auto& m = in_roi.at(static_cast<size_t>(r.box.organ_id));
        if (m.empty()) m.assign(static_cast<size_t>(n), 0);
        for (int64_t z = 0; z < r.box.inner_extent(0); ++z)
            for (int64_t y = 0; y < r.box.inner_extent(1); ++y)
                for (int64_t x = 0; x < r.box.inner_extent(2); ++x)
                    m[static_cast<size_t>(linear_index(shape, r.box.start[0] + z,
                                                       r.box.start[1] + y, r.box.start[2] + x))] = 1;
    }
    for (int64_t i = 0; i < n; ++i) {
        const int cls = out.data[static_cast<size_t>(i)];
        if (!small_ids.contains(cls)) continue;
        const auto& m = in_roi[static_cast<size_t>(cls)];
        if (m.empty() || !m[static_cast<size_t>(i)]) out.data[static_cast<size_t>(i)] = 0;
    }

    // Highest claim per voxel across ROIs.
    std::vector<float> best_p(static_cast<size_t>(n), -1.0f);
    std::vector<int> best_id(static_cast<size_t>(n), 0);
    for (const auto& r : results) {
        auto pr = r.prob.detach().to(torch::kFloat32).contiguous();
        if (pr.dim() != 3 || pr.size(0) != r.box.size[0] || pr.size(1) != r.box.size[1] ||
            pr.size(2) != r.box.size[2])
            throw std::invalid_argument("fuse_predictions: probability grid does not match its box");
        auto acc = pr.accessor<float, 3>();
        for (int64_t z = 0; z < r.box.inner_extent(0); ++z)
            for (int64_t y = 0; y < r.box.inner_extent(1); ++y)
                for (int64_t x = 0; x < r.box.inner_extent(2); ++x) {
                    const float p = acc[z + r.box.pad_before[0]][y + r.box.pad_before[1]]
                                       [x + r.box.pad_before[2]];
                    if (!(static_cast<double>(p) > threshold)) continue;
                    const auto i = static_cast<size_t>(linear_index(
                        shape, r.box.start[0] + z, r.box.start[1] + y, r.box.start[2] + x));
                    if (p > best_p[i] || (p == best_p[i] && r.box.organ_id < best_id[i])) {
                        best_p[i] = p;
                        best_id[i] = r.box.organ_id;
                    }
                }
    }
    for (int64_t i = 0; i < n; ++i)
        if (best_id[static_cast<size_t>(i)] != 0)
            out.data[static_cast<size_t>(i)] = static_cast<uint16_t>(best_id[static_cast<size_t>(i)]);
    return out;
}

}  // namespace focusnet
