#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "focusnet/checkpoint.hpp"
#include "focusnet/config.hpp"
#include "focusnet/model.hpp"
#include "focusnet/phantom.hpp"
#include "focusnet/sol.hpp"

namespace focusnet {

/// A stage was asked to start from the wrong checkpoint.
class StagingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Sample {
    std::string case_id;
    Volume image;
    LabelMap labels;
    torch::Tensor image_t;    // (1, 1, D, H, W) float
    torch::Tensor labels_t;   // (1, D, H, W) int64
};

struct Dataset {
    Manifest manifest;
    std::vector<Sample> train;
    std::vector<Sample> validation;
    std::vector<OrganSpec> organs;      // statistics over the training split only
    double background_mean_count = 0.0;
};

/// Loads every sample of the manifest; the last round(fraction * n) entries form the
/// validation split, in manifest order.
Dataset load_dataset(const std::filesystem::path& manifest_path, double validation_fraction,
                     double small_organ_threshold);

Sample load_sample(const Manifest& m, size_t index);
Sample make_sample(std::string case_id, Volume image, LabelMap labels);

/// Inverse-size focal weights for background plus every organ.
std::vector<double> class_alphas(const std::vector<OrganSpec>& organs, double background_mean_count);

struct LossLog {
    std::map<std::string, double> train;
    std::map<std::string, double> validation;
};

struct EpochRecord {
    int stage = 0;
    int epoch = 0;    // 1-based, continues across resumes
    LossLog losses;
    double wall_seconds = 0.0;
};

/// Everything the stage routines share.
struct TrainContext {
    RunConfig cfg;
    const Dataset* data = nullptr;
    std::filesystem::path checkpoint_dir;       // stage<k>.ckpt written after every epoch
    std::filesystem::path log_path;             // JSON lines, appended
    std::function<void(const EpochRecord&)> on_epoch;   // optional progress hook
};

std::filesystem::path stage_checkpoint_path(const std::filesystem::path& dir, int stage);

// Each stage takes the completed checkpoint of the previous stage. `resume`, when
// given, must be an earlier checkpoint of the same stage; training continues from its
// epoch counter. Stage k refuses anything but a complete stage k-1 checkpoint.
Checkpoint train_stage1_snet(const TrainContext& ctx, const Checkpoint* resume = nullptr);
Checkpoint train_stage2_sol(const TrainContext& ctx, const Checkpoint& stage1,
                            const Checkpoint* resume = nullptr);
Checkpoint train_stage3_sos(const TrainContext& ctx, const Checkpoint& stage2,
                            const Checkpoint* resume = nullptr);
Checkpoint train_stage4_finetune(const TrainContext& ctx, const Checkpoint& stage3,
                                 const Checkpoint* resume = nullptr);

/// Dispatches to the stage routine; `previous` is ignored for stage 1.
Checkpoint train_stage(int stage, const TrainContext& ctx, const Checkpoint* previous,
                       const Checkpoint* resume = nullptr);

/// Checks that `ckpt` can seed stage `stage`; throws StagingError naming the
/// expected prerequisite otherwise.
void require_prerequisite(int stage, const Checkpoint& ckpt);

struct JointLoss {
    torch::Tensor segmentation;   // total_loss on the S-Net logits
    torch::Tensor heatmap;        // heatmap_mse on the SOL output
    torch::Tensor sos;            // sum of binary ROI losses over present small organs
    torch::Tensor total;          // weighted sum
};

/// The finetune objective for one sample with ROIs centred on the predicted peaks.
/// A present organ whose peak is missing falls back to its ground-truth centroid;
/// an absent organ contributes nothing.
JointLoss joint_loss(FocusNetImpl& model, const Sample& s, const RunConfig& cfg,
                     const torch::Tensor& alphas, const HeatmapSet& target);

/// Rounded centroid of `cls`, or nullopt when absent.
std::optional<Index3> centroid_voxel(const LabelMap& lm, int cls);

/// Heatmap targets for the model's small organs with per-organ sigmas.
HeatmapSet target_heatmaps(const FocusNetImpl& model, const LabelMap& lm, double sigma_min);

}  // namespace focusnet
