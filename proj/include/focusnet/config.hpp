#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "focusnet/losses.hpp"
#include "focusnet/phantom.hpp"
#include "focusnet/snet.hpp"

namespace focusnet {

struct StageSchedule {
    int epochs = 1;
    double learning_rate = 1e-3;
    int batch_size = 1;
};

struct TrainConfig {
    // S-Net, SOL, SOS, end-to-end finetune.
    std::array<StageSchedule, 4> stages{{{60, 1e-3, 1}, {40, 1e-3, 1}, {40, 1e-3, 1}, {40, 1e-4, 1}}};
    double roi_factor = 3.0;
    double sol_sigma_min = 2.0;        // sigma = max(min, mean_diameter / 2), voxels
    double presence_threshold = 0.1;
    double fusion_threshold = 0.5;
    double roi_jitter = 0.1;           // fraction of the ROI side
    double validation_fraction = 0.2;  // tail of the manifest
    double weight_segmentation = 1.0;  // joint objective weights for the finetune stage
    double weight_heatmap = 1.0;
    double weight_sos = 1.0;
    uint64_t seed = 0;
    int num_threads = 1;
    std::string manifest = "data/manifest.json";
    std::string checkpoint_dir = "checkpoints";

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct MetricOptions {
    double small_organ_threshold = 1000.0;
};

/// Everything a command needs, read from one JSON document with sections
/// phantom / snet / loss / train / metrics. Every field has a default and unknown
/// keys are rejected. When snet.num_classes is omitted it follows the phantom organs.
struct RunConfig {
    PhantomSpec phantom = PhantomSpec::desk_default();
    SNetConfig snet;
    LossConfig loss;
    TrainConfig train;
    MetricOptions metrics;

    void validate() const;
    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
};

}  // namespace focusnet
