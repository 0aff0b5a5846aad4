#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "focusnet/metrics.hpp"
#include "focusnet/model.hpp"
#include "focusnet/training.hpp"

namespace focusnet {

enum class PredictMode { SNetOnly, FocusNet };

/// Checkpoints before the SOS stage have no trained ROI heads, so they predict with
/// S-Net alone.
inline PredictMode mode_for_stage(int stage) {
    return stage <= 2 ? PredictMode::SNetOnly : PredictMode::FocusNet;
}

std::string to_string(PredictMode m);

struct InferenceOptions {
    double roi_factor = 3.0;
    double presence_threshold = 0.1;
    double fusion_threshold = 0.5;
};

struct Prediction {
    LabelMap labels;
    std::map<int, std::optional<Index3>> peaks;   // small organ id -> located peak
    std::vector<SmallOrganResult> rois;
};

/// Plain argmax of the S-Net logits.
Prediction predict_snet_only(FocusNetImpl& model, const Volume& v);

/// S-Net -> SOL peaks -> per-organ SOS on each ROI -> fusion. An organ whose peak is
/// absent gets no ROI, so any S-Net voxels for it are cleared.
Prediction predict_focusnet(FocusNetImpl& model, const Volume& v, const InferenceOptions& opt);

/// Inference options recorded in the checkpoint's training echo (defaults when absent).
InferenceOptions inference_options(const Checkpoint& ckpt);

Prediction predict(FocusNetImpl& model, const Volume& v, PredictMode mode, const InferenceOptions& opt);

struct Evaluation {
    PredictMode mode = PredictMode::SNetOnly;
    std::vector<OrganReport> cases;
    std::vector<AggregateRow> rows;
};

Evaluation evaluate_samples(FocusNetImpl& model, const std::vector<Sample>& samples,
                            PredictMode mode, const InferenceOptions& opt);

/// One row per organ comparing two evaluations (b minus a) plus small/large group rows.
struct ComparisonRow {
    std::string label;    // organ name, "small_mean" or "large_mean"
    int organ_id = 0;     // 0 for group rows
    bool is_small = false;
    std::optional<double> dsc_a, dsc_b;
    std::optional<double> hd95_a, hd95_b;
};

std::vector<ComparisonRow> compare(const std::vector<AggregateRow>& a, const std::vector<AggregateRow>& b);

/// Columns: organ,id,is_small,dsc_a,dsc_b,dsc_delta,hd95_a,hd95_b,hd95_delta.
/// DSC columns are in points (x100).
void write_comparison_table(std::ostream& out, const std::vector<ComparisonRow>& rows,
                            const std::string& name_a, const std::string& name_b);

/// Writes cases.csv and aggregate.csv into `dir`.
void write_report(const Evaluation& e, const std::filesystem::path& dir);

}  // namespace focusnet
