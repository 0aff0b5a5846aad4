#include "focusnet/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "focusnet/sol.hpp"
#include "focusnet/sos.hpp"

namespace focusnet {

namespace fs = std::filesystem;

std::string to_string(PredictMode m) { return m == PredictMode::SNetOnly ? "snet-only" : "focusnet"; }

Prediction predict_snet_only(FocusNetImpl& model, const Volume& v) {
    auto out = snet_forward(model.snet, v);
    Prediction p;
    p.labels = fuse_predictions(out.logits[0], {}, {}, v.spacing);
    return p;
}

Prediction predict_focusnet(FocusNetImpl& model, const Volume& v, const InferenceOptions& opt) {
    torch::NoGradGuard ng;
    model.eval();
    auto out = snet_forward(model.snet, v);
    const auto small = model.small_organs();
    const auto ids = model.small_ids();
    Prediction p;
    if (model.sol) {
        auto heat = model.sol->forward(out.decoder_features.data);
        auto raw = volume_tensor(v);
        for (size_t k = 0; k < small.size(); ++k) {
            const auto& organ = small[k];
            const auto ch = static_cast<int64_t>(k);
            auto peak = locate_peak(heat[0][ch], opt.presence_threshold);
            p.peaks[organ.id] = peak;
            if (!peak) continue;
            const auto box = roi_box(*peak, organ, opt.roi_factor, v.shape);
            auto input = assemble_roi_input(box, out.decoder_features.data, raw,
                                            out.encoder_hr_features.data, heat.slice(1, ch, ch + 1));
            auto prob = sos_forward(model.sos.at(organ.id), input);
            p.rois.push_back({box, prob[0][0]});
        }
    }
    p.labels = fuse_predictions(out.logits[0], p.rois, std::set<int>(ids.begin(), ids.end()), v.spacing,
                                opt.fusion_threshold);
    return p;
}

InferenceOptions inference_options(const Checkpoint& c) {
    InferenceOptions o;
    TrainConfig t;
    if (c.config.contains("train")) t = c.config.at("train").get<TrainConfig>();
    o.roi_factor = t.roi_factor;
    o.presence_threshold = t.presence_threshold;
    o.fusion_threshold = t.fusion_threshold;
    return o;
}

Prediction predict(FocusNetImpl& model, const Volume& v, PredictMode mode, const InferenceOptions& opt) {
    return mode == PredictMode::SNetOnly ? predict_snet_only(model, v) : predict_focusnet(model, v, opt);
}

Evaluation evaluate_samples(FocusNetImpl& model, const std::vector<Sample>& samples, PredictMode mode,
                            const InferenceOptions& opt) {
    Evaluation e;
    e.mode = mode;
    for (const auto& s : samples) {
        auto pred = predict(model, s.image, mode, opt);
        auto rows = evaluate_case(pred.labels, s.labels, model.organs(), s.case_id);
        e.cases.insert(e.cases.end(), rows.begin(), rows.end());
    }
    e.rows = aggregate(e.cases, model.organs());
    return e;
}

namespace {

std::optional<double> group_mean_hd95(const std::vector<AggregateRow>& rows, bool small) {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : rows)
        if (r.is_small == small && r.hd95_count > 0) {
            sum += r.hd95_mean;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return sum / n;
}

std::optional<double> dsc_of(const AggregateRow& r) {
    return r.dsc_count > 0 ? std::optional<double>(r.dsc_mean) : std::nullopt;
}

std::optional<double> hd_of(const AggregateRow& r) {
    return r.hd95_count > 0 ? std::optional<double>(r.hd95_mean) : std::nullopt;
}

std::string fmt(std::optional<double> v, double scale = 1.0) {
    if (!v) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", *v * scale);
    return buf;
}

std::string delta(std::optional<double> a, std::optional<double> b, double scale = 1.0) {
    if (!a || !b) return "NA";
    return fmt(*b - *a, scale);
}

}  // namespace

std::vector<ComparisonRow> compare(const std::vector<AggregateRow>& a, const std::vector<AggregateRow>& b) {
    std::vector<ComparisonRow> out;
    for (const auto& ra : a) {
        ComparisonRow row;
        row.label = ra.name;
        row.organ_id = ra.organ_id;
        row.is_small = ra.is_small;
        row.dsc_a = dsc_of(ra);
        row.hd95_a = hd_of(ra);
        for (const auto& rb : b)
            if (rb.organ_id == ra.organ_id) {
                row.dsc_b = dsc_of(rb);
                row.hd95_b = hd_of(rb);
            }
        out.push_back(row);
    }
    for (bool small : {true, false}) {
        ComparisonRow row;
        row.label = small ? "small_mean" : "large_mean";
        row.is_small = small;
        row.dsc_a = group_mean_dsc(a, small);
        row.dsc_b = group_mean_dsc(b, small);
        row.hd95_a = group_mean_hd95(a, small);
        row.hd95_b = group_mean_hd95(b, small);
        out.push_back(row);
    }
    return out;
}

void write_comparison_table(std::ostream& out, const std::vector<ComparisonRow>& rows,
                            const std::string& name_a, const std::string& name_b) {
    out << "# a=" << name_a << " b=" << name_b << " (dsc in points, deltas are b - a)\n";
    out << "organ,id,is_small,dsc_a,dsc_b,dsc_delta,hd95_a,hd95_b,hd95_delta\n";
    for (const auto& r : rows) {
        out << r.label << ',' << r.organ_id << ',' << (r.is_small ? 1 : 0) << ',' << fmt(r.dsc_a, 100.0)
            << ',' << fmt(r.dsc_b, 100.0) << ',' << delta(r.dsc_a, r.dsc_b, 100.0) << ','
            << fmt(r.hd95_a) << ',' << fmt(r.hd95_b) << ',' << delta(r.hd95_a, r.hd95_b) << '\n';
    }
}

void write_report(const Evaluation& e, const fs::path& dir) {
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "cases.csv");
        if (!out) throw std::runtime_error("cannot write " + (dir / "cases.csv").string());
        write_case_table(out, e.cases);
    }
    std::ofstream out(dir / "aggregate.csv");
    if (!out) throw std::runtime_error("cannot write " + (dir / "aggregate.csv").string());
    write_aggregate_table(out, e.rows);
}

}  // namespace focusnet
