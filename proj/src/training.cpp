#include "focusnet/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>

#include "focusnet/json_util.hpp"
#include "focusnet/losses.hpp"
#include "focusnet/rng.hpp"
#include "focusnet/sos.hpp"

namespace focusnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using LossMap = std::map<std::string, torch::Tensor>;
// Rng is null for validation passes (no augmentation).
using LossFn = std::function<LossMap(const Sample&, Rng*)>;

const char* kStageNames[] = {"", "snet", "sol", "sos", "finetune"};

torch::Tensor zero_loss() { return torch::zeros({}, torch::kFloat32); }

json echo_config(const RunConfig& cfg, const std::vector<OrganSpec>& organs, double bg_mean) {
    return {{"snet", cfg.snet},
            {"organs", organs},
            {"background_mean_count", bg_mean},
            {"seed", cfg.train.seed},
            {"loss", cfg.loss},
            {"train", cfg.train},
            {"rng", "per-epoch stream mix(mix(seed, stage), epoch)"}};
}

std::vector<double> echoed_alphas(const json& echo) {
    return class_alphas(echo.at("organs").get<std::vector<OrganSpec>>(),
                        echo.at("background_mean_count").get<double>());
}

// The model topology in the checkpoint must be what the run config asks for.
void check_topology(const RunConfig& cfg, const Checkpoint& ckpt) {
    SNetConfig echoed;
    try {
        echoed = ckpt.config.at("snet").get<SNetConfig>();
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("checkpoint config echo lacks snet: ") + e.what());
    }
    if (!(echoed == cfg.snet))
        throw CheckpointError("checkpoint " + ckpt.tag() +
                              " was trained with a different snet configuration");
}

void write_log_line(const fs::path& path, const EpochRecord& r) {
    if (path.empty()) return;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot append to training log " + path.string());
    json line = {{"stage", r.stage},
                 {"name", kStageNames[r.stage]},
                 {"epoch", r.epoch},
                 {"train", r.losses.train},
                 {"validation", r.losses.validation},
                 {"wall_seconds", r.wall_seconds}};
    out << line.dump() << '\n';
}

std::vector<size_t> shuffled(size_t n, Rng& rng) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

void accumulate(std::map<std::string, double>& sums, const LossMap& terms) {
    for (const auto& [k, v] : terms)
        if (v.defined()) sums[k] += v.item<double>();
}

void average(std::map<std::string, double>& sums, size_t n) {
    if (n == 0) return;
    for (auto& [k, v] : sums) v /= static_cast<double>(n);
}

// Outputs of frozen sub-networks keyed by case id. Entries are only stored while the
// total stays under the byte budget; past it they are recomputed on every call.
class FrozenCache {
public:
    using Entry = std::vector<torch::Tensor>;
    explicit FrozenCache(size_t budget_bytes) : budget_(budget_bytes) {}

    Entry get(const std::string& key, const std::function<Entry()>& compute) {
        if (auto it = entries_.find(key); it != entries_.end()) return it->second;
        torch::NoGradGuard ng;
        Entry e = compute();
        size_t bytes = 0;
        for (const auto& t : e) bytes += static_cast<size_t>(t.numel()) * t.element_size();
        if (used_ + bytes <= budget_) {
            used_ += bytes;
            entries_.emplace(key, e);
        }
        return e;
    }

private:
    size_t budget_;
    size_t used_ = 0;
    std::map<std::string, Entry> entries_;
};

constexpr size_t kFrozenCacheBytes = size_t{1536} << 20;

struct StagePlan {
    int stage = 1;
    FocusNet model{nullptr};
    std::vector<ParamGroup> trainable;
    std::vector<ParamGroup> frozen;
    LossFn loss;
    json config_echo;
};

Checkpoint run_stage(const TrainContext& ctx, StagePlan& plan, const Checkpoint* resume) {
    const auto& cfg = ctx.cfg;
    const auto& sched = cfg.train.stages[static_cast<size_t>(plan.stage - 1)];
    const auto& data = *ctx.data;
    if (data.train.empty()) throw DataError("training split is empty");
    torch::set_num_threads(cfg.train.num_threads);

    auto& model = *plan.model;
    for (auto g : {ParamGroup::SNet, ParamGroup::Sol, ParamGroup::Sos}) model.set_trainable(g, false);
    std::vector<torch::Tensor> params;
    for (auto g : plan.trainable) {
        model.set_trainable(g, true);
        auto p = model.group_parameters(g);
        params.insert(params.end(), p.begin(), p.end());
    }
    if (params.empty()) throw StagingError(std::string("stage ") + std::to_string(plan.stage) +
                                           " has no parameters to train");
    std::vector<torch::Tensor> frozen;
    for (auto g : plan.frozen) {
        auto p = model.group_parameters(g);
        frozen.insert(frozen.end(), p.begin(), p.end());
    }
    const uint64_t frozen_hash = parameter_hash(frozen);

    torch::optim::Adam opt(params, torch::optim::AdamOptions(sched.learning_rate));
    Checkpoint ckpt;
    ckpt.stage = plan.stage;
    ckpt.epochs_planned = sched.epochs;
    ckpt.config = plan.config_echo;
    if (resume) {
        restore_optimizer(opt, model, *resume);
        ckpt.epochs_done = resume->epochs_done;
        if (resume->epochs_done >= sched.epochs) {
            ckpt.model = resume->model;
            ckpt.optimizer = resume->optimizer;
            ckpt.optimizer_steps = resume->optimizer_steps;
            return ckpt;
        }
    }

    model.train();
    const size_t batch = static_cast<size_t>(sched.batch_size);
    for (int epoch = ckpt.epochs_done + 1; epoch <= sched.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng rng(mix_seed(mix_seed(cfg.train.seed, static_cast<uint64_t>(plan.stage)),
                         static_cast<uint64_t>(epoch)));
        const auto order = shuffled(data.train.size(), rng);
        EpochRecord rec;
        rec.stage = plan.stage;
        rec.epoch = epoch;

        for (size_t b = 0; b < order.size(); b += batch) {
            opt.zero_grad();
            const size_t end = std::min(order.size(), b + batch);
            const double scale = 1.0 / static_cast<double>(end - b);
            bool any_grad = false;
            for (size_t i = b; i < end; ++i) {
                auto terms = plan.loss(data.train[order[i]], &rng);
                auto total = terms.at("total");
                if (total.requires_grad()) {
                    (total * scale).backward();
                    any_grad = true;
                }
                accumulate(rec.losses.train, terms);
            }
            if (any_grad) opt.step();
        }
        average(rec.losses.train, data.train.size());

        if (!data.validation.empty()) {
            torch::NoGradGuard ng;
            for (const auto& s : data.validation) accumulate(rec.losses.validation, plan.loss(s, nullptr));
            average(rec.losses.validation, data.validation.size());
        }
        for (const auto& [k, v] : rec.losses.train)
            if (!std::isfinite(v))
                throw std::runtime_error("stage " + std::to_string(plan.stage) + " loss '" + k +
                                         "' became non-finite at epoch " + std::to_string(epoch));

        ckpt.epochs_done = epoch;
        ckpt.model = capture_parameters(model);
        capture_optimizer(opt, model, ckpt);
        if (!ctx.checkpoint_dir.empty())
            save_checkpoint(ckpt, stage_checkpoint_path(ctx.checkpoint_dir, plan.stage));
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_log_line(ctx.log_path, rec);
        if (ctx.on_epoch) ctx.on_epoch(rec);
    }

    if (parameter_hash(frozen) != frozen_hash)
        throw std::logic_error("frozen parameters changed during stage " + std::to_string(plan.stage));
    return ckpt;
}

// Model for stage k: rebuilt from the resume checkpoint if any, else from the prerequisite.
FocusNet stage_model(const TrainContext& ctx, int stage, const Checkpoint& previous,
                     const Checkpoint* resume) {
    require_prerequisite(stage, previous);
    check_topology(ctx.cfg, previous);
    if (resume) {
        if (resume->stage != stage)
            throw StagingError("cannot resume stage " + std::to_string(stage) + " from a " +
                               resume->tag() + " checkpoint");
        check_topology(ctx.cfg, *resume);
        return model_from_checkpoint(*resume);
    }
    return model_from_checkpoint(previous);
}

torch::Tensor organ_mask(const Sample& s, int id) {
    return s.labels_t.eq(id).to(torch::kFloat32).unsqueeze(1);
}

// Binary ROI loss for one organ head; adds a per-organ entry to `terms`.
torch::Tensor roi_term(FocusNetImpl& model, const OrganSpec& organ, const RoiBox& box,
                       const SNetOutput& out, const Sample& s, const torch::Tensor& heat_channel,
                       const LossConfig& lc) {
    auto input = assemble_roi_input(box, out.decoder_features.data, s.image_t,
                                    out.encoder_hr_features.data, heat_channel);
    auto prob = model.sos.at(organ.id)->forward(input);
    auto mask = crop_roi(organ_mask(s, organ.id), box).squeeze(1);
    return binary_roi_loss(prob, mask, 2.0, lc.dice_epsilon, lc.prob_epsilon).total;
}

}  // namespace

fs::path stage_checkpoint_path(const fs::path& dir, int stage) {
    return dir / ("stage" + std::to_string(stage) + ".ckpt");
}

Sample make_sample(std::string case_id, Volume image, LabelMap labels) {
    if (image.shape != labels.shape)
        throw DataError("case " + case_id + ": image and label geometry differ");
    Sample s;
    s.case_id = std::move(case_id);
    s.image_t = volume_tensor(image);
    s.labels_t = torch::empty({1, labels.shape[0], labels.shape[1], labels.shape[2]}, torch::kInt64);
    auto* p = s.labels_t.data_ptr<int64_t>();
    for (size_t i = 0; i < labels.data.size(); ++i) p[i] = labels.data[i];
    s.image = std::move(image);
    s.labels = std::move(labels);
    return s;
}

Sample load_sample(const Manifest& m, size_t index) {
    char id[32];
    std::snprintf(id, sizeof id, "case_%03d", m.samples.at(index).index);
    return make_sample(id, load_volume(m.image_path(index)), load_labels(m.labels_path(index)));
}

Dataset load_dataset(const fs::path& manifest_path, double validation_fraction,
                     double small_organ_threshold) {
    Dataset d;
    d.manifest = load_manifest(manifest_path);
    const size_t n = d.manifest.samples.size();
    const auto n_val = static_cast<size_t>(std::llround(validation_fraction * static_cast<double>(n)));
    if (n_val >= n)
        throw DataError("manifest " + manifest_path.string() + " has " + std::to_string(n) +
                        " samples, too few for a validation fraction of " +
                        std::to_string(validation_fraction));
    std::vector<std::vector<int64_t>> counts;
    std::vector<std::string> names;
    for (const auto& o : d.manifest.organs) names.push_back(o.name);
    for (size_t i = 0; i < n; ++i) {
        auto s = load_sample(d.manifest, i);
        if (i < n - n_val) {
            counts.push_back(organ_voxel_counts(s.labels));
            counts.back().resize(d.manifest.organs.size() + 1, 0);
            d.train.push_back(std::move(s));
        } else {
            d.validation.push_back(std::move(s));
        }
    }
    d.organs = organ_statistics(counts, names, small_organ_threshold, &d.background_mean_count);
    return d;
}

std::vector<double> class_alphas(const std::vector<OrganSpec>& organs, double background_mean_count) {
    std::vector<double> counts{std::max(background_mean_count, 1.0)};
    for (const auto& o : organs) counts.push_back(std::max(o.mean_voxel_count, 1.0));
    return compute_alphas(counts);
}

std::optional<Index3> centroid_voxel(const LabelMap& lm, int cls) {
    const auto c = organ_centroid(lm, cls);
    if (!c) return std::nullopt;
    Index3 v{};
    for (int a = 0; a < 3; ++a)
        v[a] = std::clamp<int64_t>(std::llround((*c)[a]), 0, lm.shape[a] - 1);
    return v;
}

HeatmapSet target_heatmaps(const FocusNetImpl& model, const LabelMap& lm, double sigma_min) {
    const auto small = model.small_organs();
    std::vector<double> sigmas;
    for (const auto& o : small) sigmas.push_back(default_sigma(o, sigma_min));
    return make_target_heatmaps(lm, small, sigmas);
}

void require_prerequisite(int stage, const Checkpoint& ckpt) {
    if (stage < 2 || stage > 4) throw StagingError("stage " + std::to_string(stage) + " takes no prerequisite");
    const std::string expected = "a complete stage" + std::to_string(stage - 1) + " checkpoint";
    if (ckpt.stage != stage - 1)
        throw StagingError("stage " + std::to_string(stage) + " requires " + expected + ", got " +
                           ckpt.tag());
    if (!ckpt.complete())
        throw StagingError("stage " + std::to_string(stage) + " requires " + expected + "; " +
                           ckpt.tag() + " has " + std::to_string(ckpt.epochs_done) + " of " +
                           std::to_string(ckpt.epochs_planned) + " epochs");
}

Checkpoint train_stage1_snet(const TrainContext& ctx, const Checkpoint* resume) {
    const auto& data = *ctx.data;
    const auto& cfg = ctx.cfg;
    if (static_cast<int64_t>(data.organs.size()) + 1 != cfg.snet.num_classes)
        throw DataError("snet.num_classes is " + std::to_string(cfg.snet.num_classes) +
                        " but the dataset has " + std::to_string(data.organs.size()) + " organs");
    check_divisible(cfg.snet, data.train.front().image.shape);

    StagePlan plan;
    plan.stage = 1;
    if (resume) {
        if (resume->stage != 1) throw StagingError("cannot resume stage 1 from a " + resume->tag() + " checkpoint");
        check_topology(cfg, *resume);
        plan.model = model_from_checkpoint(*resume);
        plan.config_echo = resume->config;
    } else {
        plan.model = FocusNet(cfg.snet, data.organs, cfg.train.seed);
        plan.config_echo = echo_config(cfg, data.organs, data.background_mean_count);
    }
    plan.trainable = {ParamGroup::SNet};
    plan.frozen = {ParamGroup::Sol, ParamGroup::Sos};

    const auto alphas = alpha_tensor(cfg.loss, echoed_alphas(plan.config_echo));
    auto model = plan.model;
    const auto lc = cfg.loss;
    plan.loss = [model, alphas, lc](const Sample& s, Rng*) mutable -> LossMap {
        auto out = model->snet->forward(s.image_t);
        auto t = total_loss_from_logits(out.logits, s.labels_t, alphas, lc);
        return {{"focal", t.focal}, {"dice", t.dice}, {"total", t.total}};
    };
    return run_stage(ctx, plan, resume);
}

Checkpoint train_stage2_sol(const TrainContext& ctx, const Checkpoint& stage1, const Checkpoint* resume) {
    StagePlan plan;
    plan.stage = 2;
    plan.model = stage_model(ctx, 2, stage1, resume);
    plan.config_echo = stage1.config;
    plan.config_echo["train"] = ctx.cfg.train;
    if (!plan.model->sol) throw StagingError("stage 2: the organ table has no small organ to localize");
    plan.trainable = {ParamGroup::Sol};
    plan.frozen = {ParamGroup::SNet, ParamGroup::Sos};

    auto model = plan.model;
    const double sigma_min = ctx.cfg.train.sol_sigma_min;
    auto cache = std::make_shared<FrozenCache>(kFrozenCacheBytes);
    plan.loss = [model, sigma_min, cache](const Sample& s, Rng*) mutable -> LossMap {
        auto dec = cache->get(s.case_id, [&] {
            return FrozenCache::Entry{model->snet->forward(s.image_t).decoder_features.data};
        })[0];
        auto heat = model->sol->forward(dec);
        auto target = target_heatmaps(*model, s.labels, sigma_min).data.unsqueeze(0);
        auto mse = heatmap_mse(heat, target);
        return {{"mse", mse}, {"total", mse}};
    };
    return run_stage(ctx, plan, resume);
}

Checkpoint train_stage3_sos(const TrainContext& ctx, const Checkpoint& stage2, const Checkpoint* resume) {
    StagePlan plan;
    plan.stage = 3;
    plan.model = stage_model(ctx, 3, stage2, resume);
    plan.config_echo = stage2.config;
    plan.config_echo["train"] = ctx.cfg.train;
    plan.trainable = {ParamGroup::Sos};
    plan.frozen = {ParamGroup::SNet, ParamGroup::Sol};

    auto model = plan.model;
    const auto cfg = ctx.cfg;
    auto cache = std::make_shared<FrozenCache>(kFrozenCacheBytes);
    plan.loss = [model, cfg, cache](const Sample& s, Rng* rng) mutable -> LossMap {
        const auto frozen = cache->get(s.case_id, [&] {
            auto o = model->snet->forward(s.image_t);
            auto h = model->sol->forward(o.decoder_features.data);
            return FrozenCache::Entry{o.decoder_features.data, o.encoder_hr_features.data, h};
        });
        SNetOutput out;
        out.decoder_features = {frozen[0], 1};
        out.encoder_hr_features = {frozen[1], 1};
        const auto& heat = frozen[2];
        LossMap terms;
        torch::Tensor total = zero_loss();
        const auto small = model->small_organs();
        for (size_t k = 0; k < small.size(); ++k) {
            const auto& organ = small[k];
            auto c = centroid_voxel(s.labels, organ.id);
            if (!c) continue;
            if (rng) {
                const double reach = cfg.train.roi_jitter * static_cast<double>(roi_side(organ, cfg.train.roi_factor));
                for (int a = 0; a < 3; ++a)
                    (*c)[a] = std::clamp<int64_t>((*c)[a] + std::llround(rng->uniform(-reach, reach)), 0,
                                                  s.labels.shape[a] - 1);
            }
            const auto box = roi_box(*c, organ, cfg.train.roi_factor, s.labels.shape);
            auto term = roi_term(*model, organ, box, out, s,
                                 heat.slice(1, static_cast<int64_t>(k), static_cast<int64_t>(k) + 1), cfg.loss);
            terms["sos_" + organ.name] = term;
            total = total + term;
        }
        terms["total"] = total;
        return terms;
    };
    return run_stage(ctx, plan, resume);
}

JointLoss joint_loss(FocusNetImpl& model, const Sample& s, const RunConfig& cfg,
                     const torch::Tensor& alphas, const HeatmapSet& target) {
    JointLoss j;
    auto out = model.snet->forward(s.image_t);
    j.segmentation = total_loss_from_logits(out.logits, s.labels_t, alphas, cfg.loss).total;
    j.sos = zero_loss();
    j.heatmap = zero_loss();
    if (model.sol) {
        auto heat = model.sol->forward(out.decoder_features.data);
        j.heatmap = heatmap_mse(heat, target.data.unsqueeze(0));
        const auto small = model.small_organs();
        for (size_t k = 0; k < small.size(); ++k) {
            const auto& organ = small[k];
            auto gt = centroid_voxel(s.labels, organ.id);
            if (!gt) continue;
            auto channel = heat.slice(1, static_cast<int64_t>(k), static_cast<int64_t>(k) + 1);
            auto peak = locate_peak(channel.detach()[0][0], cfg.train.presence_threshold);
            const auto box = roi_box(peak ? *peak : *gt, organ, cfg.train.roi_factor, s.labels.shape);
            j.sos = j.sos + roi_term(model, organ, box, out, s, channel, cfg.loss);
        }
    }
    j.total = cfg.train.weight_segmentation * j.segmentation + cfg.train.weight_heatmap * j.heatmap +
              cfg.train.weight_sos * j.sos;
    return j;
}

Checkpoint train_stage4_finetune(const TrainContext& ctx, const Checkpoint& stage3, const Checkpoint* resume) {
    StagePlan plan;
    plan.stage = 4;
    plan.model = stage_model(ctx, 4, stage3, resume);
    plan.config_echo = stage3.config;
    plan.config_echo["train"] = ctx.cfg.train;
    plan.trainable = {ParamGroup::SNet, ParamGroup::Sol, ParamGroup::Sos};

    auto model = plan.model;
    const auto cfg = ctx.cfg;
    const auto alphas = alpha_tensor(cfg.loss, echoed_alphas(stage3.config));
    plan.loss = [model, cfg, alphas](const Sample& s, Rng*) mutable -> LossMap {
        const auto target = target_heatmaps(*model, s.labels, cfg.train.sol_sigma_min);
        auto j = joint_loss(*model, s, cfg, alphas, target);
        return {{"segmentation", j.segmentation}, {"mse", j.heatmap}, {"sos", j.sos}, {"total", j.total}};
    };
    return run_stage(ctx, plan, resume);
}

Checkpoint train_stage(int stage, const TrainContext& ctx, const Checkpoint* previous,
                       const Checkpoint* resume) {
    if (stage == 1) return train_stage1_snet(ctx, resume);
    if (!previous)
        throw StagingError("stage " + std::to_string(stage) + " requires a complete stage" +
                           std::to_string(stage - 1) + " checkpoint");
    switch (stage) {
        case 2: return train_stage2_sol(ctx, *previous, resume);
        case 3: return train_stage3_sos(ctx, *previous, resume);
        case 4: return train_stage4_finetune(ctx, *previous, resume);
        default: throw StagingError("unknown stage " + std::to_string(stage));
    }
}

}  // namespace focusnet
