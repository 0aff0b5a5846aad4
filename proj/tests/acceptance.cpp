// Acceptance harness: one PASS/FAIL line per criterion. Tolerances and budgets are
// pinned below. Exit status is 0 only when every selected criterion passes.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "focusnet/checkpoint.hpp"
#include "focusnet/losses.hpp"
#include "focusnet/metrics.hpp"
#include "focusnet/pipeline.hpp"
#include "focusnet/runtime.hpp"
#include "focusnet/snet.hpp"
#include "focusnet/training.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace focusnet;

namespace {

// ---- pinned tolerances and budgets ------------------------------------------
constexpr double kLossRelTol = 1e-6;
constexpr double kGradRelTol = 1e-4;
constexpr double kHd95AbsTol = 1e-9;
constexpr double kLocalizationRate = 0.90;
constexpr double kSmallGainPoints = 2.0;
constexpr double kLargeDropPoints = 1.0;
constexpr double kBudgetC1 = 10, kBudgetC2 = 60, kBudgetC3 = 60, kBudgetC4 = 300;   // seconds
constexpr int kTrainCount = 50;        // 40 train + 10 validation at fraction 0.2
constexpr int kHeldOutCount = 20;
constexpr uint64_t kHeldOutSeed = 5000;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::vector<double> to_vec(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat64).contiguous();
    return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

std::vector<int> to_ivec(const torch::Tensor& t) {
    auto c = t.to(torch::kInt64).contiguous();
    std::vector<int> out(static_cast<size_t>(c.numel()));
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(c.data_ptr<int64_t>()[i]);
    return out;
}

double rel(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

// ---- C1 ---------------------------------------------------------------------
Outcome c1_loss_oracles() {
    const auto t0 = std::chrono::steady_clock::now();
    torch::manual_seed(101);
    std::mt19937_64 gen(101);
    std::uniform_real_distribution<double> ua(0.05, 3.0), ug(0.0, 4.0);
    double worst_focal = 0, worst_ce = 0, worst_dice = 0;
    bool unclamped = true;
    for (int k = 0; k < 20; ++k) {
        auto probs = torch::softmax(torch::randn({1, 4, 8, 8, 8}, torch::kFloat64) * 3, 1);
        auto labels = torch::randint(0, 4, {1, 8, 8, 8}, torch::kInt64);
        std::vector<double> alpha{ua(gen), ua(gen), ua(gen), ua(gen)};
        const double gamma = k == 0 ? 2.0 : ug(gen);
        const auto pv = to_vec(probs);
        const auto lv = to_ivec(labels);
        worst_focal = std::max(worst_focal, rel(focal_loss(probs, labels, torch::tensor(alpha, torch::kFloat64), gamma)
                                                    .item<double>(),
                                                oracle::focal(pv, lv, 4, alpha, gamma)));
        LossConfig ce;
        ce.gamma = 0;
        ce.alpha_mode = AlphaMode::Uniform;
        ce.use_dice = false;
        // The equivalence holds where the probability clamp is inactive, so these
        // inputs keep every probability above it.
        auto mild = torch::softmax(torch::randn({1, 4, 8, 8, 8}, torch::kFloat64), 1);
        if (mild.min().item<double>() <= ce.prob_epsilon) unclamped = false;
        const double got = total_loss(mild, labels, alpha_tensor(ce, alpha, torch::kFloat64), ce).total.item<double>();
        worst_ce = std::max(worst_ce, rel(got, oracle::cross_entropy(to_vec(mild), lv)));
        worst_dice = std::max(worst_dice, rel(generalized_dice_loss(probs, one_hot_channels(labels, 4, torch::kFloat64))
                                                  .item<double>(),
                                              oracle::dice(pv, lv, 4)));
    }
    // Half overlap: class 1 on voxels {0,1}, predicted on {1,2}; background the complement.
    auto labels = torch::tensor({1, 1, 0, 0}, torch::kInt64).view({1, 4});
    auto probs = torch::zeros({1, 2, 4}, torch::kFloat64);
    probs[0][1][1] = 1;
    probs[0][1][2] = 1;
    probs[0][0][0] = 1;
    probs[0][0][3] = 1;
    const double eps = 1e-5;
    const double hand = 2.0 * (1.0 - (2.0 * 1 + eps) / (4 + eps));   // both classes overlap by half
    const double half = generalized_dice_loss(probs, one_hot_channels(labels, 2, torch::kFloat64), eps).item<double>();
    const double worst_hand = rel(half, hand);
    const bool half_is_half = std::abs(hand / 2.0 - 0.5) <= 1e-5;
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = worst_focal <= kLossRelTol && worst_ce <= kLossRelTol && worst_dice <= kLossRelTol &&
             worst_hand <= kLossRelTol && half_is_half && unclamped && secs < kBudgetC1;
    o.detail = "focal rel " + fmt("%.2e", worst_focal) + ", CE rel " + fmt("%.2e", worst_ce) + ", dice rel " +
               fmt("%.2e", worst_dice) + ", half-overlap per-class " + fmt("%.6f", half / 2) + " (tol " +
               fmt("%.0e", kLossRelTol) + "), " + fmt("%.1f", secs) + " s";
    return o;
}

// ---- C2 ---------------------------------------------------------------------
// Normwise relative error between the autograd gradient and central differences.
double grad_check(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x) {
    x = x.detach().clone().requires_grad_(true);
    f(x).backward();
    auto ana = x.grad().detach().flatten();
    auto flat = x.detach().clone().flatten();
    auto num = torch::zeros_like(flat);
    const double h = 1e-6;
    for (int64_t i = 0; i < flat.numel(); ++i) {
        auto xp = flat.clone(), xm = flat.clone();
        xp[i] += h;
        xm[i] -= h;
        num[i] = (f(xp.view_as(x)).item<double>() - f(xm.view_as(x)).item<double>()) / (2 * h);
    }
    return (ana - num).norm().item<double>() / std::max(num.norm().item<double>(), 1e-300);
}

Outcome c2_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst_total = 0, worst_mse = 0;
    for (int seed = 0; seed < 10; ++seed) {
        torch::manual_seed(200 + seed);
        auto labels = torch::randint(0, 4, {1, 4, 4, 4}, torch::kInt64);
        auto alphas = torch::rand({4}, torch::kFloat64) + 0.1;
        LossConfig cfg;
        worst_total = std::max(worst_total, grad_check([&](const torch::Tensor& z) {
                                   return total_loss_from_logits(z, labels, alphas, cfg).total;
                               },
                                                       torch::randn({1, 4, 4, 4, 4}, torch::kFloat64)));
        auto target = torch::rand({1, 2, 4, 4, 4}, torch::kFloat64);
        worst_mse = std::max(worst_mse, grad_check([&](const torch::Tensor& p) { return heatmap_mse(p, target); },
                                                   torch::rand({1, 2, 4, 4, 4}, torch::kFloat64)));
    }
    const double secs = seconds_since(t0);
    return {worst_total <= kGradRelTol && worst_mse <= kGradRelTol && secs < kBudgetC2,
            "total_loss rel " + fmt("%.2e", worst_total) + ", heatmap_mse rel " + fmt("%.2e", worst_mse) +
                " over 10 seeds (tol " + fmt("%.0e", kGradRelTol) + "), " + fmt("%.1f", secs) + " s"};
}

// ---- C3 ---------------------------------------------------------------------
Mask random_mask(std::mt19937_64& gen, const Shape3& s, double density) {
    std::uniform_real_distribution<double> u(0, 1);
    Mask m{s, std::vector<uint8_t>(static_cast<size_t>(voxel_count(s)))};
    for (auto& v : m.data) v = u(gen) < density ? 1 : 0;
    return m;
}

Outcome c3_metrics() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 gen(303);
    std::uniform_int_distribution<int64_t> dim(1, 12);
    std::uniform_real_distribution<double> dens(0.02, 0.6);
    int dsc_mismatch = 0, defined_mismatch = 0;
    double worst_hd = 0;
    for (int k = 0; k < 50; ++k) {
        const Shape3 s{dim(gen), dim(gen), dim(gen)};
        const Spacing3 sp = k % 2 == 0 ? Spacing3{1, 1, 3} : Spacing3{0.8, 1.0, 2.5};
        const auto a = random_mask(gen, s, dens(gen)), b = random_mask(gen, s, dens(gen));
        const oracle::Grid ga{s, a.data}, gb{s, b.data};
        const auto d = dsc(a, b), od = oracle::dsc(ga, gb);
        if (d.has_value() != od.has_value()) ++defined_mismatch;
        else if (d && *d != *od) ++dsc_mismatch;
        const auto h = hd95(a, b, sp), oh = oracle::hd95(ga, gb, sp);
        if (h.has_value() != oh.has_value()) ++defined_mismatch;
        else if (h) worst_hd = std::max(worst_hd, std::abs(*h - *oh));
    }
    Mask p{{4, 4, 4}, std::vector<uint8_t>(64, 0)}, q = p;
    p.data[static_cast<size_t>(linear_index(p.shape, 1, 1, 1))] = 1;
    q.data[static_cast<size_t>(linear_index(q.shape, 2, 1, 1))] = 1;
    const auto single = hd95(p, q, {3, 1, 1});
    const bool single_ok = single && *single == 3.0;
    const double secs = seconds_since(t0);
    return {dsc_mismatch == 0 && defined_mismatch == 0 && worst_hd <= kHd95AbsTol && single_ok && secs < kBudgetC3,
            std::to_string(dsc_mismatch) + " dsc mismatches, max |hd95 - oracle| " + fmt("%.2e", worst_hd) +
                ", single voxel 3 mm -> " + (single ? fmt("%.17g", *single) : std::string("NA")) + ", " +
                fmt("%.1f", secs) + " s"};
}

// ---- C4 ---------------------------------------------------------------------
Outcome c4_architecture() {
    const auto t0 = std::chrono::steady_clock::now();
    int failures = 0, configs = 0;
    std::string first_failure;
    auto fail = [&](const std::string& why) {
        if (failures++ == 0) first_failure = why;
    };
    for (int64_t d = 1; d <= 4; ++d)
        for (double wm : {1.0, 2.0}) {
            ++configs;
            SNetConfig cfg;   // library defaults apart from the swept fields
            cfg.num_downsamples = d;
            cfg.width_multiplier = wm;
            const std::string tag = "d=" + std::to_string(d) + " w=" + fmt("%.0f", wm);
            auto net = build_snet(cfg, 400 + static_cast<uint64_t>(d));
            torch::manual_seed(401);
            auto x = torch::randn({1, 1, 48, 48, 48});
            auto out = net->forward(x);
            if (out.logits.sizes() != torch::IntArrayRef{1, cfg.num_classes, 48, 48, 48})
                fail(tag + " logits shape");
            if (out.decoder_features.data.sizes().slice(2) != x.sizes().slice(2)) fail(tag + " decoder shape");
            auto& aspp = net->aspp();
            const int64_t cin = cfg.width_at(d), w = cfg.aspp_branch_width();
            for (size_t i = 0; i < aspp->num_branches(); ++i)
                if (aspp->branch_input_channels(i) != cin + static_cast<int64_t>(i) * w) fail(tag + " aspp branch");
            if (aspp->num_branches() != cfg.aspp_rates.size() ||
                aspp->projection_input_channels() != cin + static_cast<int64_t>(cfg.aspp_rates.size()) * w)
                fail(tag + " aspp projection");
            out.logits.square().mean().backward();
            for (const auto& p : net->named_parameters()) {
                const auto& g = p.value().grad();
                if (!g.defined() || !torch::isfinite(g).all().item<bool>()) {
                    fail(tag + " gradient of " + p.key());
                    break;
                }
            }
        }
    const double secs = seconds_since(t0);
    return {failures == 0 && secs < kBudgetC4,
            std::to_string(configs) + " configs at 48^3, " + std::to_string(failures) + " contract failures" +
                (first_failure.empty() ? "" : " (first: " + first_failure + ")") + ", " + fmt("%.1f", secs) + " s"};
}

// ---- shared staged run for C5-C7 --------------------------------------------
struct StagedRun {
    fs::path work;
    RunConfig cfg;
    Dataset data;
    std::vector<Sample> heldout;
    std::map<int, Checkpoint> ckpt;   // stage -> completed checkpoint (roi factor 3)
    std::map<int, double> stage_seconds;
};

// Reuses a completed checkpoint only when asked to and only if it echoes the same training config.
Checkpoint train_or_reuse(int stage, const TrainContext& ctx, const Checkpoint* prev, bool reuse, double* secs) {
    const auto path = stage_checkpoint_path(ctx.checkpoint_dir, stage);
    if (reuse && fs::exists(path)) {
        auto c = load_checkpoint(path);
        if (c.stage == stage && c.complete() && c.config.contains("train") &&
            c.config.at("train") == nlohmann::json(ctx.cfg.train)) {
            std::cerr << "  reusing " << path.string() << '\n';
            *secs = 0;
            return c;
        }
    }
    const auto t0 = std::chrono::steady_clock::now();
    auto c = train_stage(stage, ctx, prev);
    save_checkpoint(c, path);
    *secs = seconds_since(t0);
    return c;
}

TrainContext make_context(const StagedRun& r, const fs::path& ckdir) {
    TrainContext ctx;
    ctx.cfg = r.cfg;
    ctx.data = &r.data;
    ctx.checkpoint_dir = ckdir;
    ctx.log_path = ckdir / "train_log.jsonl";
    ctx.on_epoch = [](const EpochRecord& e) {
        std::fprintf(stderr, "  stage %d epoch %d train %.4f val %.4f (%.1fs)\n", e.stage, e.epoch,
                     e.losses.train.count("total") ? e.losses.train.at("total") : 0.0,
                     e.losses.validation.count("total") ? e.losses.validation.at("total") : 0.0, e.wall_seconds);
    };
    return ctx;
}

StagedRun prepare_run(const fs::path& work, bool reuse) {
    StagedRun r;
    r.work = work;
    r.cfg = RunConfig::load(fs::path(FOCUSNET_SOURCE_DIR) / "configs" / "acceptance.json");
    fs::create_directories(work);
    const auto data_dir = work / "data", held_dir = work / "heldout";
    if (!(reuse && fs::exists(data_dir / "manifest.json")))
        generate_dataset(r.cfg.phantom, kTrainCount, data_dir, r.cfg.metrics.small_organ_threshold);
    auto held_spec = r.cfg.phantom;
    held_spec.seed = kHeldOutSeed;
    if (!(reuse && fs::exists(held_dir / "manifest.json")))
        generate_dataset(held_spec, kHeldOutCount, held_dir, r.cfg.metrics.small_organ_threshold);
    r.data = load_dataset(data_dir / "manifest.json", r.cfg.train.validation_fraction,
                          r.cfg.metrics.small_organ_threshold);
    const auto held = load_manifest(held_dir / "manifest.json");
    for (size_t i = 0; i < held.samples.size(); ++i) r.heldout.push_back(load_sample(held, i));
    return r;
}

void train_main(StagedRun& r, int up_to, bool reuse) {
    const auto ctx = make_context(r, r.work / "checkpoints");
    for (int s = 1; s <= up_to; ++s) {
        if (r.ckpt.contains(s)) continue;
        std::cerr << "training stage " << s << '\n';
        const Checkpoint* prev = s > 1 ? &r.ckpt.at(s - 1) : nullptr;
        r.ckpt[s] = train_or_reuse(s, ctx, prev, reuse, &r.stage_seconds[s]);
    }
}

double total_seconds(const StagedRun& r, int up_to) {
    double t = 0;
    for (int s = 1; s <= up_to; ++s) t += r.stage_seconds.count(s) ? r.stage_seconds.at(s) : 0.0;
    return t;
}

// ---- C5 ---------------------------------------------------------------------
Outcome c5_localization(StagedRun& r, bool reuse) {
    train_main(r, 2, reuse);
    auto model = model_from_checkpoint(r.ckpt.at(2));
    const auto opt = inference_options(r.ckpt.at(2));
    const auto small = model->small_organs();
    const auto ids = model->small_ids();
    int present = 0, inside = 0;
    for (const auto& s : r.heldout) {
        const auto out = snet_forward(model->snet, s.image);
        const auto heat = sol_forward(model->sol, out.decoder_features, ids);
        for (size_t k = 0; k < ids.size(); ++k) {
            Index3 lo{INT64_MAX, INT64_MAX, INT64_MAX}, hi{-1, -1, -1};
            const auto& sh = s.labels.shape;
            for (int64_t i = 0; i < voxel_count(sh); ++i) {
                if (s.labels.data[static_cast<size_t>(i)] != ids[k]) continue;
                const auto p = unravel(sh, i);
                for (int a = 0; a < 3; ++a) {
                    lo[a] = std::min(lo[a], p[a]);
                    hi[a] = std::max(hi[a], p[a]);
                }
            }
            if (hi[0] < 0) continue;
            ++present;
            const auto peak = locate_peak(heat.data[static_cast<int64_t>(k)], opt.presence_threshold);
            if (!peak) continue;
            bool in = true;
            for (int a = 0; a < 3; ++a) in = in && (*peak)[a] >= lo[a] && (*peak)[a] <= hi[a];
            inside += in;
        }
    }
    const double rate = present ? static_cast<double>(inside) / present : 0.0;
    return {present > 0 && rate >= kLocalizationRate && r.data.train.size() >= 40,
            std::to_string(inside) + "/" + std::to_string(present) + " peaks inside the organ bounding box (" +
                fmt("%.1f", 100 * rate) + "%, need >= " + fmt("%.0f", 100 * kLocalizationRate) + "%) on " +
                std::to_string(r.heldout.size()) + " held-out samples, trained on " +
                std::to_string(r.data.train.size()) + " samples, stages 1-2 took " +
                fmt("%.0f", total_seconds(r, 2)) + " s"};
}

// ---- C6 ---------------------------------------------------------------------
Evaluation evaluate_checkpoint(const Checkpoint& c, const std::vector<Sample>& samples) {
    auto model = model_from_checkpoint(c);
    return evaluate_samples(*model, samples, mode_for_stage(c.stage), inference_options(c));
}

Outcome c6_ablation(StagedRun& r, bool reuse) {
    train_main(r, 4, reuse);
    const auto a = evaluate_checkpoint(r.ckpt.at(1), r.heldout);
    const auto b = evaluate_checkpoint(r.ckpt.at(4), r.heldout);
    const auto dir = r.work / "c6";
    write_report(a, dir / "snet_only");
    write_report(b, dir / "focusnet");
    {
        std::ofstream out(dir / "comparison.csv");
        write_comparison_table(out, compare(a.rows, b.rows), "stage1", "stage4");
    }
    const auto sa = group_mean_dsc(a.rows, true), sb = group_mean_dsc(b.rows, true);
    const auto la = group_mean_dsc(a.rows, false), lb = group_mean_dsc(b.rows, false);
    if (!sa || !sb || !la || !lb) return {false, "a group mean is undefined"};
    const double gain = 100 * (*sb - *sa), drop = 100 * (*la - *lb);
    return {gain >= kSmallGainPoints && drop < kLargeDropPoints,
            "small-organ DSC " + fmt("%.2f", 100 * *sa) + " -> " + fmt("%.2f", 100 * *sb) + " (" +
                fmt("%+.2f", gain) + " pts, need >= +" + fmt("%.0f", kSmallGainPoints) + "), large-organ DSC " +
                fmt("%.2f", 100 * *la) + " -> " + fmt("%.2f", 100 * *lb) + " (drop " + fmt("%.2f", drop) +
                " pts, need < " + fmt("%.0f", kLargeDropPoints) + "), 20 held-out, full run " +
                fmt("%.0f", total_seconds(r, 4)) + " s; table " + (dir / "comparison.csv").string()};
}

// ---- C7 ---------------------------------------------------------------------
Outcome c7_roi_ablation(StagedRun& r, bool reuse) {
    train_main(r, 4, reuse);
    const auto dir = r.work / "c7";
    fs::create_directories(dir);
    std::ostringstream table;
    table << "roi_factor,small_mean_dsc,large_mean_dsc\n";
    int ok = 0;
    for (double f : {2.0, 3.0, 5.0}) {
        Checkpoint final4;
        if (f == 3.0) {
            final4 = r.ckpt.at(4);
        } else {
            auto ctx = make_context(r, dir / ("roi_" + fmt("%.0f", f)));
            ctx.cfg.train.roi_factor = f;
            double t3 = 0, t4 = 0;
            std::cerr << "roi factor " << f << ": stages 3-4\n";
            const auto s3 = train_or_reuse(3, ctx, &r.ckpt.at(2), reuse, &t3);
            final4 = train_or_reuse(4, ctx, &s3, reuse, &t4);
        }
        const auto e = evaluate_checkpoint(final4, r.heldout);
        write_report(e, dir / ("report_" + fmt("%.0f", f)));
        const auto s = group_mean_dsc(e.rows, true), l = group_mean_dsc(e.rows, false);
        table << fmt("%.0f", f) << ',' << (s ? fmt("%.2f", 100 * *s) : "NA") << ','
              << (l ? fmt("%.2f", 100 * *l) : "NA") << '\n';
        ok += s && l;
    }
    {
        std::ofstream out(dir / "roi_ablation.csv");
        out << table.str();
    }
    std::string rows = table.str();
    for (auto& ch : rows)
        if (ch == '\n') ch = ' ';
    return {ok == 3 && fs::exists(dir / "roi_ablation.csv"), "factors 2/3/5 ran; " + rows};
}

// ---- C8 ---------------------------------------------------------------------
int run_cli(const fs::path& dir, const std::string& args) {
    const std::string cmd = std::string(FOCUSNET_CLI_PATH) + " --threads 1 -q --workdir " + dir.string() +
                            " --config " + (dir / "cfg.json").string() + " " + args + " > " +
                            (dir / "cli.log").string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) { return testing::slurp(p); }

Outcome c8_determinism(const fs::path& work) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<fs::path> runs{work / "c8" / "run_a", work / "c8" / "run_b"};
    for (const auto& d : runs) {
        fs::remove_all(d);
        fs::create_directories(d);
        auto cfg = testing::tiny_run(2);
        cfg.train.seed = 8;
        std::ofstream(d / "cfg.json") << cfg.to_json().dump(1);
        for (const std::string args : {"gen-phantoms --count 6 --out data", "train --stage all",
                                       "evaluate --ckpt checkpoints/stage4.ckpt --split all --report report"})
            if (int rc = run_cli(d, args); rc != 0)
                return {false, "'" + args + "' exited " + std::to_string(rc) + " in " + d.string()};
    }
    bool same = true;
    size_t bytes = 0;
    for (const auto* f : {"report/cases.csv", "report/aggregate.csv"}) {
        const auto a = slurp(runs[0] / f), b = slurp(runs[1] / f);
        same = same && !a.empty() && a == b;
        bytes += a.size();
    }
    return {same, std::string(same ? "byte-identical" : "DIFFERENT") + " cases.csv + aggregate.csv (" +
                      std::to_string(bytes) + " bytes) across two CLI runs, " +
                      fmt("%.1f", seconds_since(t0)) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    torch::set_num_threads(1);
    CLI::App app{"acceptance criteria"};
    std::string work = (fs::temp_directory_path() / "focusnet_acceptance").string();
    std::vector<int> only;
    bool reuse = false;
    app.add_option("--work", work, "scratch directory for data, checkpoints and reports");
    app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
    app.add_flag("--reuse", reuse, "reuse data and completed checkpoints with a matching config");
    CLI11_PARSE(app, argc, argv);
    const std::set<int> sel = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8}
                                           : std::set<int>(only.begin(), only.end());
    if (!reuse) fs::remove_all(work);
    fs::create_directories(work);

    const std::map<int, std::string> names{{1, "loss oracles"},        {2, "gradient checks"},
                                           {3, "metric oracles"},      {4, "architecture contracts"},
                                           {5, "localization"},        {6, "central ablation"},
                                           {7, "roi-size ablation"},   {8, "determinism"}};
    std::optional<StagedRun> run;
    auto staged = [&]() -> StagedRun& {
        if (!run) run = prepare_run(work, reuse);
        return *run;
    };
    int failed = 0;
    for (int c : sel) {
        Outcome o;
        try {
            switch (c) {
                case 1: o = c1_loss_oracles(); break;
                case 2: o = c2_gradients(); break;
                case 3: o = c3_metrics(); break;
                case 4: o = c4_architecture(); break;
                case 5: o = c5_localization(staged(), reuse); break;
                case 6: o = c6_ablation(staged(), reuse); break;
                case 7: o = c7_roi_ablation(staged(), reuse); break;
                case 8: o = c8_determinism(work); break;
                default: o = {false, "unknown criterion"};
            }
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  C" << c << " " << names.at(c) << ": " << o.detail
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
