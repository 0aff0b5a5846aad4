// focusnet command-line tool: phantom generation, staged training, evaluation,
// prediction and plotting. Exit codes: 0 ok, 1 usage, 2 I/O, 3 data/contract.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "focusnet/checkpoint.hpp"
#include "focusnet/config.hpp"
#include "focusnet/json_util.hpp"
#include "focusnet/phantom.hpp"
#include "focusnet/pipeline.hpp"
#include "focusnet/report.hpp"
#include "focusnet/runtime.hpp"
#include "focusnet/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace focusnet;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kContract = 3 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::string config;
    std::string workdir = ".";
    std::vector<std::string> sets;
    std::optional<uint64_t> seed;
    std::optional<int> threads;
    bool quiet = false;
};

fs::path under(const Globals& g, const fs::path& p) { return p.is_absolute() ? p : fs::path(g.workdir) / p; }

// "a.b.c=value": value parsed as JSON when possible, else taken as a string.
void apply_set(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key.path=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &j;
    size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw UsageError("--set: empty key segment in '" + path + "'");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            break;
        }
        if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = json::object();
        node = &(*node)[key];
        start = dot + 1;
    }
}

RunConfig load_config(const Globals& g) {
    json j = json::object();
    if (!g.config.empty()) {
        const auto p = under(g, g.config);
        std::ifstream in(p);
        if (!in) throw IoError("cannot open config " + p.string());
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ConfigError("config " + p.string() + " is not valid JSON: " + e.what());
        }
    }
    for (const auto& s : g.sets) apply_set(j, s);
    if (g.seed) j["train"]["seed"] = *g.seed;
    if (g.threads) j["train"]["num_threads"] = *g.threads;
    return RunConfig::from_json(j);
}

void say(const Globals& g, const std::string& msg) {
    if (!g.quiet) std::cout << msg << std::endl;
}

void probe_writable(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    const auto probe = dir / ".write_probe";
    {
        std::ofstream out(probe);
        if (!out) throw IoError("output directory is not writable: " + dir.string());
    }
    fs::remove(probe, ec);
}

// Missing inputs are an environment problem, not a data one.
const fs::path& existing(const fs::path& p) {
    if (!fs::exists(p) && !fs::exists(fs::path(p).replace_extension(".hdr")))
        throw IoError("no such file: " + p.string());
    return p;
}

// ---- gen-phantoms ---------------------------------------------------------

struct GenArgs {
    std::string out = "data";
    int count = 0;
    std::optional<uint64_t> seed;
};

int cmd_gen_phantoms(const Globals& g, const GenArgs& a) {
    if (a.count < 1) throw UsageError("--count must be >= 1");
    auto cfg = load_config(g);
    if (a.seed) cfg.phantom.seed = *a.seed;
    const auto out = under(g, a.out);
    probe_writable(out);
    const auto m = generate_dataset(cfg.phantom, a.count, out, cfg.metrics.small_organ_threshold);
    std::cout << (out / "manifest.json").string() << std::endl;
    for (const auto& o : m.organs)
        say(g, "  organ " + std::to_string(o.id) + " " + o.name + (o.is_small ? " small" : " large") +
                   " mean_voxels=" + std::to_string(o.mean_voxel_count));
    return kOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    std::string stage = "all";
    std::string resume;
    std::string manifest;
    std::string checkpoint_dir;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
    auto cfg = load_config(g);
    if (!a.manifest.empty()) cfg.train.manifest = a.manifest;
    if (!a.checkpoint_dir.empty()) cfg.train.checkpoint_dir = a.checkpoint_dir;

    int first = 1, last = 4;
    if (a.stage != "all") {
        try {
            first = last = std::stoi(a.stage);
        } catch (const std::exception&) {
            throw UsageError("--stage must be 1, 2, 3, 4 or all");
        }
        if (first < 1 || first > 4) throw UsageError("--stage must be 1, 2, 3, 4 or all");
    }
    std::optional<Checkpoint> resume;
    if (!a.resume.empty()) {
        resume = load_checkpoint(existing(under(g, a.resume)));
        if (a.stage == "all") first = resume->stage;
        else if (resume->stage != first)
            throw StagingError("--resume holds a " + resume->tag() + " checkpoint but --stage is " + a.stage);
    }

    const auto ckdir = under(g, cfg.train.checkpoint_dir);
    // Prerequisites are checked before the dataset is read.
    std::optional<Checkpoint> previous;
    if (first > 1) {
        const auto prev_path = stage_checkpoint_path(ckdir, first - 1);
        if (!fs::exists(prev_path))
            throw StagingError("stage " + std::to_string(first) + " requires a complete stage" +
                               std::to_string(first - 1) + " checkpoint at " + prev_path.string());
        previous = load_checkpoint(prev_path);
        require_prerequisite(first, *previous);
    }

    const auto data = load_dataset(existing(under(g, cfg.train.manifest)), cfg.train.validation_fraction,
                                   cfg.metrics.small_organ_threshold);
    TrainContext ctx;
    ctx.cfg = cfg;
    ctx.data = &data;
    ctx.checkpoint_dir = ckdir;
    ctx.log_path = ckdir / "train_log.jsonl";
    ctx.on_epoch = [&g](const EpochRecord& r) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "stage %d epoch %d train %.6f val %.6f (%.1fs)", r.stage, r.epoch,
                      r.losses.train.count("total") ? r.losses.train.at("total") : 0.0,
                      r.losses.validation.count("total") ? r.losses.validation.at("total") : 0.0,
                      r.wall_seconds);
        say(g, buf);
    };
    for (int stage = first; stage <= last; ++stage) {
        const Checkpoint* res = (resume && resume->stage == stage) ? &*resume : nullptr;
        auto ckpt = train_stage(stage, ctx, previous ? &*previous : nullptr, res);
        // A finished resume never re-enters the epoch loop, so make sure the file exists.
        save_checkpoint(ckpt, stage_checkpoint_path(ckdir, stage));
        std::cout << stage_checkpoint_path(ckdir, stage).string() << std::endl;
        previous = std::move(ckpt);
    }
    return kOk;
}

// ---- evaluate / predict -----------------------------------------------------

struct EvalArgs {
    std::string ckpt;
    std::vector<std::string> compare;
    std::string split = "validation";
    std::string report = "report";
    std::string manifest;
};

Evaluation evaluate_checkpoint(const fs::path& path, const std::vector<Sample>& samples) {
    const auto ckpt = load_checkpoint(existing(path));
    auto model = model_from_checkpoint(ckpt);
    return evaluate_samples(*model, samples, mode_for_stage(ckpt.stage), inference_options(ckpt));
}

int cmd_evaluate(const Globals& g, const EvalArgs& a) {
    if (a.ckpt.empty() == a.compare.empty()) throw UsageError("give exactly one of --ckpt or --compare A B");
    auto cfg = load_config(g);
    if (!a.manifest.empty()) cfg.train.manifest = a.manifest;
    torch::set_num_threads(cfg.train.num_threads);
    const auto data = load_dataset(existing(under(g, cfg.train.manifest)), cfg.train.validation_fraction,
                                   cfg.metrics.small_organ_threshold);
    std::vector<Sample> samples;
    if (a.split == "train" || a.split == "all") samples.insert(samples.end(), data.train.begin(), data.train.end());
    if (a.split == "validation" || a.split == "all")
        samples.insert(samples.end(), data.validation.begin(), data.validation.end());
    if (samples.empty()) throw DataError("split '" + a.split + "' holds no samples");

    const auto out = under(g, a.report);
    probe_writable(out);
    if (!a.ckpt.empty()) {
        const auto e = evaluate_checkpoint(under(g, a.ckpt), samples);
        write_report(e, out);
        say(g, "mode " + to_string(e.mode));
        write_aggregate_table(std::cout, e.rows);
        return kOk;
    }
    const auto ea = evaluate_checkpoint(under(g, a.compare[0]), samples);
    const auto eb = evaluate_checkpoint(under(g, a.compare[1]), samples);
    write_report(ea, out / "a");
    write_report(eb, out / "b");
    const auto rows = compare(ea.rows, eb.rows);
    std::ofstream f(out / "comparison.csv");
    if (!f) throw IoError("cannot write " + (out / "comparison.csv").string());
    const std::string na = fs::path(a.compare[0]).filename().string() + "(" + to_string(ea.mode) + ")";
    const std::string nb = fs::path(a.compare[1]).filename().string() + "(" + to_string(eb.mode) + ")";
    write_comparison_table(f, rows, na, nb);
    write_comparison_table(std::cout, rows, na, nb);
    return kOk;
}

struct PredictArgs {
    std::string ckpt, input, out;
};

int cmd_predict(const Globals& g, const PredictArgs& a) {
    auto cfg = load_config(g);
    torch::set_num_threads(cfg.train.num_threads);
    const auto out = under(g, a.out);
    probe_writable(out.parent_path());
    const auto ckpt = load_checkpoint(existing(under(g, a.ckpt)));
    auto model = model_from_checkpoint(ckpt);
    const auto v = load_volume(existing(under(g, a.input)));
    check_divisible(model->snet_config(), v.shape);
    const auto mode = mode_for_stage(ckpt.stage);
    const auto p = predict(*model, v, mode, inference_options(ckpt));
    save_labels(p.labels, out);
    say(g, "mode " + to_string(mode));
    for (const auto& [id, peak] : p.peaks)
        say(g, "  organ " + std::to_string(id) +
                   (peak ? " peak (" + std::to_string((*peak)[0]) + "," + std::to_string((*peak)[1]) + "," +
                               std::to_string((*peak)[2]) + ")"
                         : " absent"));
    std::cout << out.string() << std::endl;
    return kOk;
}

// ---- report -----------------------------------------------------------------

struct ReportArgs {
    std::string report, plots = "plots", log;
};

int cmd_report(const Globals& g, const ReportArgs& a) {
    auto in_path = under(g, a.report);
    if (fs::is_directory(in_path)) in_path /= "aggregate.csv";
    std::ifstream in(in_path);
    if (!in) throw IoError("cannot open report " + in_path.string());
    const auto rows = read_aggregate_table(in);
    const auto files = write_plots(rows, under(g, a.plots), a.log.empty() ? fs::path{} : under(g, a.log));
    for (const auto& f : files) std::cout << f.string() << std::endl;
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"focusnet: small-organ-aware 3D segmentation on synthetic phantoms"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "JSON run configuration");
    app.add_option("--workdir", g.workdir, "base directory for relative paths");
    app.add_option("--set", g.sets, "override a config value, e.g. --set train.roi_factor=5");
    app.add_option("--seed", g.seed, "override train.seed");
    app.add_option("--threads", g.threads, "override train.num_threads");
    app.add_flag("-q,--quiet", g.quiet, "only print output paths");

    GenArgs gen;
    auto* c_gen = app.add_subcommand("gen-phantoms", "generate a phantom dataset and its manifest");
    c_gen->add_option("--out", gen.out, "output directory");
    c_gen->add_option("--count", gen.count, "number of phantoms")->required();
    c_gen->add_option("--seed", gen.seed, "phantom seed (overrides phantom.seed)");

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "run training stage(s)");
    c_train->add_option("--stage", tr.stage, "1, 2, 3, 4 or all");
    c_train->add_option("--resume", tr.resume, "continue from a checkpoint of the same stage");
    c_train->add_option("--manifest", tr.manifest, "override train.manifest");
    c_train->add_option("--checkpoint-dir", tr.checkpoint_dir, "override train.checkpoint_dir");

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("evaluate", "per-case and aggregate DSC/95HD tables");
    c_eval->add_option("--ckpt", ev.ckpt, "checkpoint to evaluate");
    c_eval->add_option("--compare", ev.compare, "two checkpoints to compare")->expected(2);
    c_eval->add_option("--split", ev.split, "train, validation or all")
        ->check(CLI::IsMember({"train", "validation", "all"}));
    c_eval->add_option("--report", ev.report, "output directory");
    c_eval->add_option("--manifest", ev.manifest, "override train.manifest");

    PredictArgs pr;
    auto* c_pred = app.add_subcommand("predict", "label one volume");
    c_pred->add_option("--ckpt", pr.ckpt, "checkpoint")->required();
    c_pred->add_option("--input", pr.input, "volume header")->required();
    c_pred->add_option("--out", pr.out, "output label map header")->required();

    ReportArgs rp;
    auto* c_rep = app.add_subcommand("report", "SVG charts from an evaluation report");
    c_rep->add_option("--report", rp.report, "report directory or aggregate.csv")->required();
    c_rep->add_option("--plots", rp.plots, "output directory");
    c_rep->add_option("--log", rp.log, "training log (JSON lines) for loss curves");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*c_gen) return cmd_gen_phantoms(g, gen);
        if (*c_train) return cmd_train(g, tr);
        if (*c_eval) return cmd_evaluate(g, ev);
        if (*c_pred) return cmd_predict(g, pr);
        if (*c_rep) return cmd_report(g, rp);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const StagingError& e) {
        std::cerr << "staging error: " << e.what() << '\n';
        return kContract;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kContract;
    }
    return kUsage;
}
