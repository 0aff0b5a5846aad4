#include "focusnet/config.hpp"

#include <fstream>

#include "focusnet/json_util.hpp"

namespace focusnet {

using nlohmann::json;

void TrainConfig::validate() const {
    for (size_t i = 0; i < stages.size(); ++i) {
        const auto& s = stages[i];
        const std::string where = "train.stages[" + std::to_string(i) + "]";
        if (s.epochs < 1) throw ConfigError(where + ".epochs must be >= 1");
        if (!(s.learning_rate > 0.0)) throw ConfigError(where + ".learning_rate must be > 0");
        if (s.batch_size < 1) throw ConfigError(where + ".batch_size must be >= 1");
    }
    if (!(roi_factor > 0.0)) throw ConfigError("train.roi_factor must be > 0");
    if (!(sol_sigma_min > 0.0)) throw ConfigError("train.sol_sigma_min must be > 0");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw ConfigError("train.validation_fraction must lie in [0, 1)");
    if (!(roi_jitter >= 0.0 && roi_jitter < 0.5)) throw ConfigError("train.roi_jitter must lie in [0, 0.5)");
    if (!(fusion_threshold > 0.0 && fusion_threshold < 1.0))
        throw ConfigError("train.fusion_threshold must lie in (0, 1)");
    if (weight_segmentation < 0 || weight_heatmap < 0 || weight_sos < 0)
        throw ConfigError("train joint weights must be >= 0");
    if (num_threads < 1) throw ConfigError("train.num_threads must be >= 1");
}

void to_json(json& j, const TrainConfig& c) {
    json stages = json::array();
    for (const auto& s : c.stages)
        stages.push_back({{"epochs", s.epochs}, {"learning_rate", s.learning_rate},
                          {"batch_size", s.batch_size}});
    j = {{"stages", stages},
         {"roi_factor", c.roi_factor},
         {"sol_sigma_min", c.sol_sigma_min},
         {"presence_threshold", c.presence_threshold},
         {"fusion_threshold", c.fusion_threshold},
         {"roi_jitter", c.roi_jitter},
         {"validation_fraction", c.validation_fraction},
         {"weight_segmentation", c.weight_segmentation},
         {"weight_heatmap", c.weight_heatmap},
         {"weight_sos", c.weight_sos},
         {"seed", c.seed},
         {"num_threads", c.num_threads},
         {"manifest", c.manifest},
         {"checkpoint_dir", c.checkpoint_dir}};
}

void from_json(const json& j, TrainConfig& c) {
    check_keys(j, {"stages", "roi_factor", "sol_sigma_min", "presence_threshold", "fusion_threshold",
                   "roi_jitter", "validation_fraction", "weight_segmentation", "weight_heatmap",
                   "weight_sos", "seed", "num_threads", "manifest", "checkpoint_dir"},
               "train");
    if (j.contains("stages")) {
        const auto& js = j.at("stages");
        if (!js.is_array() || js.size() != 4) throw ConfigError("train.stages must list 4 stages");
        for (size_t i = 0; i < 4; ++i) {
            const std::string where = "train.stages[" + std::to_string(i) + "]";
            check_keys(js[i], {"epochs", "learning_rate", "batch_size"}, where);
            read_opt(js[i], "epochs", c.stages[i].epochs, where);
            read_opt(js[i], "learning_rate", c.stages[i].learning_rate, where);
            read_opt(js[i], "batch_size", c.stages[i].batch_size, where);
        }
    }
    read_opt(j, "roi_factor", c.roi_factor, "train");
    read_opt(j, "sol_sigma_min", c.sol_sigma_min, "train");
    read_opt(j, "presence_threshold", c.presence_threshold, "train");
    read_opt(j, "fusion_threshold", c.fusion_threshold, "train");
    read_opt(j, "roi_jitter", c.roi_jitter, "train");
    read_opt(j, "validation_fraction", c.validation_fraction, "train");
    read_opt(j, "weight_segmentation", c.weight_segmentation, "train");
    read_opt(j, "weight_heatmap", c.weight_heatmap, "train");
    read_opt(j, "weight_sos", c.weight_sos, "train");
    read_opt(j, "seed", c.seed, "train");
    read_opt(j, "num_threads", c.num_threads, "train");
    read_opt(j, "manifest", c.manifest, "train");
    read_opt(j, "checkpoint_dir", c.checkpoint_dir, "train");
}

void RunConfig::validate() const {
    phantom.validate();
    snet.validate();
    loss.validate();
    train.validate();
    if (snet.num_classes != phantom.num_classes() + 1)
        throw ConfigError("snet.num_classes must be the phantom organ count + 1 (" +
                          std::to_string(phantom.num_classes() + 1) + ")");
    if (!(metrics.small_organ_threshold > 0.0))
        throw ConfigError("metrics.small_organ_threshold must be > 0");
}

json RunConfig::to_json() const {
    return {{"phantom", phantom},
            {"snet", snet},
            {"loss", loss},
            {"train", train},
            {"metrics", {{"small_organ_threshold", metrics.small_organ_threshold}}}};
}

RunConfig RunConfig::from_json(const json& j) {
    check_keys(j, {"phantom", "snet", "loss", "train", "metrics"}, "config");
    RunConfig c;
    try {
        if (j.contains("phantom")) c.phantom = j.at("phantom").get<PhantomSpec>();
        c.snet.num_classes = c.phantom.num_classes() + 1;
        if (j.contains("snet")) {
            auto js = j.at("snet");
            if (!js.contains("num_classes")) js["num_classes"] = c.phantom.num_classes() + 1;
            c.snet = js.get<SNetConfig>();
        }
        if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
        if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
        if (j.contains("metrics")) {
            check_keys(j.at("metrics"), {"small_organ_threshold"}, "metrics");
            read_opt(j.at("metrics"), "small_organ_threshold", c.metrics.small_organ_threshold, "metrics");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

}  // namespace focusnet
