#include "focusnet/snet.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "focusnet/json_util.hpp"

namespace focusnet {

namespace nn = torch::nn;

void SNetConfig::validate() const {
    if (in_channels < 1 || num_classes < 2 || base_width < 1 || blocks_per_stage < 1 ||
        se_reduction < 1)
        throw ConfigError("snet: channel, class, block and reduction counts must be positive");
    if (!(width_multiplier > 0.0)) throw ConfigError("snet.width_multiplier must be > 0");
    if (num_downsamples < 0 || num_downsamples > 4)
        throw ConfigError("snet.num_downsamples must lie in [0, 4]");
    for (size_t i = 0; i < aspp_rates.size(); ++i)
        if (aspp_rates[i] < 1 || (i > 0 && aspp_rates[i] <= aspp_rates[i - 1]))
            throw ConfigError("snet.aspp_rates must be positive and strictly increasing");
}

int64_t SNetConfig::width_at(int64_t level) const {
    const double w = static_cast<double>(base_width) * width_multiplier *
                     static_cast<double>(int64_t{1} << level);
    return std::max<int64_t>(1, std::llround(w));
}

int64_t SNetConfig::aspp_branch_width() const {
    return std::max<int64_t>(1, width_at(num_downsamples) / 2);
}

void to_json(nlohmann::json& j, const SNetConfig& c) {
    j = {{"in_channels", c.in_channels},
         {"num_classes", c.num_classes},
         {"base_width", c.base_width},
         {"width_multiplier", c.width_multiplier},
         {"num_downsamples", c.num_downsamples},
         {"blocks_per_stage", c.blocks_per_stage},
         {"aspp_rates", c.aspp_rates},
         {"se_reduction", c.se_reduction}};
}

void from_json(const nlohmann::json& j, SNetConfig& c) {
    check_keys(j, {"in_channels", "num_classes", "base_width", "width_multiplier",
                   "num_downsamples", "blocks_per_stage", "aspp_rates", "se_reduction"},
               "snet");
    read_opt(j, "in_channels", c.in_channels, "snet");
    read_opt(j, "num_classes", c.num_classes, "snet");
    read_opt(j, "base_width", c.base_width, "snet");
    read_opt(j, "width_multiplier", c.width_multiplier, "snet");
    read_opt(j, "num_downsamples", c.num_downsamples, "snet");
    read_opt(j, "blocks_per_stage", c.blocks_per_stage, "snet");
    read_opt(j, "aspp_rates", c.aspp_rates, "snet");
    read_opt(j, "se_reduction", c.se_reduction, "snet");
    c.validate();
}

SNetImpl::SNetImpl(const SNetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int64_t L = cfg_.num_downsamples;
    const int64_t w0 = cfg_.width_at(0);
    stem_ = register_module("stem", nn::Conv3d(nn::Conv3dOptions(cfg_.in_channels, w0, 3).padding(1)));

    stage0_ = register_module("stage0", nn::Sequential());
    for (int64_t b = 0; b < cfg_.blocks_per_stage; ++b)
        stage0_->push_back(SEResBlock(w0, w0, cfg_.se_reduction));

    for (int64_t l = 1; l <= L; ++l) {
        const int64_t wi = cfg_.width_at(l - 1), wo = cfg_.width_at(l);
        down_.push_back(register_module(
            "down" + std::to_string(l),
            nn::Conv3d(nn::Conv3dOptions(wi, wo, 3).stride(2).padding(1))));
        auto stage = nn::Sequential();
        for (int64_t b = 0; b < cfg_.blocks_per_stage; ++b)
            stage->push_back(SEResBlock(wo, wo, cfg_.se_reduction));
        enc_.push_back(register_module("enc" + std::to_string(l), stage));
    }

    const int64_t wl = cfg_.width_at(L);
    aspp_ = register_module("aspp", DenseASPP(wl, cfg_.aspp_rates, cfg_.aspp_branch_width(), wl));

    for (int64_t l = L; l >= 1; --l) {
        const int64_t wi = cfg_.width_at(l), wo = cfg_.width_at(l - 1);
        up_.push_back(register_module(
            "up" + std::to_string(l),
            nn::ConvTranspose3d(nn::ConvTranspose3dOptions(wi, wo, 2).stride(2))));
        auto stage = nn::Sequential();
        stage->push_back(SEResBlock(2 * wo, wo, cfg_.se_reduction));
        for (int64_t b = 1; b < cfg_.blocks_per_stage; ++b)
            stage->push_back(SEResBlock(wo, wo, cfg_.se_reduction));
        dec_.push_back(register_module("dec" + std::to_string(l), stage));
    }

    head_norm_ = register_module("head_norm", make_norm(w0));
    head_ = register_module("head", nn::Conv3d(nn::Conv3dOptions(w0, cfg_.num_classes, 1)));
}

SNetOutput SNetImpl::forward(const torch::Tensor& x) {
    auto h = stage0_->forward(stem_(x));
    SNetOutput out;
    out.encoder_hr_features = {h, 1};

    std::vector<torch::Tensor> skips{h};
    for (size_t l = 0; l < down_.size(); ++l) {
        h = enc_[l]->forward(down_[l](h));
        skips.push_back(h);
    }
    h = aspp_(h);
    for (size_t i = 0; i < up_.size(); ++i) {
        const auto& skip = skips[skips.size() - 2 - i];
        h = dec_[i]->forward(torch::cat({up_[i](h), skip}, 1));
    }
    auto features = torch::relu(head_norm_(h));
    out.decoder_features = {features, 1};
    out.logits = head_(features);
    return out;
}

SNet build_snet(const SNetConfig& cfg, uint64_t seed) {
    cfg.validate();
    torch::manual_seed(seed);
    return SNet(cfg);
}

torch::Tensor volume_tensor(const Volume& v) {
    auto t = torch::from_blob(const_cast<float*>(v.data.data()), {1, 1, v.shape[0], v.shape[1], v.shape[2]},
                              torch::kFloat32);
    return t.clone();
}

void check_divisible(const SNetConfig& cfg, const Shape3& shape) {
    const int64_t f = int64_t{1} << cfg.num_downsamples;
    for (int a = 0; a < 3; ++a)
        if (shape[a] % f != 0)
            throw std::invalid_argument("input spatial dims must be divisible by " +
                                        std::to_string(f) + " for " +
                                        std::to_string(cfg.num_downsamples) + " down-samplings");
}

SNetOutput snet_forward(SNet& model, const Volume& v) {
    check_divisible(model->config(), v.shape);
    torch::NoGradGuard guard;
    const bool was_training = model->is_training();
    model->eval();
    auto out = model->forward(volume_tensor(v));
    model->train(was_training);
    return out;
}

}  // namespace focusnet
