#include <doctest.h>

#include "focusnet/json_util.hpp"
#include "focusnet/layers.hpp"
#include "focusnet/snet.hpp"
#include "support.hpp"

using namespace focusnet;

TEST_CASE("SE gate output shape and range") {
    torch::manual_seed(0);
    SEGate se(8, 4);
    CHECK(se->bottleneck() == 2);
    auto g = se(torch::randn({2, 8, 3, 3, 3}));
    CHECK((g.sizes() == torch::IntArrayRef{2, 8, 1, 1, 1}));
    CHECK(g.min().item<float>() > 0.0f);
    CHECK(g.max().item<float>() < 1.0f);
    CHECK(SEGate(3, 8)->bottleneck() == 1);
}

TEST_CASE("SE residual block is the shortcut when its residual branch is zero") {
    torch::manual_seed(1);
    SEResBlock same(4, 4, 2);
    torch::NoGradGuard g;
    same->conv2->weight.zero_();
    same->conv2->bias.zero_();
    auto x = torch::randn({1, 4, 5, 5, 5});
    CHECK(torch::equal(same(x), x));

    SEResBlock grow(4, 6, 2);
    grow->conv2->weight.zero_();
    grow->conv2->bias.zero_();
    CHECK(torch::allclose(grow(x), grow->proj(x)));
    CHECK(grow(x).size(1) == 6);
}

TEST_CASE("DenseASPP channel bookkeeping follows the closed form") {
    for (int64_t cin : {4, 16})
        for (int64_t w : {2, 5}) {
            const std::vector<int64_t> rates{1, 2, 3, 5};
            DenseASPP a(cin, rates, w, 7);
            REQUIRE(a->num_branches() == rates.size());
            for (size_t i = 0; i < rates.size(); ++i)
                CHECK(a->branch_input_channels(i) == cin + static_cast<int64_t>(i) * w);
            CHECK(a->projection_input_channels() == cin + static_cast<int64_t>(rates.size()) * w);
            CHECK((a(torch::randn({1, cin, 6, 6, 6})).sizes() == torch::IntArrayRef{1, 7, 6, 6, 6}));
        }
    CHECK_THROWS(DenseASPP(4, std::vector<int64_t>{2, 2}, 2, 4));
}

TEST_CASE("S-Net preserves spatial shape and exposes stride-1 features") {
    auto cfg = testing::tiny_snet();
    for (int64_t d : {1, 2}) {
        cfg.num_downsamples = d;
        auto net = build_snet(cfg, 3);
        CHECK(net->deepest_stride() == (int64_t{1} << d));
        CHECK(net->num_strided_stages() == d);
        Volume v = Volume::zeros({8, 12, 16}, {1, 1, 1});
        const auto out = snet_forward(net, v);
        CHECK((out.logits.sizes() == torch::IntArrayRef{1, cfg.num_classes, 8, 12, 16}));
        CHECK(out.decoder_features.stride == 1);
        CHECK(out.decoder_features.data.size(1) == cfg.decoder_channels());
        CHECK(out.encoder_hr_features.data.size(1) == cfg.encoder_hr_channels());
        CHECK(out.encoder_hr_features.data.sizes().slice(2) == out.logits.sizes().slice(2));
    }
}

TEST_CASE("S-Net rejects spatial dims not divisible by the deepest stride") {
    auto cfg = testing::tiny_snet();
    cfg.num_downsamples = 2;
    auto net = build_snet(cfg, 3);
    CHECK_THROWS_AS(snet_forward(net, Volume::zeros({8, 10, 8}, {1, 1, 1})), std::invalid_argument);
}

TEST_CASE("S-Net construction is seed-deterministic") {
    const auto cfg = testing::tiny_snet();
    auto a = build_snet(cfg, 5), b = build_snet(cfg, 5), c = build_snet(cfg, 6);
    auto pa = a->parameters(), pb = b->parameters(), pc = c->parameters();
    bool all_equal = true, any_diff = false;
    for (size_t i = 0; i < pa.size(); ++i) {
        all_equal = all_equal && torch::equal(pa[i], pb[i]);
        any_diff = any_diff || !torch::equal(pa[i], pc[i]);
    }
    CHECK(all_equal);
    CHECK(any_diff);
    Volume v = Volume::zeros({8, 8, 8}, {1, 1, 1});
    for (size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i % 7) * 0.1f;
    CHECK(torch::equal(snet_forward(a, v).logits, snet_forward(b, v).logits));
}

TEST_CASE("every S-Net parameter receives a finite gradient") {
    auto cfg = testing::tiny_snet();
    auto net = build_snet(cfg, 9);
    torch::manual_seed(2);
    auto out = net->forward(torch::randn({1, 1, 8, 8, 8}));
    (out.logits.square().mean() + out.decoder_features.data.mean()).backward();
    for (const auto& p : net->named_parameters()) {
        CAPTURE(p.key());
        REQUIRE(p.value().grad().defined());
        CHECK(torch::isfinite(p.value().grad()).all().item<bool>());
    }
}

TEST_CASE("snet config json and validation") {
    SNetConfig c;
    c.base_width = 6;
    c.width_multiplier = 2;
    const auto back = nlohmann::json(c).get<SNetConfig>();
    CHECK(back == c);
    CHECK(back.width_at(2) == 48);
    nlohmann::json bad = c;
    bad["num_downsamples"] = 5;
    CHECK_THROWS_AS(bad.get<SNetConfig>(), ConfigError);
    bad = c;
    bad["aspp_rates"] = {3, 3};
    CHECK_THROWS_AS(bad.get<SNetConfig>(), ConfigError);
}
