#include <doctest.h>

#include "focusnet/checkpoint.hpp"
#include "focusnet/training.hpp"
#include "support.hpp"

using namespace focusnet;

namespace {

// Five 32^3 phantoms shared by every case in this file: four train, one validation.
struct Fixture {
    testing::TempDir dir{"training"};
    Dataset data;
    Fixture() {
        generate_dataset(testing::small_spec(40), 5, dir / "data", testing::kSmallThreshold);
        data = load_dataset(dir / "data" / "manifest.json", 0.2, testing::kSmallThreshold);
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

TrainContext context(const std::filesystem::path& ckpt_dir, int epochs = 1) {
    TrainContext ctx;
    ctx.cfg = testing::tiny_run(epochs);
    ctx.data = &fixture().data;
    ctx.checkpoint_dir = ckpt_dir;
    ctx.log_path = ckpt_dir / "train_log.jsonl";
    return ctx;
}

uint64_t group_hash(const Checkpoint& c, ParamGroup g) {
    auto m = model_from_checkpoint(c);
    return parameter_hash(m->group_parameters(g));
}

std::vector<Checkpoint>& chain() {
    static std::vector<Checkpoint> stages = [] {
        static testing::TempDir d("chain");
        auto ctx = context(d.path);
        std::vector<Checkpoint> out;
        out.push_back(train_stage1_snet(ctx));
        for (int s = 2; s <= 4; ++s) out.push_back(train_stage(s, ctx, &out.back()));
        return out;
    }();
    return stages;
}

}  // namespace

TEST_CASE("dataset split and training-split statistics") {
    const auto& d = fixture().data;
    CHECK(d.train.size() == 4);
    CHECK(d.validation.size() == 1);
    CHECK(d.validation[0].case_id == "case_004");
    double mean = 0;
    for (const auto& s : d.train) mean += static_cast<double>(organ_voxel_counts(s.labels)[4]) / 4.0;
    CHECK(d.organs[3].mean_voxel_count == doctest::Approx(mean));
    CHECK(d.organs[3].is_small);
    CHECK_FALSE(d.organs[0].is_small);
    CHECK_THROWS_AS(load_dataset(fixture().dir / "data" / "manifest.json", 1.0, 200), DataError);
}

TEST_CASE("a missing manifest fails before any computation") {
    testing::TempDir d("nomanifest");
    CHECK_THROWS_AS(load_dataset(d / "absent.json", 0.2, 200), DataError);
}

TEST_CASE("stages refuse the wrong prerequisite") {
    const auto& c = chain();
    testing::TempDir d("staging");
    auto ctx = context(d.path);
    CHECK_THROWS_AS(train_stage(3, ctx, &c[0]), StagingError);
    CHECK_THROWS_AS(train_stage(2, ctx, &c[1]), StagingError);
    CHECK_THROWS_AS(train_stage(4, ctx, nullptr), StagingError);
    CHECK_THROWS_WITH_AS(train_stage(3, ctx, &c[0]), doctest::Contains("stage2"), StagingError);
    auto partial = c[0];
    partial.epochs_planned = 3;
    CHECK_THROWS_WITH_AS(require_prerequisite(2, partial), doctest::Contains("1 of 3"), StagingError);
    CHECK_THROWS_AS(train_stage1_snet(ctx, &c[1]), StagingError);
}

TEST_CASE("each stage leaves its frozen groups bit-identical") {
    const auto& c = chain();
    for (size_t i = 0; i < 4; ++i) CHECK(c[i].stage == static_cast<int>(i) + 1);
    CHECK(group_hash(c[1], ParamGroup::SNet) == group_hash(c[0], ParamGroup::SNet));
    CHECK(group_hash(c[1], ParamGroup::Sos) == group_hash(c[0], ParamGroup::Sos));
    CHECK(group_hash(c[1], ParamGroup::Sol) != group_hash(c[0], ParamGroup::Sol));
    CHECK(group_hash(c[2], ParamGroup::SNet) == group_hash(c[1], ParamGroup::SNet));
    CHECK(group_hash(c[2], ParamGroup::Sol) == group_hash(c[1], ParamGroup::Sol));
    CHECK(group_hash(c[2], ParamGroup::Sos) != group_hash(c[1], ParamGroup::Sos));
    // finetuning updates every group
    for (auto g : {ParamGroup::SNet, ParamGroup::Sol, ParamGroup::Sos})
        CHECK(group_hash(c[3], g) != group_hash(c[2], g));
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
    testing::TempDir d("ckpt");
    const auto& c = chain();
    save_checkpoint(c[3], d / "a.ckpt");
    const auto back = load_checkpoint(d / "a.ckpt");
    save_checkpoint(back, d / "b.ckpt");
    CHECK(testing::slurp(d / "a.ckpt") == testing::slurp(d / "b.ckpt"));
    CHECK(back.stage == 4);
    CHECK(back.config == c[3].config);
    CHECK(group_hash(back, ParamGroup::Sos) == group_hash(c[3], ParamGroup::Sos));

    auto bytes = testing::slurp(d / "a.ckpt");
    bytes.resize(bytes.size() - 10);
    std::ofstream(d / "cut.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(d / "cut.ckpt"), CheckpointError);
}

TEST_CASE("same seed gives identical losses and parameters; resume continues the epoch count") {
    testing::TempDir a("det_a"), b("det_b"), r("det_r");
    std::vector<EpochRecord> ra, rb, rr;
    auto ca = context(a.path, 2), cb = context(b.path, 2);
    ca.on_epoch = [&](const EpochRecord& e) { ra.push_back(e); };
    cb.on_epoch = [&](const EpochRecord& e) { rb.push_back(e); };
    const auto full_a = train_stage1_snet(ca);
    const auto full_b = train_stage1_snet(cb);
    REQUIRE(ra.size() == 2);
    REQUIRE(rb.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(ra[i].losses.train == rb[i].losses.train);
        CHECK(ra[i].losses.validation == rb[i].losses.validation);
    }
    CHECK(group_hash(full_a, ParamGroup::SNet) == group_hash(full_b, ParamGroup::SNet));

    auto c1 = context(r.path, 1);
    const auto half = train_stage1_snet(c1);
    CHECK(half.epochs_done == 1);
    auto c2 = context(r.path, 2);
    c2.on_epoch = [&](const EpochRecord& e) { rr.push_back(e); };
    const auto resumed = train_stage1_snet(c2, &half);
    REQUIRE(rr.size() == 1);
    CHECK(rr[0].epoch == 2);
    CHECK(resumed.epochs_done == 2);
    CHECK(rr[0].losses.train == ra[1].losses.train);
    CHECK(group_hash(resumed, ParamGroup::SNet) == group_hash(full_a, ParamGroup::SNet));

    // resuming a finished checkpoint trains nothing more
    rr.clear();
    const auto again = train_stage1_snet(c2, &resumed);
    CHECK(rr.empty());
    CHECK(again.epochs_done == 2);
}

TEST_CASE("stage 1 training loss goes down over a few epochs") {
    testing::TempDir d("descent");
    auto ctx = context(d.path, 6);
    ctx.cfg.train.stages[0].learning_rate = 3e-3;
    std::vector<double> losses;
    ctx.on_epoch = [&](const EpochRecord& e) { losses.push_back(e.losses.train.at("total")); };
    train_stage1_snet(ctx);
    REQUIRE(losses.size() == 6);
    CHECK(losses.back() < losses.front());
    // every epoch leaves a loadable checkpoint and a log line
    CHECK(load_checkpoint(stage_checkpoint_path(d.path, 1)).epochs_done == 6);
    const auto log = testing::slurp(d / "train_log.jsonl");
    CHECK(std::count(log.begin(), log.end(), '\n') == 6);
}

TEST_CASE("joint loss is the weighted sum of its terms; absent organs add nothing") {
    auto model = model_from_checkpoint(chain()[2]);
    auto cfg = testing::tiny_run();
    cfg.train.weight_segmentation = 0.5;
    cfg.train.weight_heatmap = 2.0;
    cfg.train.weight_sos = 3.0;
    const auto& s = fixture().data.train[0];
    const auto alphas = torch::ones({8}, torch::kFloat64);
    const auto target = target_heatmaps(*model, s.labels, 2.0);
    const auto j = joint_loss(*model, s, cfg, alphas, target);
    CHECK(j.total.item<double>() ==
          doctest::Approx(0.5 * j.segmentation.item<double>() + 2.0 * j.heatmap.item<double>() +
                          3.0 * j.sos.item<double>())
              .epsilon(1e-6));
    CHECK(j.sos.item<double>() > 0.0);

    auto labels = s.labels;
    for (auto& v : labels.data)
        if (v >= 4) v = 0;
    const auto empty = make_sample("blank", s.image, labels);
    const auto je = joint_loss(*model, empty, cfg, alphas, target_heatmaps(*model, labels, 2.0));
    CHECK(je.sos.item<double>() == 0.0);
}

TEST_CASE("class alphas are inverse-size weights over background and organs") {
    std::vector<OrganSpec> organs{{1, "a", false, 100, 5, 1}, {2, "b", true, 10, 2, 1}};
    const auto a = class_alphas(organs, 1000);
    REQUIRE(a.size() == 3);
    CHECK(a[2] / a[1] == doctest::Approx(10.0));
    CHECK(a[1] / a[0] == doctest::Approx(10.0));
    CHECK(a[0] + a[1] + a[2] == doctest::Approx(3.0));
}
