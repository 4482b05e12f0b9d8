#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "seqlearn/config.hpp"

using namespace seqlearn;
using namespace seqlearn::config;

TEST_CASE("presets are internally consistent") {
    auto paper = paper_preset();
    paper.validate();
    CHECK(paper.gen.values_per_dim == 10);
    CHECK(paper.train.epoch_size == 45000);
    CHECK(paper.train.n_batches == 30);
    CHECK(paper.train.batch_size == 1500);
    CHECK(paper.train.criterion == 0.95);
    CHECK(paper.model.conv_filters == std::vector<int>{16, 32, 48, 64});
    CHECK(paper.model.fc_widths == std::vector<int>{512, 512, 512, 512});
    CHECK(paper.model.n_tasks == 30);
    CHECK(paper.train.lr == 0.0005);
    CHECK(paper.train.weight_decay == 0.0001);
    CHECK(paper.train.budget_trials == 22500);
    CHECK(paper.train.episodes == 10);

    auto desk = desk_preset();
    desk.validate();
    CHECK(desk.gen.values_per_dim == 3);
    CHECK(desk.train.epoch_size == 3000);
    CHECK(desk.train.n_batches == 20);
    CHECK(desk.train.batch_size == 150);
    CHECK(desk.train.criterion == 0.90);
    CHECK(desk.train.episodes == 3);
    CHECK(desk.train.max_epochs == 100);
    CHECK(desk.model.conv_filters == std::vector<int>{4, 8, 12, 16});
    CHECK(desk.model.fc_widths == std::vector<int>{64});
    CHECK(desk.gen.width == 32);
    CHECK(desk.gen.height == 24);
    CHECK(desk.model.n_tasks == 9);
}

TEST_CASE("config round-trips losslessly through its serialization") {
    auto cfg = desk_preset();
    cfg.master_seed = 777;
    cfg.curriculum.kind = curriculum::Kind::Ratio;
    cfg.curriculum.kappa = 1.5;
    cfg.maml.enabled = true;
    cfg.maml.inner_lr = 0.002;
    cfg.probes.enabled = true;
    cfg.model.task_mod_layer = 2;
    cfg.plan.dimension = "texture";
    cfg.finalize();

    auto text = config_to_json_text(cfg);
    auto back = config_from_json_text(text);
    CHECK(config_hash(back) == config_hash(cfg));
    CHECK(back.master_seed == 777);
    CHECK(back.curriculum.kind == curriculum::Kind::Ratio);
    CHECK(back.curriculum.kappa == 1.5);
    CHECK(back.maml.enabled);
    CHECK(back.maml.inner_lr == 0.002);
    CHECK(back.probes.enabled);
    CHECK(back.model.task_mod_layer == 2);
    CHECK(back.plan.dimension == "texture");
    CHECK(config_to_json_text(back) == text);
}

TEST_CASE("unknown keys are rejected with their path") {
    CHECK_THROWS_WITH_AS(config_from_json_text(R"({"preset":"desk","bogus":1})"),
                         doctest::Contains("unknown config key: bogus"), RunError);
    CHECK_THROWS_WITH_AS(config_from_json_text(R"({"preset":"desk","train":{"lr":0.1,"typo":2}})"),
                         doctest::Contains("unknown config key: train.typo"), RunError);
    CHECK_THROWS_WITH_AS(config_from_json_text(R"({"preset":"desk","gen":{"wdith":10}})"),
                         doctest::Contains("unknown config key: gen.wdith"), RunError);
}

TEST_CASE("batch arithmetic violations are named") {
    CHECK_THROWS_WITH_AS(
        config_from_json_text(R"({"preset":"desk","train":{"n_batches":7}})"),
        doctest::Contains("n_batches * batch_size must equal epoch_size"), RunError);
}

TEST_CASE("preset overrides apply on top of the base") {
    auto cfg = config_from_json_text(R"({"preset":"desk","seed":42,"train":{"criterion":0.8}})");
    CHECK(cfg.master_seed == 42);
    CHECK(cfg.train.criterion == 0.8);
    CHECK(cfg.train.epoch_size == 3000);  // untouched desk value
}

TEST_CASE("config hash tracks semantic fields only") {
    auto a = desk_preset();
    auto b = desk_preset();
    CHECK(config_hash(a) == config_hash(b));
    b.output_dir = "elsewhere";
    CHECK(config_hash(a) == config_hash(b));  // output location is not semantic
    b = desk_preset();
    b.master_seed = 2;
    CHECK(config_hash(a) != config_hash(b));
    b = desk_preset();
    b.train.criterion = 0.91;
    CHECK(config_hash(a) != config_hash(b));
    b = desk_preset();
    b.model.task_mod_layer = 1;
    CHECK(config_hash(a) != config_hash(b));
    b = desk_preset();
    b.curriculum.kappa = 1.24;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("validation rejects inconsistent derived settings") {
    auto cfg = desk_preset();
    cfg.train.episodes = 5;  // only 3 values per dimension
    CHECK_THROWS(cfg.validate());

    cfg = desk_preset();
    cfg.plan.dimension = "shade";
    CHECK_THROWS(cfg.validate());

    cfg = desk_preset();
    cfg.gen.n_train = 2999;
    CHECK_THROWS(cfg.validate());

    cfg = desk_preset();
    cfg.train.criterion = 1.5;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("heterogeneous plans may use the whole task universe") {
    auto cfg = desk_preset();
    cfg.plan.dimension = "heterogeneous";
    cfg.train.episodes = 9;
    cfg.finalize();
    CHECK_NOTHROW(cfg.validate());
}
