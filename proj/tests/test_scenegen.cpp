#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "seqlearn/common.hpp"
#include "seqlearn/scenegen.hpp"

using namespace seqlearn;
using namespace seqlearn::scenegen;

namespace {

GenConfig paper_config() { return GenConfig{}; }

GenConfig small_config(int v, int min_obj, int max_obj) {
    GenConfig c;
    c.values_per_dim = v;
    c.min_objects = min_obj;
    c.max_objects = max_obj;
    c.width = 48;
    c.height = 36;
    c.radius_frac_min = 0.10;
    c.radius_frac_max = 0.16;
    c.catalog = FeatureCatalog::with_values(v);
    return c;
}

// Independent label scanner: deliberately re-derives the object value
// accessors instead of calling label().
bool scan_label(const SceneSpec& scene, int dimension, int value) {
    for (const auto& o : scene.objects) {
        int got = -1;
        if (dimension == 0) got = o.shape_id;
        if (dimension == 1) got = o.color_id;
        if (dimension == 2) got = o.texture_id;
        if (got == value) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("paper catalog carries the published color names") {
    auto cat = FeatureCatalog::paper_scale();
    CHECK(cat.value_names[kColor] ==
          std::vector<std::string>{"gray", "red", "blue", "green", "brown", "purple", "magenta",
                                   "yellow", "orange", "pink"});
    CHECK(cat.values_per_dim() == 10);
    CHECK(cat.palette.size() == 10);
    for (int d = 0; d < kDimensions; ++d) CHECK(cat.value_names[d].size() == 10);
}

TEST_CASE("sampled scenes satisfy distinctness, object count, and frame containment") {
    auto cfg = paper_config();
    for (uint64_t seed = 0; seed < 25; ++seed) {
        auto scene = sample_scene(derive_seed(1, "s", seed), cfg);
        CHECK(scene.objects.size() >= 4);
        CHECK(scene.objects.size() <= 5);
        for (int d = 0; d < kDimensions; ++d) {
            std::set<int> vals;
            for (const auto& o : scene.objects)
                vals.insert(d == 0 ? o.shape_id : d == 1 ? o.color_id : o.texture_id);
            CHECK(vals.size() == scene.objects.size());
        }
        for (const auto& o : scene.objects) {
            CHECK(o.cx - o.radius >= 0.0);
            CHECK(o.cx + o.radius <= cfg.width);
            CHECK(o.cy - o.radius >= 0.0);
            CHECK(o.cy + o.radius <= cfg.height);
        }
        for (size_t i = 0; i < scene.objects.size(); ++i)
            for (size_t j = i + 1; j < scene.objects.size(); ++j) {
                const auto& a = scene.objects[i];
                const auto& b = scene.objects[j];
                const double dist = std::hypot(a.cx - b.cx, a.cy - b.cy);
                CHECK(dist >= a.radius + b.radius);
            }
    }
}

TEST_CASE("V=4 with four objects uses every value exactly once per scene") {
    auto cfg = small_config(4, 4, 4);
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto scene = sample_scene(seed, cfg);
        REQUIRE(scene.objects.size() == 4);
        for (int d = 0; d < kDimensions; ++d) {
            std::set<int> vals;
            for (const auto& o : scene.objects)
                vals.insert(d == 0 ? o.shape_id : d == 1 ? o.color_id : o.texture_id);
            CHECK(vals == std::set<int>{0, 1, 2, 3});
        }
    }
}

TEST_CASE("same seed reproduces the scene byte for byte") {
    auto cfg = paper_config();
    CHECK(sample_scene(998877, cfg) == sample_scene(998877, cfg));
}

TEST_CASE("infeasible configs are rejected") {
    auto cfg = small_config(4, 4, 4);
    cfg.max_objects = 5;  // five distinct values of four are impossible
    CHECK_THROWS(sample_scene(1, cfg));

    auto big = small_config(3, 3, 3);
    big.radius_frac_min = 0.45;  // objects cannot be packed
    big.radius_frac_max = 0.49;
    CHECK_THROWS(sample_scene(1, big));
}

TEST_CASE("render: empty scene is uniform background") {
    auto cfg = small_config(3, 0, 0);
    auto scene = sample_scene(5, cfg);
    REQUIRE(scene.objects.empty());
    auto img = render(scene, cfg);
    for (int c = 0; c < 3; ++c) {
        const float v0 = img.at(c, 0, 0);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) CHECK(img.at(c, y, x) == v0);
    }
}

TEST_CASE("render: all pixels in [0,1], rendering is pure") {
    auto cfg = paper_config();
    auto scene = sample_scene(31337, cfg);
    auto a = render(scene, cfg);
    auto b = render(scene, cfg);
    CHECK(a.data == b.data);
    for (float v : a.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("render: recoloring one object only changes pixels inside its footprint") {
    auto cfg = paper_config();
    auto scene = sample_scene(777, cfg);
    auto altered = scene;
    // Swap the first object's color with a value unused in the scene.
    std::set<int> used;
    for (const auto& o : scene.objects) used.insert(o.color_id);
    int fresh = -1;
    for (int v = 0; v < cfg.values_per_dim; ++v)
        if (!used.count(v)) fresh = v;
    REQUIRE(fresh >= 0);
    altered.objects[0].color_id = fresh;

    auto img_a = render(scene, cfg);
    auto img_b = render(altered, cfg);
    const auto& obj = scene.objects[0];
    bool any_diff = false;
    for (int y = 0; y < img_a.height; ++y)
        for (int x = 0; x < img_a.width; ++x)
            for (int c = 0; c < 3; ++c)
                if (img_a.at(c, y, x) != img_b.at(c, y, x)) {
                    any_diff = true;
                    const double dist = std::hypot(x + 0.5 - obj.cx, y + 0.5 - obj.cy);
                    CHECK(dist <= obj.radius + 1.5);
                }
    CHECK(any_diff);
}

TEST_CASE("every shape and texture renders visibly distinct content") {
    auto cfg = paper_config();
    SceneSpec scene;
    scene.seed = 0;
    ObjectSpec o;
    o.cx = 40;
    o.cy = 40;
    o.radius = 14;
    std::set<uint64_t> raster_hashes;
    for (int shape = 0; shape < 10; ++shape) {
        o.shape_id = shape;
        o.color_id = 1;
        o.texture_id = 0;
        scene.objects = {o};
        auto img = render(scene, cfg);
        raster_hashes.insert(fnv1a(img.data.data(), img.data.size() * sizeof(float)));
    }
    o.shape_id = 1;
    for (int texture = 0; texture < 10; ++texture) {
        o.texture_id = texture;
        scene.objects = {o};
        auto img = render(scene, cfg);
        raster_hashes.insert(fnv1a(img.data.data(), img.data.size() * sizeof(float)));
    }
    CHECK(raster_hashes.size() == 19);  // texture==solid repeats the shape==square raster
}

TEST_CASE("label matches the brute-force scanner on random scenes") {
    auto cfg = paper_config();
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto scene = sample_scene(derive_seed(9, "lbl", seed), cfg);
        for (int d = 0; d < kDimensions; ++d)
            for (int v = 0; v < cfg.values_per_dim; ++v)
                CHECK(label(scene, TaskSpec::make(d, v, cfg.values_per_dim)) ==
                      scan_label(scene, d, v));
    }
}

TEST_CASE("label: definitional cases and per-dimension sums") {
    auto cfg = paper_config();
    SceneSpec scene;
    for (int i = 0; i < 4; ++i) {
        ObjectSpec o;
        o.shape_id = i;
        o.color_id = i + 1;  // red, blue, green, brown
        o.texture_id = i;
        o.cx = 20 + 30 * i;
        o.cy = 30;
        o.radius = 10;
        scene.objects.push_back(o);
    }
    CHECK(label(scene, TaskSpec::make(kColor, 1, 10)));    // red present
    CHECK(!label(scene, TaskSpec::make(kColor, 0, 10)));   // gray absent

    for (uint64_t seed = 0; seed < 8; ++seed) {
        auto s = sample_scene(derive_seed(4, "sum", seed), cfg);
        for (int d = 0; d < kDimensions; ++d) {
            int positives = 0;
            for (int v = 0; v < cfg.values_per_dim; ++v)
                positives += label(s, TaskSpec::make(d, v, cfg.values_per_dim)) ? 1 : 0;
            CHECK(positives == static_cast<int>(s.objects.size()));
        }
    }
}

TEST_CASE("dataset balance stays within 5% of uniform across seeds") {
    auto cfg = small_config(10, 4, 5);
    for (uint64_t seed = 0; seed < 20; ++seed) {
        auto d = build_dataset(400, 50, derive_seed(3, "bal", seed), cfg);
        auto usage = value_usage(d.train, cfg);
        for (int dim = 0; dim < kDimensions; ++dim) {
            long long total = 0;
            for (long long u : usage[dim]) total += u;
            const double share = static_cast<double>(total) / cfg.values_per_dim;
            for (long long u : usage[dim])
                CHECK(std::abs(static_cast<double>(u) - share) <= 0.05 * share);
        }
    }
}

TEST_CASE("dataset: V=4 with 4 objects gives exact balance") {
    auto cfg = small_config(4, 4, 4);
    auto d = build_dataset(100, 20, 555, cfg);
    auto usage = value_usage(d.train, cfg);
    for (int dim = 0; dim < kDimensions; ++dim)
        for (long long u : usage[dim]) CHECK(u == 100);
}

TEST_CASE("dataset builds are deterministic and splits are disjoint") {
    auto cfg = small_config(5, 3, 4);
    auto a = build_dataset(80, 40, 242, cfg);
    auto b = build_dataset(80, 40, 242, cfg);
    CHECK(a.train == b.train);
    CHECK(a.holdout == b.holdout);
    CHECK(value_usage(a.train, cfg) == value_usage(b.train, cfg));
    for (const auto& h : a.holdout)
        for (const auto& t : a.train) CHECK(!(h == t));
}

TEST_CASE("assign_epoch_tasks: single-task episode assigns everything to it") {
    auto cfg = small_config(10, 4, 5);
    auto d = build_dataset(120, 20, 99, cfg);
    std::vector<TaskSpec> tasks = {TaskSpec::make(kColor, 2, 10)};
    auto a = assign_epoch_tasks(d, tasks, {120}, 7);
    for (int slot : a.slot_of_image) CHECK(slot == 0);
    CHECK(a.positive_fraction[0] >= 0.4);
    CHECK(a.positive_fraction[0] <= 0.6);
}

TEST_CASE("assign_epoch_tasks: stratification feasible at 10 values, 4-5 objects") {
    auto cfg = small_config(10, 4, 5);
    auto d = build_dataset(600, 50, 123, cfg);
    // Oracle: raw positive rate per task sits around objects/values.
    std::vector<TaskSpec> tasks;
    for (int v = 0; v < 3; ++v) tasks.push_back(TaskSpec::make(kColor, v, 10));
    for (const auto& t : tasks) {
        long long pos = 0;
        for (const auto& s : d.train) pos += label(s, t) ? 1 : 0;
        const double rate = static_cast<double>(pos) / static_cast<double>(d.train.size());
        CHECK(rate > 0.3);
        CHECK(rate < 0.6);
    }
    auto a = assign_epoch_tasks(d, tasks, {150, 150, 300}, 11);
    CHECK(a.warnings.empty());
    std::vector<long long> counts(tasks.size(), 0);
    std::vector<long long> positives(tasks.size(), 0);
    for (size_t i = 0; i < a.slot_of_image.size(); ++i) {
        const int slot = a.slot_of_image[i];
        REQUIRE(slot >= 0);
        counts[static_cast<size_t>(slot)] += 1;
        positives[static_cast<size_t>(slot)] +=
            label(d.train[i], tasks[static_cast<size_t>(slot)]) ? 1 : 0;
    }
    CHECK(counts == std::vector<long long>{150, 150, 300});
    for (size_t t = 0; t < tasks.size(); ++t) {
        const double frac = static_cast<double>(positives[t]) / static_cast<double>(counts[t]);
        CHECK(frac >= 0.4);
        CHECK(frac <= 0.6);
        CHECK(a.positive_fraction[t] == doctest::Approx(frac));
    }
}

TEST_CASE("assign_epoch_tasks: infeasible stratification is reported, not fatal") {
    // Three values and three objects per scene: every task is always positive.
    auto cfg = small_config(3, 3, 3);
    auto d = build_dataset(60, 10, 5, cfg);
    std::vector<TaskSpec> tasks = {TaskSpec::make(kShape, 0, 3)};
    auto a = assign_epoch_tasks(d, tasks, {60}, 1);
    CHECK(!a.warnings.empty());
    CHECK(a.positive_fraction[0] == doctest::Approx(1.0));
}

TEST_CASE("assign_epoch_tasks is deterministic in the seed") {
    auto cfg = small_config(10, 4, 5);
    auto d = build_dataset(200, 20, 77, cfg);
    std::vector<TaskSpec> tasks = {TaskSpec::make(kShape, 1, 10), TaskSpec::make(kShape, 2, 10)};
    auto a = assign_epoch_tasks(d, tasks, {100, 100}, 42);
    auto b = assign_epoch_tasks(d, tasks, {100, 100}, 42);
    CHECK(a.slot_of_image == b.slot_of_image);
    auto c = assign_epoch_tasks(d, tasks, {100, 100}, 43);
    CHECK(a.slot_of_image != c.slot_of_image);
}

TEST_CASE("manifest round trip preserves scenes exactly") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "seqlearn_scenegen_test";
    fs::create_directories(dir);
    auto cfg = small_config(5, 3, 4);
    auto d = build_dataset(30, 10, 8, cfg);
    write_manifest(dir / "scenes.jsonl", d);
    auto back = read_manifest(dir / "scenes.jsonl", cfg);
    CHECK(back.train == d.train);
    CHECK(back.holdout == d.holdout);
    fs::remove_all(dir);
}

TEST_CASE("tensor file round trip matches fresh renders") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "seqlearn_scenegen_tensor";
    fs::create_directories(dir);
    auto cfg = small_config(4, 2, 3);
    auto d = build_dataset(6, 3, 21, cfg);
    write_tensor_file(dir / "train.f32", d.train, cfg);
    auto images = read_tensor_file(dir / "train.f32");
    REQUIRE(images.size() == d.train.size());
    for (size_t i = 0; i < images.size(); ++i) {
        auto fresh = render(d.train[i], cfg);
        CHECK(images[i].data == fresh.data);
        CHECK(images[i].height == cfg.height);
        CHECK(images[i].width == cfg.width);
    }
    fs::remove_all(dir);
}
