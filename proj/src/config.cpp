#include "seqlearn/config.hpp"

#include <set>

#include <json.hpp>

#include "seqlearn/common.hpp"

namespace seqlearn::config {

using nlohmann::json;

void RunConfig::finalize() {
    gen.catalog = scenegen::FeatureCatalog::with_values(gen.values_per_dim);
    model.in_channels = 3;
    model.in_height = gen.height;
    model.in_width = gen.width;
    model.n_tasks = gen.n_tasks();
}

void RunConfig::validate() const {
    gen.validate();
    model.validate();
    if (model.n_tasks != gen.n_tasks())
        throw RunError("model.n_tasks must equal the task universe (3 * values_per_dim)");
    if (static_cast<long long>(train.n_batches) * train.batch_size != train.epoch_size)
        throw RunError("constraint violated: n_batches * batch_size must equal epoch_size (" +
                       std::to_string(train.n_batches) + " * " +
                       std::to_string(train.batch_size) +
                       " != " + std::to_string(train.epoch_size) + ")");
    if (train.epoch_size != gen.n_train)
        throw RunError("constraint violated: epoch_size must equal gen.n_train (each epoch "
                       "reassigns the whole training set)");
    if (train.episodes < 1) throw RunError("episodes must be >= 1");
    const bool hetero = plan.dimension == "heterogeneous";
    if (!hetero && plan.dimension != "shape" && plan.dimension != "color" &&
        plan.dimension != "texture")
        throw RunError("plan.dimension must be shape|color|texture|heterogeneous");
    const int max_eps = hetero ? gen.n_tasks() : gen.values_per_dim;
    if (train.episodes > max_eps)
        throw RunError("episodes " + std::to_string(train.episodes) +
                       " exceed the available distinct tasks (" + std::to_string(max_eps) + ")");
    if (train.criterion < 0.0 || train.criterion > 1.0)
        throw RunError("criterion must be in [0, 1]");
    if (train.max_epochs < 1) throw RunError("max_epochs must be >= 1");
    if (train.budget_trials < 1) throw RunError("budget_trials must be >= 1");
    if (train.lr <= 0 || train.weight_decay < 0) throw RunError("bad optimizer parameters");
    if (maml.inner_lr < 0 || maml.outer_lr <= 0) throw RunError("bad maml learning rates");
    if (maml.enabled && train.batch_size < 2)
        throw RunError("maml needs batches of at least two examples");
    if (probes.interval_batches < 1 || probes.duration_batches < 1)
        throw RunError("bad probe parameters");
    if (curriculum.kind == curriculum::Kind::Ratio && curriculum.kappa < 1.0)
        throw RunError("ratio curriculum requires kappa >= 1");
    if (curriculum.kind == curriculum::Kind::Power && curriculum.alpha <= 0.0)
        throw RunError("power curriculum requires alpha > 0");
    if (plan.n_blocks < 1 || plan.runs_per_permutation < 1) throw RunError("bad plan sizes");
}

RunConfig paper_preset() {
    RunConfig c;
    c.preset = "paper";
    c.finalize();
    return c;
}

RunConfig desk_preset() {
    RunConfig c;
    c.preset = "desk";
    c.gen.values_per_dim = 3;
    c.gen.min_objects = 2;
    c.gen.max_objects = 3;
    c.gen.width = 32;
    c.gen.height = 24;
    // Larger relative radii than paper scale: textures stay resolvable at
    // 32x24 while three objects still pack without placement failures.
    c.gen.radius_frac_min = 0.18;
    c.gen.radius_frac_max = 0.22;
    c.gen.n_train = 3000;
    c.gen.n_holdout = 500;
    c.model.conv_filters = {4, 8, 12, 16};
    c.model.fc_widths = {64};
    c.train.criterion = 0.90;
    c.train.epoch_size = 3000;
    c.train.n_batches = 20;
    c.train.batch_size = 150;
    c.train.episodes = 3;
    c.train.max_epochs = 100;
    c.train.budget_trials = 1500;
    c.plan.n_blocks = 1;
    c.plan.runs_per_permutation = 1;
    c.finalize();
    return c;
}

RunConfig preset_by_name(const std::string& name) {
    if (name == "paper") return paper_preset();
    if (name == "desk") return desk_preset();
    if (name == "custom") {
        RunConfig c;
        c.finalize();
        return c;
    }
    throw RunError("unknown preset: " + name + " (expected paper|desk|custom)");
}

namespace {

// Strict field reader: every consumed key is checked off, leftovers error.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw RunError("config section " + path_ + " must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        if (auto it = j_.find(key); it != j_.end()) {
            try {
                out = it->get<T>();
            } catch (const json::exception& e) {
                throw RunError("config key " + path_ + key + ": " + e.what());
            }
            seen_.insert(key);
        }
    }

    bool has(const char* key) const { return j_.contains(key); }

    void mark(const char* key) { seen_.insert(key); }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw RunError("unknown config key: " + path_ + it.key());
    }

    const json& sub(const char* key) { return j_.at(key); }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace

RunConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw RunError(std::string("config is not valid JSON: ") + e.what());
    }
    Fields top(j, "");
    std::string preset = "custom";
    top.get("preset", preset);
    RunConfig c = preset_by_name(preset);
    c.preset = preset;

    top.get("seed", c.master_seed);
    top.get("output_dir", c.output_dir);

    if (top.has("gen")) {
        Fields f(top.sub("gen"), "gen.");
        top.mark("gen");
        f.get("values_per_dim", c.gen.values_per_dim);
        f.get("min_objects", c.gen.min_objects);
        f.get("max_objects", c.gen.max_objects);
        f.get("width", c.gen.width);
        f.get("height", c.gen.height);
        f.get("radius_frac_min", c.gen.radius_frac_min);
        f.get("radius_frac_max", c.gen.radius_frac_max);
        f.get("n_train", c.gen.n_train);
        f.get("n_holdout", c.gen.n_holdout);
        f.get("supersample", c.gen.supersample);
        f.finish();
    }
    if (top.has("model")) {
        Fields f(top.sub("model"), "model.");
        top.mark("model");
        f.get("conv_filters", c.model.conv_filters);
        f.get("fc_widths", c.model.fc_widths);
        f.get("task_mod_layer", c.model.task_mod_layer);
        f.get("fc_dropout", c.model.fc_dropout);
        f.finish();
    }
    if (top.has("curriculum")) {
        Fields f(top.sub("curriculum"), "curriculum.");
        top.mark("curriculum");
        std::string kind = curriculum::kind_name(c.curriculum.kind);
        f.get("kind", kind);
        c.curriculum.kind = curriculum::kind_from_name(kind);
        f.get("kappa", c.curriculum.kappa);
        f.get("alpha", c.curriculum.alpha);
        f.finish();
    }
    if (top.has("train")) {
        Fields f(top.sub("train"), "train.");
        top.mark("train");
        f.get("criterion", c.train.criterion);
        f.get("epoch_size", c.train.epoch_size);
        f.get("n_batches", c.train.n_batches);
        f.get("batch_size", c.train.batch_size);
        f.get("episodes", c.train.episodes);
        f.get("max_epochs", c.train.max_epochs);
        f.get("lr", c.train.lr);
        f.get("weight_decay", c.train.weight_decay);
        f.get("budget_trials", c.train.budget_trials);
        f.get("reset_moments_between_episodes", c.train.reset_moments_between_episodes);
        f.get("abort_on_episode_failure", c.train.abort_on_episode_failure);
        f.finish();
    }
    if (top.has("maml")) {
        Fields f(top.sub("maml"), "maml.");
        top.mark("maml");
        f.get("enabled", c.maml.enabled);
        f.get("inner_lr", c.maml.inner_lr);
        f.get("outer_lr", c.maml.outer_lr);
        f.get("meta_test_adapt", c.maml.meta_test_adapt);
        f.finish();
    }
    if (top.has("probes")) {
        Fields f(top.sub("probes"), "probes.");
        top.mark("probes");
        f.get("enabled", c.probes.enabled);
        f.get("interval_batches", c.probes.interval_batches);
        f.get("duration_batches", c.probes.duration_batches);
        f.finish();
    }
    top.get("simultaneous", c.simultaneous);
    if (top.has("plan")) {
        Fields f(top.sub("plan"), "plan.");
        top.mark("plan");
        f.get("dimension", c.plan.dimension);
        f.get("n_blocks", c.plan.n_blocks);
        f.get("runs_per_permutation", c.plan.runs_per_permutation);
        f.finish();
    }
    top.finish();

    c.finalize();
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    return config_from_json_text(read_text_file(path));
}

namespace {

json semantic_json(const RunConfig& c) {
    json j;
    j["seed"] = c.master_seed;
    j["gen"] = {{"values_per_dim", c.gen.values_per_dim},
                {"min_objects", c.gen.min_objects},
                {"max_objects", c.gen.max_objects},
                {"width", c.gen.width},
                {"height", c.gen.height},
                {"radius_frac_min", c.gen.radius_frac_min},
                {"radius_frac_max", c.gen.radius_frac_max},
                {"n_train", c.gen.n_train},
                {"n_holdout", c.gen.n_holdout},
                {"supersample", c.gen.supersample}};
    j["model"] = {{"conv_filters", c.model.conv_filters},
                  {"fc_widths", c.model.fc_widths},
                  {"task_mod_layer", c.model.task_mod_layer},
                  {"fc_dropout", c.model.fc_dropout}};
    j["curriculum"] = {{"kind", curriculum::kind_name(c.curriculum.kind)},
                       {"kappa", c.curriculum.kappa},
                       {"alpha", c.curriculum.alpha}};
    j["train"] = {{"criterion", c.train.criterion},
                  {"epoch_size", c.train.epoch_size},
                  {"n_batches", c.train.n_batches},
                  {"batch_size", c.train.batch_size},
                  {"episodes", c.train.episodes},
                  {"max_epochs", c.train.max_epochs},
                  {"lr", c.train.lr},
                  {"weight_decay", c.train.weight_decay},
                  {"budget_trials", c.train.budget_trials},
                  {"reset_moments_between_episodes", c.train.reset_moments_between_episodes},
                  {"abort_on_episode_failure", c.train.abort_on_episode_failure}};
    j["maml"] = {{"enabled", c.maml.enabled},
                 {"inner_lr", c.maml.inner_lr},
                 {"outer_lr", c.maml.outer_lr},
                 {"meta_test_adapt", c.maml.meta_test_adapt}};
    j["probes"] = {{"enabled", c.probes.enabled},
                   {"interval_batches", c.probes.interval_batches},
                   {"duration_batches", c.probes.duration_batches}};
    j["simultaneous"] = c.simultaneous;
    j["plan"] = {{"dimension", c.plan.dimension},
                 {"n_blocks", c.plan.n_blocks},
                 {"runs_per_permutation", c.plan.runs_per_permutation}};
    return j;
}

}  // namespace

std::string config_to_json_text(const RunConfig& c) {
    json j = semantic_json(c);
    j["preset"] = c.preset;
    j["output_dir"] = c.output_dir;
    return j.dump(2) + "\n";
}

uint64_t config_hash(const RunConfig& c) { return fnv1a(semantic_json(c).dump()); }

}  // namespace seqlearn::config
