#include "seqlearn/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "seqlearn/common.hpp"

namespace seqlearn::scenegen {

namespace {

constexpr float kBackground[3] = {0.10f, 0.10f, 0.10f};
constexpr double kTextureDark = 0.45;  // multiplier for the "off" phase of a pattern

int value_of(const ObjectSpec& o, int dimension) {
    switch (dimension) {
        case kShape: return o.shape_id;
        case kColor: return o.color_id;
        case kTexture: return o.texture_id;
        default: throw std::invalid_argument("bad dimension");
    }
}

}  // namespace

FeatureCatalog FeatureCatalog::paper_scale() {
    FeatureCatalog c;
    c.dimension_names = {"shape", "color", "texture"};
    c.value_names[kShape] = {"cross", "square",  "triangle", "circle", "hexagon",
                             "star",   "pentagon",   "ring",     "diamond",  "crescent"};
    c.value_names[kColor] = {"gray",    "red",    "blue",   "green",  "brown",
                             "purple",  "magenta", "yellow", "orange", "pink"};
    c.value_names[kTexture] = {"solid",   "stripes_h", "stripes_v", "stripes_diag", "checker",
                               "dots",    "rings",     "noise",     "grid",         "zigzag"};
    // Config data: widely separated RGB anchors for the color names above.
    c.palette = {
        {0.50f, 0.50f, 0.50f},  // gray
        {0.90f, 0.10f, 0.10f},  // red
        {0.15f, 0.25f, 0.95f},  // blue
        {0.10f, 0.75f, 0.20f},  // green
        {0.55f, 0.32f, 0.10f},  // brown
        {0.55f, 0.10f, 0.70f},  // purple
        {0.95f, 0.15f, 0.85f},  // magenta
        {0.95f, 0.90f, 0.15f},  // yellow
        {0.95f, 0.55f, 0.10f},  // orange
        {0.98f, 0.70f, 0.80f},  // pink
    };
    return c;
}

FeatureCatalog FeatureCatalog::with_values(int v) {
    if (v < 1 || v > 10)
        throw RunError("catalog supports 1..10 values per dimension, got " + std::to_string(v));
    FeatureCatalog c = paper_scale();
    for (auto& names : c.value_names) names.resize(static_cast<size_t>(v));
    c.palette.resize(static_cast<size_t>(v));
    return c;
}

void GenConfig::validate() const {
    if (values_per_dim < 3 || values_per_dim > 10)
        throw RunError("values_per_dim must be in [3, 10]");
    if (catalog.values_per_dim() != values_per_dim)
        throw RunError("catalog size does not match values_per_dim");
    if (min_objects < 0 || max_objects < min_objects)
        throw RunError("object count range invalid");
    if (max_objects > values_per_dim)
        throw RunError("max_objects " + std::to_string(max_objects) +
                       " exceeds values_per_dim " + std::to_string(values_per_dim) +
                       "; distinct values per dimension are impossible");
    if (width < 8 || height < 8) throw RunError("image too small");
    if (radius_frac_min <= 0 || radius_frac_max < radius_frac_min)
        throw RunError("radius fraction range invalid");
    if (supersample < 1 || supersample > 8) throw RunError("supersample must be in [1, 8]");
}

TaskSpec TaskSpec::from_global(int global_id, int values_per_dim) {
    TaskSpec t;
    t.global_id = global_id;
    t.dimension = global_id / values_per_dim;
    t.value = global_id % values_per_dim;
    if (t.dimension < 0 || t.dimension >= kDimensions)
        throw std::invalid_argument("global task id out of range");
    return t;
}

TaskSpec TaskSpec::make(int dimension, int value, int values_per_dim) {
    TaskSpec t;
    t.dimension = dimension;
    t.value = value;
    t.global_id = dimension * values_per_dim + value;
    return t;
}

// --- scene sampling ---------------------------------------------------------

namespace {

// k distinct value indices per dimension, uniform without replacement.
std::array<std::vector<int>, kDimensions> uniform_distinct_values(Rng& rng, int v, int k) {
    std::array<std::vector<int>, kDimensions> out;
    for (int d = 0; d < kDimensions; ++d) {
        std::vector<int> all(static_cast<size_t>(v));
        std::iota(all.begin(), all.end(), 0);
        rng.shuffle(all);
        out[static_cast<size_t>(d)].assign(all.begin(), all.begin() + k);
    }
    return out;
}

// Rejection-samples non-overlapping, fully-visible disks.
void place_objects(Rng& rng, const GenConfig& config, std::vector<ObjectSpec>& objects) {
    const double rmin = config.radius_frac_min * config.height;
    const double rmax = config.radius_frac_max * config.height;
    int retries = 0;
    for (size_t i = 0; i < objects.size(); ++i) {
        for (;;) {
            const double r = rng.uniform(rmin, rmax);
            const double margin = r + 1.0;
            if (2 * margin >= config.width || 2 * margin >= config.height)
                throw RunError("objects do not fit the frame; reduce radius fractions");
            const double cx = rng.uniform(margin, config.width - margin);
            const double cy = rng.uniform(margin, config.height - margin);
            bool clear = true;
            for (size_t j = 0; j < i; ++j) {
                const double dx = cx - objects[j].cx, dy = cy - objects[j].cy;
                if (std::sqrt(dx * dx + dy * dy) < r + objects[j].radius + 1.0) {
                    clear = false;
                    break;
                }
            }
            if (clear) {
                objects[i].cx = cx;
                objects[i].cy = cy;
                objects[i].radius = r;
                break;
            }
            if (++retries > config.max_place_retries)
                throw RunError("object placement failed after " +
                               std::to_string(config.max_place_retries) + " retries");
        }
    }
}

SceneSpec sample_scene_with_values(uint64_t seed, const GenConfig& config,
                                   const std::array<std::vector<int>, kDimensions>& values,
                                   int n_objects) {
    SceneSpec scene;
    scene.seed = seed;
    scene.objects.resize(static_cast<size_t>(n_objects));
    for (int i = 0; i < n_objects; ++i) {
        auto& o = scene.objects[static_cast<size_t>(i)];
        o.shape_id = values[kShape][static_cast<size_t>(i)];
        o.color_id = values[kColor][static_cast<size_t>(i)];
        o.texture_id = values[kTexture][static_cast<size_t>(i)];
    }
    Rng rng(derive_seed(seed, "place"));
    place_objects(rng, config, scene.objects);
    return scene;
}

}  // namespace

SceneSpec sample_scene(uint64_t rng_seed, const GenConfig& config) {
    config.validate();
    Rng rng(derive_seed(rng_seed, "values"));
    const int n_objects = rng.uniform_int(config.min_objects, config.max_objects);
    const auto values = uniform_distinct_values(rng, config.values_per_dim, n_objects);
    return sample_scene_with_values(rng_seed, config, values, n_objects);
}

// --- rasterizer --------------------------------------------------------------

namespace {

uint64_t cell_hash(int64_t ix, int64_t iy) {
    uint64_t s = (static_cast<uint64_t>(ix) * 0x9e3779b97f4a7c15ull) ^
                 (static_cast<uint64_t>(iy) * 0xd1342543de82ef95ull) ^ 0x1234abcdull;
    return splitmix64(s);
}

double floor_frac(double u) { return u - std::floor(u); }

// Triangle wave in [0,1] with period 1.
double tri_wave(double u) { return std::abs(2.0 * floor_frac(u) - 1.0); }

bool stripe_on(double u) {
    return (static_cast<long long>(std::floor(u)) & 1LL) == 0;
}

// Pattern multiplier at object-local offset (dx, dy); patterns are anchored
// to the object center and scale with its radius.
double texture_factor(int texture_id, double dx, double dy, double radius) {
    const double p = std::max(1.6, radius * 0.42);
    switch (texture_id) {
        case 0: return 1.0;                                       // solid
        case 1: return stripe_on(dy / p) ? 1.0 : kTextureDark;    // stripes_h
        case 2: return stripe_on(dx / p) ? 1.0 : kTextureDark;    // stripes_v
        case 3: return stripe_on((dx + dy) / (p * 1.41421356)) ? 1.0 : kTextureDark;
        case 4:  // checker
            return (stripe_on(dx / p) == stripe_on(dy / p)) ? 1.0 : kTextureDark;
        case 5: {  // dots
            const double fx = floor_frac(dx / p) - 0.5, fy = floor_frac(dy / p) - 0.5;
            return (fx * fx + fy * fy < 0.33 * 0.33) ? kTextureDark : 1.0;
        }
        case 6: return stripe_on(std::sqrt(dx * dx + dy * dy) / p) ? 1.0 : kTextureDark;  // rings
        case 7: {  // noise
            const auto ix = static_cast<int64_t>(std::floor(dx / (p * 0.75)));
            const auto iy = static_cast<int64_t>(std::floor(dy / (p * 0.75)));
            return (cell_hash(ix, iy) & 1ull) ? 1.0 : kTextureDark;
        }
        case 8:  // grid
            return (floor_frac(dx / p) < 0.30 || floor_frac(dy / p) < 0.30) ? kTextureDark : 1.0;
        case 9:  // zigzag
            return stripe_on(dy / p + tri_wave(dx / (2.0 * p))) ? 1.0 : kTextureDark;
        default: throw std::invalid_argument("bad texture id");
    }
}

bool point_in_shape(int shape_id, double dx, double dy, double r) {
    switch (shape_id) {
        case 0: {  // cross; corners stay inside the disk
            const double arm = r * 0.36, len = r * 0.92;
            return (std::abs(dx) <= arm && std::abs(dy) <= len) ||
                   (std::abs(dy) <= arm && std::abs(dx) <= len);
        }
        case 1: {  // square, inscribed in the disk
            const double h = r * 0.70;
            return std::abs(dx) <= h && std::abs(dy) <= h;
        }
        case 2: {  // equilateral triangle inscribed in the disk, apex up
            if (dy < -r || dy > 0.5 * r) return false;
            return std::abs(dx) <= 0.5773502692 * (dy + r);
        }
        case 3:  // circle
            return dx * dx + dy * dy <= r * r;
        case 6:    // pentagon
        case 4: {  // hexagon
            constexpr double pi = std::numbers::pi;
            const int sides = shape_id == 6 ? 5 : 6;
            const double apothem = r * std::cos(pi / sides);
            for (int s = 0; s < sides; ++s) {
                const double a = (2.0 * pi * s) / sides - pi / 2;
                if (dx * std::cos(a) + dy * std::sin(a) > apothem) return false;
            }
            return true;
        }
        case 5: {  // five-pointed star
            constexpr double pi = std::numbers::pi;
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d > r) return false;
            double ang = std::atan2(dy, dx) + pi / 2;  // point up
            const double sector = 2.0 * pi / 5.0;
            double a = std::fmod(std::fmod(ang, sector) + sector, sector);
            a = std::abs(a - sector / 2);               // 0 at valley, sector/2 at spike
            const double t = a / (sector / 2);
            const double rmax = r * (0.42 + 0.58 * t);  // inner radius 0.42 r
            return d <= rmax;
        }
        case 7: {  // ring
            const double d2 = dx * dx + dy * dy;
            return d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r);
        }
        case 8:  // diamond
            return std::abs(dx) + std::abs(dy) <= r;
        case 9: {  // crescent
            if (dx * dx + dy * dy > r * r) return false;
            const double ox = dx - 0.45 * r;
            return ox * ox + dy * dy > (0.72 * r) * (0.72 * r);
        }
        default: throw std::invalid_argument("bad shape id");
    }
}

}  // namespace

void render_into(const SceneSpec& scene, const GenConfig& config, float* out) {
    const int W = config.width, H = config.height;
    const size_t plane = static_cast<size_t>(W) * H;
    for (int c = 0; c < 3; ++c)
        std::fill(out + c * plane, out + (c + 1) * plane, kBackground[c]);

    const int S = config.supersample;
    const double inv_s2 = 1.0 / (S * S);
    for (const auto& o : scene.objects) {
        const auto& rgb = config.catalog.palette[static_cast<size_t>(o.color_id)];
        const int x0 = std::max(0, static_cast<int>(std::floor(o.cx - o.radius - 1)));
        const int x1 = std::min(W - 1, static_cast<int>(std::ceil(o.cx + o.radius + 1)));
        const int y0 = std::max(0, static_cast<int>(std::floor(o.cy - o.radius - 1)));
        const int y1 = std::min(H - 1, static_cast<int>(std::ceil(o.cy + o.radius + 1)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                double acc[3] = {0, 0, 0};
                int covered = 0;
                for (int sy = 0; sy < S; ++sy) {
                    for (int sx = 0; sx < S; ++sx) {
                        const double px = x + (sx + 0.5) / S;
                        const double py = y + (sy + 0.5) / S;
                        const double dx = px - o.cx, dy = py - o.cy;
                        if (!point_in_shape(o.shape_id, dx, dy, o.radius)) continue;
                        const double f = texture_factor(o.texture_id, dx, dy, o.radius);
                        for (int c = 0; c < 3; ++c) acc[c] += rgb[static_cast<size_t>(c)] * f;
                        ++covered;
                    }
                }
                if (covered == 0) continue;
                const size_t idx = static_cast<size_t>(y) * W + x;
                const double bg_w = (S * S - covered) * inv_s2;
                for (int c = 0; c < 3; ++c) {
                    const double v = acc[c] * inv_s2 + kBackground[c] * bg_w;
                    out[c * plane + idx] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
    }
}

ImageTensor render(const SceneSpec& scene, const GenConfig& config) {
    ImageTensor img;
    img.channels = 3;
    img.height = config.height;
    img.width = config.width;
    img.data.resize(3 * static_cast<size_t>(config.height) * config.width);
    render_into(scene, config, img.data.data());
    return img;
}

bool label(const SceneSpec& scene, const TaskSpec& task) {
    for (const auto& o : scene.objects)
        if (value_of(o, task.dimension) == task.value) return true;
    return false;
}

// --- dataset -----------------------------------------------------------------

namespace {

// Greedy usage balancing: every scene takes the currently least-used values,
// random tie-breaks. Keeps per-value usage within +-1 of uniform per split.
std::array<std::vector<int>, kDimensions> balanced_values(
    Rng& rng, const GenConfig& config, int k,
    std::array<std::vector<long long>, kDimensions>& usage) {
    std::array<std::vector<int>, kDimensions> out;
    const int v = config.values_per_dim;
    for (int d = 0; d < kDimensions; ++d) {
        std::vector<std::pair<std::pair<long long, uint64_t>, int>> ranked;
        ranked.reserve(static_cast<size_t>(v));
        for (int val = 0; val < v; ++val)
            ranked.push_back({{usage[static_cast<size_t>(d)][static_cast<size_t>(val)],
                               rng.next_u64()},
                              val});
        std::sort(ranked.begin(), ranked.end());
        auto& vals = out[static_cast<size_t>(d)];
        for (int i = 0; i < k; ++i) {
            vals.push_back(ranked[static_cast<size_t>(i)].second);
            usage[static_cast<size_t>(d)][static_cast<size_t>(vals.back())] += 1;
        }
    }
    return out;
}

std::vector<SceneSpec> build_split(long long n, uint64_t split_seed, const GenConfig& config) {
    std::vector<SceneSpec> scenes;
    scenes.reserve(static_cast<size_t>(n));
    std::array<std::vector<long long>, kDimensions> usage;
    for (auto& u : usage) u.assign(static_cast<size_t>(config.values_per_dim), 0);
    for (long long i = 0; i < n; ++i) {
        const uint64_t scene_seed = derive_seed(split_seed, "scene", static_cast<uint64_t>(i));
        Rng rng(derive_seed(scene_seed, "values"));
        const int n_objects = rng.uniform_int(config.min_objects, config.max_objects);
        const auto values = balanced_values(rng, config, n_objects, usage);
        // An unlucky radius draw can make a placement infeasible; redraw the
        // placement under derived sub-seeds so builds stay deterministic and
        // total.
        for (int attempt = 0;; ++attempt) {
            try {
                const uint64_t s = attempt == 0
                                       ? scene_seed
                                       : derive_seed(scene_seed, "redraw",
                                                     static_cast<uint64_t>(attempt));
                scenes.push_back(sample_scene_with_values(s, config, values, n_objects));
                break;
            } catch (const RunError&) {
                if (attempt >= 50)
                    throw RunError("scene " + std::to_string(i) +
                                   " cannot be placed after 50 redraws; the radius range "
                                   "does not fit the frame");
            }
        }
    }
    return scenes;
}

}  // namespace

Dataset build_dataset(long long n_train, long long n_holdout, uint64_t rng_seed,
                      const GenConfig& config) {
    if (n_train <= 0 || n_holdout <= 0) throw RunError("dataset sizes must be positive");
    config.validate();
    Dataset d;
    d.config = config;
    d.train = build_split(n_train, derive_seed(rng_seed, "train-split"), config);
    d.holdout = build_split(n_holdout, derive_seed(rng_seed, "holdout-split"), config);
    return d;
}

std::vector<std::vector<long long>> value_usage(const std::vector<SceneSpec>& scenes,
                                                const GenConfig& config) {
    std::vector<std::vector<long long>> usage(
        kDimensions, std::vector<long long>(static_cast<size_t>(config.values_per_dim), 0));
    for (const auto& s : scenes)
        for (const auto& o : s.objects)
            for (int d = 0; d < kDimensions; ++d)
                usage[static_cast<size_t>(d)][static_cast<size_t>(value_of(o, d))] += 1;
    return usage;
}

EpochAssignment assign_epoch_tasks(const Dataset& dataset, const std::vector<TaskSpec>& tasks,
                                   const std::vector<long long>& allocation, uint64_t rng_seed) {
    const long long n = static_cast<long long>(dataset.train.size());
    if (tasks.size() != allocation.size())
        throw std::invalid_argument("tasks and allocation must align");
    if (std::accumulate(allocation.begin(), allocation.end(), 0LL) != n)
        throw RunError("allocation must sum to the train split size");

    EpochAssignment out;
    out.slot_of_image.assign(static_cast<size_t>(n), -1);
    out.positive_fraction.assign(tasks.size(), 0.0);

    std::vector<char> taken(static_cast<size_t>(n), 0);

    // Large quotas get first pick so the 0.4..0.6 stratification band is as
    // feasible as the label pools allow.
    std::vector<size_t> slot_order(tasks.size());
    std::iota(slot_order.begin(), slot_order.end(), size_t{0});
    std::stable_sort(slot_order.begin(), slot_order.end(),
                     [&](size_t a, size_t b) { return allocation[a] > allocation[b]; });

    // Label matrix for the active tasks; negatives are scarce when few
    // values are missing per scene, so positive draws must spare scenes that
    // other tasks need as negatives.
    std::vector<std::vector<uint8_t>> labels(tasks.size());
    for (size_t t = 0; t < tasks.size(); ++t) {
        labels[t].resize(static_cast<size_t>(n));
        for (long long i = 0; i < n; ++i)
            labels[t][static_cast<size_t>(i)] =
                label(dataset.train[static_cast<size_t>(i)], tasks[t]) ? 1 : 0;
    }

    for (size_t slot : slot_order) {
        std::vector<long long> pos, pos_contested, neg;
        for (long long i = 0; i < n; ++i) {
            if (taken[static_cast<size_t>(i)]) continue;
            if (!labels[slot][static_cast<size_t>(i)]) {
                neg.push_back(i);
                continue;
            }
            bool contested = false;
            for (size_t other = 0; other < tasks.size(); ++other)
                if (other != slot && !labels[other][static_cast<size_t>(i)]) contested = true;
            (contested ? pos_contested : pos).push_back(i);
        }
        Rng rng(derive_seed(rng_seed, "strata", static_cast<uint64_t>(slot)));
        rng.shuffle(pos);
        rng.shuffle(pos_contested);
        rng.shuffle(neg);
        pos.insert(pos.end(), pos_contested.begin(), pos_contested.end());
        long long quota = allocation[slot];
        long long got_pos = 0, got = 0;
        size_t pi = 0, ni = 0;
        bool want_pos = true;
        while (got < quota) {
            bool take_pos;
            if (pi < pos.size() && ni < neg.size())
                take_pos = want_pos;
            else if (pi < pos.size())
                take_pos = true;
            else if (ni < neg.size())
                take_pos = false;
            else
                throw std::logic_error("assignment pool exhausted early");
            const long long idx = take_pos ? pos[pi++] : neg[ni++];
            out.slot_of_image[static_cast<size_t>(idx)] = static_cast<int>(slot);
            taken[static_cast<size_t>(idx)] = 1;
            got_pos += take_pos ? 1 : 0;
            ++got;
            want_pos = !want_pos;
        }
        const double frac = quota > 0 ? static_cast<double>(got_pos) / quota : 0.0;
        out.positive_fraction[slot] = frac;
        if (frac < 0.4 || frac > 0.6) {
            out.warnings.push_back("task " + std::to_string(tasks[slot].global_id) +
                                   " positive fraction " + std::to_string(frac) +
                                   " outside [0.4, 0.6]; pool does not support stratification");
        }
    }
    return out;
}

// --- external formats --------------------------------------------------------

namespace {

nlohmann::json scene_to_json(const SceneSpec& s, const char* split) {
    nlohmann::json objects = nlohmann::json::array();
    for (const auto& o : s.objects)
        objects.push_back({{"shape", o.shape_id},
                           {"color", o.color_id},
                           {"texture", o.texture_id},
                           {"cx", o.cx},
                           {"cy", o.cy},
                           {"radius", o.radius}});
    return nlohmann::json{{"objects", objects}, {"seed", s.seed}, {"split", split}};
}

SceneSpec scene_from_json(const nlohmann::json& j) {
    SceneSpec s;
    s.seed = j.at("seed").get<uint64_t>();
    for (const auto& jo : j.at("objects")) {
        ObjectSpec o;
        o.shape_id = jo.at("shape").get<int>();
        o.color_id = jo.at("color").get<int>();
        o.texture_id = jo.at("texture").get<int>();
        o.cx = jo.at("cx").get<double>();
        o.cy = jo.at("cy").get<double>();
        o.radius = jo.at("radius").get<double>();
        s.objects.push_back(o);
    }
    return s;
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const Dataset& dataset) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RunError("cannot write " + path.string());
    for (const auto& s : dataset.train) os << scene_to_json(s, "train").dump() << '\n';
    for (const auto& s : dataset.holdout) os << scene_to_json(s, "holdout").dump() << '\n';
}

Dataset read_manifest(const std::filesystem::path& path, const GenConfig& config) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RunError("cannot open " + path.string());
    Dataset d;
    d.config = config;
    for (std::string line; std::getline(is, line);) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const auto split = j.at("split").get<std::string>();
        if (split == "train")
            d.train.push_back(scene_from_json(j));
        else if (split == "holdout")
            d.holdout.push_back(scene_from_json(j));
        else
            throw RunError("unknown split in manifest: " + split);
    }
    return d;
}

void write_tensor_file(const std::filesystem::path& path, const std::vector<SceneSpec>& scenes,
                       const GenConfig& config) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RunError("cannot write " + path.string());
    nlohmann::json header{{"channels", 3},
                          {"height", config.height},
                          {"width", config.width},
                          {"count", scenes.size()}};
    os << header.dump() << '\n';
    std::vector<float> buf(3 * static_cast<size_t>(config.height) * config.width);
    for (const auto& s : scenes) {
        render_into(s, config, buf.data());
        write_f32_le(os, buf.data(), buf.size());
    }
}

std::vector<ImageTensor> read_tensor_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RunError("cannot open " + path.string());
    std::string header_line;
    std::getline(is, header_line);
    const auto header = nlohmann::json::parse(header_line);
    const int channels = header.at("channels").get<int>();
    const int height = header.at("height").get<int>();
    const int width = header.at("width").get<int>();
    const auto count = header.at("count").get<size_t>();
    std::vector<ImageTensor> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        ImageTensor img;
        img.channels = channels;
        img.height = height;
        img.width = width;
        img.data.resize(static_cast<size_t>(channels) * height * width);
        read_f32_le(is, img.data.data(), img.data.size());
        out.push_back(std::move(img));
    }
    return out;
}

}  // namespace seqlearn::scenegen
