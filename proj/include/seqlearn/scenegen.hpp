#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace seqlearn::scenegen {

inline constexpr int kDimensions = 3;
enum Dimension : int { kShape = 0, kColor = 1, kTexture = 2 };

// Names and color swatches for the value indices. Scaled-down catalogs take
// the first V entries of each dimension, uniformly.
struct FeatureCatalog {
    std::array<std::string, kDimensions> dimension_names;
    std::array<std::vector<std::string>, kDimensions> value_names;
    std::vector<std::array<float, 3>> palette;  // rgb per color value

    int values_per_dim() const { return static_cast<int>(value_names[0].size()); }
    static FeatureCatalog paper_scale();
    static FeatureCatalog with_values(int v);
};

struct GenConfig {
    int values_per_dim = 10;
    int min_objects = 4;
    int max_objects = 5;
    int width = 160;
    int height = 120;
    double radius_frac_min = 0.08;  // of image height
    double radius_frac_max = 0.14;
    long long n_train = 45000;
    long long n_holdout = 5000;
    int supersample = 3;
    int max_place_retries = 1000;
    double balance_tolerance = 0.05;
    FeatureCatalog catalog = FeatureCatalog::paper_scale();

    int n_tasks() const { return kDimensions * values_per_dim; }
    void validate() const;
};

struct ObjectSpec {
    int shape_id = 0;
    int color_id = 0;
    int texture_id = 0;
    double cx = 0, cy = 0;  // pixels
    double radius = 0;      // pixels

    bool operator==(const ObjectSpec&) const = default;
};

struct SceneSpec {
    std::vector<ObjectSpec> objects;
    uint64_t seed = 0;

    bool operator==(const SceneSpec&) const = default;
};

struct TaskSpec {
    int dimension = 0;
    int value = 0;
    int global_id = 0;

    static TaskSpec from_global(int global_id, int values_per_dim);
    static TaskSpec make(int dimension, int value, int values_per_dim);
};

// Channel-major float image, all values in [0, 1].
struct ImageTensor {
    int channels = 3;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    float at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    size_t size() const { return data.size(); }
};

SceneSpec sample_scene(uint64_t rng_seed, const GenConfig& config);
ImageTensor render(const SceneSpec& scene, const GenConfig& config);
// Renders into a preallocated [3*height*width] buffer (batch assembly path).
void render_into(const SceneSpec& scene, const GenConfig& config, float* out);

bool label(const SceneSpec& scene, const TaskSpec& task);

enum class Split { Train, Holdout };

struct Dataset {
    GenConfig config;
    std::vector<SceneSpec> train;
    std::vector<SceneSpec> holdout;

    const std::vector<SceneSpec>& split(Split s) const {
        return s == Split::Train ? train : holdout;
    }
};

Dataset build_dataset(long long n_train, long long n_holdout, uint64_t rng_seed,
                      const GenConfig& config);

// Usage count of every (dimension, value) across a scene list.
std::vector<std::vector<long long>> value_usage(const std::vector<SceneSpec>& scenes,
                                                const GenConfig& config);

// One task per train image for one epoch. slot_of_image[i] indexes into
// `tasks`; per-task positive fractions land in [0.4, 0.6] where the label
// pools allow it, otherwise the shortfall is reported in `warnings`.
struct EpochAssignment {
    std::vector<int> slot_of_image;
    std::vector<double> positive_fraction;  // per task slot
    std::vector<std::string> warnings;
};

EpochAssignment assign_epoch_tasks(const Dataset& dataset, const std::vector<TaskSpec>& tasks,
                                   const std::vector<long long>& allocation, uint64_t rng_seed);

// External formats -----------------------------------------------------------

// JSON-lines manifest: one scene object per line {objects:[...], seed, split}.
void write_manifest(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_manifest(const std::filesystem::path& path, const GenConfig& config);

// Raw tensor file: one JSON header line {channels,height,width,count}, then
// count images of channel-major little-endian float32.
void write_tensor_file(const std::filesystem::path& path, const std::vector<SceneSpec>& scenes,
                       const GenConfig& config);
std::vector<ImageTensor> read_tensor_file(const std::filesystem::path& path);

}  // namespace seqlearn::scenegen
