#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqlearn/common.hpp"

namespace seqlearn::nnet {

// Conv stack (3x3, stride 1, pad 1; relu -> batchnorm -> 2x2 maxpool per
// layer), then the task one-hot is concatenated to the flattened features
// and fed through relu fully-connected layers into a single yes/no logit.
struct ModelConfig {
    std::vector<int> conv_filters = {16, 32, 48, 64};
    std::vector<int> fc_widths = {512, 512, 512, 512};
    int n_tasks = 30;
    int task_mod_layer = 0;  // 0 = off; 1..n_conv = add per-task channel bias there
    int in_channels = 3;
    int in_height = 120;
    int in_width = 160;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;
    double fc_dropout = 0.0;  // train-time dropout on fc hidden activations

    void validate() const;
};

struct ParamEntry {
    std::string name;
    std::vector<int> shape;
    size_t offset = 0;
    size_t count = 0;
    bool weight_decay = false;  // conv/fc weight matrices only
};

struct Layout {
    std::vector<ParamEntry> params;
    size_t param_count = 0;
    std::vector<ParamEntry> stats;  // batchnorm running mean/var
    size_t stats_count = 0;
    std::vector<int> conv_h, conv_w;  // spatial dims entering each conv layer
    int flat_dim = 0;                 // conv output features before the task input

    const ParamEntry& find(std::string_view name) const;
};

Layout make_layout(const ModelConfig& config);

// Complete cloneable parameter state. Copying gives an independent model.
template <typename T>
struct Snapshot {
    std::vector<T> params;
    std::vector<T> stats;
    uint64_t step = 0;        // optimizer steps taken with these weights
    uint64_t config_hash = 0;
};

template <typename T>
struct OptimState {
    double lr = 0.0005;
    double weight_decay = 0.0001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<T> m, v;
    uint64_t step = 0;
};

enum class Mode { Train, Eval };

template <typename T>
struct BatchView {
    const T* images = nullptr;     // [count][channels*h*w], channel-major
    const int* task_ids = nullptr; // [count]
    const uint8_t* labels = nullptr;  // [count], may be null for forward-only
    int count = 0;
};

template <typename T>
class Network {
public:
    explicit Network(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    const Layout& layout() const { return layout_; }

    Snapshot<T> init_snapshot(uint64_t seed) const;
    OptimState<T> init_optim(double lr, double weight_decay) const;

    // Logits for a batch. Train mode uses batch statistics (and never
    // touches running stats here); eval mode uses running statistics.
    void forward(const Snapshot<T>& snap, const BatchView<T>& batch, Mode mode,
                 std::vector<T>& logits) const;

    // Single example with an explicit one-hot task vector (validated).
    T forward_onehot(const Snapshot<T>& snap, const T* image, std::span<const T> task_onehot,
                     Mode mode) const;

    // Mean binary cross-entropy on the logit and its gradient. Train mode;
    // updates running batchnorm statistics unless told otherwise.
    T loss_and_grad(Snapshot<T>& snap, const BatchView<T>& batch, std::span<T> grad,
                    Rng* dropout_rng = nullptr, bool update_stats = true) const;

    // Train-mode loss with no side effects (finite-difference oracle hook).
    T batch_loss(const Snapshot<T>& snap, const BatchView<T>& batch) const;

    void adam_step(Snapshot<T>& snap, std::span<const T> grad, OptimState<T>& optim) const;

    // Fraction of examples where (logit > 0) matches the label; logit == 0
    // counts as "no". Eval mode.
    double evaluate_accuracy(const Snapshot<T>& snap, const BatchView<T>& batch) const;

private:
    struct Cache;
    void run_forward(const Snapshot<T>& snap, const BatchView<T>& batch, Mode mode,
                     std::vector<T>& logits, Cache* cache, std::vector<T>* stats_update,
                     Rng* dropout_rng) const;

    ModelConfig config_;
    Layout layout_;
    std::vector<uint8_t> decay_mask_;
};

extern template class Network<float>;
extern template class Network<double>;

// Weight file: one JSON header line (layout, config hash, step, flags),
// then little-endian float32 params, stats, and optional Adam moments.
template <typename T>
void save_weights(const std::filesystem::path& path, const Layout& layout,
                  const Snapshot<T>& snap, const OptimState<T>* optim = nullptr);

template <typename T>
struct LoadedWeights {
    Snapshot<T> snap;
    std::optional<OptimState<T>> optim;
};

template <typename T>
LoadedWeights<T> load_weights(const std::filesystem::path& path, const Layout& layout);

}  // namespace seqlearn::nnet
