#include "seqlearn/nnet.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace seqlearn::nnet {

void ModelConfig::validate() const {
    if (conv_filters.empty()) throw RunError("conv_filters must be non-empty");
    if (fc_widths.empty()) throw RunError("fc_widths must be non-empty");
    if (n_tasks < 1) throw RunError("n_tasks must be >= 1");
    if (task_mod_layer < 0 || task_mod_layer > static_cast<int>(conv_filters.size()))
        throw RunError("task_mod_layer must be 0 (off) or a conv layer index 1.." +
                       std::to_string(conv_filters.size()));
    if (in_channels < 1 || in_height < 1 || in_width < 1) throw RunError("bad input dims");
    if (fc_dropout < 0.0 || fc_dropout >= 1.0) throw RunError("fc_dropout must be in [0, 1)");
    int h = in_height, w = in_width;
    for (size_t l = 0; l < conv_filters.size(); ++l) {
        if (conv_filters[l] < 1) throw RunError("conv filter counts must be positive");
        if (h < 2 || w < 2)
            throw RunError("input " + std::to_string(in_height) + "x" + std::to_string(in_width) +
                           " too small for " + std::to_string(conv_filters.size()) +
                           " pooling stages");
        h /= 2;
        w /= 2;
    }
    for (int fw : fc_widths)
        if (fw < 1) throw RunError("fc widths must be positive");
}

const ParamEntry& Layout::find(std::string_view name) const {
    for (const auto& e : params)
        if (e.name == name) return e;
    throw std::invalid_argument("no parameter named " + std::string(name));
}

Layout make_layout(const ModelConfig& config) {
    config.validate();
    Layout out;
    size_t offset = 0;
    auto add = [&](std::string name, std::vector<int> shape, bool decay) {
        ParamEntry e;
        e.name = std::move(name);
        e.shape = std::move(shape);
        e.offset = offset;
        e.count = 1;
        for (int s : e.shape) e.count *= static_cast<size_t>(s);
        e.weight_decay = decay;
        offset += e.count;
        out.params.push_back(std::move(e));
    };
    size_t stats_offset = 0;
    auto add_stat = [&](std::string name, int c) {
        ParamEntry e;
        e.name = std::move(name);
        e.shape = {c};
        e.offset = stats_offset;
        e.count = static_cast<size_t>(c);
        stats_offset += e.count;
        out.stats.push_back(std::move(e));
    };

    int h = config.in_height, w = config.in_width, c_in = config.in_channels;
    for (size_t l = 0; l < config.conv_filters.size(); ++l) {
        out.conv_h.push_back(h);
        out.conv_w.push_back(w);
        const int c_out = config.conv_filters[l];
        const std::string tag = "conv" + std::to_string(l);
        add(tag + ".weight", {c_out, c_in, 3, 3}, true);
        add(tag + ".bias", {c_out}, false);
        add("bn" + std::to_string(l) + ".gamma", {c_out}, false);
        add("bn" + std::to_string(l) + ".beta", {c_out}, false);
        add_stat("bn" + std::to_string(l) + ".running_mean", c_out);
        add_stat("bn" + std::to_string(l) + ".running_var", c_out);
        c_in = c_out;
        h /= 2;
        w /= 2;
    }
    out.flat_dim = c_in * h * w;
    if (config.task_mod_layer > 0) {
        const int c_mod = config.conv_filters[static_cast<size_t>(config.task_mod_layer - 1)];
        add("taskmod.bias", {config.n_tasks, c_mod}, false);
    }
    int in_dim = out.flat_dim + config.n_tasks;
    for (size_t j = 0; j < config.fc_widths.size(); ++j) {
        const std::string tag = "fc" + std::to_string(j);
        add(tag + ".weight", {config.fc_widths[j], in_dim}, true);
        add(tag + ".bias", {config.fc_widths[j]}, false);
        in_dim = config.fc_widths[j];
    }
    add("out.weight", {1, in_dim}, true);
    add("out.bias", {1}, false);

    out.param_count = offset;
    out.stats_count = stats_offset;
    return out;
}

namespace {

uint64_t hash_config(const ModelConfig& c) {
    std::string s = "nnet:";
    for (int f : c.conv_filters) s += std::to_string(f) + ",";
    s += ";";
    for (int f : c.fc_widths) s += std::to_string(f) + ",";
    s += ";" + std::to_string(c.n_tasks) + ";" + std::to_string(c.task_mod_layer) + ";" +
         std::to_string(c.in_channels) + "x" + std::to_string(c.in_height) + "x" +
         std::to_string(c.in_width);
    return fnv1a(s);
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRow = Eigen::Map<RowMat<T>>;
template <typename T>
using MapRowConst = Eigen::Map<const RowMat<T>>;

// col[k][p] with k = (c*3+ky)*3+kx, p = y*w+x, zero padded.
template <typename T>
void im2col(const T* x, int c_in, int h, int w, T* col) {
    const size_t p_count = static_cast<size_t>(h) * w;
    for (int c = 0; c < c_in; ++c) {
        const T* plane = x + static_cast<size_t>(c) * p_count;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                T* row = col + (static_cast<size_t>(c) * 9 + static_cast<size_t>(ky) * 3 + kx) *
                                   p_count;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    T* dst = row + static_cast<size_t>(y) * w;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<size_t>(sy) * w;
                    for (int x0 = 0; x0 < w; ++x0) {
                        const int sx = x0 + kx - 1;
                        dst[x0] = (sx < 0 || sx >= w) ? T(0) : src[sx];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int c_in, int h, int w, T* x) {
    const size_t p_count = static_cast<size_t>(h) * w;
    for (int c = 0; c < c_in; ++c) {
        T* plane = x + static_cast<size_t>(c) * p_count;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const T* row = col + (static_cast<size_t>(c) * 9 + static_cast<size_t>(ky) * 3 +
                                      kx) *
                                         p_count;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    T* dst = plane + static_cast<size_t>(sy) * w;
                    const T* src = row + static_cast<size_t>(y) * w;
                    for (int x0 = 0; x0 < w; ++x0) {
                        const int sx = x0 + kx - 1;
                        if (sx >= 0 && sx < w) dst[sx] += src[x0];
                    }
                }
            }
        }
    }
}

template <typename T>
T stable_softplus(T z) {
    if (z > T(0)) return z + std::log1p(std::exp(-z));
    return std::log1p(std::exp(z));
}

template <typename T>
T sigmoid(T z) {
    if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
    const T e = std::exp(z);
    return e / (T(1) + e);
}

}  // namespace

template <typename T>
struct Network<T>::Cache {
    // Per conv layer: post-relu activations (batchnorm input), train-mode
    // batch statistics, pooled output and argmax positions.
    std::vector<std::vector<T>> act;
    std::vector<std::vector<T>> mu, istd;
    std::vector<std::vector<T>> pooled;
    std::vector<std::vector<int32_t>> argmax;
    // Per fc layer: inputs (fc_in[0] is the concat of features and one-hot).
    std::vector<std::vector<T>> fc_in;
    std::vector<std::vector<T>> dropout_mask;
};

template <typename T>
Network<T>::Network(ModelConfig config)
    : config_(std::move(config)), layout_(make_layout(config_)) {
    decay_mask_.assign(layout_.param_count, 0);
    for (const auto& e : layout_.params)
        if (e.weight_decay)
            std::fill(decay_mask_.begin() + static_cast<long>(e.offset),
                      decay_mask_.begin() + static_cast<long>(e.offset + e.count), uint8_t{1});
}

template <typename T>
Snapshot<T> Network<T>::init_snapshot(uint64_t seed) const {
    Snapshot<T> snap;
    snap.params.assign(layout_.param_count, T(0));
    snap.stats.assign(layout_.stats_count, T(0));
    snap.config_hash = hash_config(config_);
    for (const auto& e : layout_.params) {
        if (e.name.ends_with(".weight")) {
            // Fan-in scaled uniform; fan-in is the product of all but the
            // leading (output) dimension.
            size_t fan_in = 1;
            for (size_t i = 1; i < e.shape.size(); ++i)
                fan_in *= static_cast<size_t>(e.shape[i]);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            Rng rng(derive_seed(seed, e.name));
            for (size_t i = 0; i < e.count; ++i)
                snap.params[e.offset + i] = static_cast<T>(rng.uniform(-bound, bound));
        } else if (e.name.starts_with("bn") && e.name.ends_with(".gamma")) {
            std::fill_n(snap.params.begin() + static_cast<long>(e.offset), e.count, T(1));
        }
        // conv/fc biases, bn beta, and the task-mod table start at zero
    }
    for (const auto& e : layout_.stats)
        if (e.name.ends_with(".running_var"))
            std::fill_n(snap.stats.begin() + static_cast<long>(e.offset), e.count, T(1));
    return snap;
}

template <typename T>
OptimState<T> Network<T>::init_optim(double lr, double weight_decay) const {
    OptimState<T> o;
    o.lr = lr;
    o.weight_decay = weight_decay;
    o.m.assign(layout_.param_count, T(0));
    o.v.assign(layout_.param_count, T(0));
    return o;
}

template <typename T>
void Network<T>::run_forward(const Snapshot<T>& snap, const BatchView<T>& batch, Mode mode,
                             std::vector<T>& logits, Cache* cache, std::vector<T>* stats_update,
                             Rng* dropout_rng) const {
    const int B = batch.count;
    if (B < 1) throw RunError("empty batch");
    if (snap.params.size() != layout_.param_count) throw RunError("weight vector length mismatch");
    for (int e = 0; e < B; ++e)
        if (batch.task_ids[e] < 0 || batch.task_ids[e] >= config_.n_tasks)
            throw RunError("task id out of range at example " + std::to_string(e));

    const size_t n_conv = config_.conv_filters.size();
    Cache local;
    Cache& cc = cache ? *cache : local;
    cc.act.assign(n_conv, {});
    cc.mu.assign(n_conv, {});
    cc.istd.assign(n_conv, {});
    cc.pooled.assign(n_conv, {});
    cc.argmax.assign(n_conv, {});

    size_t col_max = 0;
    {
        int ci = config_.in_channels;
        for (size_t l = 0; l < n_conv; ++l) {
            const size_t p = static_cast<size_t>(layout_.conv_h[l]) * layout_.conv_w[l];
            col_max = std::max(col_max, static_cast<size_t>(ci) * 9 * p);
            ci = config_.conv_filters[l];
        }
    }
    std::vector<T> colbuf(col_max);
    std::vector<T> ybuf;

    const T* x = batch.images;
    int cur_c = config_.in_channels;
    for (size_t l = 0; l < n_conv; ++l) {
        const int h = layout_.conv_h[l], w = layout_.conv_w[l];
        const int c_out = config_.conv_filters[l];
        const size_t plane = static_cast<size_t>(h) * w;
        const size_t k_dim = static_cast<size_t>(cur_c) * 9;
        const std::string tag = "conv" + std::to_string(l);
        const T* w_ptr = snap.params.data() + layout_.find(tag + ".weight").offset;
        const T* b_ptr = snap.params.data() + layout_.find(tag + ".bias").offset;

        auto& act = cc.act[l];
        act.resize(static_cast<size_t>(B) * c_out * plane);
        MapRowConst<T> wm(w_ptr, c_out, static_cast<long>(k_dim));
        for (int e = 0; e < B; ++e) {
            im2col(x + static_cast<size_t>(e) * cur_c * plane, cur_c, h, w, colbuf.data());
            MapRowConst<T> col(colbuf.data(), static_cast<long>(k_dim), static_cast<long>(plane));
            MapRow<T> z(act.data() + static_cast<size_t>(e) * c_out * plane, c_out,
                        static_cast<long>(plane));
            z.noalias() = wm * col;
            for (int c = 0; c < c_out; ++c) z.row(c).array() += b_ptr[c];
        }

        if (config_.task_mod_layer == static_cast<int>(l) + 1) {
            const T* mod = snap.params.data() + layout_.find("taskmod.bias").offset;
            for (int e = 0; e < B; ++e) {
                const T* row = mod + static_cast<size_t>(batch.task_ids[e]) * c_out;
                T* zp = act.data() + static_cast<size_t>(e) * c_out * plane;
                for (int c = 0; c < c_out; ++c) {
                    T* cp = zp + static_cast<size_t>(c) * plane;
                    for (size_t p = 0; p < plane; ++p) cp[p] += row[c];
                }
            }
        }

        for (auto& v : act) v = v > T(0) ? v : T(0);  // relu

        const T* gamma =
            snap.params.data() + layout_.find("bn" + std::to_string(l) + ".gamma").offset;
        const T* beta =
            snap.params.data() + layout_.find("bn" + std::to_string(l) + ".beta").offset;
        ybuf.resize(act.size());
        auto& mu = cc.mu[l];
        auto& istd = cc.istd[l];
        mu.assign(static_cast<size_t>(c_out), T(0));
        istd.assign(static_cast<size_t>(c_out), T(0));
        const double n_stat = static_cast<double>(B) * static_cast<double>(plane);
        if (mode == Mode::Train) {
            for (int c = 0; c < c_out; ++c) {
                double sum = 0, sq = 0;
                for (int e = 0; e < B; ++e) {
                    const T* cp = act.data() + (static_cast<size_t>(e) * c_out + c) * plane;
                    for (size_t p = 0; p < plane; ++p) {
                        sum += cp[p];
                        sq += static_cast<double>(cp[p]) * cp[p];
                    }
                }
                const double m = sum / n_stat;
                const double var = std::max(0.0, sq / n_stat - m * m);
                mu[static_cast<size_t>(c)] = static_cast<T>(m);
                istd[static_cast<size_t>(c)] =
                    static_cast<T>(1.0 / std::sqrt(var + config_.bn_eps));
                if (stats_update) {
                    const size_t rm = layout_.stats[2 * l].offset;
                    const size_t rv = layout_.stats[2 * l + 1].offset;
                    const double mom = config_.bn_momentum;
                    const double var_u = n_stat > 1 ? var * n_stat / (n_stat - 1) : var;
                    (*stats_update)[rm + static_cast<size_t>(c)] = static_cast<T>(
                        (1 - mom) * (*stats_update)[rm + static_cast<size_t>(c)] + mom * m);
                    (*stats_update)[rv + static_cast<size_t>(c)] = static_cast<T>(
                        (1 - mom) * (*stats_update)[rv + static_cast<size_t>(c)] + mom * var_u);
                }
            }
        } else {
            const T* rm = snap.stats.data() + layout_.stats[2 * l].offset;
            const T* rv = snap.stats.data() + layout_.stats[2 * l + 1].offset;
            for (int c = 0; c < c_out; ++c) {
                mu[static_cast<size_t>(c)] = rm[c];
                istd[static_cast<size_t>(c)] =
                    static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[c]) + config_.bn_eps));
            }
        }
        for (int e = 0; e < B; ++e)
            for (int c = 0; c < c_out; ++c) {
                const T* ap = act.data() + (static_cast<size_t>(e) * c_out + c) * plane;
                T* yp = ybuf.data() + (static_cast<size_t>(e) * c_out + c) * plane;
                const T m = mu[static_cast<size_t>(c)], is = istd[static_cast<size_t>(c)];
                const T g = gamma[c], bb = beta[c];
                for (size_t p = 0; p < plane; ++p) yp[p] = g * (ap[p] - m) * is + bb;
            }

        const int h2 = h / 2, w2 = w / 2;
        const size_t plane2 = static_cast<size_t>(h2) * w2;
        auto& pooled = cc.pooled[l];
        auto& argmax = cc.argmax[l];
        pooled.resize(static_cast<size_t>(B) * c_out * plane2);
        argmax.resize(pooled.size());
        for (int e = 0; e < B; ++e)
            for (int c = 0; c < c_out; ++c) {
                const T* yp = ybuf.data() + (static_cast<size_t>(e) * c_out + c) * plane;
                T* op = pooled.data() + (static_cast<size_t>(e) * c_out + c) * plane2;
                int32_t* am = argmax.data() + (static_cast<size_t>(e) * c_out + c) * plane2;
                for (int y = 0; y < h2; ++y)
                    for (int x0 = 0; x0 < w2; ++x0) {
                        int best = (2 * y) * w + 2 * x0;
                        T bv = yp[best];
                        const int cand[3] = {(2 * y) * w + 2 * x0 + 1, (2 * y + 1) * w + 2 * x0,
                                             (2 * y + 1) * w + 2 * x0 + 1};
                        for (int idx : cand)
                            if (yp[idx] > bv) {
                                bv = yp[idx];
                                best = idx;
                            }
                        op[static_cast<size_t>(y) * w2 + x0] = bv;
                        am[static_cast<size_t>(y) * w2 + x0] = best;
                    }
            }

        x = pooled.data();
        cur_c = c_out;
    }

    const size_t n_fc = config_.fc_widths.size();
    cc.fc_in.assign(n_fc + 1, {});
    cc.dropout_mask.assign(n_fc, {});
    const int concat_dim = layout_.flat_dim + config_.n_tasks;
    auto& h0 = cc.fc_in[0];
    h0.assign(static_cast<size_t>(B) * concat_dim, T(0));
    const auto& last_pool = cc.pooled[n_conv - 1];
    const size_t flat = static_cast<size_t>(layout_.flat_dim);
    for (int e = 0; e < B; ++e) {
        std::memcpy(h0.data() + static_cast<size_t>(e) * concat_dim,
                    last_pool.data() + static_cast<size_t>(e) * flat, flat * sizeof(T));
        h0[static_cast<size_t>(e) * concat_dim + flat + static_cast<size_t>(batch.task_ids[e])] =
            T(1);
    }

    const bool use_dropout = mode == Mode::Train && config_.fc_dropout > 0.0;
    if (use_dropout && !dropout_rng) throw RunError("dropout enabled but no rng supplied");

    int in_dim = concat_dim;
    for (size_t j = 0; j < n_fc; ++j) {
        const int out_dim = config_.fc_widths[j];
        const std::string tag = "fc" + std::to_string(j);
        const T* w_ptr = snap.params.data() + layout_.find(tag + ".weight").offset;
        const T* b_ptr = snap.params.data() + layout_.find(tag + ".bias").offset;
        auto& hin = cc.fc_in[j];
        auto& hout = cc.fc_in[j + 1];
        hout.resize(static_cast<size_t>(B) * out_dim);
        MapRowConst<T> wm(w_ptr, out_dim, in_dim);
        MapRowConst<T> hm(hin.data(), B, in_dim);
        MapRow<T> om(hout.data(), B, out_dim);
        om.noalias() = hm * wm.transpose();
        for (int e = 0; e < B; ++e)
            for (int u = 0; u < out_dim; ++u) {
                T& v = hout[static_cast<size_t>(e) * out_dim + u];
                v += b_ptr[u];
                v = v > T(0) ? v : T(0);
            }
        if (use_dropout) {
            auto& mask = cc.dropout_mask[j];
            mask.resize(hout.size());
            const double keep = 1.0 - config_.fc_dropout;
            const T scale = static_cast<T>(1.0 / keep);
            for (size_t i = 0; i < hout.size(); ++i) {
                mask[i] = dropout_rng->real01() < keep ? scale : T(0);
                hout[i] *= mask[i];
            }
        }
        in_dim = out_dim;
    }

    const T* wo = snap.params.data() + layout_.find("out.weight").offset;
    const T* bo = snap.params.data() + layout_.find("out.bias").offset;
    logits.resize(static_cast<size_t>(B));
    const auto& hl = cc.fc_in[n_fc];
    for (int e = 0; e < B; ++e) {
        double acc = 0;
        const T* hp = hl.data() + static_cast<size_t>(e) * in_dim;
        for (int u = 0; u < in_dim; ++u) acc += static_cast<double>(wo[u]) * hp[u];
        logits[static_cast<size_t>(e)] = static_cast<T>(acc + bo[0]);
    }
}

template <typename T>
void Network<T>::forward(const Snapshot<T>& snap, const BatchView<T>& batch, Mode mode,
                         std::vector<T>& logits) const {
    run_forward(snap, batch, mode, logits, nullptr, nullptr, nullptr);
}

template <typename T>
T Network<T>::forward_onehot(const Snapshot<T>& snap, const T* image,
                             std::span<const T> task_onehot, Mode mode) const {
    if (static_cast<int>(task_onehot.size()) != config_.n_tasks)
        throw RunError("one-hot length must equal n_tasks");
    int hot = -1;
    for (int i = 0; i < config_.n_tasks; ++i) {
        if (task_onehot[static_cast<size_t>(i)] == T(1)) {
            if (hot >= 0) throw RunError("task one-hot has more than one active entry");
            hot = i;
        } else if (task_onehot[static_cast<size_t>(i)] != T(0)) {
            throw RunError("task one-hot entries must be 0 or 1");
        }
    }
    if (hot < 0) throw RunError("task one-hot has no active entry");
    BatchView<T> b;
    b.images = image;
    b.task_ids = &hot;
    b.count = 1;
    std::vector<T> logits;
    forward(snap, b, mode, logits);
    return logits[0];
}

template <typename T>
T Network<T>::batch_loss(const Snapshot<T>& snap, const BatchView<T>& batch) const {
    if (!batch.labels) throw RunError("batch_loss requires labels");
    std::vector<T> logits;
    run_forward(snap, batch, Mode::Train, logits, nullptr, nullptr, nullptr);
    double loss = 0;
    for (int e = 0; e < batch.count; ++e) {
        const T z = logits[static_cast<size_t>(e)];
        loss += static_cast<double>(stable_softplus(z)) -
                (batch.labels[e] ? static_cast<double>(z) : 0.0);
    }
    return static_cast<T>(loss / batch.count);
}

template <typename T>
T Network<T>::loss_and_grad(Snapshot<T>& snap, const BatchView<T>& batch, std::span<T> grad,
                            Rng* dropout_rng, bool update_stats) const {
    if (!batch.labels) throw RunError("loss_and_grad requires labels");
    if (grad.size() != layout_.param_count) throw RunError("grad buffer length mismatch");
    const int B = batch.count;

    Cache cache;
    std::vector<T> logits;
    run_forward(snap, batch, Mode::Train, logits, &cache, update_stats ? &snap.stats : nullptr,
                dropout_rng);

    std::fill(grad.begin(), grad.end(), T(0));

    double loss = 0;
    std::vector<T> dlogit(static_cast<size_t>(B));
    for (int e = 0; e < B; ++e) {
        const T z = logits[static_cast<size_t>(e)];
        const double li = static_cast<double>(stable_softplus(z)) -
                          (batch.labels[e] ? static_cast<double>(z) : 0.0);
        if (!std::isfinite(li))
            throw RunError("non-finite loss at batch example " + std::to_string(e));
        loss += li;
        dlogit[static_cast<size_t>(e)] =
            static_cast<T>((static_cast<double>(sigmoid(z)) - (batch.labels[e] ? 1.0 : 0.0)) / B);
    }
    loss /= B;

    const size_t n_fc = config_.fc_widths.size();
    const size_t n_conv = config_.conv_filters.size();

    // output unit
    const int last_dim = config_.fc_widths[n_fc - 1];
    const T* wo = snap.params.data() + layout_.find("out.weight").offset;
    T* dwo = grad.data() + layout_.find("out.weight").offset;
    T* dbo = grad.data() + layout_.find("out.bias").offset;
    std::vector<T> dh(static_cast<size_t>(B) * last_dim);
    {
        const auto& hl = cache.fc_in[n_fc];
        for (int e = 0; e < B; ++e) {
            const T d = dlogit[static_cast<size_t>(e)];
            const T* hp = hl.data() + static_cast<size_t>(e) * last_dim;
            T* dhp = dh.data() + static_cast<size_t>(e) * last_dim;
            for (int u = 0; u < last_dim; ++u) {
                dwo[u] += d * hp[u];
                dhp[u] = d * wo[u];
            }
            dbo[0] += d;
        }
    }

    for (size_t j = n_fc; j-- > 0;) {
        const int out_dim = config_.fc_widths[j];
        const int in_dim =
            j == 0 ? layout_.flat_dim + config_.n_tasks : config_.fc_widths[j - 1];
        const std::string tag = "fc" + std::to_string(j);
        const T* w_ptr = snap.params.data() + layout_.find(tag + ".weight").offset;
        T* dw = grad.data() + layout_.find(tag + ".weight").offset;
        T* db = grad.data() + layout_.find(tag + ".bias").offset;
        const auto& hout = cache.fc_in[j + 1];
        const auto& hin = cache.fc_in[j];
        const auto& mask = cache.dropout_mask[j];

        std::vector<T>& dz = dh;  // dz = dh * dropout_mask * relu'(z), in place
        for (int e = 0; e < B; ++e) {
            T* dzp = dz.data() + static_cast<size_t>(e) * out_dim;
            const T* hp = hout.data() + static_cast<size_t>(e) * out_dim;
            const T* mp = mask.empty() ? nullptr : mask.data() + static_cast<size_t>(e) * out_dim;
            for (int u = 0; u < out_dim; ++u) {
                T d = dzp[u];
                if (mp) d *= mp[u];
                dzp[u] = hp[u] > T(0) ? d : T(0);
            }
        }

        MapRowConst<T> dzm(dz.data(), B, out_dim);
        MapRowConst<T> hm(hin.data(), B, in_dim);
        MapRow<T> dwm(dw, out_dim, in_dim);
        dwm.noalias() += dzm.transpose() * hm;
        for (int e = 0; e < B; ++e) {
            const T* dzp = dz.data() + static_cast<size_t>(e) * out_dim;
            for (int u = 0; u < out_dim; ++u) db[u] += dzp[u];
        }
        std::vector<T> dhin(static_cast<size_t>(B) * in_dim);
        MapRow<T> dhm(dhin.data(), B, in_dim);
        MapRowConst<T> wm(w_ptr, out_dim, in_dim);
        dhm.noalias() = dzm * wm;
        dh = std::move(dhin);
    }

    // drop the one-hot slice; gradient continues into the conv stack
    const int concat_dim = layout_.flat_dim + config_.n_tasks;
    std::vector<T> dpool(static_cast<size_t>(B) * layout_.flat_dim);
    for (int e = 0; e < B; ++e)
        std::memcpy(dpool.data() + static_cast<size_t>(e) * layout_.flat_dim,
                    dh.data() + static_cast<size_t>(e) * concat_dim,
                    static_cast<size_t>(layout_.flat_dim) * sizeof(T));

    size_t col_max = 0;
    {
        int ci = config_.in_channels;
        for (size_t l = 0; l < n_conv; ++l) {
            const size_t p = static_cast<size_t>(layout_.conv_h[l]) * layout_.conv_w[l];
            col_max = std::max(col_max, static_cast<size_t>(ci) * 9 * p);
            ci = config_.conv_filters[l];
        }
    }
    std::vector<T> colbuf(col_max), dcolbuf(col_max);

    for (size_t l = n_conv; l-- > 0;) {
        const int h = layout_.conv_h[l], w = layout_.conv_w[l];
        const int h2 = h / 2, w2 = w / 2;
        const int c_out = config_.conv_filters[l];
        const int c_in = l == 0 ? config_.in_channels : config_.conv_filters[l - 1];
        const size_t plane = static_cast<size_t>(h) * w;
        const size_t plane2 = static_cast<size_t>(h2) * w2;
        const size_t k_dim = static_cast<size_t>(c_in) * 9;

        std::vector<T> dy(static_cast<size_t>(B) * c_out * plane, T(0));
        for (int e = 0; e < B; ++e)
            for (int c = 0; c < c_out; ++c) {
                const T* dp = dpool.data() + (static_cast<size_t>(e) * c_out + c) * plane2;
                const int32_t* am =
                    cache.argmax[l].data() + (static_cast<size_t>(e) * c_out + c) * plane2;
                T* dyp = dy.data() + (static_cast<size_t>(e) * c_out + c) * plane;
                for (size_t p = 0; p < plane2; ++p) dyp[static_cast<size_t>(am[p])] += dp[p];
            }

        const auto& act = cache.act[l];
        const auto& mu = cache.mu[l];
        const auto& istd = cache.istd[l];
        const T* gamma =
            snap.params.data() + layout_.find("bn" + std::to_string(l) + ".gamma").offset;
        T* dgamma = grad.data() + layout_.find("bn" + std::to_string(l) + ".gamma").offset;
        T* dbeta = grad.data() + layout_.find("bn" + std::to_string(l) + ".beta").offset;
        const double n_stat = static_cast<double>(B) * static_cast<double>(plane);
        std::vector<T>& dz = dy;  // becomes d(pre-batchnorm activation) in place
        for (int c = 0; c < c_out; ++c) {
            const T m = mu[static_cast<size_t>(c)], is = istd[static_cast<size_t>(c)];
            double s_dxhat = 0, s_dxhat_xhat = 0, s_dy = 0, s_dy_xhat = 0;
            for (int e = 0; e < B; ++e) {
                const T* ap = act.data() + (static_cast<size_t>(e) * c_out + c) * plane;
                const T* dyp = dy.data() + (static_cast<size_t>(e) * c_out + c) * plane;
                for (size_t p = 0; p < plane; ++p) {
                    const double xhat = static_cast<double>(ap[p] - m) * is;
                    const double dyv = dyp[p];
                    s_dy += dyv;
                    s_dy_xhat += dyv * xhat;
                    const double dxhat = dyv * gamma[c];
                    s_dxhat += dxhat;
                    s_dxhat_xhat += dxhat * xhat;
                }
            }
            dgamma[c] += static_cast<T>(s_dy_xhat);
            dbeta[c] += static_cast<T>(s_dy);
            for (int e = 0; e < B; ++e) {
                const T* ap = act.data() + (static_cast<size_t>(e) * c_out + c) * plane;
                T* dzp = dz.data() + (static_cast<size_t>(e) * c_out + c) * plane;
                for (size_t p = 0; p < plane; ++p) {
                    const double xhat = static_cast<double>(ap[p] - m) * is;
                    const double dxhat = static_cast<double>(dzp[p]) * gamma[c];
                    dzp[p] = static_cast<T>(is / n_stat *
                                            (n_stat * dxhat - s_dxhat - xhat * s_dxhat_xhat));
                }
            }
        }

        for (size_t i = 0; i < dz.size(); ++i)
            if (!(act[i] > T(0))) dz[i] = T(0);  // relu

        if (config_.task_mod_layer == static_cast<int>(l) + 1) {
            T* dmod = grad.data() + layout_.find("taskmod.bias").offset;
            for (int e = 0; e < B; ++e) {
                T* row = dmod + static_cast<size_t>(batch.task_ids[e]) * c_out;
                for (int c = 0; c < c_out; ++c) {
                    const T* dzp = dz.data() + (static_cast<size_t>(e) * c_out + c) * plane;
                    double s = 0;
                    for (size_t p = 0; p < plane; ++p) s += dzp[p];
                    row[c] += static_cast<T>(s);
                }
            }
        }

        const std::string tag = "conv" + std::to_string(l);
        const T* w_ptr = snap.params.data() + layout_.find(tag + ".weight").offset;
        T* dw = grad.data() + layout_.find(tag + ".weight").offset;
        T* db = grad.data() + layout_.find(tag + ".bias").offset;
        const T* x_in = l == 0 ? batch.images : cache.pooled[l - 1].data();
        std::vector<T> dx;
        if (l > 0) dx.assign(static_cast<size_t>(B) * c_in * plane, T(0));
        MapRowConst<T> wm(w_ptr, c_out, static_cast<long>(k_dim));
        MapRow<T> dwm(dw, c_out, static_cast<long>(k_dim));
        for (int e = 0; e < B; ++e) {
            im2col(x_in + static_cast<size_t>(e) * c_in * plane, c_in, h, w, colbuf.data());
            MapRowConst<T> col(colbuf.data(), static_cast<long>(k_dim), static_cast<long>(plane));
            MapRowConst<T> dzm(dz.data() + static_cast<size_t>(e) * c_out * plane, c_out,
                               static_cast<long>(plane));
            dwm.noalias() += dzm * col.transpose();
            for (int c = 0; c < c_out; ++c) db[c] += dzm.row(c).sum();
            if (l > 0) {
                MapRow<T> dcol(dcolbuf.data(), static_cast<long>(k_dim),
                               static_cast<long>(plane));
                dcol.noalias() = wm.transpose() * dzm;
                col2im_add(dcolbuf.data(), c_in, h, w,
                           dx.data() + static_cast<size_t>(e) * c_in * plane);
            }
        }
        dpool = std::move(dx);
    }

    return static_cast<T>(loss);
}

template <typename T>
void Network<T>::adam_step(Snapshot<T>& snap, std::span<const T> grad,
                           OptimState<T>& optim) const {
    if (grad.size() != layout_.param_count || optim.m.size() != layout_.param_count)
        throw RunError("adam_step: length mismatch");
    optim.step += 1;
    snap.step += 1;
    const double b1 = optim.beta1, b2 = optim.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(optim.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(optim.step));
    const double lr = optim.lr, eps = optim.eps, wd = optim.weight_decay;
    for (size_t i = 0; i < layout_.param_count; ++i) {
        double g = grad[i];
        if (decay_mask_[i]) g += wd * static_cast<double>(snap.params[i]);
        const double m = b1 * static_cast<double>(optim.m[i]) + (1 - b1) * g;
        const double v = b2 * static_cast<double>(optim.v[i]) + (1 - b2) * g * g;
        optim.m[i] = static_cast<T>(m);
        optim.v[i] = static_cast<T>(v);
        snap.params[i] = static_cast<T>(static_cast<double>(snap.params[i]) -
                                        lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
    }
}

template <typename T>
double Network<T>::evaluate_accuracy(const Snapshot<T>& snap, const BatchView<T>& batch) const {
    if (!batch.labels) throw RunError("evaluate_accuracy requires labels");
    if (batch.count < 1) throw RunError("empty evaluation set");
    constexpr int kChunk = 256;
    long long correct = 0;
    std::vector<T> logits;
    for (int start = 0; start < batch.count; start += kChunk) {
        const int n = std::min(kChunk, batch.count - start);
        BatchView<T> part;
        part.images = batch.images + static_cast<size_t>(start) * config_.in_channels *
                                         config_.in_height * config_.in_width;
        part.task_ids = batch.task_ids + start;
        part.labels = batch.labels + start;
        part.count = n;
        forward(snap, part, Mode::Eval, logits);
        for (int e = 0; e < n; ++e) {
            const bool yes = logits[static_cast<size_t>(e)] > T(0);
            if (yes == (batch.labels[start + e] != 0)) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(batch.count);
}

// --- weight files -------------------------------------------------------------

namespace {

template <typename T>
std::vector<float> to_f32(const std::vector<T>& v) {
    std::vector<float> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
    return out;
}

template <typename T>
std::vector<T> from_f32(const std::vector<float>& v) {
    std::vector<T> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(v[i]);
    return out;
}

}  // namespace

template <typename T>
void save_weights(const std::filesystem::path& path, const Layout& layout,
                  const Snapshot<T>& snap, const OptimState<T>* optim) {
    if (snap.params.size() != layout.param_count || snap.stats.size() != layout.stats_count)
        throw RunError("save_weights: snapshot does not match layout");
    nlohmann::json jlayout = nlohmann::json::array();
    for (const auto& e : layout.params)
        jlayout.push_back({{"name", e.name},
                           {"shape", e.shape},
                           {"offset", e.offset},
                           {"count", e.count},
                           {"decay", e.weight_decay}});
    nlohmann::json header{{"format", "seqlearn-weights-v1"},
                          {"config_hash", hex64(snap.config_hash)},
                          {"step", snap.step},
                          {"param_count", layout.param_count},
                          {"stats_count", layout.stats_count},
                          {"layout", jlayout},
                          {"has_moments", optim != nullptr}};
    if (optim)
        header["optim"] = {{"lr", optim->lr},
                           {"weight_decay", optim->weight_decay},
                           {"beta1", optim->beta1},
                           {"beta2", optim->beta2},
                           {"eps", optim->eps},
                           {"step", optim->step}};
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RunError("cannot write " + path.string());
    os << header.dump() << '\n';
    auto params = to_f32(snap.params);
    auto stats = to_f32(snap.stats);
    write_f32_le(os, params.data(), params.size());
    write_f32_le(os, stats.data(), stats.size());
    if (optim) {
        auto m = to_f32(optim->m);
        auto v = to_f32(optim->v);
        write_f32_le(os, m.data(), m.size());
        write_f32_le(os, v.data(), v.size());
    }
}

template <typename T>
LoadedWeights<T> load_weights(const std::filesystem::path& path, const Layout& layout) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RunError("cannot open " + path.string());
    std::string header_line;
    std::getline(is, header_line);
    const auto header = nlohmann::json::parse(header_line);
    if (header.at("format").get<std::string>() != "seqlearn-weights-v1")
        throw RunError("unknown weight file format");
    if (header.at("param_count").get<size_t>() != layout.param_count ||
        header.at("stats_count").get<size_t>() != layout.stats_count)
        throw RunError("weight file does not match the model layout");

    LoadedWeights<T> out;
    std::vector<float> params(layout.param_count), stats(layout.stats_count);
    read_f32_le(is, params.data(), params.size());
    read_f32_le(is, stats.data(), stats.size());
    out.snap.params = from_f32<T>(params);
    out.snap.stats = from_f32<T>(stats);
    out.snap.step = header.at("step").get<uint64_t>();
    out.snap.config_hash = std::stoull(header.at("config_hash").get<std::string>(), nullptr, 16);
    if (header.at("has_moments").get<bool>()) {
        OptimState<T> o;
        const auto& jo = header.at("optim");
        o.lr = jo.at("lr").get<double>();
        o.weight_decay = jo.at("weight_decay").get<double>();
        o.beta1 = jo.at("beta1").get<double>();
        o.beta2 = jo.at("beta2").get<double>();
        o.eps = jo.at("eps").get<double>();
        o.step = jo.at("step").get<uint64_t>();
        std::vector<float> m(layout.param_count), v(layout.param_count);
        read_f32_le(is, m.data(), m.size());
        read_f32_le(is, v.data(), v.size());
        o.m = from_f32<T>(m);
        o.v = from_f32<T>(v);
        out.optim = std::move(o);
    }
    return out;
}

template class Network<float>;
template class Network<double>;
template void save_weights<float>(const std::filesystem::path&, const Layout&,
                                  const Snapshot<float>&, const OptimState<float>*);
template void save_weights<double>(const std::filesystem::path&, const Layout&,
                                   const Snapshot<double>&, const OptimState<double>*);
template LoadedWeights<float> load_weights<float>(const std::filesystem::path&, const Layout&);
template LoadedWeights<double> load_weights<double>(const std::filesystem::path&, const Layout&);

}  // namespace seqlearn::nnet
