#include "seqlearn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "seqlearn/common.hpp"

namespace seqlearn::analysis {

namespace {

constexpr double kAlphaMax = 1.05;
constexpr double kBetaMax = 10.0;
constexpr double kBetaGridMin = 1e-5;
constexpr double kGammaMin = 1e-4;
constexpr double kGammaMax = 10.0;
constexpr double kGammaDefault = 1e-2;

// Golden-section minimum of fn on [lo, hi] to a relative width tolerance.
template <typename Fn>
double golden_min(Fn&& fn, double lo, double hi, double rel_tol) {
    constexpr double kInvPhi = 0.6180339887498949;
    double x1 = hi - kInvPhi * (hi - lo);
    double x2 = lo + kInvPhi * (hi - lo);
    double f1 = fn(x1), f2 = fn(x2);
    while (hi - lo > rel_tol * std::max(1e-12, std::abs(lo) + std::abs(hi))) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - kInvPhi * (hi - lo);
            f1 = fn(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + kInvPhi * (hi - lo);
            f2 = fn(x2);
        }
    }
    return f1 < f2 ? x1 : x2;
}

// For fixed beta the least-squares alpha is closed form; returns (alpha, sse).
std::pair<double, double> alpha_and_sse(std::span<const double> t, std::span<const double> m,
                                        double beta) {
    double num = 0, den = 0;
    for (size_t i = 0; i < t.size(); ++i) {
        const double w = std::exp(-beta * t[i]);
        num += m[i] * w;
        den += w * w;
    }
    double alpha = den > 0 ? num / den : 0.0;
    alpha = std::clamp(alpha, 0.0, kAlphaMax);
    double sse = 0;
    for (size_t i = 0; i < t.size(); ++i) {
        const double r = m[i] - alpha * std::exp(-beta * t[i]);
        sse += r * r;
    }
    return {alpha, sse};
}

bool is_flat(std::span<const double> m) {
    double lo = m[0], hi = m[0];
    for (double v : m) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return hi - lo < 1e-12;
}

void check_series(std::span<const double> t, std::span<const double> m) {
    if (t.size() != m.size()) throw std::invalid_argument("series lengths differ");
    if (t.size() < 3) throw RunError("need at least 3 points to fit a forgetting curve");
    for (size_t i = 0; i < t.size(); ++i)
        if (t[i] < 0) throw RunError("batch counts must be non-negative");
}

std::vector<double> log_grid(double lo, double hi, int n) {
    std::vector<double> g(static_cast<size_t>(n));
    const double llo = std::log(lo), lhi = std::log(hi);
    for (int i = 0; i < n; ++i)
        g[static_cast<size_t>(i)] = std::exp(llo + (lhi - llo) * i / (n - 1));
    return g;
}

double mean_of(std::span<const double> m) {
    double s = 0;
    for (double v : m) s += v;
    return s / static_cast<double>(m.size());
}

}  // namespace

double accuracy_to_strength(double accuracy) {
    return std::clamp(2.0 * accuracy - 1.0, 0.0, 1.0);
}

double strength_to_accuracy(double strength) { return 0.5 + 0.5 * strength; }

std::vector<double> strength_transform(std::span<const double> accuracies) {
    std::vector<double> out(accuracies.size());
    for (size_t i = 0; i < accuracies.size(); ++i) out[i] = accuracy_to_strength(accuracies[i]);
    return out;
}

std::string family_name(Family f) {
    return f == Family::Exponential ? "exponential" : "power";
}

double fit_mse(const ForgettingFit& fit, std::span<const double> t, std::span<const double> m) {
    if (t.size() != m.size() || t.empty()) throw std::invalid_argument("bad series");
    double sse = 0;
    for (size_t i = 0; i < t.size(); ++i) {
        const double pred = fit.family == Family::Exponential
                                ? fit.alpha * std::exp(-fit.beta * t[i])
                                : fit.alpha * std::pow(1.0 + fit.gamma * t[i], -fit.beta);
        const double r = m[i] - pred;
        sse += r * r;
    }
    return sse / static_cast<double>(t.size());
}

ForgettingFit fit_exponential(std::span<const double> t, std::span<const double> m) {
    check_series(t, m);
    ForgettingFit fit;
    fit.family = Family::Exponential;
    if (is_flat(m)) {
        fit.alpha = std::clamp(mean_of(m), 0.0, kAlphaMax);
        fit.beta = 0.0;
        fit.degenerate = true;
        fit.train_mse = fit_mse(fit, t, m);
        return fit;
    }

    auto grid = log_grid(kBetaGridMin, kBetaMax, 60);
    grid.insert(grid.begin(), 0.0);
    size_t best = 0;
    double best_sse = alpha_and_sse(t, m, grid[0]).second;
    for (size_t i = 1; i < grid.size(); ++i) {
        const double sse = alpha_and_sse(t, m, grid[i]).second;
        if (sse < best_sse) {
            best_sse = sse;
            best = i;
        }
    }
    const double lo = best == 0 ? 0.0 : grid[best - 1];
    const double hi = best + 1 < grid.size() ? grid[best + 1] : grid[best];
    const double beta =
        lo < hi ? golden_min([&](double b) { return alpha_and_sse(t, m, b).second; }, lo, hi, 1e-6)
                : grid[best];
    auto [alpha, sse] = alpha_and_sse(t, m, beta);
    fit.alpha = alpha;
    fit.beta = beta;
    fit.train_mse = sse / static_cast<double>(t.size());
    return fit;
}

ForgettingFit fit_power(std::span<const double> t, std::span<const double> m) {
    check_series(t, m);
    ForgettingFit fit;
    fit.family = Family::Power;
    if (is_flat(m)) {
        fit.alpha = std::clamp(mean_of(m), 0.0, kAlphaMax);
        fit.beta = 0.0;
        fit.gamma = kGammaDefault;
        fit.degenerate = true;
        fit.train_mse = fit_mse(fit, t, m);
        return fit;
    }

    // Substituting u = ln(1 + gamma t) reduces the inner problem to the
    // exponential sub-procedure on (u, m).
    std::vector<double> u(t.size());
    auto inner = [&](double gamma) {
        for (size_t i = 0; i < t.size(); ++i) u[i] = std::log1p(gamma * t[i]);
        auto sub = fit_exponential(u, m);
        return std::make_pair(sub, sub.train_mse * static_cast<double>(t.size()));
    };
    auto inner_sse = [&](double gamma) { return inner(gamma).second; };

    const auto grid = log_grid(kGammaMin, kGammaMax, 48);
    size_t best = 0;
    double best_sse = inner_sse(grid[0]);
    for (size_t i = 1; i < grid.size(); ++i) {
        const double sse = inner_sse(grid[i]);
        if (sse < best_sse) {
            best_sse = sse;
            best = i;
        }
    }
    double gamma = grid[best];
    const double glo = best == 0 ? kGammaMin : grid[best - 1];
    const double ghi = best + 1 < grid.size() ? grid[best + 1] : grid[best];

    // Coordinate descent: gamma by golden section with the nested (alpha,
    // beta) sub-fit, then beta by golden section at fixed gamma.
    gamma = glo < ghi ? golden_min(inner_sse, glo, ghi, 1e-6) : gamma;
    auto sub = inner(gamma).first;
    double beta = sub.beta;
    for (int round = 0; round < 2; ++round) {
        for (size_t i = 0; i < t.size(); ++i) u[i] = std::log1p(gamma * t[i]);
        const double b_lo = std::max(0.0, beta * 0.5), b_hi = std::min(kBetaMax, beta * 2 + 1e-4);
        beta = golden_min([&](double b) { return alpha_and_sse(u, m, b).second; }, b_lo, b_hi,
                          1e-6);
        const double g_lo = std::max(kGammaMin, gamma * 0.5);
        const double g_hi = std::min(kGammaMax, gamma * 2);
        gamma = golden_min(
            [&](double g) {
                std::vector<double> ug(t.size());
                for (size_t i = 0; i < t.size(); ++i) ug[i] = std::log1p(g * t[i]);
                return alpha_and_sse(ug, m, beta).second;
            },
            g_lo, g_hi, 1e-6);
    }
    for (size_t i = 0; i < t.size(); ++i) u[i] = std::log1p(gamma * t[i]);
    auto [alpha, sse] = alpha_and_sse(u, m, beta);
    fit.alpha = alpha;
    fit.beta = beta;
    fit.gamma = gamma;
    fit.train_mse = sse / static_cast<double>(t.size());
    // Keep whichever of the refined and grid solutions actually fits better.
    if (fit.train_mse * static_cast<double>(t.size()) > best_sse) {
        auto sub2 = inner(grid[best]).first;
        fit.alpha = sub2.alpha;
        fit.beta = sub2.beta;
        fit.gamma = grid[best];
        fit.train_mse = best_sse / static_cast<double>(t.size());
    }
    return fit;
}

ComparisonEntry split_fit_evaluate(std::span<const double> t, std::span<const double> m,
                                   std::optional<size_t> n_points) {
    const size_t n = n_points.value_or(t.size());
    if (n > t.size()) throw std::invalid_argument("n_points exceeds the series length");
    if (n < 6) throw RunError("split evaluation needs at least 6 points");
    const size_t n_train = (n + 1) / 2;  // first half, odd length rounds up
    auto t_train = t.subspan(0, n_train);
    auto m_train = m.subspan(0, n_train);
    auto t_eval = t.subspan(n_train, n - n_train);
    auto m_eval = m.subspan(n_train, n - n_train);

    ComparisonEntry entry;
    entry.exponential = fit_exponential(t_train, m_train);
    entry.power = fit_power(t_train, m_train);
    entry.exponential.eval_mse = fit_mse(entry.exponential, t_eval, m_eval);
    entry.power.eval_mse = fit_mse(entry.power, t_eval, m_eval);
    entry.winner = entry.power.eval_mse < entry.exponential.eval_mse ? Family::Power
                                                                     : Family::Exponential;
    return entry;
}

ModelComparison aggregate_comparisons(const std::vector<ComparisonEntry>& entries) {
    ModelComparison out;
    if (entries.empty()) return out;
    for (const auto& e : entries) {
        (e.winner == Family::Power ? out.power_wins : out.exponential_wins) += 1;
        out.mean_train_mse_exponential += e.exponential.train_mse;
        out.mean_train_mse_power += e.power.train_mse;
        out.mean_eval_mse_exponential += e.exponential.eval_mse;
        out.mean_eval_mse_power += e.power.eval_mse;
    }
    const auto n = static_cast<double>(entries.size());
    out.mean_train_mse_exponential /= n;
    out.mean_train_mse_power /= n;
    out.mean_eval_mse_exponential /= n;
    out.mean_eval_mse_power /= n;
    return out;
}

namespace {

struct Moments {
    double mean = 0, sem = 0;
    int n = 0;
};

// Values are sorted before summing so aggregation is exactly permutation
// invariant.
Moments moments(std::vector<double> values) {
    Moments out;
    out.n = static_cast<int>(values.size());
    if (values.empty()) return out;
    std::sort(values.begin(), values.end());
    double s = 0;
    for (double v : values) s += v;
    out.mean = s / out.n;
    if (out.n >= 2) {
        double sq = 0;
        for (double v : values) sq += (v - out.mean) * (v - out.mean);
        out.sem = std::sqrt(sq / (out.n - 1)) / std::sqrt(static_cast<double>(out.n));
    }
    return out;
}

}  // namespace

MetricTable aggregate_metrics(const std::vector<std::vector<CellObservation>>& replications) {
    std::map<std::pair<int, int>, std::pair<std::vector<double>, std::vector<double>>> cells;
    for (const auto& rep : replications)
        for (const auto& obs : rep) {
            auto& cell = cells[{obs.ordinal, obs.times_trained}];
            if (obs.trials_to_criterion >= 0)
                cell.first.push_back(static_cast<double>(obs.trials_to_criterion));
            if (obs.accuracy_at_budget >= 0) cell.second.push_back(obs.accuracy_at_budget);
        }

    MetricTable table;
    std::map<int, std::vector<std::pair<double, double>>> curve_points;
    for (auto& [key, vals] : cells) {
        MetricCell cell;
        cell.ordinal = key.first;
        cell.times_trained = key.second;
        const auto trials = moments(vals.first);
        const auto acc = moments(vals.second);
        cell.n = std::max(trials.n, acc.n);
        cell.mean_trials = trials.mean;
        cell.sem_trials = trials.sem;
        cell.mean_accuracy_at_budget = acc.mean;
        cell.sem_accuracy_at_budget = acc.sem;
        cell.sem_valid = cell.n >= 2;
        table.cells.push_back(cell);
        if (trials.n > 0 && trials.mean > 0)
            curve_points[key.first].push_back(
                {std::log10(static_cast<double>(key.second)), std::log10(trials.mean)});
    }

    for (const auto& [ordinal, pts] : curve_points) {
        CurveFit fit;
        fit.ordinal = ordinal;
        fit.n_points = static_cast<int>(pts.size());
        if (pts.size() >= 2) {
            double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
            for (auto [x, y] : pts) {
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
                syy += y * y;
            }
            const double n = static_cast<double>(pts.size());
            const double vxx = sxx - sx * sx / n;
            const double vxy = sxy - sx * sy / n;
            const double vyy = syy - sy * sy / n;
            if (vxx > 1e-15) {
                fit.loglog_slope = vxy / vxx;
                fit.r_squared = vyy > 1e-15 ? (vxy * vxy) / (vxx * vyy) : 1.0;
            }
        }
        table.ordinal_curves.push_back(fit);
    }
    return table;
}

}  // namespace seqlearn::analysis
