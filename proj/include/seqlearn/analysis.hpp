#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace seqlearn::analysis {

// Accuracy a relates to memory strength m through a = 0.5 + 0.5 m; the
// inverse clamps below-chance samples to zero strength.
double accuracy_to_strength(double accuracy);
double strength_to_accuracy(double strength);
std::vector<double> strength_transform(std::span<const double> accuracies);

enum class Family { Exponential, Power };
std::string family_name(Family f);

// exponential: m = alpha * exp(-beta t)
// power:       m = alpha * (1 + gamma t)^(-beta)
struct ForgettingFit {
    Family family = Family::Exponential;
    double alpha = 0;
    double beta = 0;
    double gamma = 0;  // power family only
    double train_mse = 0;
    double eval_mse = 0;  // filled by split_fit_evaluate
    bool degenerate = false;  // flat series; beta pinned to 0
};

ForgettingFit fit_exponential(std::span<const double> t, std::span<const double> m);
ForgettingFit fit_power(std::span<const double> t, std::span<const double> m);

double fit_mse(const ForgettingFit& fit, std::span<const double> t, std::span<const double> m);

// Fits both families on the first half of the series and scores them on the
// second half. If n_points is given, only the first n_points samples count.
struct ComparisonEntry {
    ForgettingFit exponential;
    ForgettingFit power;
    Family winner = Family::Exponential;
};

ComparisonEntry split_fit_evaluate(std::span<const double> t, std::span<const double> m,
                                   std::optional<size_t> n_points = std::nullopt);

struct ModelComparison {
    int exponential_wins = 0;
    int power_wins = 0;
    double mean_train_mse_exponential = 0;
    double mean_train_mse_power = 0;
    double mean_eval_mse_exponential = 0;
    double mean_eval_mse_power = 0;
};

ModelComparison aggregate_comparisons(const std::vector<ComparisonEntry>& entries);

// --- replication metrics -----------------------------------------------------

// One (task ordinal, times-trained) observation from a single run.
struct CellObservation {
    int ordinal = 0;        // episode the task was introduced in, 1-based
    int times_trained = 0;  // 1 on introduction, 2 on first retraining, ...
    long long trials_to_criterion = -1;  // -1 when the criterion was not reached
    double accuracy_at_budget = -1;      // <0 when the budget fell past the episode
};

struct MetricCell {
    int ordinal = 0;
    int times_trained = 0;
    int n = 0;
    double mean_trials = 0;
    double sem_trials = 0;
    double mean_accuracy_at_budget = 0;
    double sem_accuracy_at_budget = 0;
    bool sem_valid = false;  // needs at least two replications
};

struct CurveFit {
    int ordinal = 0;
    double loglog_slope = 0;
    double r_squared = 0;
    int n_points = 0;
};

struct MetricTable {
    std::vector<MetricCell> cells;        // sorted by (ordinal, times_trained)
    std::vector<CurveFit> ordinal_curves; // log-log trials vs times-trained per ordinal
};

// Observations from replications sharing one config; the caller guarantees
// config consistency (the CLI layer rejects mixed-config inputs).
MetricTable aggregate_metrics(const std::vector<std::vector<CellObservation>>& replications);

}  // namespace seqlearn::analysis
