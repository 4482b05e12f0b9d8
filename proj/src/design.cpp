#include "seqlearn/design.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "seqlearn/common.hpp"

namespace seqlearn::design {

int global_task_id(int dimension, int value, int values_per_dim) {
    return dimension * values_per_dim + value;
}

int task_dimension(int global_id, int values_per_dim) { return global_id / values_per_dim; }

int task_value(int global_id, int values_per_dim) { return global_id % values_per_dim; }

LatinBlock latin_square(int n, uint64_t rng_seed) {
    if (n < 1) throw std::invalid_argument("latin_square: n must be >= 1");
    Rng rng(rng_seed);

    // Randomized cyclic square: L[i][j] = (i + j) mod n with independent
    // row, column, and symbol permutations.
    std::vector<int> row(static_cast<size_t>(n)), col(static_cast<size_t>(n)),
        sym(static_cast<size_t>(n));
    std::iota(row.begin(), row.end(), 0);
    std::iota(col.begin(), col.end(), 0);
    std::iota(sym.begin(), sym.end(), 0);
    rng.shuffle(row);
    rng.shuffle(col);
    rng.shuffle(sym);

    LatinBlock block;
    block.orders.assign(static_cast<size_t>(n), std::vector<int>(static_cast<size_t>(n), 0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const auto r = static_cast<size_t>(row[static_cast<size_t>(i)]);
            const auto c = static_cast<size_t>(col[static_cast<size_t>(j)]);
            block.orders[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                sym[static_cast<size_t>((r + c) % static_cast<size_t>(n))];
        }
    return block;
}

bool is_latin(const LatinBlock& block) {
    const size_t n = block.orders.size();
    for (const auto& order : block.orders)
        if (order.size() != n) return false;
    for (size_t pos = 0; pos < n; ++pos) {
        std::vector<int> seen(n, 0);
        for (size_t r = 0; r < n; ++r) {
            const int v = block.orders[r][pos];
            if (v < 0 || static_cast<size_t>(v) >= n) return false;
            seen[static_cast<size_t>(v)] += 1;
        }
        for (int c : seen)
            if (c != 1) return false;
    }
    for (size_t r = 0; r < n; ++r) {
        std::vector<int> seen(n, 0);
        for (size_t pos = 0; pos < n; ++pos) seen[static_cast<size_t>(block.orders[r][pos])] += 1;
        for (int c : seen)
            if (c != 1) return false;
    }
    return true;
}

ReplicationPlan homogeneous_plan(int dimension, int n_blocks, int values_per_dim,
                                 uint64_t master_seed, const curriculum::Curriculum& c,
                                 const RunModeFlags& flags, int first_run_id) {
    if (n_blocks < 1) throw std::invalid_argument("homogeneous_plan: n_blocks must be >= 1");
    ReplicationPlan plan;
    int run_id = first_run_id;
    for (int b = 0; b < n_blocks; ++b) {
        const uint64_t block_seed =
            derive_seed(master_seed, "latin", static_cast<uint64_t>(dimension),
                        static_cast<uint64_t>(b));
        LatinBlock block = latin_square(values_per_dim, block_seed);
        for (const auto& order : block.orders) {
            RunSpec spec;
            spec.run_id = run_id;
            spec.dimensions = {dimension};
            spec.order.reserve(order.size());
            for (int value : order)
                spec.order.push_back(global_task_id(dimension, value, values_per_dim));
            spec.curriculum = c;
            spec.seed = derive_seed(master_seed, "run", static_cast<uint64_t>(run_id));
            spec.flags = flags;
            plan.runs.push_back(std::move(spec));
            ++run_id;
        }
    }
    return plan;
}

TaskOrder heterogeneous_sequence(const std::array<int, 3>& dim_perm,
                                 const std::array<TaskOrder, 3>& per_dim_orders, int length) {
    std::array<int, 3> sorted = dim_perm;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != std::array<int, 3>{0, 1, 2})
        throw std::invalid_argument("heterogeneous_sequence: not a permutation of {0,1,2}");

    TaskOrder out;
    out.reserve(static_cast<size_t>(length));
    std::array<size_t, 3> cursor{0, 0, 0};
    for (int slot = 0; slot < length; ++slot) {
        const auto which = static_cast<size_t>(slot % 3);
        const int dim = dim_perm[which];
        const auto& order = per_dim_orders[static_cast<size_t>(dim)];
        if (cursor[which] >= order.size())
            throw RunError("heterogeneous_sequence: per-dimension order too short");
        out.push_back(order[cursor[which]]);
        cursor[which] += 1;
    }
    return out;
}

ReplicationPlan heterogeneous_plan(int runs_per_permutation, int values_per_dim, int length,
                                   uint64_t master_seed, const curriculum::Curriculum& c,
                                   const RunModeFlags& flags, int first_run_id) {
    static const std::array<std::array<int, 3>, 6> kPerms = {{
        {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0},
    }};
    ReplicationPlan plan;
    int run_id = first_run_id;
    for (int rep = 0; rep < runs_per_permutation; ++rep) {
        for (size_t p = 0; p < kPerms.size(); ++p) {
            // Each replication draws fresh within-dimension orders (first row
            // of its own Latin square per dimension).
            std::array<TaskOrder, 3> pools;
            for (int d = 0; d < 3; ++d) {
                const uint64_t s = derive_seed(master_seed, "hetero-latin",
                                               static_cast<uint64_t>(rep * 6 + static_cast<int>(p)),
                                               static_cast<uint64_t>(d));
                LatinBlock block = latin_square(values_per_dim, s);
                TaskOrder pool;
                pool.reserve(block.orders[0].size());
                for (int value : block.orders[0])
                    pool.push_back(global_task_id(d, value, values_per_dim));
                pools[static_cast<size_t>(d)] = std::move(pool);
            }
            RunSpec spec;
            spec.run_id = run_id;
            spec.dimensions = {kPerms[p][0], kPerms[p][1], kPerms[p][2]};
            spec.order = heterogeneous_sequence(kPerms[p], pools, length);
            spec.curriculum = c;
            spec.seed = derive_seed(master_seed, "run", static_cast<uint64_t>(run_id));
            spec.flags = flags;
            plan.runs.push_back(std::move(spec));
            ++run_id;
        }
    }
    return plan;
}

void write_plan_csv(const std::filesystem::path& path, const ReplicationPlan& plan,
                    int values_per_dim) {
    std::ofstream os(path);
    if (!os) throw RunError("cannot write " + path.string());
    os << "run_id,dimension,position,task_id,seed\n";
    for (const auto& run : plan.runs)
        for (size_t pos = 0; pos < run.order.size(); ++pos)
            os << run.run_id << ',' << task_dimension(run.order[pos], values_per_dim) << ','
               << (pos + 1) << ',' << run.order[pos] << ',' << run.seed << '\n';
}

void write_plan_json(const std::filesystem::path& path, const ReplicationPlan& plan) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& run : plan.runs) {
        nlohmann::json j;
        j["run_id"] = run.run_id;
        j["dimensions"] = run.dimensions;
        j["order"] = run.order;
        j["curriculum"] = {{"kind", curriculum::kind_name(run.curriculum.kind)},
                           {"kappa", run.curriculum.kappa},
                           {"alpha", run.curriculum.alpha}};
        j["seed"] = run.seed;
        j["task_mod_layer"] = run.flags.task_mod_layer;
        j["maml"] = run.flags.maml;
        runs.push_back(std::move(j));
    }
    write_text_file(path, nlohmann::json{{"runs", runs}}.dump(2) + "\n");
}

ReplicationPlan read_plan_json(const std::filesystem::path& path) {
    const auto j = nlohmann::json::parse(read_text_file(path));
    ReplicationPlan plan;
    for (const auto& r : j.at("runs")) {
        RunSpec spec;
        spec.run_id = r.at("run_id").get<int>();
        spec.dimensions = r.at("dimensions").get<std::vector<int>>();
        spec.order = r.at("order").get<TaskOrder>();
        spec.curriculum.kind = curriculum::kind_from_name(r.at("curriculum").at("kind"));
        spec.curriculum.kappa = r.at("curriculum").at("kappa").get<double>();
        spec.curriculum.alpha = r.at("curriculum").at("alpha").get<double>();
        spec.seed = r.at("seed").get<uint64_t>();
        spec.flags.task_mod_layer = r.at("task_mod_layer").get<int>();
        spec.flags.maml = r.at("maml").get<bool>();
        plan.runs.push_back(std::move(spec));
    }
    return plan;
}

}  // namespace seqlearn::design
