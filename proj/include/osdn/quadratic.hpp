#pragma once

#include <cstdint>
#include <optional>
#include <vector>

// Population-limit quadratic memory regression: the expected write loss over
// a finite atom set, its key covariance, smoothness constant, right-Newton
// comparator, and the online-preconditioned dynamics audit.

namespace osdn {

struct QuadraticProblem {
    std::int64_t key_dim = 0;
    std::int64_t value_dim = 0;
    // Finite sampler realizing the population moments exactly.
    std::vector<double> atom_keys;    // [M,K]
    std::vector<double> atom_values;  // [M,V]
    std::vector<double> weights;      // [M], sums to 1

    // Derived quantities.
    std::vector<double> sigma;   // [K,K] key covariance E[k k^T]
    std::vector<double> cross;   // [V,K] C = E[v k^T]
    std::vector<double> s_star;  // [V,K] min-norm optimum C Sigma^+
    std::vector<double> d_star;  // [K,K] right-Newton comparator Sigma^+
    double f_star = 0.0;
    double smoothness = 0.0;    // L = lambda_max(Sigma)
    double pinv_cutoff = 0.0;   // absolute eigenvalue cutoff used for Sigma^+

    static QuadraticProblem from_atoms(std::vector<double> keys, std::vector<double> values,
                                       std::vector<double> weights, std::int64_t K,
                                       std::int64_t V);

    double loss(const double* s) const;             // f(S), S row-major [V,K]
    void gradient(const double* s, double* g) const;  // S Sigma - C
    void check() const;
};

// One full-gradient right-preconditioned step S' = S - grad f(S) D.
// h is the relative loss change; zero gradient yields h = 0 by convention.
struct PopulationStep {
    std::vector<double> next_state;  // [V,K]
    double h_value = 0.0;
    double grad_norm_sq = 0.0;
};

PopulationStep population_step(const double* s, const double* d_precond,
                               const QuadraticProblem& problem);

// Online learner variants for the population audit.
enum class LearnerKind { diagonal_ogd, dense_ogd };

struct PopulationRunConfig {
    std::int64_t horizon = 200;
    LearnerKind learner = LearnerKind::diagonal_ogd;
    double learner_step = 0.0;  // 0 picks 1/(2L)
    std::uint64_t seed = 1;
    bool monotone_guard = true;
    double stop_rel_suboptimality = 1e-24;
};

struct RegretLedger {
    struct Step {
        double h_decision = 0.0;
        double h_comparator = 0.0;
        double ratio = 1.0;  // (f_{t+1}-f*)/(f_t-f*), 1 on guarded skips
        bool applied = true;
    };
    std::vector<Step> steps;
    double cumulative_regret(std::int64_t prefix = -1) const;
};

struct PopulationRunReport {
    RegretLedger ledger;
    bool bound_holds_all_prefixes = true;  // prod r_t <= (2L R_tau/tau)^tau
    bool rayleigh_ok = true;               // |h_t(D_star)|^{-1} <= 2L each step
    bool monotone_guard_active = true;
    std::int64_t skipped_steps = 0;
    double log_ratio_product = 0.0;  // sum log r_t (can be -inf)
    double bound_log = 0.0;          // T log(2L R_T/T)
    double final_suboptimality = 0.0;
    double initial_suboptimality = 0.0;
    // Per-step gradients and losses retained for comparator re-evaluation.
    std::vector<double> state_trajectory;  // [steps+1, V*K]
};

PopulationRunReport run_population_osgm(const QuadraticProblem& problem,
                                        const PopulationRunConfig& config);

// Regret against D_star decomposed into the projected-OGD term, the box gap,
// and the diagonal gap; the three parts sum to the total by construction.
struct RegretDecomposition {
    double total = 0.0;
    double ogd_term = 0.0;
    double box_gap = 0.0;
    double diagonal_gap = 0.0;
    std::vector<double> best_box_diag;   // [K]
    std::vector<double> best_free_diag;  // [K]
};

RegretDecomposition decompose_regret(const QuadraticProblem& problem,
                                     const PopulationRunReport& report, double d_min,
                                     double d_max);

}  // namespace osdn
