#pragma once

#include "posattn/core.hpp"

#include <optional>
#include <vector>

namespace posattn {

struct DynamicsConfig {
    int D = 20;
    int K = 4;
    int M = 1;
    double eta = 0.01;
    ActivationKind act;
    double v_norm_sq = 1.0;  // sum of squared teacher row norms; must equal M
};

void validate_dynamics_config(const DynamicsConfig& cfg);

struct ScalarState {
    long t = 0;
    double C1 = 0.0;
    double C2 = 0.0;
    double C3 = 0.0;
    double p = 0.0;
};

ScalarState initial_state(const DynamicsConfig& cfg);
ScalarState step_scalar(const ScalarState& state, const DynamicsConfig& cfg);

double c1_star(double p, int D, int K, const ActivationKind& act);

struct AB {
    double A = 0.0;
    double B = 0.0;
};

AB a_b(double p, int D, int K, const ActivationKind& act);

double excess_loss_scalar(double C1, double p, int D, int K, double v_frob_sq,
                          const ActivationKind& act);

// ||S - S*||_F for the two-value score matrix with on-group weight p.
double s_frobenius_gap(double p, int D, int K);

struct SandwichResult {
    bool lower_ok = true;
    bool upper_ok = true;
    double lower_bound = 0.0;
    double upper_bound = 0.0;
    double lower_margin = 0.0;  // C1 - lower_bound
    double upper_margin = 0.0;  // upper_bound - C1
};

// The lower bound applies only once the burn-in step t1 has passed.
SandwichResult sandwich_check(const ScalarState& state, const DynamicsConfig& cfg, bool past_burn_in);

// Which steps of a trajectory get stored: every `every` steps, plus
// `per_decade` log-spaced steps per decade; step 0 and the last step always.
struct RecordPlan {
    long every = 0;
    int per_decade = 0;

    bool hit(long t, long T) const;
};

struct TrajectoryPoint {
    ScalarState state;
    double c1_star = 0.0;
    double A = 0.0;
    double B = 0.0;
    double excess_loss = 0.0;
    double s_frob_gap = 0.0;
};

struct DynamicsRun {
    std::vector<TrajectoryPoint> points;
    std::optional<long> t1;           // first t with C1 >= 0.95 C1*
    std::optional<long> t_star;       // first t with p >= 1/(2K)
    std::optional<long> t_star_half;  // first t with p >= 1/2
    long sandwich_violations = 0;     // steps after t1 breaking either bound
    long monotonicity_violations = 0; // steps where C2, C3 or p decreased
    double max_step_ratio = 0.0;      // max (dC2 + dC3) / step bound
    ScalarState final_state;
};

// Bound on dC2 + dC3 per step: eta M D / (K^2 (D-K)) sqrt((D+1)/K).
double step_increment_bound(const DynamicsConfig& cfg);

DynamicsRun run_dynamics(const DynamicsConfig& cfg, long T, const RecordPlan& plan = {1, 0});

struct DkPoint {
    long t = 0;
    double C = 0.0;
    double excess_bound = 0.0;
    double excess = 0.0;
};

// D = K case: C(t+1) = C(t) + eta F1(1) (1 - C(t)) from C(0) = 0.
std::vector<DkPoint> dynamics_dk(double eta, const ActivationKind& act, long T, double v_norm_sq = 1.0);

}  // namespace posattn
