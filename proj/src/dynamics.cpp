#include "posattn/dynamics.hpp"

#include "posattn/attention.hpp"
#include "posattn/expectations.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace posattn {

void validate_dynamics_config(const DynamicsConfig& cfg) {
    validate_activation(cfg.act);
    if (cfg.K < 1) {
        fail(ErrorKind::config, "K: must be >= 1");
    }
    if (cfg.D < cfg.K) {
        fail(ErrorKind::config, "D: must be >= K");
    }
    if (cfg.M < 1) {
        fail(ErrorKind::config, "M: must be >= 1");
    }
    if (!(cfg.eta > 0.0) || !std::isfinite(cfg.eta)) {
        fail(ErrorKind::config, "eta: must be positive");
    }
    if (std::abs(cfg.v_norm_sq - cfg.M) > 1e-9 * cfg.M) {
        fail(ErrorKind::config, "v_norm_sq: scalar dynamics need unit-norm teacher rows (v_norm_sq = M)");
    }
}

ScalarState initial_state(const DynamicsConfig& cfg) {
    return {0, 0.0, 0.0, 0.0, p_from_c(0.0, 0.0, cfg.D, cfg.K)};
}

ScalarState step_scalar(const ScalarState& s, const DynamicsConfig& cfg) {
    validate_dynamics_config(cfg);
    if (cfg.D == cfg.K) {
        fail(ErrorKind::domain, "D = K: use dynamics_dk");
    }
    const int D = cfg.D, K = cfg.K;
    const double p = s.p, q = 1.0 - K * p, eta = cfg.eta, M = cfg.M;
    const double sqrtD = std::sqrt(static_cast<double>(D));
    const PluggedValues f = plugged_values(p, D, K, cfg.act);

    const double dC1 = D * eta * (f.F3 / (K * p) - s.C1 * f.F1);
    const double dC2 = eta * s.C1 * M / sqrtD *
                       ((f.F4 / p - f.F3) / K - s.C1 * (f.F2_1 - p * f.F1));
    // The C3 update multiplied through by (1 - Kp) so that no division by q is needed.
    const double dC3 = eta * s.C1 * M / (sqrtD * (D - K)) *
                       (q * f.F3 / (K * p) - (D - K) * f.F5 / (K * p) -
                        s.C1 * (q * f.F1 - (D - K) * f.F2_2));

    ScalarState next;
    next.t = s.t + 1;
    next.C1 = s.C1 + dC1;
    next.C2 = s.C2 + dC2;
    next.C3 = s.C3 + dC3;
    if (!std::isfinite(next.C1) || !std::isfinite(next.C2) || !std::isfinite(next.C3)) {
        fail(ErrorKind::numeric, "dynamics: non-finite coefficients at step " + std::to_string(next.t));
    }
    next.p = p_from_c(std::max(next.C2, 0.0), std::max(next.C3, 0.0), D, K);
    return next;
}

double c1_star(double p, int D, int K, const ActivationKind& act) {
    const PluggedValues f = plugged_values(p, D, K, act);
    return f.F3 / (K * p * f.F1);
}

AB a_b(double p, int D, int K, const ActivationKind& act) {
    plug_variances(p, D, K);  // range check
    const double Kp2 = K * p * p;
    if (act.kind == Activation::identity) {
        return {Kp2, 0.0};
    }
    const double q = std::max(0.0, 1.0 - K * p);
    const double sym = act.kind == Activation::leaky_relu ? (1 + act.kappa) * (1 + act.kappa) : 1.0;
    const double kink = act.kind == Activation::leaky_relu ? (1 - act.kappa) * (1 - act.kappa) : 1.0;
    const double r_atan = q == 0.0 ? std::numbers::pi / 2
                                   : std::atan(std::sqrt(static_cast<double>(K) * (D - K)) * p / q);
    AB ab;
    ab.A = sym * Kp2 / 4.0 + kink * Kp2 / (2.0 * std::numbers::pi) * r_atan;
    ab.B = kink * std::sqrt(static_cast<double>(K) / (D - K)) * p * q / (2.0 * std::numbers::pi);
    return ab;
}

double excess_loss_scalar(double C1, double p, int D, int K, double v_frob_sq,
                          const ActivationKind& act) {
    const double q = 1.0 - K * p;
    const double on = 1.0 / K - C1 * p;
    const double quad = c_sigma(act) * D * v_frob_sq / (2.0 * (D - K)) *
                        (K * (D - K) * on * on + C1 * C1 * q * q);
    return quad - D * v_frob_sq * F6(C1, p, D, K, act);
}

double s_frobenius_gap(double p, int D, int K) {
    if (!(D > K && K >= 1)) {
        fail(ErrorKind::domain, "D, K: require D > K >= 1");
    }
    return D / std::sqrt(static_cast<double>(K) * (D - K)) * (1.0 - K * p);
}

SandwichResult sandwich_check(const ScalarState& state, const DynamicsConfig& cfg, bool past_burn_in) {
    const int D = cfg.D, K = cfg.K;
    const double p = state.p;
    const double star = c1_star(p, D, K, cfg.act);
    const AB ab = a_b(p, D, K, cfg.act);
    const double denom = K * p * (D * p - 1.0);
    const double term = denom > 0.0
                            ? 4.0 * ab.A / (5.0 * (ab.A + ab.B)) * (1.0 - K * p) / denom
                            : std::numeric_limits<double>::infinity();
    SandwichResult r;
    r.upper_bound = (1.0 + term) * star;
    if (p <= 1.0 / (2.0 * std::sqrt(std::numbers::pi * D * K))) {
        r.upper_bound = star;
    }
    r.lower_bound = past_burn_in ? std::max(0.95, 1.0 - term) * star : 0.0;
    r.upper_margin = r.upper_bound - state.C1;
    r.lower_margin = state.C1 - r.lower_bound;
    r.upper_ok = r.upper_margin >= 0.0;
    r.lower_ok = r.lower_margin >= 0.0;
    return r;
}

bool RecordPlan::hit(long t, long T) const {
    if (t == 0 || t == T) {
        return true;
    }
    if (every > 0 && t % every == 0) {
        return true;
    }
    if (per_decade > 0 && t >= 1) {
        if (t == 1) {
            return true;
        }
        double a = std::floor(per_decade * std::log10(static_cast<double>(t)));
        double b = std::floor(per_decade * std::log10(static_cast<double>(t - 1)));
        return a != b;
    }
    return false;
}

double step_increment_bound(const DynamicsConfig& cfg) {
    const double D = cfg.D, K = cfg.K;
    return cfg.eta * cfg.M * D / (K * K * (D - K)) * std::sqrt((D + 1.0) / K);
}

namespace {

TrajectoryPoint make_point(const ScalarState& s, const DynamicsConfig& cfg) {
    TrajectoryPoint pt;
    pt.state = s;
    pt.c1_star = c1_star(s.p, cfg.D, cfg.K, cfg.act);
    AB ab = a_b(s.p, cfg.D, cfg.K, cfg.act);
    pt.A = ab.A;
    pt.B = ab.B;
    pt.excess_loss = excess_loss_scalar(s.C1, s.p, cfg.D, cfg.K, cfg.v_norm_sq, cfg.act);
    pt.s_frob_gap = s_frobenius_gap(s.p, cfg.D, cfg.K);
    return pt;
}

}  // namespace

DynamicsRun run_dynamics(const DynamicsConfig& cfg, long T, const RecordPlan& plan) {
    validate_dynamics_config(cfg);
    if (cfg.D == cfg.K) {
        fail(ErrorKind::domain, "D = K: use dynamics_dk");
    }
    if (T < 1) {
        fail(ErrorKind::config, "steps: must be >= 1");
    }
    const double bound = step_increment_bound(cfg);
    DynamicsRun run;
    ScalarState s = initial_state(cfg);
    for (long t = 0;; ++t) {
        const double star = c1_star(s.p, cfg.D, cfg.K, cfg.act);
        if (!run.t1 && s.C1 >= 0.95 * star) {
            run.t1 = t;
        }
        if (!run.t_star && s.p * 2 * cfg.K >= 1.0) {
            run.t_star = t;
        }
        if (!run.t_star_half && s.p >= 0.5) {
            run.t_star_half = t;
        }
        if (run.t1) {
            SandwichResult sw = sandwich_check(s, cfg, true);
            if (!sw.lower_ok || !sw.upper_ok) {
                ++run.sandwich_violations;
            }
        }
        if (plan.hit(t, T)) {
            run.points.push_back(make_point(s, cfg));
        }
        if (t == T) {
            break;
        }
        ScalarState next = step_scalar(s, cfg);
        if (next.C2 < s.C2 || next.C3 < s.C3 || next.p < s.p) {
            ++run.monotonicity_violations;
        }
        double inc = (next.C2 - s.C2) + (next.C3 - s.C3);
        run.max_step_ratio = std::max(run.max_step_ratio, inc / bound);
        s = next;
    }
    run.final_state = s;
    return run;
}

std::vector<DkPoint> dynamics_dk(double eta, const ActivationKind& act, long T, double v_norm_sq) {
    validate_activation(act);
    if (!(eta > 0.0) || eta > 0.5) {
        fail(ErrorKind::config, "eta: the D = K case needs 0 < eta <= 1/2");
    }
    if (T < 0) {
        fail(ErrorKind::config, "steps: must be >= 0");
    }
    const double f1 = F1(1.0, act);
    const double cs = c_sigma(act);
    std::vector<DkPoint> out;
    out.reserve(static_cast<std::size_t>(T) + 1);
    double C = 0.0;
    for (long t = 0; t <= T; ++t) {
        DkPoint pt;
        pt.t = t;
        pt.C = C;
        pt.excess_bound = v_norm_sq / 2.0 * std::exp(-eta * (t - 1.0));
        pt.excess = cs * v_norm_sq * (1.0 - C) * (1.0 - C) / 2.0;
        out.push_back(pt);
        C = C + eta * f1 * (1.0 - C);
    }
    return out;
}

}  // namespace posattn
