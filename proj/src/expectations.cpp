#include "posattn/expectations.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace posattn {

namespace {

constexpr double pi = std::numbers::pi;

void require_variance(double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
        fail(ErrorKind::domain, std::string(name) + ": variance must be finite and nonnegative");
    }
}

// Weights of the symmetric and antisymmetric parts of s(x) = x 1{x>=0} + k x 1{x<0}.
double sym_weight(const ActivationKind& act) {
    return act.kind == Activation::leaky_relu ? (1.0 + act.kappa) * (1.0 + act.kappa) : 1.0;
}

double kink_weight(const ActivationKind& act) {
    return act.kind == Activation::leaky_relu ? (1.0 - act.kappa) * (1.0 - act.kappa) : 1.0;
}

void check_p(double p, int D, int K) {
    if (!(D > K && K >= 1)) {
        fail(ErrorKind::domain, "D, K: require D > K >= 1");
    }
    const double lo = 1.0 / D;
    const double hi = 1.0 / K;
    if (!(p >= lo * (1.0 - 1e-12) && p <= hi * (1.0 + 1e-12))) {
        fail(ErrorKind::domain, "p: must lie in [1/D, 1/K]");
    }
}

}  // namespace

double F1(double a, const ActivationKind& act) {
    require_variance(a, "a");
    return c_sigma(act) * a;
}

double F2(double a, double b, const ActivationKind& act) {
    require_variance(a, "a");
    require_variance(b, "b");
    return c_sigma(act) * a;
}

double F3(double a, double b, const ActivationKind& act) {
    require_variance(a, "a");
    require_variance(b, "b");
    if (act.kind == Activation::identity) {
        return a;
    }
    if (a == 0.0) {
        return 0.0;
    }
    if (b == 0.0) {
        return F1(a, act);
    }
    return sym_weight(act) * a / 4.0 +
           kink_weight(act) * (a / (2.0 * pi) * std::atan(std::sqrt(a / b)) +
                               std::sqrt(a * b) / (2.0 * pi));
}

double F4(double a, double b, double c, const ActivationKind& act) {
    require_variance(a, "a");
    require_variance(b, "b");
    require_variance(c, "c");
    if (act.kind == Activation::identity) {
        return a;
    }
    if (a == 0.0) {
        return 0.0;
    }
    if (c == 0.0) {
        return F1(a, act);
    }
    const double ab = a + b;
    return sym_weight(act) * a / 4.0 +
           kink_weight(act) * a / (2.0 * pi) *
               (std::atan(std::sqrt(ab / c)) + std::sqrt(ab * c) / (ab + c));
}

double F5(double a, double b, double c, const ActivationKind& act) {
    require_variance(a, "a");
    require_variance(b, "b");
    require_variance(c, "c");
    if (a + b + c == 0.0) {
        fail(ErrorKind::domain, "F5: variances must not all vanish");
    }
    if (act.kind == Activation::identity || a == 0.0 || b == 0.0) {
        return 0.0;
    }
    return kink_weight(act) * b * std::sqrt(a * (b + c)) / (2.0 * pi * (a + b + c));
}

double F6(double C1, double p, int D, int K, const ActivationKind& act) {
    if (!(C1 >= 0.0)) {
        fail(ErrorKind::domain, "C1: must be nonnegative");
    }
    check_p(p, D, K);
    if (act.kind == Activation::identity) {
        return 0.0;
    }
    const double q = std::max(0.0, 1.0 - K * p);
    const double x = q / (p * std::sqrt(static_cast<double>(K) * (D - K)));
    // x - atan(x), with a series near zero to avoid cancellation.
    const double gap = x < 1e-3 ? x * x * x / 3.0 - std::pow(x, 5) / 5.0 : x - std::atan(x);
    return kink_weight(act) * C1 * p * gap / (2.0 * pi);
}

VarianceArgs plug_variances(double p, int D, int K) {
    check_p(p, D, K);
    const double q = std::max(0.0, 1.0 - K * p);
    const double off = q * q / (D - K);
    const double off2 = q * q / (static_cast<double>(D - K) * (D - K));
    VarianceArgs v;
    v.f1 = K * p * p + off;
    v.f2_1 = {p * p, (K - 1) * p * p + off};
    v.f2_2 = {off2, K * p * p + (D - K - 1) * off2};
    v.f3 = {K * p * p, off};
    v.f4 = {p * p, (K - 1) * p * p, off};
    v.f5 = {K * p * p, off2, (D - K - 1) * off2};
    return v;
}

PluggedValues plugged_values(double p, int D, int K, const ActivationKind& act) {
    VarianceArgs v = plug_variances(p, D, K);
    PluggedValues f;
    f.F1 = F1(v.f1, act);
    f.F2_1 = F2(v.f2_1[0], v.f2_1[1], act);
    f.F2_2 = F2(v.f2_2[0], v.f2_2[1], act);
    f.F3 = F3(v.f3[0], v.f3[1], act);
    f.F4 = F4(v.f4[0], v.f4[1], v.f4[2], act);
    f.F5 = F5(v.f5[0], v.f5[1], v.f5[2], act);
    return f;
}

std::string expectation_name(Expectation which) {
    switch (which) {
        case Expectation::F1: return "F1";
        case Expectation::F2: return "F2";
        case Expectation::F3: return "F3";
        case Expectation::F4: return "F4";
        case Expectation::F5: return "F5";
        case Expectation::F6: return "F6";
    }
    return "F1";
}

Expectation parse_expectation(const std::string& name) {
    for (auto e : {Expectation::F1, Expectation::F2, Expectation::F3, Expectation::F4,
                   Expectation::F5, Expectation::F6}) {
        if (expectation_name(e) == name) {
            return e;
        }
    }
    fail(ErrorKind::config, "which: unknown expectation '" + name + "'");
}

int expectation_arity(Expectation which) {
    switch (which) {
        case Expectation::F1: return 1;
        case Expectation::F2:
        case Expectation::F3: return 2;
        case Expectation::F4:
        case Expectation::F5: return 3;
        case Expectation::F6: return 4;
    }
    return 1;
}

namespace {

void check_arity(Expectation which, std::span<const double> args) {
    if (static_cast<int>(args.size()) != expectation_arity(which)) {
        fail(ErrorKind::domain, expectation_name(which) + ": expected " +
                                    std::to_string(expectation_arity(which)) + " arguments");
    }
}

int as_int(double v, const char* name) {
    if (v != std::floor(v) || v < 1.0 || v > 1e6) {
        fail(ErrorKind::domain, std::string(name) + ": must be a positive integer");
    }
    return static_cast<int>(v);
}

// One draw of the integrand from three standard normals.
struct Integrand {
    Expectation which;
    ActivationKind act;
    double sa = 0.0, sb = 0.0, sc = 0.0;
    // F6 constants
    double C1 = 0.0, p = 0.0, scale_off = 0.0, sqrtK = 0.0, invK = 0.0, offset = 0.0;

    double operator()(double g1, double g2, double g3) const {
        auto s = [this](double x) { return apply_activation(x, act); };
        auto ds = [this](double x) { return activation_derivative(x, act); };
        switch (which) {
            case Expectation::F1: {
                double x1 = sa * g1;
                return x1 * s(x1) * ds(x1);
            }
            case Expectation::F2: {
                double x1 = sa * g1, x2 = sb * g2;
                return x1 * s(x1 + x2) * ds(x1 + x2);
            }
            case Expectation::F3: {
                double x1 = sa * g1, x2 = sb * g2;
                return (x1 + x2) * s(x1) * ds(x1 + x2);
            }
            case Expectation::F4: {
                double x1 = sa * g1, x2 = sb * g2, x3 = sc * g3;
                return x1 * s(x1 + x2) * ds(x1 + x2 + x3);
            }
            case Expectation::F5: {
                double x1 = sa * g1, x2 = sb * g2, x3 = sc * g3;
                return x2 * s(x1) * ds(x1 + x2 + x3);
            }
            case Expectation::F6: {
                double z3 = sqrtK * g1;
                double z5 = p * z3 + scale_off * g2;
                return s(z3 * invK) * s(C1 * z5) - offset;
            }
        }
        return 0.0;
    }
};

Integrand make_integrand(Expectation which, std::span<const double> args, const ActivationKind& act) {
    Integrand f{which, act};
    if (which == Expectation::F6) {
        const double C1 = args[0], p = args[1];
        const int D = as_int(args[2], "D");
        const int K = as_int(args[3], "K");
        if (!(C1 >= 0.0)) {
            fail(ErrorKind::domain, "C1: must be nonnegative");
        }
        check_p(p, D, K);
        f.C1 = C1;
        f.p = p;
        f.sqrtK = std::sqrt(static_cast<double>(K));
        f.invK = 1.0 / K;
        f.scale_off = std::max(0.0, 1.0 - K * p) / std::sqrt(static_cast<double>(D - K));
        f.offset = c_sigma(act) * C1 * p;
        return f;
    }
    for (double v : args) {
        require_variance(v, expectation_name(which).c_str());
    }
    f.sa = std::sqrt(args[0]);
    f.sb = args.size() > 1 ? std::sqrt(args[1]) : 0.0;
    f.sc = args.size() > 2 ? std::sqrt(args[2]) : 0.0;
    if (which == Expectation::F5 && args[0] + args[1] + args[2] == 0.0) {
        fail(ErrorKind::domain, "F5: variances must not all vanish");
    }
    return f;
}

}  // namespace

double closed_form(Expectation which, std::span<const double> args, const ActivationKind& act) {
    check_arity(which, args);
    switch (which) {
        case Expectation::F1: return F1(args[0], act);
        case Expectation::F2: return F2(args[0], args[1], act);
        case Expectation::F3: return F3(args[0], args[1], act);
        case Expectation::F4: return F4(args[0], args[1], args[2], act);
        case Expectation::F5: return F5(args[0], args[1], args[2], act);
        case Expectation::F6:
            return F6(args[0], args[1], as_int(args[2], "D"), as_int(args[3], "K"), act);
    }
    return 0.0;
}

McResult mc_expectation(Expectation which, std::span<const double> args, const ActivationKind& act,
                        std::int64_t n, std::uint64_t seed, const McOptions& options) {
    check_arity(which, args);
    validate_activation(act);
    if (n < 10000) {
        fail(ErrorKind::domain, "n: Monte Carlo needs at least 10^4 samples");
    }
    const Integrand f = make_integrand(which, args, act);
    constexpr std::int64_t chunk = 1 << 16;
    const int n_chunks = static_cast<int>((n + chunk - 1) / chunk);
    std::vector<double> sums(n_chunks, 0.0), sq_sums(n_chunks, 0.0);
    std::vector<std::int64_t> counts(n_chunks, 0);

    parallel_chunks(n_chunks, options.threads, [&](int c) {
        Rng rng(derive_seed(seed, Stream::mc, static_cast<std::uint64_t>(c)));
        Normal normal(0.0, 1.0);
        const std::int64_t begin = c * chunk;
        const std::int64_t count = std::min(chunk, n - begin);
        double s = 0.0, s2 = 0.0;
        std::int64_t k = 0;
        for (std::int64_t j = 0; j < count; ++j) {
            double g1 = normal(rng), g2 = normal(rng), g3 = normal(rng);
            double v = f(g1, g2, g3);
            if (options.antithetic) {
                v = 0.5 * (v + f(-g1, -g2, -g3));
            }
            s += v;
            s2 += v * v;
            ++k;
        }
        sums[c] = s;
        sq_sums[c] = s2;
        counts[c] = k;
    });

    double s = 0.0, s2 = 0.0;
    std::int64_t total = 0;
    for (int c = 0; c < n_chunks; ++c) {
        s += sums[c];
        s2 += sq_sums[c];
        total += counts[c];
    }
    const double mean = s / total;
    const double var = std::max(0.0, (s2 / total - mean * mean) * total / (total - 1));
    return {mean, std::sqrt(var / total)};
}

}  // namespace posattn
