#pragma once

#include "posattn/core.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace posattn {

// Closed-form Gaussian expectations. With independent x1 ~ N(0,a), x2 ~ N(0,b), x3 ~ N(0,c):
//   F1(a)     = E[x1 s(x1) s'(x1)]
//   F2(a,b)   = E[x1 s(x1+x2) s'(x1+x2)]
//   F3(a,b)   = E[(x1+x2) s(x1) s'(x1+x2)]
//   F4(a,b,c) = E[x1 s(x1+x2) s'(x1+x2+x3)]
//   F5(a,b,c) = E[x2 s(x1) s'(x1+x2+x3)]
double F1(double a, const ActivationKind& act);
double F2(double a, double b, const ActivationKind& act);
double F3(double a, double b, const ActivationKind& act);
double F4(double a, double b, double c, const ActivationKind& act);
double F5(double a, double b, double c, const ActivationKind& act);

// Per unit-norm teacher row and output position:
//   F6 = E[s(Z3/K) s(C1 Z5)] - c_s C1 p,
// with Z3 ~ N(0,K), Z4 ~ N(0,D-K) independent and Z5 = p Z3 + (1-Kp)/(D-K) Z4.
double F6(double C1, double p, int D, int K, const ActivationKind& act);

struct VarianceArgs {
    double f1 = 0.0;
    std::array<double, 2> f2_1{};
    std::array<double, 2> f2_2{};
    std::array<double, 2> f3{};
    std::array<double, 3> f4{};
    std::array<double, 3> f5{};
};

VarianceArgs plug_variances(double p, int D, int K);

// The six expectations evaluated at plug_variances(p, D, K).
struct PluggedValues {
    double F1 = 0.0;
    double F2_1 = 0.0;
    double F2_2 = 0.0;
    double F3 = 0.0;
    double F4 = 0.0;
    double F5 = 0.0;
};

PluggedValues plugged_values(double p, int D, int K, const ActivationKind& act);

enum class Expectation { F1, F2, F3, F4, F5, F6 };

std::string expectation_name(Expectation which);
Expectation parse_expectation(const std::string& name);
// Argument count: 1, 2, 2, 3, 3 and 4 (C1, p, D, K) respectively.
int expectation_arity(Expectation which);

double closed_form(Expectation which, std::span<const double> args, const ActivationKind& act);

struct McResult {
    double estimate = 0.0;
    double standard_error = 0.0;
};

struct McOptions {
    bool antithetic = false;
    int threads = 1;
};

// Samples are drawn in fixed-size chunks with one seeded substream per chunk,
// so the result does not depend on the number of workers.
McResult mc_expectation(Expectation which, std::span<const double> args, const ActivationKind& act,
                        std::int64_t n, std::uint64_t seed, const McOptions& options = {});

}  // namespace posattn
