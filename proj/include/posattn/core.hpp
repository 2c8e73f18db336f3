#pragma once

#include <Eigen/Dense>
#include <boost/random/normal_distribution.hpp>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace posattn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class ErrorKind { dimension, domain, index, config, validation, numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);
std::string_view error_kind_name(ErrorKind kind);

enum class Activation { identity, relu, leaky_relu };

struct ActivationKind {
    Activation kind = Activation::identity;
    double kappa = 0.0;  // leaky slope, used only for leaky_relu

    static ActivationKind identity() { return {Activation::identity, 0.0}; }
    static ActivationKind relu() { return {Activation::relu, 0.0}; }
    static ActivationKind leaky(double kappa);

    std::string name() const;
};

// Accepts "identity", "relu" or "leaky"/"leaky_relu"; kappa is required for leaky.
ActivationKind parse_activation(std::string_view name, double kappa);
void validate_activation(const ActivationKind& act);

double apply_activation(double x, const ActivationKind& act);
// sigma'(0) is taken from the x >= 0 branch.
double activation_derivative(double x, const ActivationKind& act);
double c_sigma(const ActivationKind& act);

Matrix apply_activation(const Matrix& x, const ActivationKind& act);
Matrix activation_derivative(const Matrix& x, const ActivationKind& act);

enum class EncodingScheme { identity, random_orthogonal };

struct PositionalEncoding {
    Matrix P;
    EncodingScheme scheme = EncodingScheme::identity;
    std::uint64_t seed = 0;
};

PositionalEncoding make_positional_encoding(int D, EncodingScheme scheme, std::uint64_t seed);
EncodingScheme parse_encoding_scheme(std::string_view name);
std::string encoding_scheme_name(EncodingScheme scheme);

// Purpose tags for splitting one master seed into independent streams.
enum class Stream : std::uint64_t {
    inputs = 1,
    noise = 2,
    mc = 3,
    encoding = 4,
    ood = 5,
    eval = 6,
    teacher = 7,
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index = 0);

using Rng = std::mt19937_64;
// Ziggurat standard normal.
using Normal = boost::random::normal_distribution<double>;

Matrix gaussian_matrix(int rows, int cols, Rng& rng);

void require_finite(const Matrix& m, std::string_view what);
void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, std::string_view what);

// Runs body(chunk) for chunk in [0, n_chunks) on up to `threads` workers.
// Chunk-indexed work keeps results independent of the worker count.
void parallel_chunks(int n_chunks, int threads, const std::function<void(int)>& body);

}  // namespace posattn
