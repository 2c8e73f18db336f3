#include "posattn/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>
#include <vector>

namespace posattn {

void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

std::string_view error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::dimension: return "dimension error";
        case ErrorKind::domain: return "domain error";
        case ErrorKind::index: return "index error";
        case ErrorKind::config: return "config error";
        case ErrorKind::validation: return "validation error";
        case ErrorKind::numeric: return "numeric error";
    }
    return "error";
}

ActivationKind ActivationKind::leaky(double kappa) {
    ActivationKind act{Activation::leaky_relu, kappa};
    validate_activation(act);
    return act;
}

std::string ActivationKind::name() const {
    switch (kind) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::leaky_relu: return "leaky";
    }
    return "identity";
}

void validate_activation(const ActivationKind& act) {
    if (act.kind == Activation::leaky_relu) {
        if (!(act.kappa > 0.0 && act.kappa < 1.0)) {
            fail(ErrorKind::domain, "kappa: must lie in (0, 1) for leaky activation");
        }
    }
}

ActivationKind parse_activation(std::string_view name, double kappa) {
    if (name == "identity") {
        return ActivationKind::identity();
    }
    if (name == "relu") {
        return ActivationKind::relu();
    }
    if (name == "leaky" || name == "leaky_relu") {
        return ActivationKind::leaky(kappa);
    }
    fail(ErrorKind::config, "act: unknown activation '" + std::string(name) + "'");
}

double apply_activation(double x, const ActivationKind& act) {
    switch (act.kind) {
        case Activation::identity: return x;
        case Activation::relu: return x >= 0.0 ? x : 0.0;
        case Activation::leaky_relu: return x >= 0.0 ? x : act.kappa * x;
    }
    return x;
}

double activation_derivative(double x, const ActivationKind& act) {
    switch (act.kind) {
        case Activation::identity: return 1.0;
        case Activation::relu: return x >= 0.0 ? 1.0 : 0.0;
        case Activation::leaky_relu: return x >= 0.0 ? 1.0 : act.kappa;
    }
    return 1.0;
}

double c_sigma(const ActivationKind& act) {
    switch (act.kind) {
        case Activation::identity: return 1.0;
        case Activation::relu: return 0.5;
        case Activation::leaky_relu: return (1.0 + act.kappa * act.kappa) / 2.0;
    }
    return 1.0;
}

Matrix apply_activation(const Matrix& x, const ActivationKind& act) {
    switch (act.kind) {
        case Activation::identity: return x;
        case Activation::relu: return x.cwiseMax(0.0);
        case Activation::leaky_relu:
            return x.unaryExpr([k = act.kappa](double v) { return v >= 0.0 ? v : k * v; });
    }
    return x;
}

Matrix activation_derivative(const Matrix& x, const ActivationKind& act) {
    switch (act.kind) {
        case Activation::identity: return Matrix::Ones(x.rows(), x.cols());
        case Activation::relu:
            return x.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : 0.0; });
        case Activation::leaky_relu:
            return x.unaryExpr([k = act.kappa](double v) { return v >= 0.0 ? 1.0 : k; });
    }
    return Matrix::Ones(x.rows(), x.cols());
}

PositionalEncoding make_positional_encoding(int D, EncodingScheme scheme, std::uint64_t seed) {
    if (D < 2) {
        fail(ErrorKind::dimension, "D: positional encoding needs D >= 2");
    }
    PositionalEncoding enc;
    enc.scheme = scheme;
    enc.seed = seed;
    if (scheme == EncodingScheme::identity) {
        enc.P = Matrix::Identity(D, D);
        return enc;
    }
    Rng rng(derive_seed(seed, Stream::encoding));
    Matrix g = gaussian_matrix(D, D, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(D, D);
    Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < D; ++j) {
        if (r(j, j) < 0.0) {
            q.col(j) = -q.col(j);
        }
    }
    enc.P = q;
    return enc;
}

EncodingScheme parse_encoding_scheme(std::string_view name) {
    if (name == "identity") {
        return EncodingScheme::identity;
    }
    if (name == "random_orthogonal" || name == "random") {
        return EncodingScheme::random_orthogonal;
    }
    fail(ErrorKind::config, "encoding: unknown scheme '" + std::string(name) + "'");
}

std::string encoding_scheme_name(EncodingScheme scheme) {
    return scheme == EncodingScheme::identity ? "identity" : "random_orthogonal";
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index) {
    std::uint64_t h = splitmix64(master);
    h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
    return splitmix64(h ^ (index * 0xd1b54a32d192ed03ULL));
}

Matrix gaussian_matrix(int rows, int cols, Rng& rng) {
    Normal normal(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            m(i, j) = normal(rng);
        }
    }
    return m;
}

void require_finite(const Matrix& m, std::string_view what) {
    if (!m.allFinite()) {
        fail(ErrorKind::numeric, std::string(what) + ": non-finite entries");
    }
}

void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, std::string_view what) {
    if (m.rows() != rows || m.cols() != cols) {
        fail(ErrorKind::dimension, std::string(what) + ": expected " + std::to_string(rows) + "x" +
                                       std::to_string(cols) + ", got " + std::to_string(m.rows()) +
                                       "x" + std::to_string(m.cols()));
    }
}

void parallel_chunks(int n_chunks, int threads, const std::function<void(int)>& body) {
    int workers = std::clamp(threads, 1, std::max(1, n_chunks));
    if (workers == 1) {
        for (int c = 0; c < n_chunks; ++c) {
            body(c);
        }
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int c = next++; c < n_chunks; c = next++) {
                    body(c);
                }
            } catch (...) {
                errors[w] = std::current_exception();
                next = n_chunks;
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

}  // namespace posattn
