#include "posattn/attention.hpp"

#include <algorithm>
#include <cmath>

namespace posattn {

StudentParams zero_params(int M, int d, const PositionalEncoding& encoding) {
    const auto D = encoding.P.rows();
    return {Matrix::Zero(M, d), Matrix::Zero(D, D), encoding};
}

void validate_params(const StudentParams& params, const TeacherSpec& teacher) {
    require_shape(params.W_V, teacher.M(), teacher.d(), "W_V");
    require_shape(params.W_KQ, teacher.D(), teacher.D(), "W_KQ");
    require_shape(params.encoding.P, teacher.D(), teacher.D(), "P");
}

Matrix column_softmax(const Matrix& logits) {
    if (!logits.allFinite()) {
        fail(ErrorKind::numeric, "attention: non-finite logits");
    }
    Matrix S(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.cols(); ++i) {
        double top = logits.col(i).maxCoeff();
        S.col(i) = (logits.col(i).array() - top).exp().matrix();
        S.col(i) /= S.col(i).sum();
    }
    return S;
}

Matrix attention_scores(const Matrix& W_KQ, const Matrix& P) {
    if (W_KQ.rows() != W_KQ.cols()) {
        fail(ErrorKind::dimension, "W_KQ: must be square");
    }
    require_shape(P, W_KQ.rows(), W_KQ.rows(), "P");
    const double scale = 1.0 / std::sqrt(static_cast<double>(W_KQ.rows()));
    return column_softmax(scale * (P.transpose() * W_KQ * P));
}

Matrix student_forward(const StudentParams& params, const Matrix& X, const ActivationKind& act) {
    const auto D = params.W_KQ.rows();
    require_shape(X, params.W_V.cols(), D, "X");
    Matrix S = attention_scores(params.W_KQ, params.encoding.P);
    return apply_activation(params.W_V * X * S, act);
}

Matrix structured_wkq(double C2, double C3, const Groups& groups, const Matrix& P) {
    if (C2 < 0.0 || C3 < 0.0) {
        fail(ErrorKind::domain, "C2, C3: coefficients must be nonnegative");
    }
    const auto D = P.rows();
    require_shape(P, D, D, "P");
    if (static_cast<Eigen::Index>(groups.size()) != D) {
        fail(ErrorKind::dimension, "groups: need one group per position");
    }
    // Coefficients in the P basis: entry (i', i) is C2 on-group and -C3 otherwise.
    Matrix coeff = Matrix::Constant(D, D, -C3);
    for (Eigen::Index i = 0; i < D; ++i) {
        for (int src : groups[i]) {
            coeff(src, i) = C2;
        }
    }
    return P * coeff * P.transpose();
}

double p_from_c(double C2, double C3, int D, int K) {
    if (C2 < 0.0 || C3 < 0.0) {
        fail(ErrorKind::domain, "C2, C3: coefficients must be nonnegative");
    }
    if (!(D > K && K >= 1)) {
        fail(ErrorKind::domain, "p: requires D > K >= 1");
    }
    double arg = std::min((C2 + C3) / std::sqrt(static_cast<double>(D)), 745.0);
    return 1.0 / (K + (D - K) * std::exp(-arg));
}

Matrix stack_inputs(const Matrix& X, const Matrix& P) {
    require_shape(P, X.cols(), X.cols(), "P");
    Matrix Z(X.rows() + P.rows(), X.cols());
    Z << X, P;
    return Z;
}

Matrix full_transformer_forward(const Matrix& Z, const Matrix& Wt_V, const Matrix& Wt_KQ,
                                const ActivationKind& act) {
    const auto rows = Z.rows();
    const auto D = Z.cols();
    require_shape(Wt_KQ, rows, rows, "Wt_KQ");
    require_shape(Wt_V, Wt_V.rows(), rows, "Wt_V");
    const double scale = 1.0 / std::sqrt(static_cast<double>(D));
    Matrix S = column_softmax(scale * (Z.transpose() * Wt_KQ * Z));
    return apply_activation(Wt_V * Z * S, act);
}

}  // namespace posattn
