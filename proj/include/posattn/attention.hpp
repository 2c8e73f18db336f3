#pragma once

#include "posattn/core.hpp"
#include "posattn/teachers.hpp"

namespace posattn {

struct StudentParams {
    Matrix W_V;   // M x d
    Matrix W_KQ;  // D x D
    PositionalEncoding encoding;
};

StudentParams zero_params(int M, int d, const PositionalEncoding& encoding);
void validate_params(const StudentParams& params, const TeacherSpec& teacher);

// Column-wise softmax with per-column max subtraction.
Matrix column_softmax(const Matrix& logits);

// softmax(P^T W_KQ P / sqrt(D)) by columns.
Matrix attention_scores(const Matrix& W_KQ, const Matrix& P);

Matrix student_forward(const StudentParams& params, const Matrix& X, const ActivationKind& act);

Matrix structured_wkq(double C2, double C3, const Groups& groups, const Matrix& P);

// 1 / (K + (D - K) exp(-(C2 + C3) / sqrt(D))).
double p_from_c(double C2, double C3, int D, int K);

// sigma(Wt_V Z softmax(Z^T Wt_KQ Z / sqrt(D))) with Z = [X; P].
Matrix full_transformer_forward(const Matrix& Z, const Matrix& Wt_V, const Matrix& Wt_KQ,
                                const ActivationKind& act);

Matrix stack_inputs(const Matrix& X, const Matrix& P);

}  // namespace posattn
