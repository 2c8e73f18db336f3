#pragma once

#include "posattn/attention.hpp"
#include "posattn/core.hpp"
#include "posattn/dynamics.hpp"
#include "posattn/expectations.hpp"
#include "posattn/teachers.hpp"

#include <functional>
#include <string>
#include <vector>

namespace posattn {

enum class InputDist { gaussian, exponential_centered, student_t, gumbel_centered };

struct InputDistribution {
    InputDist kind = InputDist::gaussian;
    double df = 5.0;  // student_t only
};

InputDistribution parse_input_distribution(const std::string& name);
std::string input_distribution_name(const InputDistribution& dist);

std::vector<Matrix> sample_inputs(int d, int D, int N, const InputDistribution& dist, std::uint64_t seed);

// N samples packed for batched products: rows n*D .. n*D+D-1 of Xt hold X_n^T.
// Labels live in a D x (N*M) matrix whose column m*N + n is row m of Y_n.
struct PackedBatch {
    int N = 0, d = 0, D = 0, M = 0;
    Matrix Xt;
    Matrix Y;
};

PackedBatch pack_batch(const std::vector<Matrix>& X_batch, const std::vector<Matrix>& Y_batch);
PackedBatch sample_packed(const TeacherSpec& teacher, int N, const InputDistribution& dist,
                          double noise_scale, Rng& input_rng, Rng& noise_rng);
// Teacher outputs in the packed label layout.
Matrix packed_teacher_forward(const TeacherSpec& teacher, const Matrix& Xt, int N);
Matrix packed_student_forward(const StudentParams& params, const Matrix& Xt, int N,
                              const ActivationKind& act);

double batch_loss(const StudentParams& params, const TeacherSpec& teacher,
                  const std::vector<Matrix>& X_batch, const std::vector<Matrix>& Y_batch);

struct Gradients {
    Matrix G_V;   // M x d
    Matrix G_KQ;  // D x D
    double loss = 0.0;
};

Gradients batch_gradients(const StudentParams& params, const ActivationKind& act,
                          const std::vector<Matrix>& X_batch, const std::vector<Matrix>& Y_batch);
Gradients packed_gradients(const StudentParams& params, const ActivationKind& act,
                           const PackedBatch& batch);

struct TrainConfig {
    double eta = 0.05;
    long T = 1000;
    int N = 100;
    std::uint64_t seed = 1;
    double noise_scale = 1.0;
    InputDistribution input_dist;
    InputDistribution ood_dist{InputDist::exponential_centered, 5.0};
    RecordPlan record{0, 20};
    int eval_N = 1000;  // fixed held-out inputs for the excess training loss
    int ood_N = 100;    // fresh OOD batch per record
};

void validate_train_config(const TrainConfig& cfg);

struct TrajectoryRecord {
    long t = 0;
    double excess_train_loss = 0.0;
    double excess_ood_loss = 0.0;
    double cosine_sim = 0.0;
    double p_hat = 0.0;
    double s_frob_gap = 0.0;
    double wv_offpattern_ratio = 0.0;
    double C1_hat = 0.0;
    double kq_offpattern_ratio = 0.0;
    double max_abs_dev = 0.0;      // max |S - S*|
    double two_value_dev = 0.0;    // max deviation from the on/off-group means
    double batch_loss = 0.0;
};

struct TrainResult {
    StudentParams params;
    std::vector<TrajectoryRecord> records;
};

// Called after the gradient of step t (1-based) is computed and before it is applied.
using StepObserver = std::function<void(long t, const StudentParams&, const Gradients&)>;

TrainResult train(const TrainConfig& cfg, const TeacherSpec& teacher, const PositionalEncoding& encoding,
                  const StepObserver& observer = {});

// (1/2N) sum ||Y~ - TF||^2 - (1/2N) sum ||Y~ - f*||^2 with Y~ drawn from the label model on X~.
McResult ood_excess_stats(const StudentParams& params, const TeacherSpec& teacher,
                          const InputDistribution& dist, int N, std::uint64_t seed, double noise_scale);
double ood_excess_loss(const StudentParams& params, const TeacherSpec& teacher,
                       const InputDistribution& dist, int N, std::uint64_t seed, double noise_scale);

// Noise-free (1/2N) sum ||f*(X) - TF(X)||^2 over packed inputs.
double excess_loss_on(const StudentParams& params, const TeacherSpec& teacher, const Matrix& Xt, int N);

// Sign of the label shift on the event A_{m,i}.
enum class WorstCaseSign {
    against_student,  // -sign(off-group sum): opposes the student's off-group attention mass
    as_printed,       // +sign(off-group sum)
};

// Y~ = f*(X~) + s_{m,i} 1{A_{m,i}}, where A_{m,i} is
// |off-group sum| >= max(2/c' |on-group sum|, 1); c' = 0 disables the shift.
Matrix worst_case_labels(const TeacherSpec& teacher, const StudentParams& params, const Matrix& X_tilde,
                         double c_prime = 0.5, WorstCaseSign sign = WorstCaseSign::against_student);

McResult worst_case_gap(const StudentParams& params, const TeacherSpec& teacher,
                        const InputDistribution& dist, int N, std::uint64_t seed, double c_prime = 0.5,
                        WorstCaseSign sign = WorstCaseSign::against_student);

struct ScalarEstimate {
    double C1_hat = 0.0;
    double p_hat = 0.0;
    double offpattern_V = 0.0;
    double offpattern_KQ = 0.0;
};

ScalarEstimate extract_scalars(const StudentParams& params, const TeacherSpec& teacher);

// Parameters (C1 V*, structured_wkq(C2, C3)) on the scalar trajectory.
StudentParams structured_params(const TeacherSpec& teacher, const PositionalEncoding& encoding,
                                double C1, double C2, double C3);

// Full transformer on Z = [X; P], trained from zero by the same loss.
struct FullTransformerParams {
    Matrix Wt_V;   // M x (d + D)
    Matrix Wt_KQ;  // (d + D) x (d + D)
};

struct FullGradients {
    Matrix G_V;
    Matrix G_KQ;
    double loss = 0.0;
};

FullGradients full_transformer_gradients(const FullTransformerParams& params, const ActivationKind& act,
                                         const std::vector<Matrix>& Z_batch,
                                         const std::vector<Matrix>& Y_batch);

struct FullTrainResult {
    FullTransformerParams params;
    std::vector<double> losses;  // batch loss per step
};

FullTrainResult train_full_transformer(const TrainConfig& cfg, const TeacherSpec& teacher,
                                       const PositionalEncoding& encoding, double init_scale = 0.0);

}  // namespace posattn
