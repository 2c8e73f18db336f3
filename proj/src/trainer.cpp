#include "posattn/trainer.hpp"

#include "posattn/analysis.hpp"
#include "posattn/io.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace posattn {

namespace {

using MapMatrix = Eigen::Map<Matrix>;
using ConstMapMatrix = Eigen::Map<const Matrix>;

class InputSampler {
public:
    explicit InputSampler(const InputDistribution& dist) : dist_(dist) {
        if (dist.kind == InputDist::student_t && !(dist.df > 0.0)) {
            fail(ErrorKind::config, "df: student_t needs df > 0");
        }
    }

    double operator()(Rng& rng) {
        switch (dist_.kind) {
            case InputDist::gaussian: return normal_(rng);
            case InputDist::exponential_centered: return exponential_(rng) - 1.0;
            case InputDist::student_t: {
                std::student_t_distribution<double> t(dist_.df);
                return t(rng);
            }
            case InputDist::gumbel_centered: return gumbel_(rng) - std::numbers::egamma;
        }
        return 0.0;
    }

private:
    InputDistribution dist_;
    Normal normal_{0.0, 1.0};
    std::exponential_distribution<double> exponential_{1.0};
    std::extreme_value_distribution<double> gumbel_{0.0, 1.0};
};

// Fills Xt ((N D) x d) drawing sample n, column i, coordinate r in that order.
Matrix sample_packed_inputs(int d, int D, int N, const InputDistribution& dist, Rng& rng) {
    InputSampler draw(dist);
    Matrix Xt(static_cast<Eigen::Index>(N) * D, d);
    for (int n = 0; n < N; ++n) {
        for (int i = 0; i < D; ++i) {
            for (int r = 0; r < d; ++r) {
                Xt(static_cast<Eigen::Index>(n) * D + i, r) = draw(rng);
            }
        }
    }
    return Xt;
}

// Row m of W X_n for every n, as the D x (N M) label-layout matrix.
Matrix packed_projection(const Matrix& W, const Matrix& Xt, int N, int D) {
    Matrix proj = Xt * W.transpose();  // (N D) x M
    const auto M = W.rows();
    return ConstMapMatrix(proj.data(), D, static_cast<Eigen::Index>(N) * M);
}

void check_batch(const std::vector<Matrix>& X_batch, const std::vector<Matrix>& Y_batch) {
    if (X_batch.empty()) {
        fail(ErrorKind::dimension, "batch: empty");
    }
    if (X_batch.size() != Y_batch.size()) {
        fail(ErrorKind::dimension, "batch: X and Y counts differ");
    }
}

}  // namespace

InputDistribution parse_input_distribution(const std::string& name) {
    if (name == "gaussian") {
        return {InputDist::gaussian, 5.0};
    }
    if (name == "exponential_centered" || name == "exponential") {
        return {InputDist::exponential_centered, 5.0};
    }
    if (name == "gumbel_centered" || name == "gumbel") {
        return {InputDist::gumbel_centered, 5.0};
    }
    if (name.rfind("student_t", 0) == 0) {
        double df = 5.0;
        auto open = name.find('(');
        if (open != std::string::npos) {
            try {
                df = std::stod(name.substr(open + 1));
            } catch (const std::exception&) {
                fail(ErrorKind::config, "dist: bad student_t degrees of freedom");
            }
        }
        return {InputDist::student_t, df};
    }
    fail(ErrorKind::config, "dist: unknown input distribution '" + name + "'");
}

std::string input_distribution_name(const InputDistribution& dist) {
    switch (dist.kind) {
        case InputDist::gaussian: return "gaussian";
        case InputDist::exponential_centered: return "exponential_centered";
        case InputDist::student_t: return "student_t(" + format_real(dist.df) + ")";
        case InputDist::gumbel_centered: return "gumbel_centered";
    }
    return "gaussian";
}

std::vector<Matrix> sample_inputs(int d, int D, int N, const InputDistribution& dist, std::uint64_t seed) {
    if (d < 1 || D < 1 || N < 1) {
        fail(ErrorKind::dimension, "sample_inputs: d, D, N must be positive");
    }
    Rng rng(derive_seed(seed, Stream::inputs));
    Matrix Xt = sample_packed_inputs(d, D, N, dist, rng);
    std::vector<Matrix> out;
    out.reserve(N);
    for (int n = 0; n < N; ++n) {
        out.push_back(Xt.middleRows(static_cast<Eigen::Index>(n) * D, D).transpose());
    }
    return out;
}

PackedBatch pack_batch(const std::vector<Matrix>& X_batch, const std::vector<Matrix>& Y_batch) {
    check_batch(X_batch, Y_batch);
    PackedBatch b;
    b.N = static_cast<int>(X_batch.size());
    b.d = static_cast<int>(X_batch[0].rows());
    b.D = static_cast<int>(X_batch[0].cols());
    b.M = static_cast<int>(Y_batch[0].rows());
    b.Xt.resize(static_cast<Eigen::Index>(b.N) * b.D, b.d);
    b.Y.resize(b.D, static_cast<Eigen::Index>(b.N) * b.M);
    for (int n = 0; n < b.N; ++n) {
        require_shape(X_batch[n], b.d, b.D, "X");
        require_shape(Y_batch[n], b.M, b.D, "Y");
        b.Xt.middleRows(static_cast<Eigen::Index>(n) * b.D, b.D) = X_batch[n].transpose();
        for (int m = 0; m < b.M; ++m) {
            b.Y.col(static_cast<Eigen::Index>(m) * b.N + n) = Y_batch[n].row(m).transpose();
        }
    }
    return b;
}

Matrix packed_teacher_forward(const TeacherSpec& teacher, const Matrix& Xt, int N) {
    Matrix A = packed_projection(teacher.V_star, Xt, N, teacher.D());
    return apply_activation(teacher.S_star.transpose() * A, teacher.act);
}

Matrix packed_student_forward(const StudentParams& params, const Matrix& Xt, int N,
                              const ActivationKind& act) {
    const int D = static_cast<int>(params.W_KQ.rows());
    Matrix S = attention_scores(params.W_KQ, params.encoding.P);
    Matrix A = packed_projection(params.W_V, Xt, N, D);
    return apply_activation(S.transpose() * A, act);
}

PackedBatch sample_packed(const TeacherSpec& teacher, int N, const InputDistribution& dist,
                          double noise_scale, Rng& input_rng, Rng& noise_rng) {
    PackedBatch b;
    b.N = N;
    b.d = teacher.d();
    b.D = teacher.D();
    b.M = teacher.M();
    b.Xt = sample_packed_inputs(b.d, b.D, N, dist, input_rng);
    b.Y = packed_teacher_forward(teacher, b.Xt, N);
    if (noise_scale != 0.0) {
        b.Y += noise_scale * gaussian_matrix(static_cast<int>(b.Y.rows()), static_cast<int>(b.Y.cols()),
                                             noise_rng);
    }
    return b;
}

Gradients packed_gradients(const StudentParams& params, const ActivationKind& act,
                           const PackedBatch& batch) {
    const int D = batch.D, N = batch.N;
    require_shape(params.W_V, batch.M, batch.d, "W_V");
    require_shape(params.W_KQ, D, D, "W_KQ");
    const Matrix& P = params.encoding.P;
    const Matrix S = attention_scores(params.W_KQ, P);
    const Matrix A = packed_projection(params.W_V, batch.Xt, N, D);
    const Matrix U = S.transpose() * A;
    const Matrix R = apply_activation(U, act) - batch.Y;
    const Matrix G = R.cwiseProduct(activation_derivative(U, act));

    Gradients g;
    g.loss = 0.5 * R.squaredNorm() / N;

    const Matrix H = S * G;
    ConstMapMatrix H_rows(H.data(), static_cast<Eigen::Index>(N) * D, batch.M);
    g.G_V = (H_rows.transpose() * batch.Xt) / N;

    // dLoss/dS, then the column softmax Jacobian, then back through P^T W P / sqrt(D).
    const Matrix dS = (A * G.transpose()) / N;
    Matrix gL(D, D);
    for (int i = 0; i < D; ++i) {
        const double dot = S.col(i).dot(dS.col(i));
        gL.col(i) = S.col(i).cwiseProduct(dS.col(i).array().matrix() - Vector::Constant(D, dot));
    }
    g.G_KQ = P * gL * P.transpose() / std::sqrt(static_cast<double>(D));
    return g;
}

Gradients batch_gradients(const StudentParams& params, const ActivationKind& act,
                          const std::vector<Matrix>& X_batch, const std::vector<Matrix>& Y_batch) {
    return packed_gradients(params, act, pack_batch(X_batch, Y_batch));
}

double batch_loss(const StudentParams& params, const TeacherSpec& teacher,
                  const std::vector<Matrix>& X_batch, const std::vector<Matrix>& Y_batch) {
    check_batch(X_batch, Y_batch);
    validate_params(params, teacher);
    double total = 0.0;
    for (std::size_t n = 0; n < X_batch.size(); ++n) {
        require_shape(Y_batch[n], teacher.M(), teacher.D(), "Y");
        total += (Y_batch[n] - student_forward(params, X_batch[n], teacher.act)).squaredNorm();
    }
    return 0.5 * total / static_cast<double>(X_batch.size());
}

double excess_loss_on(const StudentParams& params, const TeacherSpec& teacher, const Matrix& Xt, int N) {
    Matrix diff = packed_teacher_forward(teacher, Xt, N) - packed_student_forward(params, Xt, N, teacher.act);
    return 0.5 * diff.squaredNorm() / N;
}

namespace {

// Mean and standard error of per-sample values stored as D x (N M) columns.
McResult per_sample_stats(const Matrix& per_entry, int N, int M) {
    Vector per_sample = Vector::Zero(N);
    for (int m = 0; m < M; ++m) {
        for (int n = 0; n < N; ++n) {
            per_sample(n) += per_entry.col(static_cast<Eigen::Index>(m) * N + n).sum();
        }
    }
    const double mean = per_sample.mean();
    double var = 0.0;
    if (N > 1) {
        var = (per_sample.array() - mean).square().sum() / (N - 1);
    }
    return {mean, std::sqrt(var / N)};
}

}  // namespace

McResult ood_excess_stats(const StudentParams& params, const TeacherSpec& teacher,
                          const InputDistribution& dist, int N, std::uint64_t seed, double noise_scale) {
    if (N < 1) {
        fail(ErrorKind::config, "ood_N: must be >= 1");
    }
    validate_params(params, teacher);
    Rng input_rng(derive_seed(seed, Stream::ood, 0));
    Rng noise_rng(derive_seed(seed, Stream::ood, 1));
    PackedBatch b = sample_packed(teacher, N, dist, noise_scale, input_rng, noise_rng);
    Matrix tf = packed_student_forward(params, b.Xt, N, teacher.act);
    Matrix fs = packed_teacher_forward(teacher, b.Xt, N);
    Matrix gap = 0.5 * ((b.Y - tf).array().square() - (b.Y - fs).array().square()).matrix();
    return per_sample_stats(gap, N, b.M);
}

double ood_excess_loss(const StudentParams& params, const TeacherSpec& teacher,
                       const InputDistribution& dist, int N, std::uint64_t seed, double noise_scale) {
    return ood_excess_stats(params, teacher, dist, N, seed, noise_scale).estimate;
}

Matrix worst_case_labels(const TeacherSpec& teacher, const StudentParams& params, const Matrix& X_tilde,
                         double c_prime, WorstCaseSign sign) {
    validate_params(params, teacher);
    require_shape(X_tilde, teacher.d(), teacher.D(), "X_tilde");
    if (c_prime < 0.0) {
        fail(ErrorKind::config, "c_prime: must be nonnegative");
    }
    const int D = teacher.D(), M = teacher.M();
    Matrix Y = teacher_forward(teacher, X_tilde);
    if (c_prime == 0.0) {
        return Y;
    }
    const Matrix proj = teacher.V_star * X_tilde;  // <v*_m, x_i>
    for (int i = 0; i < D; ++i) {
        std::vector<bool> on(D, false);
        for (int src : teacher.groups[i]) {
            on[src] = true;
        }
        for (int m = 0; m < M; ++m) {
            double on_sum = 0.0, off_sum = 0.0;
            for (int r = 0; r < D; ++r) {
                (on[r] ? on_sum : off_sum) += proj(m, r);
            }
            if (std::abs(off_sum) >= std::max(2.0 / c_prime * std::abs(on_sum), 1.0)) {
                double s = off_sum > 0.0 ? 1.0 : (off_sum < 0.0 ? -1.0 : 0.0);
                Y(m, i) += sign == WorstCaseSign::as_printed ? s : -s;
            }
        }
    }
    return Y;
}

McResult worst_case_gap(const StudentParams& params, const TeacherSpec& teacher,
                        const InputDistribution& dist, int N, std::uint64_t seed, double c_prime,
                        WorstCaseSign sign) {
    if (N < 2) {
        fail(ErrorKind::config, "N: worst-case gap needs at least 2 samples");
    }
    validate_params(params, teacher);
    std::vector<Matrix> Xs = sample_inputs(teacher.d(), teacher.D(), N, dist, derive_seed(seed, Stream::ood));
    const Matrix S = attention_scores(params.W_KQ, params.encoding.P);
    Vector gaps(N);
    for (int n = 0; n < N; ++n) {
        Matrix Y = worst_case_labels(teacher, params, Xs[n], c_prime, sign);
        Matrix tf = apply_activation(params.W_V * Xs[n] * S, teacher.act);
        Matrix fs = teacher_forward(teacher, Xs[n]);
        gaps(n) = 0.5 * ((Y - tf).squaredNorm() - (Y - fs).squaredNorm());
    }
    const double mean = gaps.mean();
    const double var = (gaps.array() - mean).square().sum() / (N - 1);
    return {mean, std::sqrt(var / N)};
}

ScalarEstimate extract_scalars(const StudentParams& params, const TeacherSpec& teacher) {
    validate_params(params, teacher);
    const double vv = teacher.V_star.squaredNorm();
    if (vv == 0.0) {
        fail(ErrorKind::domain, "V_star: zero norm");
    }
    ScalarEstimate est;
    est.C1_hat = params.W_V.cwiseProduct(teacher.V_star).sum() / vv;
    const double wn = params.W_V.norm();
    est.offpattern_V = wn > 0.0 ? (params.W_V - est.C1_hat * teacher.V_star).norm() / wn : 0.0;

    const Matrix S = attention_scores(params.W_KQ, params.encoding.P);
    est.p_hat = two_value_structure(S, teacher.groups).p_hat;

    // W_KQ in the P basis against its best two-value approximation.
    const Matrix coeff = params.encoding.P.transpose() * params.W_KQ * params.encoding.P;
    const TwoValueStats cs = two_value_structure(coeff, teacher.groups);
    const double cn = coeff.norm();
    if (cn > 0.0) {
        Matrix fitted = Matrix::Constant(coeff.rows(), coeff.cols(), cs.off_hat);
        for (int i = 0; i < teacher.D(); ++i) {
            for (int src : teacher.groups[i]) {
                fitted(src, i) = cs.p_hat;
            }
        }
        est.offpattern_KQ = (coeff - fitted).norm() / cn;
    }
    return est;
}

StudentParams structured_params(const TeacherSpec& teacher, const PositionalEncoding& encoding,
                                double C1, double C2, double C3) {
    require_shape(encoding.P, teacher.D(), teacher.D(), "P");
    return {C1 * teacher.V_star, structured_wkq(C2, C3, teacher.groups, encoding.P), encoding};
}

void validate_train_config(const TrainConfig& cfg) {
    if (!(cfg.eta >= 0.0) || !std::isfinite(cfg.eta)) {
        fail(ErrorKind::config, "eta: must be nonnegative and finite");
    }
    if (cfg.T < 1) {
        fail(ErrorKind::config, "steps: must be >= 1");
    }
    if (cfg.N < 1) {
        fail(ErrorKind::config, "batch: must be >= 1");
    }
    if (!(cfg.noise_scale >= 0.0)) {
        fail(ErrorKind::config, "noise: must be nonnegative");
    }
    if (cfg.eval_N < 1 || cfg.ood_N < 1) {
        fail(ErrorKind::config, "eval_N, ood_N: must be >= 1");
    }
    if (cfg.record.every < 0 || cfg.record.per_decade < 0) {
        fail(ErrorKind::config, "record: spacing must be nonnegative");
    }
}

TrainResult train(const TrainConfig& cfg, const TeacherSpec& teacher, const PositionalEncoding& encoding,
                  const StepObserver& observer) {
    validate_train_config(cfg);
    validate_teacher(teacher);
    TrainResult result;
    result.params = zero_params(teacher.M(), teacher.d(), encoding);
    validate_params(result.params, teacher);
    StudentParams& params = result.params;

    Rng input_rng(derive_seed(cfg.seed, Stream::inputs));
    Rng noise_rng(derive_seed(cfg.seed, Stream::noise));
    Rng eval_rng(derive_seed(cfg.seed, Stream::eval));
    const Matrix eval_Xt = sample_packed_inputs(teacher.d(), teacher.D(), cfg.eval_N, cfg.input_dist, eval_rng);

    double initial_loss = -1.0;
    for (long t = 1; t <= cfg.T; ++t) {
        PackedBatch batch = sample_packed(teacher, cfg.N, cfg.input_dist, cfg.noise_scale, input_rng, noise_rng);
        Gradients g = packed_gradients(params, teacher.act, batch);
        if (!std::isfinite(g.loss) || !g.G_V.allFinite() || !g.G_KQ.allFinite()) {
            fail(ErrorKind::numeric, "train: non-finite loss or gradient at step " + std::to_string(t));
        }
        if (initial_loss < 0.0) {
            initial_loss = g.loss;
        } else if (g.loss > 1e6 * std::max(initial_loss, 1e-300)) {
            fail(ErrorKind::numeric, "train: diverged at step " + std::to_string(t) + " (batch loss " +
                                         format_real(g.loss) + " vs initial " + format_real(initial_loss) + ")");
        }
        if (observer) {
            observer(t, params, g);
        }
        params.W_V -= cfg.eta * g.G_V;
        params.W_KQ -= cfg.eta * g.G_KQ;

        if (cfg.record.hit(t, cfg.T)) {
            TrajectoryRecord rec;
            rec.t = t;
            rec.batch_loss = g.loss;
            rec.excess_train_loss = excess_loss_on(params, teacher, eval_Xt, cfg.eval_N);
            rec.excess_ood_loss = ood_excess_loss(params, teacher, cfg.ood_dist, cfg.ood_N,
                                                  derive_seed(cfg.seed, Stream::ood, t), cfg.noise_scale);
            rec.cosine_sim = params.W_V.norm() > 0.0 ? cosine_similarity(params.W_V, teacher.V_star) : 0.0;
            const Matrix S = attention_scores(params.W_KQ, params.encoding.P);
            const TwoValueStats tv = two_value_structure(S, teacher.groups);
            rec.p_hat = tv.p_hat;
            rec.two_value_dev = tv.max_dev;
            rec.s_frob_gap = (S - teacher.S_star).norm();
            rec.max_abs_dev = (S - teacher.S_star).cwiseAbs().maxCoeff();
            const ScalarEstimate est = extract_scalars(params, teacher);
            rec.C1_hat = est.C1_hat;
            rec.wv_offpattern_ratio = est.offpattern_V;
            rec.kq_offpattern_ratio = est.offpattern_KQ;
            result.records.push_back(rec);
        }
    }
    return result;
}

FullGradients full_transformer_gradients(const FullTransformerParams& params, const ActivationKind& act,
                                         const std::vector<Matrix>& Z_batch,
                                         const std::vector<Matrix>& Y_batch) {
    check_batch(Z_batch, Y_batch);
    const auto rows = params.Wt_KQ.rows();
    FullGradients g;
    g.G_V = Matrix::Zero(params.Wt_V.rows(), params.Wt_V.cols());
    g.G_KQ = Matrix::Zero(rows, rows);
    const int N = static_cast<int>(Z_batch.size());
    for (int n = 0; n < N; ++n) {
        const Matrix& Z = Z_batch[n];
        require_shape(Z, rows, Z.cols(), "Z");
        const auto D = Z.cols();
        const double scale = 1.0 / std::sqrt(static_cast<double>(D));
        const Matrix S = column_softmax(scale * (Z.transpose() * params.Wt_KQ * Z));
        const Matrix B = params.Wt_V * Z;
        const Matrix U = B * S;
        const Matrix R = apply_activation(U, act) - Y_batch[n];
        const Matrix G = R.cwiseProduct(activation_derivative(U, act));
        g.loss += 0.5 * R.squaredNorm();
        g.G_V += G * S.transpose() * Z.transpose();
        const Matrix dS = B.transpose() * G;
        Matrix gL(D, D);
        for (Eigen::Index i = 0; i < D; ++i) {
            const double dot = S.col(i).dot(dS.col(i));
            gL.col(i) = S.col(i).cwiseProduct(dS.col(i) - Vector::Constant(D, dot));
        }
        g.G_KQ += scale * Z * gL * Z.transpose();
    }
    g.G_V /= N;
    g.G_KQ /= N;
    g.loss /= N;
    return g;
}

FullTrainResult train_full_transformer(const TrainConfig& cfg, const TeacherSpec& teacher,
                                       const PositionalEncoding& encoding, double init_scale) {
    validate_train_config(cfg);
    const int d = teacher.d(), D = teacher.D(), M = teacher.M();
    require_shape(encoding.P, D, D, "P");
    FullTrainResult out;
    Rng init_rng(derive_seed(cfg.seed, Stream::encoding, 1));
    out.params.Wt_V = init_scale * gaussian_matrix(M, d + D, init_rng);
    out.params.Wt_KQ = init_scale * gaussian_matrix(d + D, d + D, init_rng);
    LabelModel labels{teacher, cfg.noise_scale, NoiseDist::gaussian};
    Rng input_rng(derive_seed(cfg.seed, Stream::inputs));
    Rng noise_rng(derive_seed(cfg.seed, Stream::noise));
    InputSampler draw(cfg.input_dist);
    for (long t = 1; t <= cfg.T; ++t) {
        std::vector<Matrix> Zs, Ys;
        Zs.reserve(cfg.N);
        Ys.reserve(cfg.N);
        for (int n = 0; n < cfg.N; ++n) {
            Matrix X(d, D);
            for (int i = 0; i < D; ++i) {
                for (int r = 0; r < d; ++r) {
                    X(r, i) = draw(input_rng);
                }
            }
            Ys.push_back(sample_labels(labels, X, noise_rng));
            Zs.push_back(stack_inputs(X, encoding.P));
        }
        FullGradients g = full_transformer_gradients(out.params, teacher.act, Zs, Ys);
        if (!std::isfinite(g.loss)) {
            fail(ErrorKind::numeric, "full transformer: non-finite loss at step " + std::to_string(t));
        }
        out.losses.push_back(g.loss);
        out.params.Wt_V -= cfg.eta * g.G_V;
        out.params.Wt_KQ -= cfg.eta * g.G_KQ;
    }
    return out;
}

}  // namespace posattn
