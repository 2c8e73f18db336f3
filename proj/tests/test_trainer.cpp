#include "posattn/analysis.hpp"
#include "posattn/cli.hpp"
#include "posattn/trainer.hpp"

#include <doctest.h>

#include <cmath>

using namespace posattn;

namespace {

struct Problem {
    TeacherSpec teacher;
    StudentParams params;
    std::vector<Matrix> X, Y;
};

Problem random_problem(TeacherFamily family, const ActivationKind& act, std::uint64_t seed) {
    const int D = 8, d = family == TeacherFamily::sts ? 3 : 6;
    const int K = family == TeacherFamily::gcn ? 3 : (family == TeacherFamily::gslp ? 1 : 2);
    const int M = family == TeacherFamily::sts ? 3 : (family == TeacherFamily::gslp ? 1 : 3);
    Problem pr;
    pr.teacher = experiment_teacher(family, act, d, D, K, M, seed);
    auto enc = make_positional_encoding(D, EncodingScheme::random_orthogonal, seed + 1);
    Rng rng(seed + 2);
    pr.params = {0.7 * gaussian_matrix(M, d, rng), gaussian_matrix(D, D, rng), enc};
    pr.X = sample_inputs(d, D, 5, InputDistribution{}, seed + 3);
    LabelModel labels{pr.teacher, 0.5, NoiseDist::gaussian};
    for (const auto& x : pr.X) {
        pr.Y.push_back(sample_labels(labels, x, rng));
    }
    return pr;
}

double min_abs_preactivation(const Problem& pr) {
    const Matrix S = attention_scores(pr.params.W_KQ, pr.params.encoding.P);
    double m = INFINITY;
    for (const auto& x : pr.X) {
        m = std::min(m, (pr.params.W_V * x * S).cwiseAbs().minCoeff());
    }
    return m;
}

double relative_error(const Matrix& a, const Matrix& b) {
    return (a - b).norm() / std::max(b.norm(), 1e-12);
}

}  // namespace

TEST_CASE("batch gradients match central finite differences") {
    const TeacherFamily families[] = {TeacherFamily::cnn, TeacherFamily::gcn, TeacherFamily::sts, TeacherFamily::gslp};
    const ActivationKind acts[] = {ActivationKind::identity(), ActivationKind::relu(), ActivationKind::leaky(0.2)};
    int configs = 0;
    std::uint64_t seed = 1000;
    for (int round = 0; configs < 20; ++round) {
        const TeacherFamily family = families[round % 4];
        const ActivationKind act = acts[(round / 4) % 3];
        Problem pr = random_problem(family, act, seed += 10);
        if (act.kind == Activation::relu && min_abs_preactivation(pr) < 1e-3) {
            continue;
        }
        ++configs;
        Gradients g = batch_gradients(pr.params, act, pr.X, pr.Y);
        CHECK(g.loss == doctest::Approx(batch_loss(pr.params, pr.teacher, pr.X, pr.Y)).epsilon(1e-13));

        const double h = 1e-6;
        Matrix fd_V(g.G_V.rows(), g.G_V.cols()), fd_KQ(g.G_KQ.rows(), g.G_KQ.cols());
        for (Eigen::Index k = 0; k < fd_V.size(); ++k) {
            StudentParams up = pr.params, down = pr.params;
            up.W_V.data()[k] += h;
            down.W_V.data()[k] -= h;
            fd_V.data()[k] =
                (batch_loss(up, pr.teacher, pr.X, pr.Y) - batch_loss(down, pr.teacher, pr.X, pr.Y)) / (2 * h);
        }
        for (Eigen::Index k = 0; k < fd_KQ.size(); ++k) {
            StudentParams up = pr.params, down = pr.params;
            up.W_KQ.data()[k] += h;
            down.W_KQ.data()[k] -= h;
            fd_KQ.data()[k] =
                (batch_loss(up, pr.teacher, pr.X, pr.Y) - batch_loss(down, pr.teacher, pr.X, pr.Y)) / (2 * h);
        }
        INFO(teacher_family_name(family), " ", act.name());
        CHECK(relative_error(g.G_V, fd_V) <= 1e-5);
        CHECK(relative_error(g.G_KQ, fd_KQ) <= 1e-5);
    }
}

TEST_CASE("full transformer gradients match finite differences") {
    auto teacher = experiment_teacher(TeacherFamily::cnn, ActivationKind::leaky(0.2), 3, 6, 2, 2, 4);
    auto enc = make_positional_encoding(6, EncodingScheme::random_orthogonal, 5);
    Rng rng(6);
    FullTransformerParams params{0.5 * gaussian_matrix(2, 9, rng), 0.3 * gaussian_matrix(9, 9, rng)};
    std::vector<Matrix> Z, Y;
    for (const auto& x : sample_inputs(3, 6, 4, InputDistribution{}, 7)) {
        Z.push_back(stack_inputs(x, enc.P));
        Y.push_back(teacher_forward(teacher, x) + 0.3 * gaussian_matrix(2, 6, rng));
    }
    auto loss = [&](const FullTransformerParams& p) {
        double s = 0.0;
        for (std::size_t n = 0; n < Z.size(); ++n) {
            s += (Y[n] - full_transformer_forward(Z[n], p.Wt_V, p.Wt_KQ, teacher.act)).squaredNorm();
        }
        return 0.5 * s / Z.size();
    };
    FullGradients g = full_transformer_gradients(params, teacher.act, Z, Y);
    CHECK(g.loss == doctest::Approx(loss(params)).epsilon(1e-13));
    const double h = 1e-6;
    Matrix fd_V(g.G_V.rows(), g.G_V.cols()), fd_KQ(g.G_KQ.rows(), g.G_KQ.cols());
    for (Eigen::Index k = 0; k < fd_V.size(); ++k) {
        auto up = params, down = params;
        up.Wt_V.data()[k] += h;
        down.Wt_V.data()[k] -= h;
        fd_V.data()[k] = (loss(up) - loss(down)) / (2 * h);
    }
    for (Eigen::Index k = 0; k < fd_KQ.size(); ++k) {
        auto up = params, down = params;
        up.Wt_KQ.data()[k] += h;
        down.Wt_KQ.data()[k] -= h;
        fd_KQ.data()[k] = (loss(up) - loss(down)) / (2 * h);
    }
    CHECK(relative_error(g.G_V, fd_V) <= 1e-5);
    CHECK(relative_error(g.G_KQ, fd_KQ) <= 1e-5);
}

TEST_CASE("packed forward agrees with per-sample forward") {
    Problem pr = random_problem(TeacherFamily::gcn, ActivationKind::relu(), 5);
    PackedBatch b = pack_batch(pr.X, pr.Y);
    Matrix packed = packed_student_forward(pr.params, b.Xt, b.N, pr.teacher.act);
    Matrix teacher_packed = packed_teacher_forward(pr.teacher, b.Xt, b.N);
    for (int n = 0; n < b.N; ++n) {
        Matrix tf = student_forward(pr.params, pr.X[n], pr.teacher.act);
        Matrix fs = teacher_forward(pr.teacher, pr.X[n]);
        for (int m = 0; m < b.M; ++m) {
            CHECK((packed.col(m * b.N + n) - tf.row(m).transpose()).norm() < 1e-12);
            CHECK((teacher_packed.col(m * b.N + n) - fs.row(m).transpose()).norm() < 1e-12);
            CHECK((b.Y.col(m * b.N + n) - pr.Y[n].row(m).transpose()).norm() == 0.0);
        }
    }
}

TEST_CASE("input distributions are centered with unit scale") {
    for (const char* name : {"gaussian", "exponential_centered", "gumbel_centered", "student_t(5)"}) {
        auto dist = parse_input_distribution(name);
        auto xs = sample_inputs(4, 10, 5000, dist, 3);
        double sum = 0.0, sq = 0.0;
        for (const auto& x : xs) {
            sum += x.sum();
            sq += x.squaredNorm();
        }
        const double n = 4.0 * 10 * 5000;
        INFO(name);
        CHECK(std::abs(sum / n) < 0.02);
        CHECK(sq / n > 0.9);
        CHECK(input_distribution_name(dist) == name);
    }
    CHECK_THROWS_AS(parse_input_distribution("cauchy"), Error);
}

TEST_CASE("exact teacher parameters are a fixed point without noise") {
    // With D = K the teacher scores are uniform, which W_KQ = 0 reproduces exactly.
    const int D = 6;
    Groups all(D);
    for (auto& g : all) {
        for (int r = 0; r < D; ++r) g.push_back(r);
    }
    auto teacher = cnn_pooling_teacher(3, D, D, {all[0]}, unit_row_matrix(2, 3, 1), ActivationKind::relu());
    auto enc = make_positional_encoding(D, EncodingScheme::random_orthogonal, 2);
    StudentParams params{teacher.V_star, Matrix::Zero(D, D), enc};
    Rng in(3), noise(4);
    PackedBatch b = sample_packed(teacher, 50, InputDistribution{}, 0.0, in, noise);
    Gradients g = packed_gradients(params, teacher.act, b);
    CHECK(g.G_V.norm() < 1e-10);
    CHECK(g.G_KQ.norm() < 1e-10);
    CHECK(g.loss < 1e-25);
}

TEST_CASE("training is deterministic and records trajectories") {
    auto teacher = experiment_teacher(TeacherFamily::sts, ActivationKind::identity(), 2, 10, 3, 2, 9);
    auto enc = make_positional_encoding(10, EncodingScheme::random_orthogonal, 9);
    TrainConfig cfg;
    cfg.eta = 0.1;
    cfg.T = 300;
    cfg.N = 20;
    cfg.eval_N = 50;
    cfg.ood_N = 20;
    cfg.record = {0, 10};
    TrainResult a = train(cfg, teacher, enc);
    TrainResult b = train(cfg, teacher, enc);
    CHECK((a.params.W_V - b.params.W_V).norm() == 0.0);
    CHECK((a.params.W_KQ - b.params.W_KQ).norm() == 0.0);
    REQUIRE(a.records.size() >= 20);
    CHECK(a.records.front().t == 1);
    CHECK(a.records.back().t == 300);
    CHECK(a.records.back().excess_train_loss < a.records.front().excess_train_loss);
    CHECK(a.records.back().cosine_sim > 0.9);

    long calls = 0;
    train(cfg, teacher, enc, [&](long t, const StudentParams&, const Gradients&) { calls += t > 0; });
    CHECK(calls == 300);
}

TEST_CASE("divergent training aborts with a numeric error") {
    auto teacher = experiment_teacher(TeacherFamily::cnn, ActivationKind::identity(), 4, 12, 3, 4, 1);
    auto enc = make_positional_encoding(12, EncodingScheme::identity, 0);
    TrainConfig cfg;
    cfg.eta = 50.0;
    cfg.T = 200;
    cfg.N = 10;
    try {
        train(cfg, teacher, enc);
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::numeric);
    }
    cfg.T = 0;
    CHECK_THROWS_AS(validate_train_config(cfg), Error);
}

TEST_CASE("extracted scalars recover structured parameters") {
    auto teacher = experiment_teacher(TeacherFamily::gcn, ActivationKind::relu(), 4, 12, 3, 3, 2);
    auto enc = make_positional_encoding(12, EncodingScheme::random_orthogonal, 3);
    StudentParams params = structured_params(teacher, enc, 0.7, 4.0, 1.5);
    ScalarEstimate est = extract_scalars(params, teacher);
    CHECK(est.C1_hat == doctest::Approx(0.7));
    CHECK(est.p_hat == doctest::Approx(p_from_c(4.0, 1.5, 12, 3)));
    CHECK(est.offpattern_V < 1e-12);
    CHECK(est.offpattern_KQ < 1e-12);

    // Perturbation orthogonal to V*.
    Rng rng(4);
    Matrix U = gaussian_matrix(3, 4, rng);
    U -= (U.cwiseProduct(teacher.V_star).sum() / teacher.V_star.squaredNorm()) * teacher.V_star;
    params.W_V = teacher.V_star + 0.1 * U;
    est = extract_scalars(params, teacher);
    CHECK(est.C1_hat == doctest::Approx(1.0));
    CHECK(est.offpattern_V == doctest::Approx(0.1 * U.norm() / params.W_V.norm()));

    teacher.V_star.setZero();
    CHECK_THROWS_AS(extract_scalars(params, teacher), Error);
}

TEST_CASE("worst-case labels") {
    auto teacher = experiment_teacher(TeacherFamily::cnn, ActivationKind::relu(), 3, 12, 3, 2, 5);
    auto enc = make_positional_encoding(12, EncodingScheme::identity, 0);
    StudentParams params = zero_params(2, 3, enc);
    Rng rng(1);
    Matrix X = gaussian_matrix(3, 12, rng);
    CHECK((worst_case_labels(teacher, params, X, 0.0) - teacher_forward(teacher, X)).norm() == 0.0);
    CHECK((worst_case_labels(teacher, params, X, 1e-12) - teacher_forward(teacher, X)).norm() == 0.0);

    Matrix shifted = worst_case_labels(teacher, params, X, 100.0);
    Matrix printed = worst_case_labels(teacher, params, X, 100.0, WorstCaseSign::as_printed);
    Matrix base = teacher_forward(teacher, X);
    CHECK((shifted - base + printed - base).norm() < 1e-12);
    CHECK((shifted - base).cwiseAbs().maxCoeff() <= 1.0);
}

TEST_CASE("OOD excess loss vanishes for the teacher itself") {
    const int D = 5;
    Groups all(D);
    for (auto& g : all) {
        for (int r = 0; r < D; ++r) g.push_back(r);
    }
    auto teacher = cnn_pooling_teacher(2, D, D, {all[0]}, unit_row_matrix(1, 2, 1), ActivationKind::identity());
    auto enc = make_positional_encoding(D, EncodingScheme::identity, 0);
    StudentParams exact{teacher.V_star, Matrix::Zero(D, D), enc};
    McResult r = ood_excess_stats(exact, teacher, parse_input_distribution("exponential_centered"), 200, 3, 1.0);
    CHECK(std::abs(r.estimate) < 1e-12);
    StudentParams off{0.5 * teacher.V_star, Matrix::Zero(D, D), enc};
    CHECK(ood_excess_stats(off, teacher, parse_input_distribution("gaussian"), 2000, 3, 1.0).estimate > 0.0);
}
