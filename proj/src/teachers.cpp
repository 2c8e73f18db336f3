#include "posattn/teachers.hpp"

#include "posattn/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace posattn {

namespace {

void require_square(const Matrix& S, int D, const char* what) {
    require_shape(S, D, D, what);
}

Matrix scores_from_groups(int D, int K, const Groups& groups) {
    Matrix S = Matrix::Zero(D, D);
    for (int i = 0; i < D; ++i) {
        for (int src : groups[i]) {
            S(src, i) = 1.0 / K;
        }
    }
    return S;
}

TeacherSpec finish(Matrix V_star, Matrix S_star, const ActivationKind& act, int K, Groups groups) {
    TeacherSpec spec{std::move(V_star), std::move(S_star), act, K, std::move(groups)};
    validate_teacher(spec);
    return spec;
}

}  // namespace

Groups groups_from_scores(const Matrix& S_star, int K) {
    if (S_star.rows() != S_star.cols()) {
        fail(ErrorKind::dimension, "S_star: must be square");
    }
    const int D = static_cast<int>(S_star.rows());
    if (K < 1 || K > D) {
        fail(ErrorKind::validation, "K: must satisfy 1 <= K <= D");
    }
    const double w = 1.0 / K;
    Groups groups(D);
    for (int i = 0; i < D; ++i) {
        for (int r = 0; r < D; ++r) {
            double v = S_star(r, i);
            if (v == w) {
                groups[i].push_back(r);
            } else if (v != 0.0) {
                fail(ErrorKind::validation, "S_star: entry (" + std::to_string(r) + "," +
                                                std::to_string(i) + ") is neither 0 nor 1/K");
            }
        }
        if (static_cast<int>(groups[i].size()) != K) {
            fail(ErrorKind::validation,
                 "S_star: column " + std::to_string(i) + " does not have exactly K nonzeros");
        }
    }
    return groups;
}

void validate_teacher(const TeacherSpec& spec) {
    validate_activation(spec.act);
    const int D = spec.D();
    require_square(spec.S_star, D, "S_star");
    if (spec.V_star.rows() < 1 || spec.V_star.cols() < 1) {
        fail(ErrorKind::dimension, "V_star: must be nonempty");
    }
    require_finite(spec.V_star, "V_star");
    Groups g = groups_from_scores(spec.S_star, spec.K);
    if (static_cast<int>(spec.groups.size()) != D) {
        fail(ErrorKind::validation, "groups: need one group per column");
    }
    for (int i = 0; i < D; ++i) {
        std::vector<int> sorted = spec.groups[i];
        std::sort(sorted.begin(), sorted.end());
        if (sorted != g[i]) {
            fail(ErrorKind::validation,
                 "groups: column " + std::to_string(i) + " inconsistent with S_star");
        }
    }
    for (int i = 0; i < D; ++i) {
        double s = spec.S_star.col(i).sum();
        if (std::abs(s - 1.0) > 1e-12) {
            fail(ErrorKind::validation, "S_star: column " + std::to_string(i) + " does not sum to 1");
        }
    }
}

Groups contiguous_partition(int D, int K) {
    if (K < 1 || D % K != 0) {
        fail(ErrorKind::validation, "K: contiguous partition needs K dividing D");
    }
    Groups parts(D / K);
    for (int j = 0; j < D / K; ++j) {
        for (int r = 0; r < K; ++r) {
            parts[j].push_back(j * K + r);
        }
    }
    return parts;
}

TeacherSpec cnn_pooling_teacher(int d, int D, int K, const Groups& partition, const Matrix& V_star,
                                const ActivationKind& act) {
    require_shape(V_star, V_star.rows(), d, "V_star");
    if (D < 1 || K < 1 || K > D) {
        fail(ErrorKind::validation, "K: must satisfy 1 <= K <= D");
    }
    std::vector<int> owner(D, -1);
    for (std::size_t j = 0; j < partition.size(); ++j) {
        if (static_cast<int>(partition[j].size()) != K) {
            fail(ErrorKind::validation, "partition: group " + std::to_string(j) + " has size != K");
        }
        for (int idx : partition[j]) {
            if (idx < 0 || idx >= D) {
                fail(ErrorKind::validation, "partition: index " + std::to_string(idx) + " out of range");
            }
            if (owner[idx] != -1) {
                fail(ErrorKind::validation, "partition: index " + std::to_string(idx) + " overlaps");
            }
            owner[idx] = static_cast<int>(j);
        }
    }
    for (int i = 0; i < D; ++i) {
        if (owner[i] == -1) {
            fail(ErrorKind::validation, "partition: index " + std::to_string(i) + " not covered");
        }
    }
    Groups groups(D);
    for (int i = 0; i < D; ++i) {
        groups[i] = partition[owner[i]];
        std::sort(groups[i].begin(), groups[i].end());
    }
    Matrix S = scores_from_groups(D, K, groups);
    return finish(V_star, std::move(S), act, K, std::move(groups));
}

Matrix cycle_adjacency(int D) {
    if (D < 3) {
        fail(ErrorKind::validation, "D: cycle graph needs D >= 3");
    }
    Matrix A = Matrix::Zero(D, D);
    for (int i = 0; i < D; ++i) {
        A(i, (i + 1) % D) = 1.0;
        A((i + 1) % D, i) = 1.0;
    }
    return A;
}

TeacherSpec gcn_regular_teacher(int d, int D, const Matrix& adjacency, const Matrix& V_star,
                                const ActivationKind& act) {
    require_shape(V_star, V_star.rows(), d, "V_star");
    require_square(adjacency, D, "adjacency");
    int degree = -1;
    for (int i = 0; i < D; ++i) {
        if (adjacency(i, i) != 0.0) {
            fail(ErrorKind::validation, "adjacency: node " + std::to_string(i) + " has a self loop");
        }
        int row = 0;
        for (int j = 0; j < D; ++j) {
            double a = adjacency(i, j);
            if (a != 0.0 && a != 1.0) {
                fail(ErrorKind::validation, "adjacency: entries must be 0 or 1");
            }
            if (a != adjacency(j, i)) {
                fail(ErrorKind::validation, "adjacency: not symmetric at node " + std::to_string(i));
            }
            row += static_cast<int>(a);
        }
        if (degree == -1) {
            degree = row;
        } else if (row != degree) {
            fail(ErrorKind::validation, "adjacency: graph not regular at node " + std::to_string(i));
        }
    }
    const int K = degree + 1;
    Groups groups(D);
    for (int i = 0; i < D; ++i) {
        for (int j = 0; j < D; ++j) {
            if (j == i || adjacency(j, i) != 0.0) {
                groups[i].push_back(j);
            }
        }
    }
    Matrix S = scores_from_groups(D, K, groups);
    return finish(V_star, std::move(S), act, K, std::move(groups));
}

TeacherSpec sts_teacher(int d, int D, const std::vector<int>& g, const ActivationKind& act) {
    const int K = static_cast<int>(g.size());
    if (K < 1 || K > D) {
        fail(ErrorKind::index, "g: need 1 <= |g| <= D");
    }
    std::vector<int> sorted = g;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t j = 0; j < sorted.size(); ++j) {
        if (sorted[j] < 0 || sorted[j] >= D) {
            fail(ErrorKind::index, "g: index " + std::to_string(sorted[j]) + " out of range");
        }
        if (j > 0 && sorted[j] == sorted[j - 1]) {
            fail(ErrorKind::index, "g: duplicate index " + std::to_string(sorted[j]));
        }
    }
    Groups groups(D, sorted);
    Matrix S = scores_from_groups(D, K, groups);
    return finish(Matrix::Identity(d, d), std::move(S), act, K, std::move(groups));
}

std::vector<int> random_subset(int D, int K, std::uint64_t seed) {
    if (K < 1 || K > D) {
        fail(ErrorKind::index, "K: need 1 <= K <= D");
    }
    std::vector<int> idx(D);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, Stream::teacher));
    for (int j = 0; j < K; ++j) {
        std::uniform_int_distribution<int> pick(j, D - 1);
        std::swap(idx[j], idx[pick(rng)]);
    }
    idx.resize(K);
    std::sort(idx.begin(), idx.end());
    return idx;
}

TeacherSpec gslp_teacher(int d, int D, int i_star, const Vector& v_star, const ActivationKind& act) {
    if (i_star < 0 || i_star >= D) {
        fail(ErrorKind::index, "i_star: " + std::to_string(i_star) + " out of range");
    }
    if (v_star.size() != d) {
        fail(ErrorKind::dimension, "v_star: expected length " + std::to_string(d));
    }
    Groups groups(D, std::vector<int>{i_star});
    Matrix S = scores_from_groups(D, 1, groups);
    return finish(v_star.transpose(), std::move(S), act, 1, std::move(groups));
}

Matrix unit_row_matrix(int M, int d, std::uint64_t seed) {
    if (M < 1 || d < 1) {
        fail(ErrorKind::dimension, "M, d: must be positive");
    }
    Rng rng(derive_seed(seed, Stream::teacher, 1));
    Matrix V = gaussian_matrix(M, d, rng);
    for (int m = 0; m < M; ++m) {
        V.row(m).normalize();
    }
    return V;
}

Matrix teacher_forward(const TeacherSpec& spec, const Matrix& X) {
    require_shape(X, spec.d(), spec.D(), "X");
    return apply_activation(spec.V_star * X * spec.S_star, spec.act);
}

Matrix sample_labels(const LabelModel& model, const Matrix& X, Rng& rng) {
    Matrix Y = teacher_forward(model.teacher, X);
    if (model.noise_dist == NoiseDist::none || model.noise_scale == 0.0) {
        return Y;
    }
    if (model.noise_scale < 0.0) {
        fail(ErrorKind::domain, "noise: scale must be nonnegative");
    }
    return Y + model.noise_scale * gaussian_matrix(static_cast<int>(Y.rows()),
                                                   static_cast<int>(Y.cols()), rng);
}

Matrix sample_labels(const LabelModel& model, const Matrix& X, std::uint64_t seed) {
    Rng rng(derive_seed(seed, Stream::noise));
    return sample_labels(model, X, rng);
}

std::string teacher_to_text(const TeacherSpec& spec) {
    std::ostringstream out;
    out << spec.M() << ' ' << spec.d() << ' ' << spec.D() << ' ' << spec.K << ' ' << spec.act.name()
        << ' ' << format_real(spec.act.kappa) << '\n';
    auto rows = [&out](const Matrix& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                out << (j ? " " : "") << format_real(m(i, j));
            }
            out << '\n';
        }
    };
    rows(spec.V_star);
    rows(spec.S_star);
    return out.str();
}

TeacherSpec teacher_from_text(const std::string& text) {
    std::istringstream in(text);
    int M = 0, d = 0, D = 0, K = 0;
    std::string act_name;
    double kappa = 0.0;
    if (!(in >> M >> d >> D >> K >> act_name >> kappa)) {
        fail(ErrorKind::validation, "teacher file: malformed header");
    }
    if (M < 1 || d < 1 || D < 1 || K < 1) {
        fail(ErrorKind::validation, "teacher file: dimensions must be positive");
    }
    ActivationKind act = parse_activation(act_name, kappa);
    auto read = [&in](int r, int c, const char* what) {
        Matrix m(r, c);
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
                if (!(in >> m(i, j))) {
                    fail(ErrorKind::validation, std::string("teacher file: truncated ") + what);
                }
            }
        }
        return m;
    };
    Matrix V = read(M, d, "V*");
    Matrix S = read(D, D, "S*");
    Groups groups = groups_from_scores(S, K);
    return finish(std::move(V), std::move(S), act, K, std::move(groups));
}

void save_teacher(const TeacherSpec& spec, const std::string& path) {
    write_file_atomic(path, teacher_to_text(spec));
}

TeacherSpec load_teacher(const std::string& path) {
    return teacher_from_text(read_file(path));
}

}  // namespace posattn
