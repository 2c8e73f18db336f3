#pragma once

#include "posattn/core.hpp"

#include <string>
#include <vector>

namespace posattn {

// Position indices are 0-based throughout the library.
using Groups = std::vector<std::vector<int>>;

struct TeacherSpec {
    Matrix V_star;  // M x d
    Matrix S_star;  // D x D, column-stochastic with K entries 1/K per column
    ActivationKind act;
    int K = 1;
    Groups groups;  // groups[i] = sorted rows i' with S_star(i', i) = 1/K

    int M() const { return static_cast<int>(V_star.rows()); }
    int d() const { return static_cast<int>(V_star.cols()); }
    int D() const { return static_cast<int>(S_star.rows()); }
};

void validate_teacher(const TeacherSpec& spec);

// Recovers the groups from S_star and checks the 0 / 1/K pattern.
Groups groups_from_scores(const Matrix& S_star, int K);

TeacherSpec cnn_pooling_teacher(int d, int D, int K, const Groups& partition, const Matrix& V_star,
                                const ActivationKind& act);
Groups contiguous_partition(int D, int K);

TeacherSpec gcn_regular_teacher(int d, int D, const Matrix& adjacency, const Matrix& V_star,
                                const ActivationKind& act);
Matrix cycle_adjacency(int D);

TeacherSpec sts_teacher(int d, int D, const std::vector<int>& g, const ActivationKind& act);
std::vector<int> random_subset(int D, int K, std::uint64_t seed);

TeacherSpec gslp_teacher(int d, int D, int i_star, const Vector& v_star, const ActivationKind& act);

// M x d matrix with i.i.d. Gaussian rows normalised to unit length.
Matrix unit_row_matrix(int M, int d, std::uint64_t seed);

Matrix teacher_forward(const TeacherSpec& spec, const Matrix& X);

enum class NoiseDist { gaussian, none };

struct LabelModel {
    TeacherSpec teacher;
    double noise_scale = 1.0;
    NoiseDist noise_dist = NoiseDist::gaussian;
};

Matrix sample_labels(const LabelModel& model, const Matrix& X, std::uint64_t seed);
Matrix sample_labels(const LabelModel& model, const Matrix& X, Rng& rng);

// Text format: header "M d D K act kappa", then M rows of V*, then D rows of S*.
void save_teacher(const TeacherSpec& spec, const std::string& path);
TeacherSpec load_teacher(const std::string& path);
std::string teacher_to_text(const TeacherSpec& spec);
TeacherSpec teacher_from_text(const std::string& text);

}  // namespace posattn
