#pragma once

#include "posattn/attention.hpp"
#include "posattn/io.hpp"
#include "posattn/teachers.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace posattn {

inline constexpr const char* library_version = "0.1.0";

enum class TeacherFamily { cnn, gcn, sts, gslp };

TeacherFamily parse_teacher_family(const std::string& name);
std::string teacher_family_name(TeacherFamily family);

// Teachers as used in the synthetic experiments. Contiguous pooling groups for
// cnn, the cycle graph for gcn (K = 3), a random K-subset for sts (M = d) and a
// random relevant group for gslp (K = M = 1). Random draws use the teacher stream.
TeacherSpec experiment_teacher(TeacherFamily family, const ActivationKind& act, int d, int D, int K, int M,
                               std::uint64_t seed);

std::string params_to_text(const StudentParams& params);
StudentParams params_from_text(const std::string& text);

// Exit code 0 on success, 1 on a validation or usage error, 2 on a numeric abort.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace posattn
