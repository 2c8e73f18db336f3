#include "posattn/cli.hpp"

#include "posattn/analysis.hpp"
#include "posattn/dynamics.hpp"
#include "posattn/expectations.hpp"
#include "posattn/trainer.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>

namespace posattn {

TeacherFamily parse_teacher_family(const std::string& name) {
    if (name == "cnn") return TeacherFamily::cnn;
    if (name == "gcn") return TeacherFamily::gcn;
    if (name == "sts") return TeacherFamily::sts;
    if (name == "gslp") return TeacherFamily::gslp;
    fail(ErrorKind::validation, "teacher: expected cnn, gcn, sts or gslp, got '" + name + "'");
}

std::string teacher_family_name(TeacherFamily family) {
    switch (family) {
        case TeacherFamily::cnn: return "cnn";
        case TeacherFamily::gcn: return "gcn";
        case TeacherFamily::sts: return "sts";
        case TeacherFamily::gslp: return "gslp";
    }
    return "cnn";
}

TeacherSpec experiment_teacher(TeacherFamily family, const ActivationKind& act, int d, int D, int K, int M,
                               std::uint64_t seed) {
    if (d < 1) fail(ErrorKind::validation, "d: must be >= 1");
    if (D < 1) fail(ErrorKind::validation, "D: must be >= 1");
    if (K < 1 || K > D) fail(ErrorKind::validation, "K: must satisfy 1 <= K <= D");
    switch (family) {
        case TeacherFamily::cnn:
            if (D % K != 0) fail(ErrorKind::validation, "K: cnn pooling needs K to divide D");
            return cnn_pooling_teacher(d, D, K, contiguous_partition(D, K), unit_row_matrix(M, d, seed), act);
        case TeacherFamily::gcn:
            if (K != 3) fail(ErrorKind::validation, "K: the gcn cycle teacher has K = 3");
            if (D < 3) fail(ErrorKind::validation, "D: the gcn cycle teacher needs D >= 3");
            return gcn_regular_teacher(d, D, cycle_adjacency(D), unit_row_matrix(M, d, seed), act);
        case TeacherFamily::sts:
            if (M != d) fail(ErrorKind::validation, "M: the sts teacher has M = d");
            return sts_teacher(d, D, random_subset(D, K, seed), act);
        case TeacherFamily::gslp: {
            if (K != 1) fail(ErrorKind::validation, "K: the gslp teacher has K = 1");
            if (M != 1) fail(ErrorKind::validation, "M: the gslp teacher has M = 1");
            const int i_star = random_subset(D, 1, seed).front();
            const Vector v = unit_row_matrix(1, d, seed).row(0).transpose();
            return gslp_teacher(d, D, i_star, v, act);
        }
    }
    fail(ErrorKind::validation, "teacher: unknown family");
}

namespace {

void write_block(std::ostringstream& out, const std::string& name, const Matrix& m) {
    out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            out << (j ? " " : "") << format_real(m(i, j));
        }
        out << '\n';
    }
}

Matrix read_block(std::istringstream& in, const std::string& name) {
    std::string tag;
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> tag >> rows >> cols) || tag != name || rows < 1 || cols < 1) {
        fail(ErrorKind::validation, "params: expected block '" + name + "'");
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            if (!(in >> m(i, j))) {
                fail(ErrorKind::validation, "params: block '" + name + "' is truncated");
            }
        }
    }
    return m;
}

}  // namespace

std::string params_to_text(const StudentParams& params) {
    std::ostringstream out;
    write_block(out, "W_V", params.W_V);
    write_block(out, "W_KQ", params.W_KQ);
    write_block(out, "P", params.encoding.P);
    return out.str();
}

StudentParams params_from_text(const std::string& text) {
    std::istringstream in(text);
    StudentParams p;
    p.W_V = read_block(in, "W_V");
    p.W_KQ = read_block(in, "W_KQ");
    p.encoding.P = read_block(in, "P");
    require_shape(p.W_KQ, p.W_KQ.rows(), p.W_KQ.rows(), "W_KQ");
    require_shape(p.encoding.P, p.W_KQ.rows(), p.W_KQ.rows(), "P");
    return p;
}

namespace {

// Flags and config keys share one namespace; a key with no default is required.
struct KeySpec {
    std::string key;
    std::optional<std::string> fallback;
    std::string help;
};

// Keys present in a manifest that are not run settings.
bool is_manifest_only(const std::string& key) {
    return key == "command" || key == "version" || key.rfind("output.", 0) == 0;
}

class Settings {
public:
    Settings(std::string command, std::vector<KeySpec> specs) : command_(std::move(command)), specs_(std::move(specs)) {}

    const std::vector<KeySpec>& specs() const { return specs_; }
    std::map<std::string, std::string>& flag_values() { return flags_; }

    void resolve(const std::string& config_path, const std::set<std::string>& given) {
        KeyValues file;
        if (!config_path.empty()) {
            file = parse_key_values(read_file(config_path));
        }
        for (const auto& [k, v] : file) {
            if (is_manifest_only(k)) {
                if (k == "command" && v != command_) {
                    fail(ErrorKind::validation, "command: config was written for '" + v + "'");
                }
                continue;
            }
            if (!known(k)) {
                fail(ErrorKind::validation, k + ": unknown key for " + command_);
            }
        }
        for (const auto& s : specs_) {
            if (given.count(s.key)) {
                values_[s.key] = flags_[s.key];
            } else if (file.count(s.key)) {
                values_[s.key] = file.at(s.key);
            } else if (s.fallback) {
                values_[s.key] = *s.fallback;
            } else {
                fail(ErrorKind::validation, s.key + ": required");
            }
        }
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            fail(ErrorKind::validation, key + ": required");
        }
        return it->second;
    }

    double real(const std::string& key) const {
        const std::string& s = str(key);
        try {
            std::size_t used = 0;
            double v = std::stod(s, &used);
            if (used == s.size() && std::isfinite(v)) {
                return v;
            }
        } catch (const std::exception&) {
        }
        fail(ErrorKind::validation, key + ": expected a finite number, got '" + s + "'");
    }

    long integer(const std::string& key, long lo, long hi) const {
        const std::string& s = str(key);
        long v = 0;
        try {
            std::size_t used = 0;
            double raw = std::stod(s, &used);
            if (used != s.size() || raw != std::floor(raw) || std::abs(raw) > 9e15) {
                throw std::invalid_argument("not an integer");
            }
            v = static_cast<long>(raw);
        } catch (const std::exception&) {
            fail(ErrorKind::validation, key + ": expected an integer, got '" + s + "'");
        }
        if (v < lo || v > hi) {
            fail(ErrorKind::validation, key + ": must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        }
        return v;
    }

    std::uint64_t seed(const std::string& key) const {
        const std::string& s = str(key);
        try {
            std::size_t used = 0;
            unsigned long long v = std::stoull(s, &used);
            if (used == s.size()) {
                return v;
            }
        } catch (const std::exception&) {
        }
        fail(ErrorKind::validation, key + ": expected a nonnegative integer, got '" + s + "'");
    }

    KeyValues manifest(const std::map<std::string, std::string>& outputs) const {
        KeyValues kv = values_;
        kv["command"] = command_;
        kv["version"] = library_version;
        for (const auto& [k, v] : outputs) {
            kv["output." + k] = v;
        }
        return kv;
    }

private:
    bool known(const std::string& key) const {
        for (const auto& s : specs_) {
            if (s.key == key) return true;
        }
        return false;
    }

    std::string command_;
    std::vector<KeySpec> specs_;
    std::map<std::string, std::string> flags_;
    std::map<std::string, std::string> values_;
};

ActivationKind activation_from(const Settings& s) {
    const std::string& name = s.str("act");
    double kappa = name == "leaky" ? s.real("kappa") : 0.0;
    try {
        return parse_activation(name, kappa);
    } catch (const Error& e) {
        fail(ErrorKind::validation, std::string("act: ") + e.what());
    }
}

InputDistribution distribution_from(const Settings& s, const std::string& key) {
    try {
        return parse_input_distribution(s.str(key));
    } catch (const Error& e) {
        fail(ErrorKind::validation, key + ": " + e.what());
    }
}

std::string join(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

void write_manifest(const Settings& s, const std::string& dir, const std::map<std::string, std::string>& outputs) {
    write_file_atomic(join(dir, "manifest.txt"), key_values_to_text(s.manifest(outputs)));
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// verify-expectations

int run_verify(const Settings& s, std::ostream& out) {
    const long n = s.integer("n", 10000, 1000000000L);
    const std::uint64_t seed = s.seed("seed");
    const int tuples = static_cast<int>(s.integer("tuples", 1, 100000));
    const int threads = static_cast<int>(s.integer("threads", 1, 1024));
    const double kappa = s.real("kappa");
    std::vector<ActivationKind> acts;
    for (const auto& name : split_list(s.str("acts"))) {
        try {
            acts.push_back(parse_activation(name, name == "leaky" ? kappa : 0.0));
        } catch (const Error& e) {
            fail(ErrorKind::validation, std::string("acts: ") + e.what());
        }
    }
    std::vector<Expectation> fs;
    for (const auto& name : split_list(s.str("functions"))) {
        try {
            fs.push_back(parse_expectation(name));
        } catch (const Error& e) {
            fail(ErrorKind::validation, std::string("functions: ") + e.what());
        }
        if (fs.back() == Expectation::F6) {
            fail(ErrorKind::validation, "functions: F6 takes (C1, p, D, K); not part of the argument sweep");
        }
    }
    if (acts.empty()) fail(ErrorKind::validation, "acts: empty list");
    if (fs.empty()) fail(ErrorKind::validation, "functions: empty list");
    const std::string dir = s.str("out");
    const std::string path = join(dir, "expectations.csv");
    write_manifest(s, dir, {{"csv", path}});

    CsvTable table;
    table.header = {"F", "act", "a", "b", "c", "closed_form", "mc_estimate", "se", "z_score"};
    std::uint64_t case_index = 0;
    double worst = 0.0;
    for (Expectation f : fs) {
        for (const auto& act : acts) {
            for (int k = 0; k < tuples; ++k, ++case_index) {
                Rng rng(derive_seed(seed, Stream::mc, 1000000 + case_index));
                std::uniform_real_distribution<double> u(std::log(0.01), std::log(10.0));
                std::array<double, 3> args{};
                for (auto& a : args) a = std::exp(u(rng));
                const auto arity = static_cast<std::size_t>(expectation_arity(f));
                std::span<const double> view(args.data(), arity);
                const double cf = closed_form(f, view, act);
                const McResult mc = mc_expectation(f, view, act, n, derive_seed(seed, Stream::mc, case_index),
                                                   McOptions{false, threads});
                const double z = mc.standard_error > 0.0 ? (mc.estimate - cf) / mc.standard_error
                                                         : (mc.estimate == cf ? 0.0 : INFINITY);
                worst = std::max(worst, std::abs(z));
                std::vector<std::string> row{expectation_name(f), act.name()};
                for (std::size_t j = 0; j < 3; ++j) {
                    row.push_back(j < arity ? format_real(args[j]) : "");
                }
                for (double v : {cf, mc.estimate, mc.standard_error, z}) row.push_back(format_real(v));
                table.rows.push_back(row);
            }
        }
    }
    write_file_atomic(path, table.to_text());
    out << "wrote " << path << " (" << table.rows.size() << " rows, max |z| = " << format_real(worst) << ")\n";
    return 0;
}

// simulate-dynamics

int run_simulate(const Settings& s, std::ostream& out) {
    DynamicsConfig cfg;
    cfg.D = static_cast<int>(s.integer("D", 1, 1000000));
    cfg.K = static_cast<int>(s.integer("K", 1, cfg.D));
    cfg.M = static_cast<int>(s.integer("M", 1, 1000000));
    cfg.v_norm_sq = cfg.M;
    cfg.eta = s.real("eta");
    cfg.act = activation_from(s);
    const long T = s.integer("steps", 1, 100000000000L);
    RecordPlan plan{s.integer("every", 0, T), static_cast<int>(s.integer("per-decade", 0, 1000))};
    if (plan.every == 0 && plan.per_decade == 0) plan.every = 1;
    const std::string dir = s.str("out");
    const std::string path = join(dir, "dynamics.csv");
    const std::string summary_path = join(dir, "summary.txt");

    if (cfg.D == cfg.K) {
        if (!(cfg.eta > 0.0 && cfg.eta <= 0.5)) {
            fail(ErrorKind::validation, "eta: the D = K case needs 0 < eta <= 1/2");
        }
        write_manifest(s, dir, {{"csv", path}});
        CsvTable table;
        table.header = {"t", "C", "excess_loss", "excess_bound"};
        for (const DkPoint& pt : dynamics_dk(cfg.eta, cfg.act, T, cfg.v_norm_sq)) {
            if (plan.hit(pt.t, T)) table.add_row({double(pt.t), pt.C, pt.excess, pt.excess_bound});
        }
        write_file_atomic(path, table.to_text());
        out << "wrote " << path << "\n";
        return 0;
    }
    try {
        validate_dynamics_config(cfg);
    } catch (const Error& e) {
        fail(ErrorKind::validation, e.what());
    }
    write_manifest(s, dir, {{"csv", path}, {"summary", summary_path}});
    const DynamicsRun run = run_dynamics(cfg, T, plan);
    CsvTable table;
    table.header = {"t", "C1", "C2", "C3", "p", "c1_star", "A", "B", "excess_loss", "s_frob_gap"};
    for (const auto& pt : run.points) {
        table.add_row({double(pt.state.t), pt.state.C1, pt.state.C2, pt.state.C3, pt.state.p, pt.c1_star, pt.A,
                       pt.B, pt.excess_loss, pt.s_frob_gap});
    }
    write_file_atomic(path, table.to_text());
    KeyValues summary;
    auto opt = [](const std::optional<long>& v) { return v ? std::to_string(*v) : std::string("none"); };
    summary["t1"] = opt(run.t1);
    summary["t_star"] = opt(run.t_star);
    summary["t_star_half"] = opt(run.t_star_half);
    summary["sandwich_violations"] = std::to_string(run.sandwich_violations);
    summary["monotonicity_violations"] = std::to_string(run.monotonicity_violations);
    summary["max_step_ratio"] = format_real(run.max_step_ratio);
    summary["final_C1"] = format_real(run.final_state.C1);
    summary["final_p"] = format_real(run.final_state.p);
    write_file_atomic(summary_path, key_values_to_text(summary));
    out << "wrote " << path << " and " << summary_path << "\n";
    return 0;
}

// train

struct TrainSetup {
    TeacherSpec teacher;
    PositionalEncoding encoding;
    TrainConfig cfg;
};

TrainSetup train_setup(const Settings& s) {
    TrainSetup ts;
    const TeacherFamily family = parse_teacher_family(s.str("teacher"));
    const ActivationKind act = activation_from(s);
    const int d = static_cast<int>(s.integer("d", 1, 100000));
    const int D = static_cast<int>(s.integer("D", 1, 100000));
    const int K = static_cast<int>(s.integer("K", 1, D));
    const int M = family == TeacherFamily::sts ? d : static_cast<int>(s.integer("M", 1, 100000));
    ts.cfg.eta = s.real("eta");
    if (!(ts.cfg.eta > 0.0)) fail(ErrorKind::validation, "eta: must be positive");
    ts.cfg.T = s.integer("steps", 1, 1000000000L);
    ts.cfg.N = static_cast<int>(s.integer("batch", 1, 10000000));
    ts.cfg.noise_scale = s.real("noise");
    if (ts.cfg.noise_scale < 0.0) fail(ErrorKind::validation, "noise: must be nonnegative");
    ts.cfg.seed = s.seed("seed");
    ts.cfg.input_dist = distribution_from(s, "input-dist");
    ts.cfg.ood_dist = distribution_from(s, "ood-dist");
    ts.cfg.record = {s.integer("every", 0, ts.cfg.T), static_cast<int>(s.integer("per-decade", 0, 1000))};
    ts.cfg.eval_N = static_cast<int>(s.integer("eval-n", 1, 10000000));
    ts.cfg.ood_N = static_cast<int>(s.integer("ood-n", 1, 10000000));
    EncodingScheme scheme;
    try {
        scheme = parse_encoding_scheme(s.str("encoding"));
    } catch (const Error& e) {
        fail(ErrorKind::validation, std::string("encoding: ") + e.what());
    }
    ts.teacher = experiment_teacher(family, act, d, D, K, M, derive_seed(ts.cfg.seed, Stream::teacher));
    ts.encoding = make_positional_encoding(D, scheme, derive_seed(ts.cfg.seed, Stream::encoding));
    return ts;
}

int run_train(const Settings& s, std::ostream& out) {
    TrainSetup ts = train_setup(s);
    const std::string dir = s.str("out");
    const std::map<std::string, std::string> outputs{{"trajectory", join(dir, "trajectory.csv")},
                                                     {"params", join(dir, "params.txt")},
                                                     {"teacher", join(dir, "teacher.txt")},
                                                     {"attention_csv", join(dir, "attention.csv")},
                                                     {"attention_pgm", join(dir, "attention.pgm")}};
    write_manifest(s, dir, outputs);
    save_teacher(ts.teacher, outputs.at("teacher"));
    const TrainResult result = train(ts.cfg, ts.teacher, ts.encoding);

    CsvTable table;
    table.header = {"t", "batch_loss", "excess_train_loss", "excess_ood_loss", "cosine_sim", "p_hat",
                    "C1_hat", "s_frob_gap", "max_abs_dev", "two_value_dev", "wv_offpattern_ratio",
                    "kq_offpattern_ratio"};
    for (const auto& r : result.records) {
        table.add_row({double(r.t), r.batch_loss, r.excess_train_loss, r.excess_ood_loss, r.cosine_sim, r.p_hat,
                       r.C1_hat, r.s_frob_gap, r.max_abs_dev, r.two_value_dev, r.wv_offpattern_ratio,
                       r.kq_offpattern_ratio});
    }
    write_file_atomic(outputs.at("trajectory"), table.to_text());
    write_file_atomic(outputs.at("params"), params_to_text(result.params));
    const Matrix S = attention_scores(result.params.W_KQ, result.params.encoding.P);
    write_file_atomic(outputs.at("attention_csv"), matrix_to_csv(S));
    write_file_atomic(outputs.at("attention_pgm"), matrix_to_pgm(S));
    if (!result.records.empty()) {
        const auto& last = result.records.back();
        out << "t = " << last.t << ", excess_train_loss = " << format_real(last.excess_train_loss)
            << ", cosine_sim = " << format_real(last.cosine_sim) << ", max|S - S*| = "
            << format_real(last.max_abs_dev) << "\n";
    }
    out << "wrote " << dir << "\n";
    return 0;
}

// analyze

int run_analyze(const Settings& s, std::ostream& out) {
    const std::string input = s.str("input");
    const double tail = s.real("tail");
    if (!(tail > 0.0 && tail <= 1.0)) fail(ErrorKind::validation, "tail: must lie in (0, 1]");
    const std::string path = s.str("summary");
    write_manifest(s, std::filesystem::path(path).parent_path().string(), {{"summary", path}});
    const CsvTable table = parse_csv(read_file(input));
    if (table.column("t") < 0) fail(ErrorKind::validation, "input: trajectory CSV has no 't' column");
    const std::vector<double> t = csv_column(table, "t");

    CsvTable summary;
    summary.header = {"metric", "slope", "intercept", "r_squared", "points", "final"};
    for (const std::string name : {"excess_train_loss", "excess_ood_loss", "excess_loss", "s_frob_gap"}) {
        if (table.column(name) < 0) continue;
        const std::vector<double> v = csv_column(table, name);
        std::vector<std::pair<double, double>> series;
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (t[i] > 0.0) series.emplace_back(t[i], v[i]);
        }
        std::vector<std::string> row{name};
        try {
            const SlopeFit fit = loglog_slope(drop_floor(series), tail);
            for (double x : {fit.slope, fit.intercept, fit.r_squared, double(fit.points)}) {
                row.push_back(format_real(x));
            }
        } catch (const Error&) {
            row.insert(row.end(), {"", "", "", "0"});
        }
        row.push_back(v.empty() ? "" : format_real(v.back()));
        summary.rows.push_back(row);
    }
    for (const std::string name : {"cosine_sim", "p_hat", "C1_hat", "max_abs_dev", "two_value_dev", "C1", "p"}) {
        if (table.column(name) < 0) continue;
        const std::vector<double> v = csv_column(table, name);
        summary.rows.push_back({name, "", "", "", "", v.empty() ? "" : format_real(v.back())});
    }
    write_file_atomic(path, summary.to_text());
    out << "wrote " << path << "\n";
    return 0;
}

// export-heatmap

int run_export(const Settings& s, std::ostream& out) {
    const StudentParams params = params_from_text(read_file(s.str("params")));
    const std::string which = s.str("matrix");
    const std::string dir = s.str("out");
    Matrix m;
    if (which == "S") {
        m = attention_scores(params.W_KQ, params.encoding.P);
    } else if (which == "W_KQ") {
        m = params.W_KQ.cwiseAbs();
    } else if (which == "W_V") {
        m = params.W_V.cwiseAbs();
    } else {
        fail(ErrorKind::validation, "matrix: expected S, W_KQ or W_V");
    }
    const std::string stem = join(dir, "heatmap_" + which);
    write_manifest(s, dir, {{"csv", stem + ".csv"}, {"pgm", stem + ".pgm"}});
    write_file_atomic(stem + ".csv", matrix_to_csv(m));
    write_file_atomic(stem + ".pgm", matrix_to_pgm(m));
    out << "wrote " << stem << ".csv and .pgm\n";
    return 0;
}

// demo-full-transformer

int run_demo(const Settings& s, std::ostream& out) {
    TrainSetup ts = train_setup(s);
    const double init = s.real("init-scale");
    const std::string dir = s.str("out");
    const std::map<std::string, std::string> outputs{{"losses", join(dir, "full_losses.csv")},
                                                     {"wkq_csv", join(dir, "full_wkq.csv")},
                                                     {"wkq_pgm", join(dir, "full_wkq.pgm")},
                                                     {"wv_csv", join(dir, "full_wv.csv")},
                                                     {"wv_pgm", join(dir, "full_wv.pgm")}};
    write_manifest(s, dir, outputs);
    const FullTrainResult r = train_full_transformer(ts.cfg, ts.teacher, ts.encoding, init);
    CsvTable losses;
    losses.header = {"t", "batch_loss"};
    for (std::size_t i = 0; i < r.losses.size(); ++i) losses.add_row({double(i + 1), r.losses[i]});
    write_file_atomic(outputs.at("losses"), losses.to_text());
    const Matrix wkq = r.params.Wt_KQ.cwiseAbs();
    const Matrix wv = r.params.Wt_V.cwiseAbs();
    write_file_atomic(outputs.at("wkq_csv"), matrix_to_csv(wkq));
    write_file_atomic(outputs.at("wkq_pgm"), matrix_to_pgm(wkq));
    write_file_atomic(outputs.at("wv_csv"), matrix_to_csv(wv));
    write_file_atomic(outputs.at("wv_pgm"), matrix_to_pgm(wv));
    out << "final batch loss " << format_real(r.losses.back()) << "; wrote " << dir << "\n";
    return 0;
}

std::vector<KeySpec> train_keys() {
    return {{"teacher", std::nullopt, "cnn|gcn|sts|gslp"},
            {"act", std::string("relu"), "identity|relu|leaky"},
            {"kappa", std::string("0.2"), "leaky slope"},
            {"d", std::string("4"), "feature dimension"},
            {"D", std::nullopt, "number of tokens"},
            {"K", std::nullopt, "group size"},
            {"M", std::string("4"), "output rows (sts uses M = d)"},
            {"eta", std::string("0.2"), "learning rate"},
            {"steps", std::string("10000"), "training steps"},
            {"batch", std::string("100"), "batch size N"},
            {"noise", std::string("1"), "label noise scale"},
            {"seed", std::string("1"), "master seed"},
            {"input-dist", std::string("gaussian"), "training input distribution"},
            {"ood-dist", std::string("exponential_centered"), "OOD input distribution"},
            {"encoding", std::string("random_orthogonal"), "identity|random_orthogonal"},
            {"every", std::string("0"), "record every k steps"},
            {"per-decade", std::string("20"), "log-spaced records per decade"},
            {"eval-n", std::string("1000"), "held-out inputs for the excess training loss"},
            {"ood-n", std::string("100"), "OOD batch size per record"},
            {"threads", std::string("1"), "worker cap"},
            {"out", std::string("."), "output directory"}};
}

struct Command {
    std::string name;
    std::string help;
    std::vector<KeySpec> keys;
    int (*run)(const Settings&, std::ostream&);
};

std::vector<Command> commands() {
    std::vector<KeySpec> demo = train_keys();
    for (auto& k : demo) {
        if (k.key == "steps") k.fallback = "300";
        if (k.key == "batch") k.fallback = "50";
        if (k.key == "eta") k.fallback = "0.05";
    }
    demo.push_back({"init-scale", std::string("0"), "std of the Gaussian initialization"});
    return {
        {"verify-expectations", "Compare closed-form expectations against Monte Carlo",
         {{"n", std::string("1000000"), "Monte Carlo samples per case"},
          {"seed", std::string("1"), "master seed"},
          {"tuples", std::string("20"), "argument tuples per function and activation"},
          {"acts", std::string("identity,relu,leaky"), "comma-separated activations"},
          {"kappa", std::string("0.2"), "leaky slope"},
          {"functions", std::string("F1,F2,F3,F4,F5"), "comma-separated functions"},
          {"threads", std::string("1"), "worker cap"},
          {"out", std::string("."), "output directory"}},
         run_verify},
        {"simulate-dynamics", "Run the scalar (C1, C2, C3) recursion",
         {{"D", std::nullopt, "number of tokens"},
          {"K", std::nullopt, "group size"},
          {"M", std::string("1"), "output rows of a unit-row teacher"},
          {"act", std::string("identity"), "identity|relu|leaky"},
          {"kappa", std::string("0.2"), "leaky slope"},
          {"eta", std::nullopt, "learning rate"},
          {"steps", std::nullopt, "number of steps"},
          {"every", std::string("0"), "record every k steps"},
          {"per-decade", std::string("50"), "log-spaced records per decade"},
          {"threads", std::string("1"), "worker cap"},
          {"out", std::string("."), "output directory"}},
         run_simulate},
        {"train", "Train the position-only attention student", train_keys(), run_train},
        {"analyze", "Fit log-log slopes to a trajectory CSV",
         {{"input", std::nullopt, "trajectory CSV"},
          {"tail", std::string("0.5"), "tail fraction for slope fits"},
          {"summary", std::string("summary.csv"), "output summary CSV"}},
         run_analyze},
        {"export-heatmap", "Write a heatmap of trained parameters",
         {{"params", std::nullopt, "params file written by train"},
          {"matrix", std::string("S"), "S|W_KQ|W_V"},
          {"out", std::string("."), "output directory"}},
         run_export},
        {"demo-full-transformer", "Train a full one-layer transformer on [X; P]", demo, run_demo},
    };
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Position-only attention: teachers, dynamics, training and analysis", "posattn"};
    app.require_subcommand(1);
    std::vector<Command> cmds = commands();
    std::vector<std::unique_ptr<Settings>> settings;
    std::vector<std::string> config_paths(cmds.size());
    std::vector<CLI::App*> subs;
    for (std::size_t c = 0; c < cmds.size(); ++c) {
        auto* sub = app.add_subcommand(cmds[c].name, cmds[c].help);
        settings.push_back(std::make_unique<Settings>(cmds[c].name, cmds[c].keys));
        sub->add_option("--config", config_paths[c], "flat key = value file; flags override it");
        for (const auto& k : cmds[c].keys) {
            std::string help = k.help + (k.fallback ? " (default " + *k.fallback + ")" : " (required)");
            sub->add_option("--" + k.key, settings[c]->flag_values()[k.key], help);
        }
        subs.push_back(sub);
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    for (std::size_t c = 0; c < cmds.size(); ++c) {
        if (!subs[c]->parsed()) continue;
        try {
            std::set<std::string> given;
            for (const auto& k : cmds[c].keys) {
                if (subs[c]->count("--" + k.key) > 0) given.insert(k.key);
            }
            settings[c]->resolve(config_paths[c], given);
            return cmds[c].run(*settings[c], out);
        } catch (const Error& e) {
            err << "error: " << e.what() << "\n";
            return e.kind() == ErrorKind::numeric ? 2 : 1;
        } catch (const std::bad_alloc&) {
            err << "error: out of memory\n";
            return 2;
        } catch (const std::exception& e) {
            err << "error: " << e.what() << "\n";
            return 1;
        }
    }
    return 1;
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args, std::cout, std::cerr);
}

}  // namespace posattn
