#include "posattn/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace posattn {

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            fail(ErrorKind::config, "output: cannot open " + tmp.string());
        }
        out << content;
        out.flush();
        if (!out) {
            fail(ErrorKind::config, "output: write failed for " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        fail(ErrorKind::config, "output: cannot rename into " + target.string());
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::config, "input: cannot open " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void CsvTable::add_row(const std::vector<double>& values) {
    std::vector<std::string> row;
    row.reserve(values.size());
    for (double v : values) {
        row.push_back(format_real(v));
    }
    rows.push_back(std::move(row));
}

std::string CsvTable::to_text() const {
    std::string out;
    auto line = [&out](const std::vector<std::string>& cells) {
        for (std::size_t j = 0; j < cells.size(); ++j) {
            if (j) {
                out += ',';
            }
            out += cells[j];
        }
        out += '\n';
    };
    line(header);
    for (const auto& r : rows) {
        line(r);
    }
    return out;
}

int CsvTable::column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

CsvTable parse_csv(const std::string& text) {
    CsvTable table;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) {
            cells.push_back(cell);
        }
        if (first) {
            table.header = std::move(cells);
            first = false;
        } else {
            table.rows.push_back(std::move(cells));
        }
    }
    if (first) {
        fail(ErrorKind::validation, "csv: missing header row");
    }
    return table;
}

std::vector<double> csv_column(const CsvTable& table, const std::string& name) {
    int c = table.column(name);
    if (c < 0) {
        fail(ErrorKind::validation, "csv: missing column '" + name + "'");
    }
    std::vector<double> out;
    out.reserve(table.rows.size());
    for (const auto& r : table.rows) {
        if (c >= static_cast<int>(r.size())) {
            fail(ErrorKind::validation, "csv: short row for column '" + name + "'");
        }
        try {
            out.push_back(std::stod(r[c]));
        } catch (const std::exception&) {
            fail(ErrorKind::validation, "csv: non-numeric value in column '" + name + "'");
        }
    }
    return out;
}

std::string matrix_to_csv(const Matrix& m) {
    std::string out;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) {
                out += ',';
            }
            out += format_real(m(i, j));
        }
        out += '\n';
    }
    return out;
}

std::string matrix_to_pgm(const Matrix& m) {
    std::ostringstream out;
    out << "P2\n" << m.cols() << ' ' << m.rows() << "\n255\n";
    double top = m.size() ? m.maxCoeff() : 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v = top > 0.0 ? std::clamp(m(i, j), 0.0, top) / top : 0.0;
            out << (j ? " " : "") << static_cast<int>(std::lround(255.0 * v));
        }
        out << '\n';
    }
    return out.str();
}

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return "";
    }
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail(ErrorKind::validation, "config line " + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            fail(ErrorKind::validation, "config line " + std::to_string(lineno) + ": empty key");
        }
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

std::string key_values_to_text(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k + " = " + v + "\n";
    }
    return out;
}

}  // namespace posattn
