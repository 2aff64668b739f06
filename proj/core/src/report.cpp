#include "mars/report.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#ifndef MARS_BUILD_ID
#define MARS_BUILD_ID "unknown"
#endif

namespace mars {

namespace {

std::string escape_cell(const std::string& cell) {
    if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    cells.push_back(std::move(cur));
    return cells;
}

} // namespace

void BenchReport::add_row(std::vector<std::string> cells) {
    if (cells.size() != header.size()) throw std::invalid_argument("report: row width mismatch");
    rows.push_back(std::move(cells));
}

int BenchReport::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
}

double BenchReport::cell_as_double(std::size_t row, const std::string& col) const {
    const int c = column(col);
    if (c < 0 || row >= rows.size()) throw std::out_of_range("report: no such cell");
    return std::stod(rows[row][static_cast<std::size_t>(c)]);
}

void write_report(const BenchReport& report, const std::string& csv_path) {
    std::ofstream os(csv_path, std::ios::trunc);
    if (!os) throw std::runtime_error("report: cannot open for write: " + csv_path);
    for (std::size_t i = 0; i < report.header.size(); ++i) {
        if (i) os << ",";
        os << escape_cell(report.header[i]);
    }
    os << "\n";
    for (const auto& row : report.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) os << ",";
            os << escape_cell(row[i]);
        }
        os << "\n";
    }
    if (!os) throw std::runtime_error("report: write failed: " + csv_path);

    nlohmann::ordered_json j;
    j["format_version"] = report.format_version;
    for (const auto& [k, v] : report.meta) j[k] = v;
    std::ofstream ms(csv_path + ".meta.json", std::ios::trunc);
    if (!ms) throw std::runtime_error("report: cannot open sidecar: " + csv_path + ".meta.json");
    ms << j.dump(2) << "\n";
}

BenchReport read_report(const std::string& csv_path) {
    std::ifstream is(csv_path);
    if (!is) throw std::runtime_error("report: cannot open: " + csv_path);
    BenchReport report;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first) {
            report.header = split_csv_line(line);
            first = false;
        } else {
            report.rows.push_back(split_csv_line(line));
        }
    }
    if (first) throw std::runtime_error("report: missing header: " + csv_path);

    std::ifstream ms(csv_path + ".meta.json");
    if (ms) {
        nlohmann::json j = nlohmann::json::parse(ms);
        if (j.contains("format_version")) report.format_version = j["format_version"].get<int>();
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (it.key() == "format_version") continue;
            report.meta[it.key()] = it.value().get<std::string>();
        }
    }
    return report;
}

std::string file_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("hash: cannot open: " + path);
    uint64_t h = 1469598103934665603ULL;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        const std::streamsize n = is.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!is) break;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return std::string(out);
}

std::string build_id() {
    return MARS_BUILD_ID;
}

std::string fmt_double(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", value);
    return std::string(buf);
}

std::string fmt_long(long value) {
    return std::to_string(value);
}

} // namespace mars
