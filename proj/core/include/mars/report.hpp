#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mars {

// Comma-separated table with a fixed header plus a JSON sidecar
// ("<csv path>.meta.json") carrying run provenance. Rows rerun bit-identically
// except the columns listed under meta["wallclock_columns"].
struct BenchReport {
    int format_version = 1;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::map<std::string, std::string> meta;

    void add_row(std::vector<std::string> cells);
    int column(const std::string& name) const;  // -1 when absent
    double cell_as_double(std::size_t row, const std::string& col) const;
};

void write_report(const BenchReport& report, const std::string& csv_path);
BenchReport read_report(const std::string& csv_path);

// FNV-1a over the file bytes, hex-encoded; used as the checkpoint hash.
std::string file_hash(const std::string& path);

std::string build_id();

// formatting helpers shared by report producers
std::string fmt_double(double value);
std::string fmt_long(long value);

} // namespace mars
