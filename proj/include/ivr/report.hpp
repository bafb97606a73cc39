#pragma once

#include "ivr/learners.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ivr {

/// Shortest round-trip decimal; "nan", "inf" and "-inf" for non-finite values.
std::string format_number(double value);
std::string hex_hash(std::uint64_t hash);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add(std::vector<std::string> row);
};

/// `# config_hash=<hex> seed=<seeds>` line, header row, then the rows. `seeds`
/// is the run's seed or a comma-free list such as `0;1;2`.
std::string render_csv(const CsvTable& table, std::uint64_t config_hash, const std::string& seeds);
void write_csv(const std::filesystem::path& path, const CsvTable& table, std::uint64_t config_hash,
               const std::string& seeds);
/// Reads a table written by write_csv, skipping comment lines.
CsvTable read_csv(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& doc);

CsvTable metrics_table(const std::vector<MetricsRow>& trace);

}  // namespace ivr
