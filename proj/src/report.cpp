#include "ivr/report.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <sstream>

namespace ivr {

std::string format_number(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    return fmt::format("{}", value);
}

std::string hex_hash(std::uint64_t hash) { return fmt::format("{:016x}", hash); }

void CsvTable::add(std::vector<std::string> row) {
    if (row.size() != header.size())
        throw InvalidArgument(fmt::format("csv row has {} fields, header has {}", row.size(), header.size()));
    rows.push_back(std::move(row));
}

std::string render_csv(const CsvTable& table, std::uint64_t config_hash, const std::string& seeds) {
    std::string out = fmt::format("# config_hash={} seed={}\n", hex_hash(config_hash), seeds);
    out += fmt::format("{}\n", fmt::join(table.header, ","));
    for (const auto& row : table.rows) out += fmt::format("{}\n", fmt::join(row, ","));
    return out;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table, std::uint64_t config_hash,
               const std::string& seeds) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot write " + path.string());
    out << render_csv(table, config_hash, seeds);
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot read " + path.string());
    CsvTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (table.header.empty()) {
            table.header = fields;
        } else {
            if (fields.size() != table.header.size()) throw ParseError("csv field count mismatch", line_no);
            table.rows.push_back(fields);
        }
    }
    return table;
}

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& doc) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot write " + path.string());
    out << doc.dump(2) << "\n";
}

CsvTable metrics_table(const std::vector<MetricsRow>& trace) {
    CsvTable t;
    t.header = {"step", "v_loss", "q_loss", "pi_loss", "sparsity_ratio", "bellman_error", "eval_return",
                "eval_success"};
    for (const auto& r : trace)
        t.add({std::to_string(r.step), format_number(r.v_loss), format_number(r.q_loss), format_number(r.pi_loss),
               format_number(r.sparsity_ratio), format_number(r.bellman_error), format_number(r.eval_return),
               format_number(r.eval_success)});
    return t;
}

}  // namespace ivr
