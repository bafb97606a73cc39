#pragma once

#include "ivr/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace ivr {

/// Flat key/value configuration read from YAML. Nested mappings become
/// dotted keys and lists are kept as comma separated text:
///
///     fourrooms:
///       alpha: 0.5
///       seeds: [0, 1, 2]
///
/// gives "fourrooms.alpha" = "0.5" and "fourrooms.seeds" = "0, 1, 2".
class Config {
public:
    static Config parse(const std::string& text);
    static Config load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return entries_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { entries_[key] = value; }
    const std::map<std::string, std::string>& entries() const { return entries_; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
    std::vector<std::string> get_strings(const std::string& key, const std::vector<std::string>& fallback) const;
    std::vector<std::uint64_t> get_seeds(const std::string& key, const std::vector<std::uint64_t>& fallback) const;

    /// Keys under `section` only, with the prefix removed.
    Config section(const std::string& name) const;

    /// Throws InvalidArgument naming the first key outside `known`.
    void require_known(const std::map<std::string, std::set<std::string>>& known) const;

    /// Sorted `key=value` lines.
    std::string canonical() const;
    /// FNV-1a of the canonical form.
    std::uint64_t hash() const;

private:
    std::map<std::string, std::string> entries_;
};

double parse_double(const std::string& text);
std::int64_t parse_int(const std::string& text);
std::vector<std::string> split_list(const std::string& text);

}  // namespace ivr
