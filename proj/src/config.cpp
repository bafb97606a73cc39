#include "ivr/config.hpp"

#include "ivr/rng.hpp"

#include <yaml-cpp/yaml.h>

#include <cctype>
#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

namespace ivr {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
    return true;
}

}  // namespace

double parse_double(const std::string& text) {
    const std::string t = trim(text);
    if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
    if (t == "-inf") return -std::numeric_limits<double>::infinity();
    double value = 0.0;
    const char* first = t.data() + (t.size() > 1 && t[0] == '+' ? 1 : 0);
    const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), value);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
        throw InvalidArgument("'" + text + "' is not a number");
    return value;
}

std::int64_t parse_int(const std::string& text) {
    const std::string t = trim(text);
    std::int64_t value = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
        throw InvalidArgument("'" + text + "' is not an integer");
    return value;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

namespace {

void flatten(const YAML::Node& node, const std::string& prefix, std::map<std::string, std::string>& out) {
    for (const auto& kv : node) {
        const std::size_t line = static_cast<std::size_t>(kv.first.Mark().line) + 1;
        const std::string key = kv.first.as<std::string>();
        if (!valid_name(key)) throw ParseError("invalid key '" + key + "'", line);
        const std::string full = prefix.empty() ? key : prefix + "." + key;
        const YAML::Node& value = kv.second;
        if (value.IsMap()) {
            flatten(value, full, out);
            continue;
        }
        std::string text;
        if (value.IsScalar()) {
            text = value.Scalar();
        } else if (value.IsSequence()) {
            for (const auto& item : value) {
                if (!item.IsScalar()) throw ParseError("list '" + full + "' must hold plain values", line);
                text += (text.empty() ? "" : ", ") + item.Scalar();
            }
        } else {
            throw ParseError("key '" + full + "' has no value", line);
        }
        if (!out.emplace(full, text).second) throw ParseError("duplicate key '" + full + "'", line);
    }
}

}  // namespace

Config Config::parse(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ParseError(e.msg, static_cast<std::size_t>(e.mark.line) + 1);
    }
    Config cfg;
    if (root.IsNull()) return cfg;
    if (!root.IsMap()) throw ParseError("config must be a mapping of sections", 1);
    flatten(root, "", cfg.entries_);
    return cfg;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open config file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        return parse_double(it->second);
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(key + ": " + e.what());
    }
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        return parse_int(it->second);
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(key + ": " + e.what());
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw InvalidArgument(key + ": '" + v + "' is not a boolean");
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<double> out;
    try {
        for (const auto& item : split_list(it->second)) out.push_back(parse_double(item));
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(key + ": " + e.what());
    }
    return out;
}

std::vector<std::string> Config::get_strings(const std::string& key,
                                             const std::vector<std::string>& fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : split_list(it->second);
}

std::vector<std::uint64_t> Config::get_seeds(const std::string& key,
                                             const std::vector<std::uint64_t>& fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<std::uint64_t> out;
    for (const auto& item : split_list(it->second)) {
        std::int64_t v = 0;
        try {
            v = parse_int(item);
        } catch (const InvalidArgument& e) {
            throw InvalidArgument(key + ": " + e.what());
        }
        if (v < 0) throw InvalidArgument(key + ": seeds must be nonnegative");
        out.push_back(static_cast<std::uint64_t>(v));
    }
    return out;
}

Config Config::section(const std::string& name) const {
    Config out;
    const std::string prefix = name + ".";
    for (const auto& [k, v] : entries_)
        if (k.rfind(prefix, 0) == 0) out.entries_[k.substr(prefix.size())] = v;
    return out;
}

void Config::require_known(const std::map<std::string, std::set<std::string>>& known) const {
    for (const auto& [key, value] : entries_) {
        const auto dot = key.find('.');
        const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
        const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
        const auto it = known.find(section);
        if (it == known.end()) throw InvalidArgument("unknown config section in key '" + key + "'");
        if (it->second.count(name) == 0) throw InvalidArgument("unknown config key '" + key + "'");
    }
}

std::string Config::canonical() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
}

std::uint64_t Config::hash() const { return fnv1a(canonical()); }

}  // namespace ivr
