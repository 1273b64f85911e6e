#pragma once

// Flat UTF-8 key=value configuration shared by every subcommand.
// Blank lines and lines starting with '#' are ignored; later keys override
// earlier ones; command-line overrides are applied with set().

#include "headforge/model.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace headforge {

class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class KeyValueConfig {
   public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>") {
        KeyValueConfig cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto text = trim(line);
            if (text.empty() || text.front() == '#') continue;
            const auto eq = text.find('=');
            if (eq == std::string_view::npos)
                throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
            const auto key = trim(text.substr(0, eq));
            if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
            cfg.values_[std::string(key)] = std::string(trim(text.substr(eq + 1)));
        }
        return cfg;
    }

    static KeyValueConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config " + path);
        return parse(in, path);
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string get_string(const std::string& key, const std::string& def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    double get_double(const std::string& key, double def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try {
            std::size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': '" + it->second + "' is not a number");
        }
    }

    std::uint64_t get_uint(const std::string& key, std::uint64_t def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::uint64_t v = 0;
        const auto& s = it->second;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size())
            throw ConfigError("config key '" + key + "': '" + s + "' is not a non-negative integer");
        return v;
    }

    bool get_bool(const std::string& key, bool def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        const auto& s = it->second;
        if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
        if (s == "0" || s == "false" || s == "no" || s == "off") return false;
        throw ConfigError("config key '" + key + "': '" + s + "' is not a boolean");
    }

    // Canonical text form (sorted keys), used for manifests.
    std::string dump() const {
        std::ostringstream os;
        for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
        return os.str();
    }

   private:
    static std::string_view trim(std::string_view s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string_view::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

inline ModelConfig model_config_from(const KeyValueConfig& kv) {
    ModelConfig c;
    c.layers = kv.get_uint("layers", c.layers);
    c.heads = kv.get_uint("heads", c.heads);
    c.hidden = kv.get_uint("hidden", c.hidden);
    c.ffn = kv.get_uint("ffn", c.ffn);
    c.vocab = kv.get_uint("vocab", c.vocab);
    c.max_seq_len = kv.get_uint("max_seq_len", kv.get_uint("seq_len", c.max_seq_len));
    c.dropout = kv.get_double("dropout", c.dropout);
    c.pls_lambda = kv.get_double("lambda", c.pls_lambda);
    c.pls_enabled = kv.get_bool("pls_enabled", c.pls_enabled);
    c.learned_positions = kv.get_bool("learned_positions", c.learned_positions);
    const auto mode = kv.get_string("mode", "cascade");
    if (mode == "cascade") {
        c.mode = StreamMode::kCascade;
    } else if (mode == "dual_standard") {
        c.mode = StreamMode::kDualStandard;
    } else {
        throw ConfigError("config key 'mode': expected cascade or dual_standard, got '" + mode + "'");
    }
    c.validate();
    return c;
}

}  // namespace headforge
