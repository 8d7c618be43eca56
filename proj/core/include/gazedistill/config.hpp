#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gazedistill/errors.hpp"

namespace gazedistill {

/// Flat `key = value` configuration over a fixed key set. Lines starting
/// with `#` and blank lines are ignored. Unknown keys are rejected.
class Config {
public:
    /// Every known key with its default value.
    static Config defaults();
    static const std::map<std::string, std::string>& schema();

    /// Defaults overlaid with the assignments in `text`.
    static Config parse(const std::string& text);
    static Config load_file(const std::string& path);

    void set(const std::string& key, const std::string& value);
    /// `key=value`.
    void apply_override(const std::string& assignment);

    const std::string& get(const std::string& key) const;
    std::string get_string(const std::string& key) const { return get(key); }
    long long get_int(const std::string& key) const;
    std::uint64_t get_uint(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;
    std::vector<double> get_double_list(const std::string& key) const;

    /// Sorted `key = value` lines.
    std::string dump() const;
    /// sha256 of dump().
    std::string hash() const;

    const std::map<std::string, std::string>& values() const noexcept { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace gazedistill
