#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace stitchnet {

/// TOML-style key/value text: `key = value` lines, `[section]` headers that
/// prefix following keys as `section.key`, `#` comments, optional double quotes
/// around string values.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>");
    static KeyValueConfig load(const std::filesystem::path& path);

    bool contains(const std::string& key) const { return values_.count(key) != 0; }
    std::optional<std::string> find(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;

    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    const std::map<std::string, std::string>& values() const noexcept { return values_; }

    /// Sorted `key = value` lines, suitable for byte-stable output.
    std::string dump() const;

private:
    std::map<std::string, std::string> values_;
    std::string origin_;
};

} // namespace stitchnet
