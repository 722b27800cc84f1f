#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace twinforge {

/// Malformed or inconsistent configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Line-oriented `key = value` file with `[section]` headers.
///
/// Grammar, one construct per line after trimming surrounding whitespace:
///   - empty lines and lines starting with `#` are ignored;
///   - `[name]` opens a section; name is [A-Za-z0-9_.-]+;
///   - `key = value` sets a key in the current section; key is
///     [A-Za-z0-9_.-]+, value is everything after the first `=`, trimmed,
///     and may be empty. Keys before the first header belong to the root
///     section (empty name).
/// Repeated sections or keys are errors.
class Config {
public:
    struct Section {
        std::string name;
        std::vector<std::pair<std::string, std::string>> entries;
    };

    static Config parse(std::istream& in);
    static Config parse_string(const std::string& text);
    static Config load(const std::string& path);

    /// Canonical text; parsing it yields an equal Config.
    std::string serialize() const;

    bool has(const std::string& section, const std::string& key) const;
    bool has_section(const std::string& section) const;
    const std::string& get(const std::string& section, const std::string& key) const;
    std::string get_or(const std::string& section, const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key) const;
    double get_double_or(const std::string& section, const std::string& key, double fallback) const;
    long long get_int(const std::string& section, const std::string& key) const;
    long long get_int_or(const std::string& section, const std::string& key, long long fallback) const;
    /// Comma-separated numbers.
    std::vector<double> get_list(const std::string& section, const std::string& key) const;
    std::vector<double> get_list_or(const std::string& section, const std::string& key,
                                    const std::vector<double>& fallback) const;

    /// Adds or replaces a key, creating the section when needed.
    void set(const std::string& section, const std::string& key, const std::string& value);

    const std::vector<Section>& sections() const { return sections_; }
    bool operator==(const Config& other) const;

private:
    const Section* find_section(const std::string& name) const;
    std::vector<Section> sections_;
};

} // namespace twinforge
