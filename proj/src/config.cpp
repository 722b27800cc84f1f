#include "twinforge/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace twinforge {

namespace {

std::string trim(const std::string& s)
{
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos)
        return {};
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

bool valid_name(const std::string& s)
{
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '_' || c == '.' || c == '-';
    });
}

std::string where(const std::string& section, const std::string& key)
{
    return section.empty() ? key : "[" + section + "] " + key;
}

double to_double(const std::string& text, const std::string& section, const std::string& key)
{
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size())
        throw ConfigError("config: " + where(section, key) + " = '" + text + "' is not a number");
    return v;
}

} // namespace

Config Config::parse(std::istream& in)
{
    Config cfg;
    cfg.sections_.push_back({"", {}});
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line.front() == '#')
            continue;
        const std::string at = "config line " + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(at + "unterminated section header");
            const std::string name = trim(line.substr(1, line.size() - 2));
            if (!valid_name(name))
                throw ConfigError(at + "invalid section name '" + name + "'");
            if (cfg.find_section(name))
                throw ConfigError(at + "section [" + name + "] repeated");
            cfg.sections_.push_back({name, {}});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(at + "expected 'key = value' or '[section]'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!valid_name(key))
            throw ConfigError(at + "invalid key '" + key + "'");
        auto& entries = cfg.sections_.back().entries;
        if (std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.first == key; }))
            throw ConfigError(at + "key '" + key + "' repeated");
        entries.emplace_back(key, value);
    }
    return cfg;
}

Config Config::parse_string(const std::string& text)
{
    std::istringstream in(text);
    return parse(in);
}

Config Config::load(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("config: cannot open " + path);
    return parse(in);
}

std::string Config::serialize() const
{
    std::ostringstream out;
    bool first = true;
    for (const Section& s : sections_) {
        if (s.name.empty() && s.entries.empty())
            continue;
        if (!first)
            out << "\n";
        first = false;
        if (!s.name.empty())
            out << "[" << s.name << "]\n";
        for (const auto& [k, v] : s.entries)
            out << k << " = " << v << "\n";
    }
    return out.str();
}

const Config::Section* Config::find_section(const std::string& name) const
{
    for (const Section& s : sections_)
        if (s.name == name)
            return &s;
    return nullptr;
}

bool Config::has_section(const std::string& section) const
{
    return find_section(section) != nullptr;
}

bool Config::has(const std::string& section, const std::string& key) const
{
    const Section* s = find_section(section);
    return s && std::any_of(s->entries.begin(), s->entries.end(), [&](const auto& e) { return e.first == key; });
}

const std::string& Config::get(const std::string& section, const std::string& key) const
{
    if (const Section* s = find_section(section))
        for (const auto& e : s->entries)
            if (e.first == key)
                return e.second;
    throw ConfigError("config: missing " + where(section, key));
}

std::string Config::get_or(const std::string& section, const std::string& key, const std::string& fallback) const
{
    return has(section, key) ? get(section, key) : fallback;
}

double Config::get_double(const std::string& section, const std::string& key) const
{
    return to_double(get(section, key), section, key);
}

double Config::get_double_or(const std::string& section, const std::string& key, double fallback) const
{
    return has(section, key) ? get_double(section, key) : fallback;
}

long long Config::get_int(const std::string& section, const std::string& key) const
{
    const std::string& text = get(section, key);
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size())
        throw ConfigError("config: " + where(section, key) + " = '" + text + "' is not an integer");
    return v;
}

long long Config::get_int_or(const std::string& section, const std::string& key, long long fallback) const
{
    return has(section, key) ? get_int(section, key) : fallback;
}

std::vector<double> Config::get_list(const std::string& section, const std::string& key) const
{
    std::vector<double> out;
    std::istringstream in(get(section, key));
    std::string item;
    while (std::getline(in, item, ','))
        out.push_back(to_double(trim(item), section, key));
    if (out.empty())
        throw ConfigError("config: " + where(section, key) + " is an empty list");
    return out;
}

std::vector<double> Config::get_list_or(const std::string& section, const std::string& key,
                                        const std::vector<double>& fallback) const
{
    return has(section, key) ? get_list(section, key) : fallback;
}

void Config::set(const std::string& section, const std::string& key, const std::string& value)
{
    if ((!section.empty() && !valid_name(section)) || !valid_name(key))
        throw ConfigError("config: invalid name in set(" + where(section, key) + ")");
    if (value.find('\n') != std::string::npos || trim(value) != value)
        throw ConfigError("config: value of " + where(section, key) + " must be a trimmed single line");
    auto it = std::find_if(sections_.begin(), sections_.end(), [&](const Section& s) { return s.name == section; });
    if (it == sections_.end()) {
        if (section.empty()) {
            sections_.insert(sections_.begin(), Section{"", {}});
            it = sections_.begin();
        } else {
            sections_.push_back({section, {}});
            it = sections_.end() - 1;
        }
    }
    for (auto& e : it->entries)
        if (e.first == key) {
            e.second = value;
            return;
        }
    it->entries.emplace_back(key, value);
}

bool Config::operator==(const Config& other) const
{
    auto nonempty = [](const Config& c) {
        std::vector<Section> out;
        for (const Section& s : c.sections_)
            if (!(s.name.empty() && s.entries.empty()))
                out.push_back(s);
        return out;
    };
    const auto a = nonempty(*this), b = nonempty(other);
    if (a.size() != b.size())
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].name != b[i].name || a[i].entries != b[i].entries)
            return false;
    return true;
}

} // namespace twinforge
