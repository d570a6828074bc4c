#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace semgen {

struct KeySpec {
    std::string key;
    nlohmann::json default_value;
    std::string help;
};

// Flat dotted-key configuration. Every key is registered with a default and
// a help line; unknown keys and type changes are configuration errors.
// Sources apply in order: defaults, file, overrides.
class Config {
   public:
    Config();

    static const std::vector<KeySpec> &registry();
    static std::string help_text();

    // Accepts flat {"a.b": v} objects; nested objects are flattened.
    void merge(const nlohmann::json &j);
    void merge_file(const std::filesystem::path &path);
    // "key=value"; value parsed as JSON, falling back to a bare string.
    void apply_override(const std::string &assignment);
    void set(const std::string &key, const nlohmann::json &value);

    bool has(const std::string &key) const { return values_.count(key) != 0; }
    const nlohmann::json &raw(const std::string &key) const;
    std::int64_t integer(const std::string &key) const;
    std::size_t size(const std::string &key) const;
    double real(const std::string &key) const;
    bool flag(const std::string &key) const;
    std::string str(const std::string &key) const;
    std::uint64_t seed(const std::string &key) const;
    std::vector<std::int64_t> int_list(const std::string &key) const;

    nlohmann::json snapshot() const;
    // Values under `prefix.` only; used for per-stage fairness fingerprints.
    nlohmann::json subset(const std::string &prefix) const;

   private:
    std::map<std::string, nlohmann::json> values_;
};

}  // namespace semgen
