#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include "aptlab/checkpoint.hpp"
#include "aptlab/data.hpp"
#include "aptlab/discriminator.hpp"
#include "aptlab/training.hpp"

namespace aptlab {

// One flat, schema-validated document covering model, data, stages, heads and
// eval options. Unknown keys are rejected with a nearest-key suggestion.
class RunConfig {
public:
    using Value = std::variant<int64_t, double, bool, std::string>;

    RunConfig();  // all defaults

    static RunConfig from_file(const std::string& path);
    static RunConfig from_json_text(const std::string& text);
    void apply_override(const std::string& key_equals_value);
    void apply_overrides(const std::vector<std::string>& kvs);

    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    const std::string& get_string(const std::string& key) const;
    void set(const std::string& key, const Value& v);

    std::string to_json() const;
    void save(const std::string& path) const;

    // Derived, validated views.
    DatasetSpec dataset_spec() const;
    ModelConfig model_config() const;
    HeadConfig head_config() const;
    StageConfig stage_config(const std::string& stage) const;
    void validate() const;

    static const std::vector<std::pair<std::string, std::string>>& schema_docs();

private:
    std::map<std::string, Value> values_;
    void set_checked(const std::string& key, const Value& v);
};

}  // namespace aptlab
