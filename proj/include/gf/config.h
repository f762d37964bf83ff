#pragma once

#include <map>
#include <string>
#include <vector>

#include "gf/backbone.h"
#include "gf/detector.h"
#include "gf/synth.h"
#include "gf/vqa.h"

namespace gf {

// Raised for unknown keys, type mismatches and failed validation; the CLI
// maps it to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Flat key-value run configuration. Files hold `key = value` lines with `#`
// comments; later files and command-line overrides win. Every key must be
// registered: unknown keys are errors.
class RunConfig {
public:
    static RunConfig defaults();

    void apply_file(const std::string& path);
    void apply_override(const std::string& key_equals_value);
    void set(const std::string& key, const std::string& value);

    int get_int(const std::string& key) const;
    float get_float(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    const std::string& get_string(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;
    std::vector<float> get_float_list(const std::string& key) const;
    uint64_t seed() const;

    // sorted `key = value` lines of the fully resolved configuration
    std::string resolved_text() const;
    std::string fingerprint() const;

    BackboneConfig backbone() const;
    DetectorConfig detector() const;
    synth::SceneConfig scene() const;
    TrainSchedule schedule() const;
    // vocab-dependent fields (vocab_size, num_answers, feature_dim) are
    // filled by the caller
    VqaConfig vqa_base() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace gf
