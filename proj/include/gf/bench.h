#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gf/pipeline.h"

namespace gf::bench {

// Wall-clock stage breakdown of one pipeline configuration. Stage columns
// mirror the inference decomposition: shared convolution, per-region feature
// computation, region selection (both NMS rounds plus top-N), VQA. Each
// stage is the median over post-warmup repetitions and total is the sum of
// the stage medians. Grid rows keep the region stages at zero.
struct StageTimings {
    std::string pipeline;  // "region" or "grid"
    std::string config_fingerprint;
    int repetitions = 0;
    int threads = 1;
    double shared_conv_ms = 0.0;
    double region_feat_ms = 0.0;
    double region_select_ms = 0.0;
    double vqa_ms = 0.0;
    double total_ms = 0.0;

    double region_stage_ms() const { return region_feat_ms + region_select_ms; }
};

struct TimePipelineConfig {
    bool region = true;
    int reps = 5;
    int warmup = 1;
    int threads = 1;
    uint64_t seed = 0;
    // when set, per-rep rows land here even if a rep throws midway
    std::optional<std::string> partial_log_path;
};

// Times the full per-image pipeline on the given images with the given
// weights; the VQA stage answers one fixed question per image using the
// provided head.
StageTimings time_pipeline(const TimePipelineConfig& config, const ParamStore& weights,
                           const BackboneConfig& bb, const DetectorConfig& det,
                           const ParamStore& head, const VqaConfig& model,
                           const std::vector<Image>& images);

std::string timings_csv_header();
std::string timings_csv_row(const StageTimings& t);

// Markdown table of timing rows, with the upstream reference measurements
// (GPU, original pipeline: 889 ms region vs 18 ms grid per image) quoted
// for context.
std::string timings_report_markdown(const std::vector<StageTimings>& rows);

// Resumable CSV: rows are keyed; re-running a sweep with the same keys
// appends nothing.
class SweepCsv {
public:
    SweepCsv(std::string path, std::string header);
    bool has(const std::string& key) const;
    void append(const std::string& key, const std::string& row);
    const std::string& path() const { return path_; }

private:
    void flush() const;
    std::string path_;
    std::string header_;
    std::vector<std::pair<std::string, std::string>> rows_;
};

// --- sweeps ---

struct NumFeaturesSweepConfig {
    std::vector<int> feature_counts = {30, 50, 100, 200};
    std::vector<uint64_t> seeds = {1, 2, 3};
    VqaConfig model;
    TrainSchedule schedule;
};

// Region features truncated or zero-padded to each N; one CSV row per N
// with mean and standard deviation over the training seeds.
void sweep_num_features(const NumFeaturesSweepConfig& config,
                        const pipeline::VqaDataset& train,
                        const pipeline::VqaDataset& eval, SweepCsv& csv);

struct InputSizeSweepConfig {
    std::vector<std::pair<int, int>> sizes = {
        {448, 448}, {448, 746}, {600, 1000}, {800, 1333}};
    synth::SceneConfig scene;  // canvas extents overridden per size
    uint64_t data_seed = 0;
    int n_eval = 32;
};

// Renders the same eval scenes at each canvas size, extracts grid features
// and reports the grid count formula plus accuracy of the given head.
void sweep_input_size(const InputSizeSweepConfig& config, const ParamStore& weights,
                      const BackboneConfig& bb, const ParamStore& head,
                      const VqaConfig& model, SweepCsv& csv);

struct PretrainSweepConfig {
    std::vector<float> attr_weights = {0.0f, 0.1f, 0.2f, 0.5f, 1.0f};
    std::vector<uint64_t> seeds = {1};
    pipeline::PretrainConfig pretrain;
    VqaConfig model;  // feature_dim filled from the backbone
    TrainSchedule head_schedule;
    synth::SceneConfig scene;
    uint64_t data_seed = 0;
    int n_train = 32;
    int n_eval = 16;
};

// Cells: classification-only, detection (attr weight 0), and
// detection+attributes at every listed weight. Each cell pre-trains the
// backbone, freezes it, trains the VQA head on grid features and reports
// accuracy; diverged cells are recorded rather than fatal.
void sweep_pretrain_proxy(const PretrainSweepConfig& config, SweepCsv& csv);

// --- experiment drivers ---

struct ParityConfig {
    synth::SceneConfig scene;
    uint64_t data_seed = 7;
    int n_train = 160;
    int n_eval = 64;
    pipeline::PretrainConfig pretrain;
    VqaConfig model;  // feature_dim filled per pipeline
    TrainSchedule head_schedule;
    std::vector<uint64_t> seeds = {1, 2, 3};
};

struct ParityResult {
    float baseline = 0.0f;
    std::vector<float> region_acc;
    std::vector<float> grid_acc;
    float region_mean = 0.0f;
    float grid_mean = 0.0f;
};

// Pre-trains one detector, extracts region and grid features from the same
// frozen weights, trains a head per (pipeline, seed) and evaluates.
ParityResult run_parity_experiment(const ParityConfig& config);

struct E2eExperimentConfig {
    synth::SceneConfig scene;
    uint64_t data_seed = 7;
    int n_train = 96;
    int n_eval = 48;
    pipeline::PretrainConfig pretrain;
    VqaConfig model;
    TrainSchedule head_schedule;
    TrainSchedule e2e_schedule;  // frozen prefixes applied on top
    int frozen_stages = 2;
    std::vector<uint64_t> seeds = {1, 2, 3};
};

struct E2eExperimentResult {
    std::vector<float> frozen_acc;
    std::vector<float> e2e_acc;
    float frozen_mean = 0.0f;
    float e2e_mean = 0.0f;
};

// Per seed: train the head on cached grid features (frozen accuracy), then
// continue end-to-end with the first stages frozen (e2e accuracy).
E2eExperimentResult run_e2e_experiment(const E2eExperimentConfig& config);

}  // namespace gf::bench
