#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gf/backbone.h"
#include "gf/detector.h"
#include "gf/features.h"
#include "gf/image.h"
#include "gf/synth.h"
#include "gf/vqa.h"

namespace gf::pipeline {

// Supervision used when pre-training the toy backbone.
enum class PretrainMode { classification_only, detection, detection_attributes };

PretrainMode pretrain_mode_from_name(const std::string& name);
const char* pretrain_mode_name(PretrainMode mode);

// Scene-backed dataset with access accounting: box reads are counted so the
// classification-only supervision contract is checkable.
class DatasetView {
public:
    DatasetView(std::vector<synth::SceneRecord> records, std::vector<Image> images);

    size_t size() const { return records_.size(); }
    const Image& image(size_t i) const { return images_.at(i); }
    const synth::SceneRecord& record(size_t i) const { return records_.at(i); }
    const std::vector<synth::QAPair>& questions(size_t i) const {
        return records_.at(i).qa;
    }

    // box-level annotations (counted)
    const std::vector<GtObject>& boxes(size_t i) const {
        ++box_accesses_;
        return records_.at(i).ground_truth;
    }

    // image-level labels: which shape classes appear (no box access)
    std::vector<int> class_presence(size_t i) const;

    int64_t box_access_count() const { return box_accesses_.load(); }

private:
    std::vector<synth::SceneRecord> records_;
    std::vector<Image> images_;
    mutable std::atomic<int64_t> box_accesses_{0};
};

DatasetView make_view(uint64_t seed, const std::string& split, int count,
                      const synth::SceneConfig& config);

struct PretrainConfig {
    BackboneConfig backbone;
    DetectorConfig detector;
    PretrainMode mode = PretrainMode::detection_attributes;
    TrainSchedule schedule;
    int rois_per_image = 8;
    int rpn_samples_per_image = 24;
};

struct PretrainResult {
    ParamStore weights;
    std::vector<LossLogRow> log;
};

// Trains backbone (+ RPN/head or classifier) from scratch on the synthetic
// scenes under the configured supervision.
PretrainResult pretrain_detector(const DatasetView& data, const PretrainConfig& config,
                                 uint64_t seed);

// --- feature extraction ---

FeatureSet extract_region_features(const Image& image, const ParamStore& weights,
                                   const BackboneConfig& bb, const DetectorConfig& det);

FeatureSet extract_grid_features(const Image& image, const ParamStore& weights,
                                 const BackboneConfig& bb);

// --- cached-feature VQA training ---

struct VqaDataset {
    std::vector<FeatureSet> features;                // one per scene
    std::vector<std::vector<synth::QAPair>> qa;      // per scene
    std::vector<std::pair<int, int>> examples;       // (scene, qa) pairs
    void rebuild_example_index();
};

VqaDataset build_vqa_dataset(const DatasetView& data, FeatureSet::Kind kind,
                             const ParamStore& weights, const BackboneConfig& bb,
                             const DetectorConfig& det);

struct VqaTrainResult {
    ParamStore params;  // head only (cached) or head + backbone (e2e)
    std::vector<LossLogRow> log;
};

VqaTrainResult train_vqa_head(const VqaDataset& train, const VqaConfig& model,
                              const TrainSchedule& schedule, uint64_t seed);

float eval_vqa(const ParamStore& head, const VqaConfig& model, const VqaDataset& eval);

// accuracy of always answering the most frequent training answer
float majority_baseline_accuracy(const VqaDataset& train, const VqaDataset& eval);

// --- end-to-end training (grid pipeline) ---

struct E2eConfig {
    BackboneConfig backbone;
    VqaConfig model;
    TrainSchedule schedule;
    synth::AugmentPolicy augment;  // identity by default
};

// Fine-tunes backbone + head jointly from the given parameters; grid
// features are recomputed from pixels every step. With the whole backbone
// frozen and no augmentation this reproduces cached-feature training
// loss-for-loss.
VqaTrainResult train_e2e(const DatasetView& data, const ParamStore& initial,
                         const E2eConfig& config, uint64_t seed);

float eval_e2e(const ParamStore& params, const E2eConfig& config, const DatasetView& data);

}  // namespace gf::pipeline
