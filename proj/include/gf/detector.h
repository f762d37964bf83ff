#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "gf/autodiff.h"
#include "gf/backbone.h"
#include "gf/box.h"
#include "gf/roi.h"
#include "gf/tensor.h"
#include "gf/weights.h"

namespace gf {

struct Detection {
    Box box;
    int class_id = 0;
    float score = 0.0f;
    int region_index = -1;  // proposal whose head vector backs this detection
    std::vector<float> attribute_scores;
};

struct Proposal {
    Box box;
    float objectness = 0.0f;
};

struct GtObject {
    Box box;
    int class_id = 0;
    int attr_id = -1;
};

struct RpnConfig {
    std::vector<float> anchor_scales = {32.0f, 64.0f, 128.0f, 256.0f, 512.0f};
    std::vector<float> anchor_ratios = {0.5f, 1.0f, 2.0f};
    int pre_nms_topk = 6000;
    int post_nms_topk = 1000;
    float nms_iou = 0.7f;
    float score_thresh = 0.0f;
    int num_anchors() const {
        return static_cast<int>(anchor_scales.size() * anchor_ratios.size());
    }
    void validate() const;
};

struct RegionHeadConfig {
    enum class Mode { c5_14x14, fc2_1x1 };
    Mode mode = Mode::c5_14x14;
    int pool_size = 14;  // 14 in c5 mode, 1 in fc2 mode
    int fc_dim = 1024;
    bool mean_pool = false;  // RoI reduction: max by default, mean behind this flag
    void validate() const;
};

struct DetectorConfig {
    int num_classes = 1600;
    int num_attributes = 400;
    RegionHeadConfig head;
    RpnConfig rpn;
    int top_n = 100;
    float class_nms_iou = 0.3f;
    float class_score_thresh = 0.0f;
    float attr_weight = 0.5f;
    void validate() const;
    int background_id() const { return num_classes; }
};

// Builds backbone + RPN + region head weights in one store, deterministically
// from the seed. In fc2_1x1 mode the shared map is the dilated C5 output, so
// the backbone config's c5_mode is forced to dilated during training.
ParamStore build_detector(const BackboneConfig& bb, const DetectorConfig& det,
                          uint64_t seed);

// Head feature dimension: C5 channels in c5 mode, fc_dim in fc2 mode.
int region_feature_dim(const BackboneConfig& bb, const DetectorConfig& det);

// Anchors centered on the cells of a feat_h x feat_w map with the given
// stride; cell-major (row-major cells), then scale, then ratio. Ratio r
// yields width/height = r at equal area scale^2.
std::vector<Box> generate_anchors(int feat_h, int feat_w, int stride,
                                  const std::vector<float>& scales,
                                  const std::vector<float>& ratios);

// Greedy NMS: keep the highest-scoring box, drop any box with IoU strictly
// above the threshold against a kept one. Returns kept indices in descending
// score order; ties break toward the lower input index.
std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<float>& scores,
                     float iou_thresh);

// RPN forward on the shared map: score anchors, take pre_nms_topk, decode,
// clip, NMS, truncate to post_nms_topk.
std::vector<Proposal> rpn_propose(const Tensor& shared_map, const ParamStore& params,
                                  const RpnConfig& config, int stride, int img_w,
                                  int img_h);

struct RegionBatch {
    Tensor vectors;       // R x D
    Tensor class_logits;  // R x (C+1), background last
    Tensor box_deltas;    // R x 4(C+1)
    Tensor attr_logits;   // R x num_attributes
    int count = 0;
};

// Per-region head computation. c5_14x14 mode: 14x14 RoIPool on the shared C4
// map, the C5 stage per region, spatial average. fc2_1x1 mode: 1x1 RoIPool on
// the full-backbone map, two relu fc layers. Both then feed the classifier,
// attribute branch and box regressor.
RegionBatch region_features(const std::vector<Proposal>& proposals,
                            const Tensor& shared_map, const ParamStore& params,
                            const BackboneConfig& bb, const DetectorConfig& det,
                            int stride);

// Expands per-region class scores into per-(region, class) detections with
// class-specific decoded boxes. attribute_scores stay empty here; attach
// them to the few selected rows instead of all candidates.
std::vector<Detection> make_detections(const std::vector<Proposal>& proposals,
                                       const RegionBatch& batch, const DetectorConfig& det,
                                       int img_w, int img_h);

void attach_attribute_scores(std::vector<Detection>& detections, const RegionBatch& batch);

struct SelectedRegions {
    std::vector<Detection> rows;  // exactly N
    std::vector<bool> mask;       // false on zero-padded rows
};

// Per-class NMS, global sort by score, truncate to exactly N rows; short
// results are zero-padded with mask false.
SelectedRegions select_top_regions(const std::vector<Detection>& detections, int n,
                                   float class_nms_iou);

// --- training-side pieces ---

// gt index for positives, -1 for negatives, -2 for ignored anchors
std::vector<int> assign_anchors(const std::vector<Box>& anchors,
                                const std::vector<GtObject>& gts, float pos_iou,
                                float neg_iou);

struct DetectorLossInputs {
    std::vector<ad::Var> rpn_obj_logits;  // scalar per sampled anchor
    std::vector<float> rpn_obj_labels;    // 1 foreground / 0 background
    std::vector<ad::Var> rpn_box_preds;   // [4] per positive anchor
    std::vector<BoxDeltas> rpn_box_targets;
    std::vector<ad::Var> roi_class_logits;  // [C+1] per sampled roi
    std::vector<int> roi_class_labels;
    std::vector<ad::Var> roi_box_preds;  // [4] per positive roi
    std::vector<BoxDeltas> roi_box_targets;
    std::vector<ad::Var> roi_attr_logits;  // [A] per attributed roi
    std::vector<int> roi_attr_labels;
};

struct DetectorLoss {
    ad::Var total;
    float rpn_objectness = 0.0f;
    float rpn_box = 0.0f;
    float cls = 0.0f;
    float box = 0.0f;
    float attr = 0.0f;
};

// total = rpn objectness BCE + rpn box smooth-L1 + class CE + box smooth-L1
//         + attr_weight * attribute CE  (absent terms contribute zero)
DetectorLoss detector_loss(const DetectorLossInputs& inputs, float attr_weight);

struct ApResult {
    std::map<int, float> per_class;
    float mean_ap = 0.0f;
};

// Greedy matching by descending score at the IoU threshold, all-points
// precision/recall interpolation. Classes with no ground truth are skipped.
ApResult evaluate_detection_ap(const std::vector<std::vector<Detection>>& detections,
                               const std::vector<std::vector<GtObject>>& ground_truth,
                               float iou_thresh = 0.5f);

}  // namespace gf
