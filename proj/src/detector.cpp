#include "gf/detector.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gf/kernels.h"

namespace gf {

namespace k = gf::kernels;

void RpnConfig::validate() const {
    if (anchor_scales.empty() || anchor_ratios.empty()) {
        throw std::invalid_argument("rpn: anchor scales/ratios must be non-empty");
    }
    if (pre_nms_topk < 1 || post_nms_topk < 1) {
        throw std::invalid_argument("rpn: topk values must be positive");
    }
    if (nms_iou < 0.0f || nms_iou > 1.0f || score_thresh < 0.0f || score_thresh > 1.0f) {
        throw std::invalid_argument("rpn: thresholds must be in [0,1]");
    }
}

void RegionHeadConfig::validate() const {
    if (mode == Mode::c5_14x14 && pool_size != 14) {
        throw std::invalid_argument("head: c5_14x14 mode uses pool_size 14");
    }
    if (mode == Mode::fc2_1x1 && pool_size != 1) {
        throw std::invalid_argument("head: fc2_1x1 mode uses pool_size 1");
    }
    if (mode == Mode::fc2_1x1 && fc_dim < 1) {
        throw std::invalid_argument("head: fc_dim must be positive");
    }
}

void DetectorConfig::validate() const {
    if (num_classes < 1) throw std::invalid_argument("detector: num_classes must be >= 1");
    if (num_attributes < 1) {
        throw std::invalid_argument("detector: num_attributes must be >= 1");
    }
    if (top_n < 1) throw std::invalid_argument("detector: top_n must be >= 1");
    if (class_nms_iou < 0.0f || class_nms_iou > 1.0f) {
        throw std::invalid_argument("detector: class_nms_iou must be in [0,1]");
    }
    if (attr_weight < 0.0f) throw std::invalid_argument("detector: attr_weight must be >= 0");
    head.validate();
    rpn.validate();
}

int region_feature_dim(const BackboneConfig& bb, const DetectorConfig& det) {
    return det.head.mode == RegionHeadConfig::Mode::c5_14x14 ? bb.c5_channels()
                                                             : det.head.fc_dim;
}

namespace {

int shared_map_channels(const BackboneConfig& bb, const DetectorConfig& det) {
    return det.head.mode == RegionHeadConfig::Mode::c5_14x14 ? bb.c4_channels()
                                                             : bb.c5_channels();
}

void add_linear(ParamStore& params, const std::string& name, int out_dim, int in_dim,
                Rng& rng) {
    params.emplace(name + ".w", he_normal({out_dim, in_dim}, in_dim, rng));
    params.emplace(name + ".b", Tensor({out_dim}, 0.0f));
}

}  // namespace

ParamStore build_detector(const BackboneConfig& bb, const DetectorConfig& det,
                          uint64_t seed) {
    det.validate();
    ParamStore params = build_backbone(bb, seed);
    Rng rng(derive_seed(seed, "detector-init"));

    const int rpn_in = shared_map_channels(bb, det);
    const int rpn_dim = rpn_in;
    const int A = det.rpn.num_anchors();
    params.emplace("rpn.conv.w", he_normal({rpn_dim, rpn_in, 3, 3}, rpn_in * 9, rng));
    params.emplace("rpn.conv.b", Tensor({rpn_dim}, 0.0f));
    params.emplace("rpn.obj.w", he_normal({A, rpn_dim, 1, 1}, rpn_dim, rng));
    params.emplace("rpn.obj.b", Tensor({A}, 0.0f));
    params.emplace("rpn.box.w", he_normal({4 * A, rpn_dim, 1, 1}, rpn_dim, rng));
    params.emplace("rpn.box.b", Tensor({4 * A}, 0.0f));

    const int D = region_feature_dim(bb, det);
    if (det.head.mode == RegionHeadConfig::Mode::fc2_1x1) {
        add_linear(params, "head.fc1", det.head.fc_dim, bb.c5_channels(), rng);
        add_linear(params, "head.fc2", det.head.fc_dim, det.head.fc_dim, rng);
    }
    add_linear(params, "head.cls", det.num_classes + 1, D, rng);
    add_linear(params, "head.box", 4 * (det.num_classes + 1), D, rng);
    add_linear(params, "head.attr", det.num_attributes, D, rng);
    return params;
}

std::vector<Box> generate_anchors(int feat_h, int feat_w, int stride,
                                  const std::vector<float>& scales,
                                  const std::vector<float>& ratios) {
    if (feat_h < 1 || feat_w < 1) {
        throw std::invalid_argument("generate_anchors: extents must be positive");
    }
    if (scales.empty() || ratios.empty()) {
        throw std::invalid_argument("generate_anchors: empty scales/ratios");
    }
    std::vector<Box> anchors;
    anchors.reserve(static_cast<size_t>(feat_h) * feat_w * scales.size() * ratios.size());
    for (int i = 0; i < feat_h; ++i) {
        for (int j = 0; j < feat_w; ++j) {
            const float cx = (static_cast<float>(j) + 0.5f) * static_cast<float>(stride);
            const float cy = (static_cast<float>(i) + 0.5f) * static_cast<float>(stride);
            for (float scale : scales) {
                for (float ratio : ratios) {
                    // width/height = ratio at area scale^2
                    const float w = scale * std::sqrt(ratio);
                    const float h = scale / std::sqrt(ratio);
                    anchors.push_back(
                        Box{cx - 0.5f * w, cy - 0.5f * h, cx + 0.5f * w, cy + 0.5f * h});
                }
            }
        }
    }
    return anchors;
}

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<float>& scores,
                     float iou_thresh) {
    if (boxes.size() != scores.size()) {
        throw std::invalid_argument("nms: boxes/scores length mismatch");
    }
    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    });
    std::vector<int> kept;
    for (int idx : order) {
        const Box& candidate = boxes[static_cast<size_t>(idx)];
        bool suppressed = false;
        for (int kept_idx : kept) {
            if (iou(candidate, boxes[static_cast<size_t>(kept_idx)]) > iou_thresh) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(idx);
    }
    return kept;
}

std::vector<Proposal> rpn_propose(const Tensor& shared_map, const ParamStore& params,
                                  const RpnConfig& config, int stride, int img_w,
                                  int img_h) {
    config.validate();
    Tensor hidden = k::relu(k::conv2d(shared_map, param(params, "rpn.conv.w"),
                                      param(params, "rpn.conv.b"), ConvSpec{1, 1, 1}));
    Tensor obj = k::conv2d(hidden, param(params, "rpn.obj.w"), param(params, "rpn.obj.b"),
                           ConvSpec{1, 1, 0});
    Tensor deltas = k::conv2d(hidden, param(params, "rpn.box.w"),
                              param(params, "rpn.box.b"), ConvSpec{1, 1, 0});

    const int H = shared_map.dim(1), W = shared_map.dim(2);
    const int A = config.num_anchors();
    const auto anchors =
        generate_anchors(H, W, stride, config.anchor_scales, config.anchor_ratios);

    std::vector<float> scores(anchors.size());
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            for (int a = 0; a < A; ++a) {
                const float logit = obj.at(a, i, j);
                scores[(static_cast<size_t>(i) * W + j) * A + a] =
                    1.0f / (1.0f + std::exp(-logit));
            }
        }
    }

    std::vector<int> order(anchors.size());
    std::iota(order.begin(), order.end(), 0);
    const size_t keep_n =
        std::min(static_cast<size_t>(config.pre_nms_topk), order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep_n),
                      order.end(), [&](int a, int b) {
                          const float sa = scores[static_cast<size_t>(a)];
                          const float sb = scores[static_cast<size_t>(b)];
                          return sa != sb ? sa > sb : a < b;
                      });
    order.resize(keep_n);

    std::vector<Box> decoded;
    std::vector<float> decoded_scores;
    decoded.reserve(order.size());
    for (int idx : order) {
        const float s = scores[static_cast<size_t>(idx)];
        if (s < config.score_thresh) continue;
        const int cell = idx / A;
        const int a = idx % A;
        const int ci = cell / W, cj = cell % W;
        const BoxDeltas d{deltas.at(4 * a + 0, ci, cj), deltas.at(4 * a + 1, ci, cj),
                          deltas.at(4 * a + 2, ci, cj), deltas.at(4 * a + 3, ci, cj)};
        Box b = decode_deltas(anchors[static_cast<size_t>(idx)], d, img_w, img_h);
        if (b.width() < 1e-3f || b.height() < 1e-3f) continue;
        decoded.push_back(b);
        decoded_scores.push_back(s);
    }

    const auto kept = nms(decoded, decoded_scores, config.nms_iou);
    std::vector<Proposal> proposals;
    proposals.reserve(std::min(kept.size(), static_cast<size_t>(config.post_nms_topk)));
    for (int idx : kept) {
        if (static_cast<int>(proposals.size()) >= config.post_nms_topk) break;
        proposals.push_back(Proposal{decoded[static_cast<size_t>(idx)],
                                     decoded_scores[static_cast<size_t>(idx)]});
    }
    return proposals;
}

RegionBatch region_features(const std::vector<Proposal>& proposals,
                            const Tensor& shared_map, const ParamStore& params,
                            const BackboneConfig& bb, const DetectorConfig& det,
                            int stride) {
    det.head.validate();
    const int R = static_cast<int>(proposals.size());
    const int D = region_feature_dim(bb, det);
    RegionBatch batch;
    batch.count = R;
    batch.vectors = Tensor({std::max(R, 1), D});
    batch.class_logits = Tensor({std::max(R, 1), det.num_classes + 1});
    batch.box_deltas = Tensor({std::max(R, 1), 4 * (det.num_classes + 1)});
    batch.attr_logits = Tensor({std::max(R, 1), det.num_attributes});
    if (R == 0) return batch;

    const VarMap vars = make_var_map(params);
    const Tensor& cls_w = param(params, "head.cls.w");
    const Tensor& cls_b = param(params, "head.cls.b");
    const Tensor& box_w = param(params, "head.box.w");
    const Tensor& box_b = param(params, "head.box.b");
    const Tensor& attr_w = param(params, "head.attr.w");
    const Tensor& attr_b = param(params, "head.attr.b");

    for (int r = 0; r < R; ++r) {
        Tensor vec;
        if (det.head.mode == RegionHeadConfig::Mode::c5_14x14) {
            Tensor pooled = roi_pool(shared_map, proposals[static_cast<size_t>(r)].box,
                                     det.head.pool_size, stride, det.head.mean_pool);
            ad::Var c5 = forward_c5(ad::constant(std::move(pooled)), vars, bb,
                                    BackboneConfig::C5Mode::standard);
            vec = kernels::global_avg_pool(c5->value);
        } else {
            Tensor pooled = roi_pool(shared_map, proposals[static_cast<size_t>(r)].box, 1,
                                     stride, det.head.mean_pool);
            Tensor flat({shared_map.dim(0)}, pooled.values());
            Tensor h1 = k::relu(k::linear(flat, param(params, "head.fc1.w"),
                                          param(params, "head.fc1.b")));
            vec = k::relu(k::linear(h1, param(params, "head.fc2.w"),
                                    param(params, "head.fc2.b")));
        }
        std::copy(vec.data(), vec.data() + D,
                  batch.vectors.data() + static_cast<size_t>(r) * D);
        Tensor cls = k::linear(vec, cls_w, cls_b);
        std::copy(cls.data(), cls.data() + cls.numel(),
                  batch.class_logits.data() + static_cast<size_t>(r) * cls.numel());
        Tensor box = k::linear(vec, box_w, box_b);
        std::copy(box.data(), box.data() + box.numel(),
                  batch.box_deltas.data() + static_cast<size_t>(r) * box.numel());
        Tensor attr = k::linear(vec, attr_w, attr_b);
        std::copy(attr.data(), attr.data() + attr.numel(),
                  batch.attr_logits.data() + static_cast<size_t>(r) * attr.numel());
    }
    return batch;
}

std::vector<Detection> make_detections(const std::vector<Proposal>& proposals,
                                       const RegionBatch& batch, const DetectorConfig& det,
                                       int img_w, int img_h) {
    std::vector<Detection> out;
    const int C = det.num_classes;
    for (int r = 0; r < batch.count; ++r) {
        Tensor logits({C + 1});
        std::copy(batch.class_logits.data() + static_cast<size_t>(r) * (C + 1),
                  batch.class_logits.data() + static_cast<size_t>(r + 1) * (C + 1),
                  logits.data());
        Tensor probs = k::softmax(logits);
        const float* drow = batch.box_deltas.data() + static_cast<size_t>(r) * 4 * (C + 1);
        for (int c = 0; c < C; ++c) {
            const float score = probs.at(c);
            if (score < det.class_score_thresh) continue;
            const BoxDeltas d{drow[4 * c + 0], drow[4 * c + 1], drow[4 * c + 2],
                              drow[4 * c + 3]};
            Box b = decode_deltas(proposals[static_cast<size_t>(r)].box, d, img_w, img_h);
            if (b.width() < 1e-3f || b.height() < 1e-3f) continue;
            Detection detn;
            detn.box = b;
            detn.class_id = c;
            detn.score = score;
            detn.region_index = r;
            out.push_back(std::move(detn));
        }
    }
    return out;
}

void attach_attribute_scores(std::vector<Detection>& detections, const RegionBatch& batch) {
    const int A = batch.attr_logits.dim(1);
    for (Detection& d : detections) {
        if (d.region_index < 0) continue;
        Tensor logits({A});
        std::copy(batch.attr_logits.data() + static_cast<size_t>(d.region_index) * A,
                  batch.attr_logits.data() + static_cast<size_t>(d.region_index + 1) * A,
                  logits.data());
        Tensor probs = k::softmax(logits);
        d.attribute_scores.assign(probs.data(), probs.data() + A);
    }
}

SelectedRegions select_top_regions(const std::vector<Detection>& detections, int n,
                                   float class_nms_iou) {
    if (n < 1) throw std::invalid_argument("select_top_regions: n must be >= 1");
    int max_class = -1;
    for (const auto& d : detections) max_class = std::max(max_class, d.class_id);

    // bucket detection indices per class, keeping input order
    std::vector<std::vector<int>> per_class(static_cast<size_t>(max_class + 1));
    for (size_t i = 0; i < detections.size(); ++i) {
        per_class[static_cast<size_t>(detections[i].class_id)].push_back(
            static_cast<int>(i));
    }

    std::vector<int> surviving;
    for (const auto& members : per_class) {
        if (members.empty()) continue;
        std::vector<Box> boxes;
        std::vector<float> scores;
        boxes.reserve(members.size());
        for (int idx : members) {
            boxes.push_back(detections[static_cast<size_t>(idx)].box);
            scores.push_back(detections[static_cast<size_t>(idx)].score);
        }
        for (int kept : nms(boxes, scores, class_nms_iou)) {
            surviving.push_back(members[static_cast<size_t>(kept)]);
        }
    }

    std::stable_sort(surviving.begin(), surviving.end(), [&](int a, int b) {
        return detections[static_cast<size_t>(a)].score >
               detections[static_cast<size_t>(b)].score;
    });

    SelectedRegions selected;
    selected.rows.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        if (i < static_cast<int>(surviving.size())) {
            selected.rows.push_back(detections[static_cast<size_t>(surviving[i])]);
            selected.mask.push_back(true);
        } else {
            Detection pad;
            pad.class_id = -1;
            selected.rows.push_back(pad);
            selected.mask.push_back(false);
        }
    }
    return selected;
}

std::vector<int> assign_anchors(const std::vector<Box>& anchors,
                                const std::vector<GtObject>& gts, float pos_iou,
                                float neg_iou) {
    std::vector<int> assignment(anchors.size(), -1);
    if (gts.empty()) return assignment;
    std::vector<float> best_iou(anchors.size(), 0.0f);
    std::vector<float> best_per_gt(gts.size(), 0.0f);
    for (size_t a = 0; a < anchors.size(); ++a) {
        for (size_t g = 0; g < gts.size(); ++g) {
            const float v = iou(anchors[a], gts[g].box);
            if (v > best_iou[a]) {
                best_iou[a] = v;
                assignment[a] = static_cast<int>(g);
            }
            best_per_gt[g] = std::max(best_per_gt[g], v);
        }
    }
    for (size_t a = 0; a < anchors.size(); ++a) {
        bool positive = best_iou[a] >= pos_iou;
        if (!positive && assignment[a] >= 0 && best_iou[a] > 0.0f) {
            // the best anchor for a gt stays positive even below pos_iou
            positive = best_iou[a] >=
                       best_per_gt[static_cast<size_t>(assignment[a])] - 1e-6f;
        }
        if (positive) continue;
        assignment[a] = best_iou[a] < neg_iou ? -1 : -2;
    }
    return assignment;
}

DetectorLoss detector_loss(const DetectorLossInputs& inputs, float attr_weight) {
    if (attr_weight < 0.0f) {
        throw std::invalid_argument("detector_loss: attr_weight must be >= 0");
    }
    auto zero = [] { return ad::leaf(Tensor({1}, 0.0f), false); };

    DetectorLoss loss;
    std::vector<ad::Var> terms;

    ad::Var rpn_obj = zero();
    if (!inputs.rpn_obj_logits.empty()) {
        if (inputs.rpn_obj_logits.size() != inputs.rpn_obj_labels.size()) {
            throw std::invalid_argument("detector_loss: rpn objectness size mismatch");
        }
        Tensor labels({static_cast<int>(inputs.rpn_obj_labels.size())},
                      std::vector<float>(inputs.rpn_obj_labels.begin(),
                                         inputs.rpn_obj_labels.end()));
        rpn_obj = ad::bce_with_logits_mean(ad::stack_scalars(inputs.rpn_obj_logits), labels);
    }
    terms.push_back(rpn_obj);

    auto box_term = [&](const std::vector<ad::Var>& preds,
                        const std::vector<BoxDeltas>& targets) {
        if (preds.empty()) return zero();
        if (preds.size() != targets.size()) {
            throw std::invalid_argument("detector_loss: box target size mismatch");
        }
        std::vector<ad::Var> pieces;
        for (size_t i = 0; i < preds.size(); ++i) {
            Tensor t({4}, std::vector<float>(targets[i].begin(), targets[i].end()));
            pieces.push_back(ad::smooth_l1_mean(preds[i], t, 1.0f));
        }
        return ad::mean_scalars(pieces);
    };
    ad::Var rpn_box = box_term(inputs.rpn_box_preds, inputs.rpn_box_targets);
    terms.push_back(rpn_box);

    ad::Var cls = zero();
    if (!inputs.roi_class_logits.empty()) {
        if (inputs.roi_class_logits.size() != inputs.roi_class_labels.size()) {
            throw std::invalid_argument("detector_loss: class label size mismatch");
        }
        std::vector<ad::Var> pieces;
        for (size_t i = 0; i < inputs.roi_class_logits.size(); ++i) {
            pieces.push_back(ad::softmax_cross_entropy(inputs.roi_class_logits[i],
                                                       inputs.roi_class_labels[i]));
        }
        cls = ad::mean_scalars(pieces);
    }
    terms.push_back(cls);

    ad::Var box = box_term(inputs.roi_box_preds, inputs.roi_box_targets);
    terms.push_back(box);

    ad::Var attr = zero();
    if (!inputs.roi_attr_logits.empty()) {
        if (inputs.roi_attr_logits.size() != inputs.roi_attr_labels.size()) {
            throw std::invalid_argument("detector_loss: attr label size mismatch");
        }
        std::vector<ad::Var> pieces;
        for (size_t i = 0; i < inputs.roi_attr_logits.size(); ++i) {
            pieces.push_back(ad::softmax_cross_entropy(inputs.roi_attr_logits[i],
                                                       inputs.roi_attr_labels[i]));
        }
        attr = ad::mean_scalars(pieces);
    }
    terms.push_back(ad::scale(attr, attr_weight));

    loss.total = ad::sum_scalars(terms);
    loss.rpn_objectness = rpn_obj->value.at(0);
    loss.rpn_box = rpn_box->value.at(0);
    loss.cls = cls->value.at(0);
    loss.box = box->value.at(0);
    loss.attr = attr->value.at(0);
    return loss;
}

ApResult evaluate_detection_ap(const std::vector<std::vector<Detection>>& detections,
                               const std::vector<std::vector<GtObject>>& ground_truth,
                               float iou_thresh) {
    if (iou_thresh <= 0.0f || iou_thresh >= 1.0f) {
        throw std::invalid_argument("evaluate_detection_ap: iou_thresh must be in (0,1)");
    }
    if (detections.size() != ground_truth.size()) {
        throw std::invalid_argument("evaluate_detection_ap: image count mismatch");
    }
    // classes with at least one gt instance
    std::map<int, int> gt_count;
    for (const auto& img_gts : ground_truth) {
        for (const auto& gt : img_gts) ++gt_count[gt.class_id];
    }

    ApResult result;
    for (const auto& [cls, total_gt] : gt_count) {
        struct Entry {
            float score;
            size_t image;
            size_t det_index;
        };
        std::vector<Entry> entries;
        for (size_t img = 0; img < detections.size(); ++img) {
            for (size_t d = 0; d < detections[img].size(); ++d) {
                if (detections[img][d].class_id == cls) {
                    entries.push_back(Entry{detections[img][d].score, img, d});
                }
            }
        }
        std::stable_sort(entries.begin(), entries.end(),
                         [](const Entry& a, const Entry& b) { return a.score > b.score; });

        std::vector<std::vector<bool>> matched(ground_truth.size());
        for (size_t img = 0; img < ground_truth.size(); ++img) {
            matched[img].assign(ground_truth[img].size(), false);
        }

        std::vector<int> tp(entries.size(), 0);
        for (size_t e = 0; e < entries.size(); ++e) {
            const auto& det = detections[entries[e].image][entries[e].det_index];
            const auto& gts = ground_truth[entries[e].image];
            float best = 0.0f;
            int best_gt = -1;
            for (size_t g = 0; g < gts.size(); ++g) {
                if (gts[g].class_id != cls) continue;
                const float v = iou(det.box, gts[g].box);
                if (v >= iou_thresh && v > best) {
                    best = v;
                    best_gt = static_cast<int>(g);
                }
            }
            if (best_gt >= 0 && !matched[entries[e].image][static_cast<size_t>(best_gt)]) {
                matched[entries[e].image][static_cast<size_t>(best_gt)] = true;
                tp[e] = 1;
            }
        }

        // all-points interpolated precision/recall integration
        std::vector<double> precision, recall;
        int tp_acc = 0;
        for (size_t e = 0; e < entries.size(); ++e) {
            tp_acc += tp[e];
            precision.push_back(static_cast<double>(tp_acc) / static_cast<double>(e + 1));
            recall.push_back(static_cast<double>(tp_acc) / total_gt);
        }
        for (int e = static_cast<int>(precision.size()) - 2; e >= 0; --e) {
            precision[static_cast<size_t>(e)] =
                std::max(precision[static_cast<size_t>(e)], precision[static_cast<size_t>(e + 1)]);
        }
        double ap = 0.0;
        double prev_recall = 0.0;
        for (size_t e = 0; e < precision.size(); ++e) {
            ap += (recall[e] - prev_recall) * precision[e];
            prev_recall = recall[e];
        }
        result.per_class[cls] = static_cast<float>(ap);
    }

    if (!result.per_class.empty()) {
        double sum = 0.0;
        for (const auto& [cls, ap] : result.per_class) sum += ap;
        result.mean_ap = static_cast<float>(sum / static_cast<double>(result.per_class.size()));
    }
    return result;
}

}  // namespace gf
