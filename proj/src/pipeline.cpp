#include "gf/pipeline.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gf/kernels.h"

namespace gf::pipeline {

namespace ad = gf::ad;

PretrainMode pretrain_mode_from_name(const std::string& name) {
    if (name == "classification") return PretrainMode::classification_only;
    if (name == "detection") return PretrainMode::detection;
    if (name == "detection+attributes") return PretrainMode::detection_attributes;
    throw std::invalid_argument("unknown pretrain mode: " + name);
}

const char* pretrain_mode_name(PretrainMode mode) {
    switch (mode) {
        case PretrainMode::classification_only: return "classification";
        case PretrainMode::detection: return "detection";
        case PretrainMode::detection_attributes: return "detection+attributes";
    }
    return "detection+attributes";
}

DatasetView::DatasetView(std::vector<synth::SceneRecord> records, std::vector<Image> images)
    : records_(std::move(records)), images_(std::move(images)) {
    if (records_.size() != images_.size()) {
        throw std::invalid_argument("DatasetView: record/image count mismatch");
    }
}

std::vector<int> DatasetView::class_presence(size_t i) const {
    std::vector<int> present(synth::kNumShapeClasses, 0);
    for (const auto& o : records_.at(i).spec.objects) {
        present[static_cast<size_t>(o.shape_class)] = 1;
    }
    return present;
}

DatasetView make_view(uint64_t seed, const std::string& split, int count,
                      const synth::SceneConfig& config) {
    auto scenes = synth::generate_split(seed, split, count, config);
    std::vector<synth::SceneRecord> records;
    std::vector<Image> images;
    records.reserve(scenes.size());
    images.reserve(scenes.size());
    for (auto& [record, image] : scenes) {
        records.push_back(std::move(record));
        images.push_back(std::move(image));
    }
    return DatasetView(std::move(records), std::move(images));
}

namespace {

bool is_statistic(const std::string& name) {
    const auto ends_with = [&](const char* suffix) {
        const size_t len = std::string(suffix).size();
        return name.size() >= len && name.compare(name.size() - len, len, suffix) == 0;
    };
    return ends_with(".mean") || ends_with(".var");
}

std::function<bool(const std::string&)> trainable_predicate(const TrainSchedule& schedule) {
    return [schedule](const std::string& name) {
        return !is_statistic(name) && !schedule.frozen(name);
    };
}

std::map<std::string, Tensor> collect_grads(const VarMap& vars) {
    std::map<std::string, Tensor> grads;
    for (const auto& [name, v] : vars) {
        if (v->requires_grad && !v->grad.empty()) grads.emplace(name, v->grad);
    }
    return grads;
}

Box jitter_box(const Box& box, Rng& rng, int img_w, int img_h) {
    const float w = box.width(), h = box.height();
    const float dx = rng.uniform(-0.1f, 0.1f) * w;
    const float dy = rng.uniform(-0.1f, 0.1f) * h;
    const float sw = 1.0f + rng.uniform(-0.15f, 0.15f);
    const float sh = 1.0f + rng.uniform(-0.15f, 0.15f);
    const float cx = box.cx() + dx, cy = box.cy() + dy;
    Box out{cx - 0.5f * w * sw, cy - 0.5f * h * sh, cx + 0.5f * w * sw, cy + 0.5f * h * sh};
    return clip_box(out, img_w, img_h);
}

Box random_box_in(Rng& rng, int img_w, int img_h) {
    const float w = rng.uniform(8.0f, static_cast<float>(img_w) * 0.5f);
    const float h = rng.uniform(8.0f, static_cast<float>(img_h) * 0.5f);
    const float x1 = rng.uniform(0.0f, static_cast<float>(img_w) - w);
    const float y1 = rng.uniform(0.0f, static_cast<float>(img_h) - h);
    return Box{x1, y1, x1 + w, y1 + h};
}

// head vector for one roi on the tape, mirroring region_features()
ad::Var roi_head_vector(const ad::Var& shared, const Box& roi, const VarMap& vars,
                        const BackboneConfig& bb, const DetectorConfig& det) {
    const auto& head = det.head;
    if (head.mode == RegionHeadConfig::Mode::c5_14x14) {
        ad::Var pooled = ad::roi_pool(shared, roi, head.pool_size, 16, head.mean_pool);
        ad::Var c5 = forward_c5(pooled, vars, bb, BackboneConfig::C5Mode::standard);
        return ad::global_avg_pool(c5);
    }
    ad::Var pooled = ad::roi_pool(shared, roi, 1, 16, head.mean_pool);
    ad::Var flat = ad::flatten(pooled);
    ad::Var h1 = ad::relu(
        ad::linear(flat, vars.at("head.fc1.w"), vars.at("head.fc1.b")));
    return ad::relu(ad::linear(h1, vars.at("head.fc2.w"), vars.at("head.fc2.b")));
}

}  // namespace

PretrainResult pretrain_detector(const DatasetView& data, const PretrainConfig& config,
                                 uint64_t seed) {
    if (data.size() == 0) throw std::invalid_argument("pretrain_detector: empty dataset");
    config.detector.validate();
    config.schedule.validate();

    BackboneConfig bb = config.backbone;
    if (config.detector.head.mode == RegionHeadConfig::Mode::fc2_1x1) {
        bb.c5_mode = BackboneConfig::C5Mode::dilated;
    }
    ParamStore params = build_detector(bb, config.detector, seed);
    if (config.mode == PretrainMode::classification_only) {
        Rng rng(derive_seed(seed, "clsnet-init"));
        params.emplace("clsnet.fc.w",
                       he_normal({synth::kNumShapeClasses, bb.c5_channels()},
                                 bb.c5_channels(), rng));
        params.emplace("clsnet.fc.b", Tensor({synth::kNumShapeClasses}, 0.0f));
    }

    Optimizer optimizer(config.schedule);
    Rng batch_rng(derive_seed(seed, "pretrain-batches"));
    Rng sample_rng(derive_seed(seed, "pretrain-samples"));
    const auto trainable = trainable_predicate(config.schedule);
    const int A = config.detector.rpn.num_anchors();
    std::vector<LossLogRow> log;

    for (int it = 0; it < config.schedule.iterations; ++it) {
        VarMap vars = make_var_map(params, trainable);
        std::vector<ad::Var> image_losses;
        DetectorLossInputs inputs;

        for (int b = 0; b < config.schedule.batch_size; ++b) {
            const size_t idx = static_cast<size_t>(
                batch_rng.uniform_int(0, static_cast<int>(data.size()) - 1));
            const Image& image = data.image(idx);
            const int img_w = image.width, img_h = image.height;
            ad::Var input = ad::constant(image_to_tensor(image));
            ad::Var c4 = forward_to_c4(input, vars, bb);

            if (config.mode == PretrainMode::classification_only) {
                ad::Var c5 = forward_c5(c4, vars, bb, BackboneConfig::C5Mode::standard);
                ad::Var pooled = ad::global_avg_pool(c5);
                ad::Var logits =
                    ad::linear(pooled, vars.at("clsnet.fc.w"), vars.at("clsnet.fc.b"));
                const auto present = data.class_presence(idx);
                Tensor targets({synth::kNumShapeClasses});
                for (int c = 0; c < synth::kNumShapeClasses; ++c) {
                    targets.at(c) = static_cast<float>(present[static_cast<size_t>(c)]);
                }
                image_losses.push_back(ad::bce_with_logits_mean(logits, targets));
                continue;
            }

            const auto& gts = data.boxes(idx);
            ad::Var shared = config.detector.head.mode == RegionHeadConfig::Mode::fc2_1x1
                                 ? forward_c5(c4, vars, bb, BackboneConfig::C5Mode::dilated)
                                 : c4;

            // rpn forward
            ad::Var hidden = ad::relu(ad::conv2d(shared, vars.at("rpn.conv.w"),
                                                 vars.at("rpn.conv.b"), ConvSpec{1, 1, 1}));
            ad::Var obj = ad::conv2d(hidden, vars.at("rpn.obj.w"), vars.at("rpn.obj.b"),
                                     ConvSpec{1, 1, 0});
            ad::Var deltas = ad::conv2d(hidden, vars.at("rpn.box.w"), vars.at("rpn.box.b"),
                                        ConvSpec{1, 1, 0});
            const int fh = shared->value.dim(1), fw = shared->value.dim(2);
            const auto anchors = generate_anchors(fh, fw, 16, config.detector.rpn.anchor_scales,
                                                  config.detector.rpn.anchor_ratios);
            const auto assignment = assign_anchors(anchors, gts, 0.5f, 0.3f);

            std::vector<int> positives, negatives;
            for (size_t a = 0; a < assignment.size(); ++a) {
                if (assignment[a] >= 0) positives.push_back(static_cast<int>(a));
                if (assignment[a] == -1) negatives.push_back(static_cast<int>(a));
            }
            // uniform random subsample, roughly balanced
            const int want_pos = std::min(static_cast<int>(positives.size()),
                                          config.rpn_samples_per_image / 2);
            const int want_neg = std::min(static_cast<int>(negatives.size()),
                                          config.rpn_samples_per_image - want_pos);
            auto subsample = [&](std::vector<int>& pool, int want) {
                for (int i = 0; i < want; ++i) {
                    const int j =
                        sample_rng.uniform_int(i, static_cast<int>(pool.size()) - 1);
                    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
                }
                pool.resize(static_cast<size_t>(want));
            };
            subsample(positives, want_pos);
            subsample(negatives, want_neg);

            const auto obj_index = [&](int anchor) {
                const int cell = anchor / A, a = anchor % A;
                return static_cast<int64_t>(a) * fh * fw + cell;
            };
            for (int a : positives) {
                inputs.rpn_obj_logits.push_back(ad::elements(obj, {obj_index(a)}));
                inputs.rpn_obj_labels.push_back(1.0f);
                const int cell = a / A, ac = a % A;
                std::vector<int64_t> didx;
                for (int d = 0; d < 4; ++d) {
                    didx.push_back(static_cast<int64_t>(4 * ac + d) * fh * fw + cell);
                }
                inputs.rpn_box_preds.push_back(ad::elements(deltas, didx));
                inputs.rpn_box_targets.push_back(encode_deltas(
                    anchors[static_cast<size_t>(a)], gts[static_cast<size_t>(assignment[static_cast<size_t>(a)])].box));
            }
            for (int a : negatives) {
                inputs.rpn_obj_logits.push_back(ad::elements(obj, {obj_index(a)}));
                inputs.rpn_obj_labels.push_back(0.0f);
            }

            // roi head training on gt boxes, jittered copies and negatives
            struct RoiSample {
                Box box;
                int label;    // class id or background
                int gt_index; // -1 for background
            };
            std::vector<RoiSample> rois;
            const int per_gt = std::max(1, config.rois_per_image / 2 /
                                               std::max(1, static_cast<int>(gts.size())));
            for (size_t g = 0; g < gts.size(); ++g) {
                rois.push_back({gts[g].box, gts[g].class_id, static_cast<int>(g)});
                for (int j = 1; j < per_gt; ++j) {
                    Box jb = jitter_box(gts[g].box, sample_rng, img_w, img_h);
                    if (iou(jb, gts[g].box) >= 0.5f) {
                        rois.push_back({jb, gts[g].class_id, static_cast<int>(g)});
                    }
                }
            }
            const int want_bg = std::max(1, config.rois_per_image -
                                                static_cast<int>(rois.size()));
            for (int tries = 0, found = 0; tries < 50 && found < want_bg; ++tries) {
                Box rb = random_box_in(sample_rng, img_w, img_h);
                float best = 0.0f;
                for (const auto& gt : gts) best = std::max(best, iou(rb, gt.box));
                if (best < 0.3f) {
                    rois.push_back({rb, config.detector.background_id(), -1});
                    ++found;
                }
            }

            for (const auto& roi : rois) {
                ad::Var vec = roi_head_vector(shared, roi.box, vars, bb, config.detector);
                ad::Var cls =
                    ad::linear(vec, vars.at("head.cls.w"), vars.at("head.cls.b"));
                inputs.roi_class_logits.push_back(cls);
                inputs.roi_class_labels.push_back(roi.label);
                if (roi.gt_index >= 0) {
                    ad::Var box_out =
                        ad::linear(vec, vars.at("head.box.w"), vars.at("head.box.b"));
                    std::vector<int64_t> bidx;
                    for (int d = 0; d < 4; ++d) bidx.push_back(4 * roi.label + d);
                    inputs.roi_box_preds.push_back(ad::elements(box_out, bidx));
                    inputs.roi_box_targets.push_back(
                        encode_deltas(roi.box, gts[static_cast<size_t>(roi.gt_index)].box));
                    if (config.mode == PretrainMode::detection_attributes) {
                        ad::Var attr =
                            ad::linear(vec, vars.at("head.attr.w"), vars.at("head.attr.b"));
                        inputs.roi_attr_logits.push_back(attr);
                        inputs.roi_attr_labels.push_back(
                            gts[static_cast<size_t>(roi.gt_index)].attr_id);
                    }
                }
            }
        }

        ad::Var total;
        if (config.mode == PretrainMode::classification_only) {
            total = ad::mean_scalars(image_losses);
        } else {
            const float attr_weight = config.mode == PretrainMode::detection_attributes
                                          ? config.detector.attr_weight
                                          : 0.0f;
            total = detector_loss(inputs, attr_weight).total;
        }
        ad::backward(total);
        const float lr = optimizer.step(params, collect_grads(vars));
        log.push_back({it, total->value.at(0), lr});
        if (!std::isfinite(total->value.at(0))) {
            throw std::runtime_error("pretrain_detector: loss diverged (non-finite)");
        }
    }
    return {std::move(params), std::move(log)};
}

FeatureSet extract_region_features(const Image& image, const ParamStore& weights,
                                   const BackboneConfig& bb, const DetectorConfig& det) {
    BackboneConfig run_bb = bb;
    if (det.head.mode == RegionHeadConfig::Mode::fc2_1x1) {
        run_bb.c5_mode = BackboneConfig::C5Mode::dilated;
    }
    const Tensor input = image_to_tensor(image);
    const VarMap vars = make_var_map(weights);
    ad::Var c4 = forward_to_c4(ad::constant(input), vars, run_bb);
    Tensor shared = det.head.mode == RegionHeadConfig::Mode::fc2_1x1
                        ? forward_c5(c4, vars, run_bb, BackboneConfig::C5Mode::dilated)->value
                        : c4->value;
    const auto proposals =
        rpn_propose(shared, weights, det.rpn, 16, image.width, image.height);
    const auto batch = region_features(proposals, shared, weights, run_bb, det, 16);
    auto detections = make_detections(proposals, batch, det, image.width, image.height);
    auto selected = select_top_regions(detections, det.top_n, det.class_nms_iou);
    return from_regions(selected, batch, image.height, image.width);
}

FeatureSet extract_grid_features(const Image& image, const ParamStore& weights,
                                 const BackboneConfig& bb) {
    const Tensor map = grid_features(image_to_tensor(image), weights, bb);
    return from_grid(map, kGridStride, image.height, image.width);
}

void VqaDataset::rebuild_example_index() {
    examples.clear();
    for (size_t s = 0; s < qa.size(); ++s) {
        for (size_t q = 0; q < qa[s].size(); ++q) {
            examples.emplace_back(static_cast<int>(s), static_cast<int>(q));
        }
    }
}

VqaDataset build_vqa_dataset(const DatasetView& data, FeatureSet::Kind kind,
                             const ParamStore& weights, const BackboneConfig& bb,
                             const DetectorConfig& det) {
    VqaDataset out;
    for (size_t i = 0; i < data.size(); ++i) {
        out.features.push_back(kind == FeatureSet::Kind::region
                                   ? extract_region_features(data.image(i), weights, bb, det)
                                   : extract_grid_features(data.image(i), weights, bb));
        out.qa.push_back(data.questions(i));
    }
    out.rebuild_example_index();
    return out;
}

namespace {

Tensor one_hot(int id, int n) {
    Tensor t({n}, 0.0f);
    if (id < 0 || id >= n) throw std::out_of_range("one_hot: answer id out of range");
    t.at(id) = 1.0f;
    return t;
}

std::vector<int> qa_token_ids(const synth::QAPair& qa, const Vocabulary& vocab) {
    std::vector<int> ids;
    ids.reserve(qa.question.size());
    for (const auto& w : qa.question) ids.push_back(vocab.token_id(w));
    return ids;
}

}  // namespace

VqaTrainResult train_vqa_head(const VqaDataset& train, const VqaConfig& model,
                              const TrainSchedule& schedule, uint64_t seed) {
    if (train.examples.empty()) throw std::invalid_argument("train_vqa_head: empty dataset");
    model.validate();
    const Vocabulary vocab = synth::default_vocabulary();
    ParamStore params = build_vqa_head(model, seed);
    Optimizer optimizer(schedule);
    Rng batch_rng(derive_seed(schedule.seed, "vqa-batches"));
    const auto trainable = trainable_predicate(schedule);
    std::vector<LossLogRow> log;

    for (int it = 0; it < schedule.iterations; ++it) {
        VarMap vars = make_var_map(params, trainable);
        std::vector<ad::Var> losses;
        for (int b = 0; b < schedule.batch_size; ++b) {
            const auto [scene, qidx] = train.examples[static_cast<size_t>(batch_rng.uniform_int(
                0, static_cast<int>(train.examples.size()) - 1))];
            const FeatureSet& set = train.features[static_cast<size_t>(scene)];
            const synth::QAPair& qa = train.qa[static_cast<size_t>(scene)][static_cast<size_t>(qidx)];
            ad::Var rows = feature_rows(set, vars, model);
            auto out = vqa_head_forward(rows, set.mask, qa_token_ids(qa, vocab), vars, model);
            losses.push_back(
                vqa_loss(out.logits, one_hot(qa.answer_id, model.num_answers)));
        }
        ad::Var total = ad::mean_scalars(losses);
        ad::backward(total);
        const float lr = optimizer.step(params, collect_grads(vars));
        log.push_back({it, total->value.at(0), lr});
    }
    return {std::move(params), std::move(log)};
}

float eval_vqa(const ParamStore& head, const VqaConfig& model, const VqaDataset& eval) {
    if (eval.examples.empty()) throw std::invalid_argument("eval_vqa: empty dataset");
    const Vocabulary vocab = synth::default_vocabulary();
    const VarMap vars = make_var_map(head);
    int correct = 0;
    for (const auto& [scene, qidx] : eval.examples) {
        const FeatureSet& set = eval.features[static_cast<size_t>(scene)];
        const synth::QAPair& qa = eval.qa[static_cast<size_t>(scene)][static_cast<size_t>(qidx)];
        ad::Var rows = feature_rows(set, vars, model);
        auto out = vqa_head_forward(rows, set.mask, qa_token_ids(qa, vocab), vars, model);
        int argmax = 0;
        for (int i = 1; i < model.num_answers; ++i) {
            if (out.logits->value.at(i) > out.logits->value.at(argmax)) argmax = i;
        }
        correct += argmax == qa.answer_id ? 1 : 0;
    }
    return 100.0f * static_cast<float>(correct) / static_cast<float>(eval.examples.size());
}

float majority_baseline_accuracy(const VqaDataset& train, const VqaDataset& eval) {
    std::map<int, int> counts;
    for (const auto& [scene, qidx] : train.examples) {
        ++counts[train.qa[static_cast<size_t>(scene)][static_cast<size_t>(qidx)].answer_id];
    }
    int majority = -1, best = -1;
    for (const auto& [id, count] : counts) {
        if (count > best) {
            best = count;
            majority = id;
        }
    }
    int correct = 0;
    for (const auto& [scene, qidx] : eval.examples) {
        correct +=
            eval.qa[static_cast<size_t>(scene)][static_cast<size_t>(qidx)].answer_id == majority
                ? 1
                : 0;
    }
    return 100.0f * static_cast<float>(correct) / static_cast<float>(eval.examples.size());
}

namespace {

ad::Var e2e_rows(const Tensor& image_tensor, const VarMap& vars, const E2eConfig& config) {
    ad::Var c4 = forward_to_c4(ad::constant(image_tensor), vars, config.backbone);
    ad::Var c5 = forward_c5(c4, vars, config.backbone, BackboneConfig::C5Mode::standard);
    if (config.model.use_ppm) {
        return ad::rows_from_grid(ppm(c5, vars, config.model.ppm));
    }
    return ad::rows_from_grid(c5);
}

}  // namespace

VqaTrainResult train_e2e(const DatasetView& data, const ParamStore& initial,
                         const E2eConfig& config, uint64_t seed) {
    if (data.size() == 0) throw std::invalid_argument("train_e2e: empty dataset");
    config.model.validate();
    const Vocabulary vocab = synth::default_vocabulary();

    // flat example index over (scene, qa)
    std::vector<std::pair<int, int>> examples;
    for (size_t s = 0; s < data.size(); ++s) {
        for (size_t q = 0; q < data.questions(s).size(); ++q) {
            examples.emplace_back(static_cast<int>(s), static_cast<int>(q));
        }
    }

    ParamStore params = initial;
    Optimizer optimizer(config.schedule);
    Rng batch_rng(derive_seed(config.schedule.seed, "vqa-batches"));
    Rng aug_rng(derive_seed(config.schedule.seed, "vqa-augment"));
    const auto trainable = trainable_predicate(config.schedule);
    std::vector<LossLogRow> log;

    for (int it = 0; it < config.schedule.iterations; ++it) {
        VarMap vars = make_var_map(params, trainable);
        std::vector<ad::Var> losses;
        for (int b = 0; b < config.schedule.batch_size; ++b) {
            const auto [scene, qidx] = examples[static_cast<size_t>(
                batch_rng.uniform_int(0, static_cast<int>(examples.size()) - 1))];
            const synth::QAPair& qa = data.questions(static_cast<size_t>(scene))[static_cast<size_t>(qidx)];
            Tensor input;
            if (config.augment.identity()) {
                input = image_to_tensor(data.image(static_cast<size_t>(scene)));
            } else {
                const uint64_t aug_seed =
                    (static_cast<uint64_t>(aug_rng.next_u32()) << 32) | aug_rng.next_u32();
                input = image_to_tensor(
                    synth::augment(data.image(static_cast<size_t>(scene)), aug_seed, config.augment));
            }
            ad::Var rows = e2e_rows(input, vars, config);
            std::vector<bool> mask(static_cast<size_t>(rows->value.dim(0)), true);
            auto out = vqa_head_forward(rows, mask, qa_token_ids(qa, vocab), vars, config.model);
            losses.push_back(
                vqa_loss(out.logits, one_hot(qa.answer_id, config.model.num_answers)));
        }
        ad::Var total = ad::mean_scalars(losses);
        ad::backward(total);
        const float lr = optimizer.step(params, collect_grads(vars));
        log.push_back({it, total->value.at(0), lr});
    }
    return {std::move(params), std::move(log)};
}

float eval_e2e(const ParamStore& params, const E2eConfig& config, const DatasetView& data) {
    const Vocabulary vocab = synth::default_vocabulary();
    const VarMap vars = make_var_map(params);
    int correct = 0, total = 0;
    for (size_t s = 0; s < data.size(); ++s) {
        const Tensor input = image_to_tensor(data.image(s));
        ad::Var rows = e2e_rows(input, vars, config);
        std::vector<bool> mask(static_cast<size_t>(rows->value.dim(0)), true);
        for (const auto& qa : data.questions(s)) {
            auto out = vqa_head_forward(rows, mask, qa_token_ids(qa, vocab), vars, config.model);
            int argmax = 0;
            for (int i = 1; i < config.model.num_answers; ++i) {
                if (out.logits->value.at(i) > out.logits->value.at(argmax)) argmax = i;
            }
            correct += argmax == qa.answer_id ? 1 : 0;
            ++total;
        }
    }
    return 100.0f * static_cast<float>(correct) / static_cast<float>(total);
}

}  // namespace gf::pipeline
