#include "gf/bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>
#include <stdexcept>

#include "gf/io_util.h"

namespace gf::bench {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

double median(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct RepTimings {
    double shared = 0.0, feat = 0.0, select = 0.0, vqa = 0.0;
};

std::vector<int> bench_question(const Vocabulary& vocab) {
    std::vector<int> ids;
    for (const char* w : {"is", "there", "a", "red", "circle"}) {
        ids.push_back(vocab.token_id(w));
    }
    return ids;
}

// one image through one pipeline, accumulating per-stage wall time
RepTimings run_one(bool region, const Image& image, const ParamStore& weights,
                   const BackboneConfig& bb, const DetectorConfig& det,
                   const VarMap& head_vars, const VqaConfig& model,
                   const std::vector<int>& question) {
    RepTimings t;
    const Tensor input = image_to_tensor(image);
    FeatureSet set;

    if (region) {
        BackboneConfig run_bb = bb;
        if (det.head.mode == RegionHeadConfig::Mode::fc2_1x1) {
            run_bb.c5_mode = BackboneConfig::C5Mode::dilated;
        }
        const VarMap vars = make_var_map(weights);

        auto start = Clock::now();
        ad::Var c4 = forward_to_c4(ad::constant(input), vars, run_bb);
        Tensor shared =
            det.head.mode == RegionHeadConfig::Mode::fc2_1x1
                ? forward_c5(c4, vars, run_bb, BackboneConfig::C5Mode::dilated)->value
                : c4->value;
        t.shared = ms_since(start);

        start = Clock::now();
        const auto proposals =
            rpn_propose(shared, weights, det.rpn, 16, image.width, image.height);
        t.select = ms_since(start);

        start = Clock::now();
        const auto batch = region_features(proposals, shared, weights, run_bb, det, 16);
        t.feat = ms_since(start);

        start = Clock::now();
        auto detections = make_detections(proposals, batch, det, image.width, image.height);
        auto selected = select_top_regions(detections, det.top_n, det.class_nms_iou);
        set = from_regions(selected, batch, image.height, image.width);
        t.select += ms_since(start);
    } else {
        auto start = Clock::now();
        Tensor map = grid_features(input, weights, bb);
        t.shared = ms_since(start);
        set = from_grid(map, kGridStride, image.height, image.width);
    }

    auto start = Clock::now();
    ad::Var rows = feature_rows(set, head_vars, model);
    auto out = vqa_head_forward(rows, set.mask, question, head_vars, model);
    (void)out;
    t.vqa = ms_since(start);
    return t;
}

}  // namespace

StageTimings time_pipeline(const TimePipelineConfig& config, const ParamStore& weights,
                           const BackboneConfig& bb, const DetectorConfig& det,
                           const ParamStore& head, const VqaConfig& model,
                           const std::vector<Image>& images) {
    if (config.reps < 3) throw std::invalid_argument("time_pipeline: reps must be >= 3");
    if (config.warmup < 1) throw std::invalid_argument("time_pipeline: warmup must be >= 1");
    if (images.empty()) throw std::invalid_argument("time_pipeline: no images");

    const Vocabulary vocab = synth::default_vocabulary();
    const auto question = bench_question(vocab);
    const VarMap head_vars = make_var_map(head);
    const int threads = std::max(1, config.threads);

    std::vector<RepTimings> reps;
    std::ostringstream partial;
    partial << "rep,shared_conv_ms,region_feat_ms,region_select_ms,vqa_ms\n";

    auto run_rep = [&]() {
        RepTimings sum;
        if (threads == 1) {
            for (const Image& image : images) {
                const RepTimings t = run_one(config.region, image, weights, bb, det,
                                             head_vars, model, question);
                sum.shared += t.shared;
                sum.feat += t.feat;
                sum.select += t.select;
                sum.vqa += t.vqa;
            }
        } else {
            std::vector<std::future<RepTimings>> futures;
            futures.reserve(images.size());
            for (const Image& image : images) {
                futures.push_back(std::async(std::launch::async, [&, img = &image] {
                    return run_one(config.region, *img, weights, bb, det, head_vars, model,
                                   question);
                }));
            }
            for (auto& f : futures) {
                const RepTimings t = f.get();
                sum.shared += t.shared;
                sum.feat += t.feat;
                sum.select += t.select;
                sum.vqa += t.vqa;
            }
        }
        return sum;
    };

    try {
        for (int w = 0; w < config.warmup; ++w) (void)run_rep();
        for (int r = 0; r < config.reps; ++r) {
            const RepTimings t = run_rep();
            reps.push_back(t);
            partial << r << "," << t.shared << "," << t.feat << "," << t.select << ","
                    << t.vqa << "\n";
        }
    } catch (...) {
        if (config.partial_log_path) {
            io::write_text_file(*config.partial_log_path, partial.str());
        }
        throw;
    }
    if (config.partial_log_path) {
        io::write_text_file(*config.partial_log_path, partial.str());
    }

    std::vector<double> shared, feat, select, vqa;
    for (const auto& t : reps) {
        shared.push_back(t.shared);
        feat.push_back(t.feat);
        select.push_back(t.select);
        vqa.push_back(t.vqa);
    }

    StageTimings out;
    out.pipeline = config.region ? "region" : "grid";
    out.repetitions = config.reps;
    out.threads = threads;
    out.shared_conv_ms = median(shared);
    out.region_feat_ms = median(feat);
    out.region_select_ms = median(select);
    out.vqa_ms = median(vqa);
    out.total_ms = out.shared_conv_ms + out.region_feat_ms + out.region_select_ms + out.vqa_ms;

    std::ostringstream fp;
    fp << out.pipeline << "|" << det.num_classes << "|" << det.num_attributes << "|"
       << det.top_n << "|" << det.rpn.post_nms_topk << "|" << bb.c5_channels() << "|"
       << images[0].height << "x" << images[0].width;
    std::ostringstream hex;
    hex << std::hex << fnv1a(fp.str());
    out.config_fingerprint = hex.str();
    return out;
}

std::string timings_csv_header() {
    return "pipeline,config_fingerprint,repetitions,threads,shared_conv_ms,"
           "region_feat_ms,region_select_ms,vqa_ms,total_ms";
}

std::string timings_csv_row(const StageTimings& t) {
    std::ostringstream os;
    os << t.pipeline << "," << t.config_fingerprint << "," << t.repetitions << ","
       << t.threads << "," << t.shared_conv_ms << "," << t.region_feat_ms << ","
       << t.region_select_ms << "," << t.vqa_ms << "," << t.total_ms;
    return os.str();
}

std::string timings_report_markdown(const std::vector<StageTimings>& rows) {
    std::ostringstream os;
    os << "# Inference time breakdown\n\n";
    os << "All times are medians over repetitions, milliseconds per image batch.\n\n";
    os << "| pipeline | shared conv | region feat | region select | vqa | total |\n";
    os << "|---|---|---|---|---|---|\n";
    for (const auto& t : rows) {
        os << "| " << t.pipeline << " | " << t.shared_conv_ms << " | " << t.region_feat_ms
           << " | " << t.region_select_ms << " | " << t.vqa_ms << " | " << t.total_ms
           << " |\n";
    }
    os << "\nUpstream reference (GPU, original pipeline, per image): region 889 ms "
          "total vs grid 18 ms.\n";
    return os.str();
}

SweepCsv::SweepCsv(std::string path, std::string header)
    : path_(std::move(path)), header_(std::move(header)) {
    std::ifstream is(path_);
    if (is) {
        std::string line;
        if (std::getline(is, line) && line != header_) {
            throw std::runtime_error("sweep csv header mismatch: " + path_);
        }
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const auto comma = line.find(',');
            rows_.emplace_back(line.substr(0, comma), line);
        }
    }
}

bool SweepCsv::has(const std::string& key) const {
    for (const auto& [k, row] : rows_) {
        if (k == key) return true;
    }
    return false;
}

void SweepCsv::append(const std::string& key, const std::string& row) {
    if (has(key)) return;
    rows_.emplace_back(key, row);
    flush();
}

void SweepCsv::flush() const {
    std::ostringstream os;
    os << header_ << "\n";
    for (const auto& [key, row] : rows_) os << row << "\n";
    io::write_text_file(path_, os.str());
}

void sweep_num_features(const NumFeaturesSweepConfig& config,
                        const pipeline::VqaDataset& train,
                        const pipeline::VqaDataset& eval, SweepCsv& csv) {
    for (int n : config.feature_counts) {
        const std::string key = std::to_string(n);
        if (csv.has(key)) continue;

        pipeline::VqaDataset train_n;
        train_n.qa = train.qa;
        for (const auto& set : train.features) {
            train_n.features.push_back(with_feature_count(set, n));
        }
        train_n.rebuild_example_index();
        pipeline::VqaDataset eval_n;
        eval_n.qa = eval.qa;
        for (const auto& set : eval.features) {
            eval_n.features.push_back(with_feature_count(set, n));
        }
        eval_n.rebuild_example_index();

        std::vector<float> accs;
        for (uint64_t seed : config.seeds) {
            TrainSchedule schedule = config.schedule;
            schedule.seed = derive_seed(seed, "numfeat-batches");
            auto result = pipeline::train_vqa_head(train_n, config.model, schedule, seed);
            accs.push_back(pipeline::eval_vqa(result.params, config.model, eval_n));
        }
        double mean = 0.0;
        for (float a : accs) mean += a;
        mean /= static_cast<double>(accs.size());
        double var = 0.0;
        for (float a : accs) var += (a - mean) * (a - mean);
        const double sd = accs.size() > 1 ? std::sqrt(var / (static_cast<double>(accs.size()) - 1)) : 0.0;

        std::ostringstream row;
        row << n << "," << accs.size() << "," << mean << "," << sd;
        csv.append(key, row.str());
    }
}

void sweep_input_size(const InputSizeSweepConfig& config, const ParamStore& weights,
                      const BackboneConfig& bb, const ParamStore& head,
                      const VqaConfig& model, SweepCsv& csv) {
    const Vocabulary vocab = synth::default_vocabulary();
    const VarMap head_vars = make_var_map(head);
    for (const auto& [h, w] : config.sizes) {
        const std::string key = std::to_string(h) + "x" + std::to_string(w);
        if (csv.has(key)) continue;

        synth::SceneConfig scene = config.scene;
        scene.height = h;
        scene.width = w;
        int correct = 0, total = 0;
        const auto scenes =
            synth::generate_split(config.data_seed, "sweep-eval", config.n_eval, scene);
        for (const auto& [record, image] : scenes) {
            FeatureSet set = pipeline::extract_grid_features(image, weights, bb);
            ad::Var rows = feature_rows(set, head_vars, model);
            for (const auto& qa : record.qa) {
                std::vector<int> ids;
                for (const auto& word : qa.question) ids.push_back(vocab.token_id(word));
                auto out = vqa_head_forward(rows, set.mask, ids, head_vars, model);
                int argmax = 0;
                for (int a = 1; a < model.num_answers; ++a) {
                    if (out.logits->value.at(a) > out.logits->value.at(argmax)) argmax = a;
                }
                correct += argmax == qa.answer_id ? 1 : 0;
                ++total;
            }
        }
        const float acc = 100.0f * static_cast<float>(correct) / static_cast<float>(total);
        std::ostringstream row;
        row << h << "," << w << "," << grid_count(h, w) << "," << acc;
        csv.append(key, row.str());
    }
}

void sweep_pretrain_proxy(const PretrainSweepConfig& config, SweepCsv& csv) {
    struct Cell {
        pipeline::PretrainMode mode;
        float attr_weight;
    };
    std::vector<Cell> cells = {{pipeline::PretrainMode::classification_only, 0.0f},
                               {pipeline::PretrainMode::detection, 0.0f}};
    for (float w : config.attr_weights) {
        cells.push_back({pipeline::PretrainMode::detection_attributes, w});
    }

    for (const Cell& cell : cells) {
        for (uint64_t seed : config.seeds) {
            std::ostringstream key_os;
            key_os << pipeline::pretrain_mode_name(cell.mode) << "@" << cell.attr_weight
                   << "@" << seed;
            const std::string key = key_os.str();
            if (csv.has(key)) continue;

            pipeline::DatasetView train_view =
                pipeline::make_view(config.data_seed, "train", config.n_train, config.scene);
            pipeline::DatasetView eval_view =
                pipeline::make_view(config.data_seed, "val", config.n_eval, config.scene);

            pipeline::PretrainConfig pre = config.pretrain;
            pre.mode = cell.mode;
            pre.detector.attr_weight = cell.attr_weight;

            std::string status = "ok";
            float acc = 0.0f;
            try {
                auto pretrained = pipeline::pretrain_detector(train_view, pre, seed);
                if (cell.mode == pipeline::PretrainMode::classification_only &&
                    train_view.box_access_count() != 0) {
                    throw std::logic_error("classification pretraining read box annotations");
                }
                auto train_set = pipeline::build_vqa_dataset(
                    train_view, FeatureSet::Kind::grid, pretrained.weights, pre.backbone,
                    pre.detector);
                auto eval_set = pipeline::build_vqa_dataset(
                    eval_view, FeatureSet::Kind::grid, pretrained.weights, pre.backbone,
                    pre.detector);
                VqaConfig model = config.model;
                model.feature_dim = pre.backbone.c5_channels();
                TrainSchedule schedule = config.head_schedule;
                schedule.seed = derive_seed(seed, "pretrain-sweep");
                auto head = pipeline::train_vqa_head(train_set, model, schedule, seed);
                acc = pipeline::eval_vqa(head.params, model, eval_set);
            } catch (const std::runtime_error& e) {
                status = std::string("diverged:") + e.what();
            }

            std::ostringstream row;
            row << key << "," << pipeline::pretrain_mode_name(cell.mode) << ","
                << cell.attr_weight << "," << seed << "," << acc << "," << status;
            csv.append(key, row.str());
        }
    }
}

ParityResult run_parity_experiment(const ParityConfig& config) {
    pipeline::DatasetView train_view =
        pipeline::make_view(config.data_seed, "train", config.n_train, config.scene);
    pipeline::DatasetView eval_view =
        pipeline::make_view(config.data_seed, "test", config.n_eval, config.scene);

    auto pretrained = pipeline::pretrain_detector(train_view, config.pretrain,
                                                  config.seeds.front());

    auto region_train = pipeline::build_vqa_dataset(train_view, FeatureSet::Kind::region,
                                                    pretrained.weights, config.pretrain.backbone,
                                                    config.pretrain.detector);
    auto region_eval = pipeline::build_vqa_dataset(eval_view, FeatureSet::Kind::region,
                                                   pretrained.weights, config.pretrain.backbone,
                                                   config.pretrain.detector);
    auto grid_train = pipeline::build_vqa_dataset(train_view, FeatureSet::Kind::grid,
                                                  pretrained.weights, config.pretrain.backbone,
                                                  config.pretrain.detector);
    auto grid_eval = pipeline::build_vqa_dataset(eval_view, FeatureSet::Kind::grid,
                                                 pretrained.weights, config.pretrain.backbone,
                                                 config.pretrain.detector);

    ParityResult result;
    result.baseline = pipeline::majority_baseline_accuracy(grid_train, grid_eval);

    for (uint64_t seed : config.seeds) {
        VqaConfig region_model = config.model;
        region_model.feature_dim = region_train.features[0].dim();
        TrainSchedule schedule = config.head_schedule;
        schedule.seed = derive_seed(seed, "parity-region");
        auto head = pipeline::train_vqa_head(region_train, region_model, schedule, seed);
        result.region_acc.push_back(pipeline::eval_vqa(head.params, region_model, region_eval));

        VqaConfig grid_model = config.model;
        grid_model.feature_dim = grid_train.features[0].dim();
        schedule.seed = derive_seed(seed, "parity-grid");
        auto ghead = pipeline::train_vqa_head(grid_train, grid_model, schedule, seed);
        result.grid_acc.push_back(pipeline::eval_vqa(ghead.params, grid_model, grid_eval));
    }

    for (float a : result.region_acc) result.region_mean += a;
    result.region_mean /= static_cast<float>(result.region_acc.size());
    for (float a : result.grid_acc) result.grid_mean += a;
    result.grid_mean /= static_cast<float>(result.grid_acc.size());
    return result;
}

E2eExperimentResult run_e2e_experiment(const E2eExperimentConfig& config) {
    pipeline::DatasetView train_view =
        pipeline::make_view(config.data_seed, "train", config.n_train, config.scene);
    pipeline::DatasetView eval_view =
        pipeline::make_view(config.data_seed, "test", config.n_eval, config.scene);

    auto pretrained = pipeline::pretrain_detector(train_view, config.pretrain,
                                                  config.seeds.front());
    auto grid_train = pipeline::build_vqa_dataset(train_view, FeatureSet::Kind::grid,
                                                  pretrained.weights, config.pretrain.backbone,
                                                  config.pretrain.detector);
    auto grid_eval = pipeline::build_vqa_dataset(eval_view, FeatureSet::Kind::grid,
                                                 pretrained.weights, config.pretrain.backbone,
                                                 config.pretrain.detector);

    E2eExperimentResult result;
    for (uint64_t seed : config.seeds) {
        VqaConfig model = config.model;
        model.feature_dim = grid_train.features[0].dim();
        TrainSchedule schedule = config.head_schedule;
        schedule.seed = derive_seed(seed, "e2e-head");
        auto head = pipeline::train_vqa_head(grid_train, model, schedule, seed);
        result.frozen_acc.push_back(pipeline::eval_vqa(head.params, model, grid_eval));

        ParamStore initial = pretrained.weights;
        for (const auto& [name, tensor] : head.params) initial.emplace(name, tensor);
        pipeline::E2eConfig e2e;
        e2e.backbone = config.pretrain.backbone;
        e2e.model = model;
        e2e.schedule = config.e2e_schedule;
        e2e.schedule.seed = derive_seed(seed, "e2e-tune");
        e2e.schedule.freeze_prefixes = freeze_prefixes_for_stages(config.frozen_stages);
        auto tuned = pipeline::train_e2e(train_view, initial, e2e, seed);
        result.e2e_acc.push_back(pipeline::eval_e2e(tuned.params, e2e, eval_view));
    }

    for (float a : result.frozen_acc) result.frozen_mean += a;
    result.frozen_mean /= static_cast<float>(result.frozen_acc.size());
    for (float a : result.e2e_acc) result.e2e_mean += a;
    result.e2e_mean /= static_cast<float>(result.e2e_acc.size());
    return result;
}

}  // namespace gf::bench
