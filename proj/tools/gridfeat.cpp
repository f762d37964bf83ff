// gridfeat: one entry point wiring the synthetic-data, detector, feature,
// VQA and benchmark pieces into reproducible runs.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>

#include "gf/bench.h"
#include "gf/config.h"
#include "gf/io_util.h"
#include "gf/pipeline.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
    std::vector<std::string> config_files;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_files, "config file(s), later files win");
    cmd->add_option("--set", opts.overrides, "key=value override(s), applied last");
}

gf::RunConfig resolve_config(const CommonOpts& opts) {
    gf::RunConfig config = gf::RunConfig::defaults();
    for (const auto& path : opts.config_files) config.apply_file(path);
    for (const auto& kv : opts.overrides) config.apply_override(kv);
    std::cout << "# resolved config (fingerprint " << config.fingerprint() << ")\n"
              << config.resolved_text() << std::flush;
    return config;
}

gf::pipeline::DatasetView load_view(const std::string& data_dir, const std::string& split) {
    auto records = gf::synth::load_split(data_dir, split);
    std::vector<gf::Image> images;
    images.reserve(records.size());
    for (const auto& r : records) {
        images.push_back(gf::load_ppm(gf::synth::split_image_path(data_dir, split, r.image_id)));
    }
    return gf::pipeline::DatasetView(std::move(records), std::move(images));
}

gf::FeatureSet extract_one(const gf::Image& image, bool region, const gf::ParamStore& weights,
                           const gf::RunConfig& config) {
    gf::Image input = image;
    if (config.get_bool("extract.resize")) {
        const auto [h, w] = gf::extract_resize_extents(image.height, image.width,
                                                       config.get_int("extract.shorter_side"),
                                                       config.get_int("extract.longer_side"));
        input = gf::resize_nearest(image, h, w);
    }
    return region ? gf::pipeline::extract_region_features(input, weights, config.backbone(),
                                                          config.detector())
                  : gf::pipeline::extract_grid_features(input, weights, config.backbone());
}

gf::VqaConfig model_for(const gf::RunConfig& config, int feature_dim, int grid_channels) {
    const auto vocab = gf::synth::default_vocabulary();
    gf::VqaConfig model = config.vqa_base();
    model.vocab_size = vocab.num_tokens();
    model.num_answers = vocab.num_answers();
    model.feature_dim = feature_dim;
    if (model.use_ppm) {
        model.ppm_input_dim = grid_channels;
        model.feature_dim = grid_channels + model.ppm.added_channels();
    }
    return model;
}

void save_head_artifacts(const gf::ParamStore& head, const gf::VqaConfig& model,
                         bool region_kind, const std::string& out) {
    gf::save_weights(head, out);
    gf::synth::default_vocabulary().save(out + ".vocab.json");
    json meta;
    meta["pipeline"] = region_kind ? "region" : "grid";
    meta["feature_dim"] = model.feature_dim;
    meta["embed_dim"] = model.embed_dim;
    meta["q_dim"] = model.q_dim;
    meta["attn_hidden"] = model.attn_hidden;
    meta["fuse_hidden"] = model.fuse_hidden;
    meta["use_ppm"] = model.use_ppm;
    meta["ppm_input_dim"] = model.ppm_input_dim;
    meta["ppm_pool_sizes"] = model.ppm.pool_sizes;
    meta["ppm_proj_dim"] = model.ppm.proj_dim;
    gf::io::write_text_file(out + ".meta.json", meta.dump(2));
}

struct LoadedHead {
    gf::ParamStore params;
    gf::VqaConfig model;
    gf::Vocabulary vocab;
    bool region_kind = false;
};

LoadedHead load_head_artifacts(const std::string& path) {
    LoadedHead head;
    head.params = gf::load_weights(path);
    head.vocab = gf::Vocabulary::load(path + ".vocab.json");
    const json meta = json::parse(gf::io::read_text_file(path + ".meta.json"));
    head.region_kind = meta.at("pipeline").get<std::string>() == "region";
    head.model.vocab_size = head.vocab.num_tokens();
    head.model.num_answers = head.vocab.num_answers();
    head.model.feature_dim = meta.at("feature_dim").get<int>();
    head.model.embed_dim = meta.at("embed_dim").get<int>();
    head.model.q_dim = meta.at("q_dim").get<int>();
    head.model.attn_hidden = meta.at("attn_hidden").get<int>();
    head.model.fuse_hidden = meta.at("fuse_hidden").get<int>();
    head.model.use_ppm = meta.at("use_ppm").get<bool>();
    head.model.ppm_input_dim = meta.at("ppm_input_dim").get<int>();
    head.model.ppm.pool_sizes = meta.at("ppm_pool_sizes").get<std::vector<int>>();
    head.model.ppm.proj_dim = meta.at("ppm_proj_dim").get<int>();
    return head;
}

// --- subcommand implementations ---

int run_gen_data(const CommonOpts& common, const std::string& out, int n_train, int n_val,
                 int n_test) {
    const auto config = resolve_config(common);
    const auto manifest = gf::synth::export_dataset(n_train, n_val, n_test, config.seed(),
                                                    config.scene(), out);
    std::cout << "wrote dataset to " << out << " (train " << manifest.n_train << ", val "
              << manifest.n_val << ", test " << manifest.n_test << ")\n";
    return 0;
}

int run_pretrain(const CommonOpts& common, const std::string& data_dir,
                 const std::string& mode_name, const std::string& out,
                 const std::string& log_path) {
    const auto config = resolve_config(common);
    auto view = load_view(data_dir, "train");

    gf::pipeline::PretrainConfig pre;
    pre.backbone = config.backbone();
    pre.detector = config.detector();
    pre.mode = gf::pipeline::pretrain_mode_from_name(mode_name);
    pre.schedule = config.schedule();
    auto result = gf::pipeline::pretrain_detector(view, pre, config.seed());
    gf::save_weights(result.weights, out);
    if (!log_path.empty()) gf::save_loss_log(result.log, log_path);
    std::cout << "wrote weights to " << out << " (" << result.weights.size()
              << " tensors, final loss " << result.log.back().loss << ")\n";
    return 0;
}

int run_extract(const CommonOpts& common, const std::string& pipeline_name,
                const std::string& weights_path, const std::string& in,
                const std::string& out) {
    const auto config = resolve_config(common);
    const auto weights = gf::load_weights(weights_path);
    const gf::Image image = gf::load_ppm(in);
    const bool region = pipeline_name == "region";
    gf::FeatureSet set = extract_one(image, region, weights, config);
    gf::save_cache(set, out);
    std::cout << "wrote " << out << " (kind " << pipeline_name << ", N " << set.count()
              << ", D " << set.dim() << ")\n";
    return 0;
}

int run_train_vqa(const CommonOpts& common, const std::string& data_dir,
                  const std::string& features_dir, const std::string& pipeline_name,
                  const std::string& weights_path, const std::string& out,
                  const std::string& log_path) {
    const auto config = resolve_config(common);
    const auto weights = gf::load_weights(weights_path);
    const bool region = pipeline_name == "region";
    const auto kind = region ? gf::FeatureSet::Kind::region : gf::FeatureSet::Kind::grid;

    // fill the on-disk feature cache, then train from it
    auto cached_dataset = [&](const std::string& split) {
        auto records = gf::synth::load_split(data_dir, split);
        fs::create_directories(fs::path(features_dir) / split);
        gf::pipeline::VqaDataset dataset;
        for (const auto& r : records) {
            const std::string path = gf::cache_path(features_dir, split, r.image_id);
            gf::FeatureSet set;
            if (fs::exists(path)) {
                set = gf::load_cache(path);
            } else {
                const gf::Image image =
                    gf::load_ppm(gf::synth::split_image_path(data_dir, split, r.image_id));
                set = extract_one(image, region, weights, config);
                gf::save_cache(set, path);
            }
            if (set.kind != kind) {
                throw std::runtime_error("cached features at " + path +
                                         " do not match --pipeline " + pipeline_name);
            }
            dataset.features.push_back(std::move(set));
            dataset.qa.push_back(r.qa);
        }
        dataset.rebuild_example_index();
        return dataset;
    };

    auto train = cached_dataset("train");
    auto val = cached_dataset("val");

    const int grid_channels = config.backbone().c5_channels();
    gf::VqaConfig model = model_for(config, train.features.at(0).dim(), grid_channels);
    auto result = gf::pipeline::train_vqa_head(train, model, config.schedule(), config.seed());
    save_head_artifacts(result.params, model, region, out);
    if (!log_path.empty()) gf::save_loss_log(result.log, log_path);

    const float train_acc = gf::pipeline::eval_vqa(result.params, model, train);
    const float val_acc = gf::pipeline::eval_vqa(result.params, model, val);
    std::cout << "wrote head to " << out << " (train acc " << train_acc << ", val acc "
              << val_acc << ")\n";
    return 0;
}

struct AnswerOutput {
    std::string answer;
    gf::Tensor attention;
    gf::FeatureSet features;
};

AnswerOutput answer_question(const gf::RunConfig& config, const LoadedHead& head,
                             const gf::ParamStore& weights, const gf::Image& image,
                             const std::string& question) {
    gf::FeatureSet set = extract_one(image, head.region_kind, weights, config);
    const gf::VarMap vars = gf::make_var_map(head.params);
    gf::ad::Var rows = gf::feature_rows(set, vars, head.model);
    const auto ids = head.vocab.encode(question);
    auto out = gf::vqa_head_forward(rows, set.mask, ids, vars, head.model);
    int argmax = 0;
    for (int i = 1; i < head.model.num_answers; ++i) {
        if (out.logits->value.at(i) > out.logits->value.at(argmax)) argmax = i;
    }
    return {head.vocab.answers.at(static_cast<size_t>(argmax)), out.attention->value,
            std::move(set)};
}

int run_answer(const CommonOpts& common, const std::string& weights_path,
               const std::string& head_path, const std::string& in,
               const std::string& question) {
    const auto config = resolve_config(common);
    const auto weights = gf::load_weights(weights_path);
    const auto head = load_head_artifacts(head_path);
    const auto result = answer_question(config, head, weights, gf::load_ppm(in), question);
    std::cout << "answer: " << result.answer << "\n";
    return 0;
}

int run_render_attn(const CommonOpts& common, const std::string& weights_path,
                    const std::string& head_path, const std::string& in,
                    const std::string& question, const std::string& out) {
    const auto config = resolve_config(common);
    const auto weights = gf::load_weights(weights_path);
    const auto head = load_head_artifacts(head_path);
    const auto result = answer_question(config, head, weights, gf::load_ppm(in), question);
    const gf::Tensor heat = gf::render_attention_map(result.attention, result.features);
    gf::save_pgm(heat, out);
    std::cout << "answer: " << result.answer << "\nwrote attention map to " << out << "\n";
    return 0;
}

int run_bench(const CommonOpts& common, const std::string& pipeline_name,
              const std::string& out, const std::string& report_path) {
    const auto config = resolve_config(common);
    const auto bb = config.backbone();
    const auto det = config.detector();
    const auto weights = gf::build_detector(bb, det, config.seed());

    gf::synth::SceneConfig scene = config.scene();
    scene.height = config.get_int("bench.image_h");
    scene.width = config.get_int("bench.image_w");
    std::vector<gf::Image> images;
    for (int i = 0; i < config.get_int("bench.images"); ++i) {
        images.push_back(
            gf::synth::gen_scene(gf::derive_seed(config.seed(), "bench-image-" +
                                                                    std::to_string(i)),
                                 scene)
                .image);
    }

    const int feature_dim = pipeline_name == "region" ? gf::region_feature_dim(bb, det)
                                                      : bb.c5_channels();
    gf::VqaConfig model = model_for(config, feature_dim, bb.c5_channels());
    const auto head = gf::build_vqa_head(model, gf::derive_seed(config.seed(), "bench-head"));

    gf::bench::TimePipelineConfig tp;
    tp.region = pipeline_name == "region";
    tp.reps = config.get_int("bench.reps");
    tp.warmup = config.get_int("bench.warmup");
    tp.threads = config.get_int("bench.threads");
    if (!out.empty()) tp.partial_log_path = out + ".reps.csv";
    auto timings = gf::bench::time_pipeline(tp, weights, bb, det, head, model, images);
    timings.config_fingerprint = config.fingerprint();

    std::cout << gf::bench::timings_csv_header() << "\n"
              << gf::bench::timings_csv_row(timings) << "\n";
    if (!out.empty()) {
        gf::io::write_text_file(out, gf::bench::timings_csv_header() + "\n" +
                                         gf::bench::timings_csv_row(timings) + "\n");
    }
    if (!report_path.empty()) {
        gf::io::write_text_file(report_path, gf::bench::timings_report_markdown({timings}));
    }
    return 0;
}

int run_sweep(const CommonOpts& common, const std::string& kind, const std::string& out,
              const std::string& weights_path, const std::string& head_path,
              const std::vector<int>& ns, int n_train, int n_eval) {
    const auto config = resolve_config(common);

    if (kind == "num-features") {
        const auto weights = gf::load_weights(weights_path);
        const auto bb = config.backbone();
        const auto det = config.detector();
        auto train_view = gf::pipeline::make_view(config.seed(), "train", n_train, config.scene());
        auto eval_view = gf::pipeline::make_view(config.seed(), "val", n_eval, config.scene());
        auto train = gf::pipeline::build_vqa_dataset(train_view, gf::FeatureSet::Kind::region,
                                                     weights, bb, det);
        auto eval = gf::pipeline::build_vqa_dataset(eval_view, gf::FeatureSet::Kind::region,
                                                    weights, bb, det);
        gf::bench::NumFeaturesSweepConfig sweep;
        if (!ns.empty()) sweep.feature_counts = ns;
        // grid's natural count for these canvas extents joins the sweep
        const int natural = gf::grid_count(config.scene().height, config.scene().width);
        if (std::find(sweep.feature_counts.begin(), sweep.feature_counts.end(), natural) ==
            sweep.feature_counts.end()) {
            sweep.feature_counts.push_back(natural);
        }
        sweep.model = model_for(config, train.features.at(0).dim(), bb.c5_channels());
        sweep.schedule = config.schedule();
        gf::bench::SweepCsv csv(out, "n,seeds,acc_mean,acc_sd");
        gf::bench::sweep_num_features(sweep, train, eval, csv);
        std::cout << "wrote " << out << "\n";
        return 0;
    }
    if (kind == "input-size") {
        const auto weights = gf::load_weights(weights_path);
        const auto head = load_head_artifacts(head_path);
        gf::bench::InputSizeSweepConfig sweep;
        sweep.scene = config.scene();
        sweep.data_seed = config.seed();
        sweep.n_eval = n_eval;
        gf::bench::SweepCsv csv(out, "height,width,n,accuracy");
        gf::bench::sweep_input_size(sweep, weights, config.backbone(), head.params,
                                    head.model, csv);
        std::cout << "wrote " << out << "\n";
        return 0;
    }
    if (kind == "pretrain") {
        gf::bench::PretrainSweepConfig sweep;
        sweep.scene = config.scene();
        sweep.data_seed = config.seed();
        sweep.n_train = n_train;
        sweep.n_eval = n_eval;
        sweep.pretrain.backbone = config.backbone();
        sweep.pretrain.detector = config.detector();
        sweep.pretrain.schedule = config.schedule();
        sweep.model = model_for(config, sweep.pretrain.backbone.c5_channels(),
                                sweep.pretrain.backbone.c5_channels());
        sweep.head_schedule = config.schedule();
        gf::bench::SweepCsv csv(out, "key,mode,attr_weight,seed,accuracy,status");
        gf::bench::sweep_pretrain_proxy(sweep, csv);
        std::cout << "wrote " << out << "\n";
        return 0;
    }
    throw gf::ConfigError("sweep: unknown kind '" + kind + "'");
}

// compact built-in oracle/invariant suite
int run_selftest() {
    int failures = 0;
    const auto check = [&](bool ok, const std::string& name) {
        std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << "\n";
        failures += ok ? 0 : 1;
    };
    gf::Rng rng(4242);

    // conv dilation / zero-inserted kernel equivalence
    {
        bool ok = true;
        for (int trial = 0; trial < 10 && ok; ++trial) {
            gf::Tensor x({2, 9, 9});
            for (auto& v : x.values()) v = rng.uniform(-1.0f, 1.0f);
            gf::Tensor w({2, 2, 3, 3});
            for (auto& v : w.values()) v = rng.uniform(-1.0f, 1.0f);
            gf::Tensor a = gf::kernels::conv2d(x, w, gf::Tensor(), gf::ConvSpec{1, 2, 2});
            gf::Tensor b = gf::kernels::conv2d(x, gf::kernels::dilate_kernel(w, 2),
                                               gf::Tensor(), gf::ConvSpec{1, 1, 2});
            for (int64_t i = 0; i < a.numel(); ++i) {
                ok = ok && a.at(static_cast<int>(i)) == b.at(static_cast<int>(i));
            }
        }
        check(ok, "conv2d dilation equals zero-inserted kernel");
    }

    // softmax sums to one, shift-invariant
    {
        gf::Tensor x({9});
        for (auto& v : x.values()) v = rng.uniform(-4.0f, 4.0f);
        gf::Tensor s = gf::kernels::softmax(x);
        double sum = 0.0;
        for (int i = 0; i < 9; ++i) sum += s.at(i);
        gf::Tensor shifted = x;
        for (auto& v : shifted.values()) v += 2.5f;
        gf::Tensor s2 = gf::kernels::softmax(shifted);
        bool ok = std::abs(sum - 1.0) < 1e-6;
        for (int i = 0; i < 9; ++i) ok = ok && std::abs(s.at(i) - s2.at(i)) < 1e-5f;
        check(ok, "softmax unit sum and shift invariance");
    }

    // nms subset/order/threshold properties against a fresh greedy scan
    {
        std::vector<gf::Box> boxes;
        std::vector<float> scores;
        for (int i = 0; i < 64; ++i) {
            const float x1 = rng.uniform(0.0f, 90.0f), y1 = rng.uniform(0.0f, 90.0f);
            boxes.push_back(gf::Box{x1, y1, x1 + rng.uniform(2.0f, 30.0f),
                                    y1 + rng.uniform(2.0f, 30.0f)});
            scores.push_back(rng.uniform());
        }
        const auto kept = gf::nms(boxes, scores, 0.45f);
        bool ok = true;
        for (size_t i = 1; i < kept.size(); ++i) {
            ok = ok && scores[static_cast<size_t>(kept[i - 1])] >=
                           scores[static_cast<size_t>(kept[i])];
        }
        for (size_t i = 0; i < kept.size() && ok; ++i) {
            for (size_t j = i + 1; j < kept.size(); ++j) {
                ok = ok && gf::iou(boxes[static_cast<size_t>(kept[i])],
                                   boxes[static_cast<size_t>(kept[j])]) <= 0.45f;
            }
        }
        check(ok, "nms order and pairwise-iou properties");
    }

    // roi pool k=1 equals the covered-cell maximum
    {
        gf::Tensor map({3, 8, 8});
        for (auto& v : map.values()) v = rng.uniform(-2.0f, 2.0f);
        gf::Tensor pooled = gf::roi_pool(map, gf::Box{0, 0, 8 * 16, 8 * 16}, 1, 16);
        bool ok = true;
        for (int c = 0; c < 3; ++c) {
            float m = map.at(c, 0, 0);
            for (int i = 0; i < 64; ++i) m = std::max(m, map.values()[c * 64 + i]);
            ok = ok && pooled.at(c) == m;
        }
        check(ok, "roi_pool k=1 full-coverage maximum");
    }

    // box delta encode/decode round trip
    {
        bool ok = true;
        for (int trial = 0; trial < 50; ++trial) {
            const float x1 = rng.uniform(0.0f, 200.0f), y1 = rng.uniform(0.0f, 200.0f);
            gf::Box a{x1, y1, x1 + rng.uniform(5.0f, 80.0f), y1 + rng.uniform(5.0f, 80.0f)};
            const float x2 = rng.uniform(0.0f, 200.0f), y2 = rng.uniform(0.0f, 200.0f);
            gf::Box b{x2, y2, x2 + rng.uniform(5.0f, 80.0f), y2 + rng.uniform(5.0f, 80.0f)};
            gf::Box back = gf::decode_deltas(a, gf::encode_deltas(a, b), 400, 400);
            ok = ok && std::abs(back.x1 - b.x1) < 1e-2f && std::abs(back.y2 - b.y2) < 1e-2f;
        }
        check(ok, "box delta encode/decode round trip");
    }

    // weight and feature cache round trips
    {
        gf::ParamStore params;
        gf::Tensor t({3, 5});
        for (auto& v : t.values()) v = rng.uniform(-1.0f, 1.0f);
        params.emplace("probe.w", t);
        const std::string wpath = "selftest_probe.gfwt";
        gf::save_weights(params, wpath);
        auto loaded = gf::load_weights(wpath);
        bool ok = loaded.at("probe.w").values() == t.values();
        fs::remove(wpath);

        gf::Tensor map({4, 3, 5});
        for (auto& v : map.values()) v = rng.uniform(-1.0f, 1.0f);
        gf::FeatureSet set = gf::from_grid(map, 32, 96, 160);
        const std::string fpath = "selftest_probe.gfvq";
        gf::save_cache(set, fpath);
        auto lset = gf::load_cache(fpath);
        ok = ok && lset.vectors.values() == set.vectors.values();
        fs::remove(fpath);
        check(ok, "GFWT and GFVQ round trips");
    }

    // grid count ladder
    {
        const bool ok = gf::grid_count(448, 448) == 196 && gf::grid_count(448, 746) == 336 &&
                        gf::grid_count(600, 1000) == 608 && gf::grid_count(800, 1333) == 1050;
        check(ok, "grid count ladder");
    }

    // attention invariants on a random head
    {
        const auto vocab = gf::synth::default_vocabulary();
        gf::VqaConfig model;
        model.vocab_size = vocab.num_tokens();
        model.num_answers = vocab.num_answers();
        model.feature_dim = 6;
        model.embed_dim = 8;
        model.q_dim = 8;
        model.attn_hidden = 8;
        model.fuse_hidden = 8;
        const auto head = gf::build_vqa_head(model, 3);
        const gf::VarMap vars = gf::make_var_map(head);
        gf::Tensor rows({5, 6});
        for (auto& v : rows.values()) v = rng.uniform(-1.0f, 1.0f);
        std::vector<bool> mask = {true, false, true, true, false};
        auto out = gf::vqa_head_forward(gf::ad::constant(rows), mask, {1, 2, 3}, vars, model);
        double sum = 0.0;
        bool ok = true;
        for (int i = 0; i < 5; ++i) {
            const float w = out.attention->value.at(i);
            ok = ok && w >= 0.0f && (mask[static_cast<size_t>(i)] || w == 0.0f);
            sum += w;
        }
        ok = ok && std::abs(sum - 1.0) < 1e-6;
        check(ok, "attention weight invariants");
    }

    std::cout << (failures == 0 ? "selftest passed\n" : "selftest FAILED\n");
    return failures == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"region vs grid visual features at desk scale"};
    app.require_subcommand(1);

    CommonOpts common;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic shapes dataset");
    add_common(gen, common);
    std::string gen_out = "dataset";
    int gen_train = 64, gen_val = 16, gen_test = 32;
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--train", gen_train, "training scenes");
    gen->add_option("--val", gen_val, "validation scenes");
    gen->add_option("--test", gen_test, "test scenes");

    auto* pre = app.add_subcommand("pretrain", "pre-train the toy backbone");
    add_common(pre, common);
    std::string pre_data = "dataset", pre_mode = "detection+attributes",
                pre_out = "detector.gfwt", pre_log;
    pre->add_option("--data", pre_data, "dataset directory (gen-data output)");
    pre->add_option("--mode", pre_mode,
                    "classification | detection | detection+attributes");
    pre->add_option("--out", pre_out, "output weight file");
    pre->add_option("--log", pre_log, "loss log CSV path");

    auto* ext = app.add_subcommand("extract", "extract features for one image");
    add_common(ext, common);
    std::string ext_pipeline = "grid", ext_weights, ext_in, ext_out = "features.gfvq";
    ext->add_option("--pipeline", ext_pipeline, "region | grid");
    ext->add_option("--weights", ext_weights, "detector weight file")->required();
    ext->add_option("--in", ext_in, "input PPM image")->required();
    ext->add_option("--out", ext_out, "output GFVQ file");

    auto* tv = app.add_subcommand("train-vqa", "train the VQA head on cached features");
    add_common(tv, common);
    std::string tv_data = "dataset", tv_features = "features", tv_pipeline = "grid",
                tv_weights, tv_out = "head.gfwt", tv_log;
    tv->add_option("--data", tv_data, "dataset directory");
    tv->add_option("--features", tv_features, "feature cache directory");
    tv->add_option("--pipeline", tv_pipeline, "region | grid");
    tv->add_option("--weights", tv_weights, "detector weight file")->required();
    tv->add_option("--out", tv_out, "output head weight file");
    tv->add_option("--log", tv_log, "loss log CSV path");

    auto* ans = app.add_subcommand("answer", "answer a question about one image");
    add_common(ans, common);
    std::string ans_weights, ans_head, ans_in, ans_question;
    ans->add_option("--weights", ans_weights, "detector weight file")->required();
    ans->add_option("--head", ans_head, "trained head file")->required();
    ans->add_option("--in", ans_in, "input PPM image")->required();
    ans->add_option("--question", ans_question, "question text")->required();

    auto* ra = app.add_subcommand("render-attn", "render the attention heatmap");
    add_common(ra, common);
    std::string ra_weights, ra_head, ra_in, ra_question, ra_out = "attention.pgm";
    ra->add_option("--weights", ra_weights, "detector weight file")->required();
    ra->add_option("--head", ra_head, "trained head file")->required();
    ra->add_option("--in", ra_in, "input PPM image")->required();
    ra->add_option("--question", ra_question, "question text")->required();
    ra->add_option("--out", ra_out, "output PGM heatmap");

    auto* be = app.add_subcommand("bench", "stage-timed pipeline benchmark");
    add_common(be, common);
    std::string be_pipeline = "region", be_out, be_report;
    int be_classes = -1, be_n = -1;
    be->add_option("--pipeline", be_pipeline, "region | grid");
    be->add_option("--classes", be_classes, "shortcut for detector.num_classes");
    be->add_option("--n", be_n, "shortcut for detector.n");
    be->add_option("--out", be_out, "timings CSV path");
    be->add_option("--report", be_report, "markdown report path");

    auto* sw = app.add_subcommand("sweep", "factor sweeps");
    add_common(sw, common);
    std::string sw_kind, sw_out = "sweep.csv", sw_weights, sw_head;
    std::vector<int> sw_ns;
    int sw_train = 32, sw_eval = 16;
    sw->add_option("--kind", sw_kind, "num-features | input-size | pretrain")->required();
    sw->add_option("--out", sw_out, "output CSV path");
    sw->add_option("--weights", sw_weights, "detector weight file (num-features, input-size)");
    sw->add_option("--head", sw_head, "trained head file (input-size)");
    sw->add_option("--ns", sw_ns, "feature counts for num-features");
    sw->add_option("--train-scenes", sw_train, "training scenes for sweep cells");
    sw->add_option("--eval-scenes", sw_eval, "eval scenes for sweep cells");

    auto* st = app.add_subcommand("selftest", "run the built-in oracle/invariant suite");
    (void)st;

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }

    try {
        if (gen->parsed()) return run_gen_data(common, gen_out, gen_train, gen_val, gen_test);
        if (pre->parsed()) return run_pretrain(common, pre_data, pre_mode, pre_out, pre_log);
        if (ext->parsed()) return run_extract(common, ext_pipeline, ext_weights, ext_in, ext_out);
        if (tv->parsed()) {
            return run_train_vqa(common, tv_data, tv_features, tv_pipeline, tv_weights,
                                 tv_out, tv_log);
        }
        if (ans->parsed()) return run_answer(common, ans_weights, ans_head, ans_in, ans_question);
        if (ra->parsed()) {
            return run_render_attn(common, ra_weights, ra_head, ra_in, ra_question, ra_out);
        }
        if (be->parsed()) {
            if (be_classes > 0) common.overrides.push_back("detector.num_classes=" +
                                                           std::to_string(be_classes));
            if (be_n > 0) common.overrides.push_back("detector.n=" + std::to_string(be_n));
            return run_bench(common, be_pipeline, be_out, be_report);
        }
        if (sw->parsed()) {
            return run_sweep(common, sw_kind, sw_out, sw_weights, sw_head, sw_ns, sw_train,
                             sw_eval);
        }
        if (st->parsed()) return run_selftest();
    } catch (const gf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
