#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "gf/features.h"
#include "gf/io_util.h"
#include "gf/kernels.h"
#include "gf/rng.h"
#include "gf/vqa.h"
#include "oracles.h"

using gf::FeatureSet;
using gf::ParamStore;
using gf::Tensor;
using gf::VarMap;
using gf::VqaConfig;
using oracle::DTensor;
namespace ad = gf::ad;

namespace {

VqaConfig small_config() {
    VqaConfig c;
    c.vocab_size = 9;
    c.num_answers = 4;
    c.feature_dim = 5;
    c.embed_dim = 4;
    c.q_dim = 5;
    c.attn_hidden = 6;
    c.fuse_hidden = 7;
    return c;
}

}  // namespace

TEST_SUITE_BEGIN("vqa");

TEST_CASE("vocabulary basics and round-trip") {
    gf::Vocabulary vocab;
    vocab.tokens = {{"is", 1}, {"there", 2}, {"red", 3}, {"circle", 4}};
    vocab.answers = {"yes", "no", "red"};

    CHECK(vocab.token_id("red") == 3);
    CHECK(vocab.token_id("zebra") == 0);
    CHECK(vocab.encode("is there zebra") == std::vector<int>{1, 2, 0});
    CHECK(vocab.answer_id("no") == 1);
    CHECK_THROWS(vocab.answer_id("blue"));

    vocab.save("vocab.json");
    gf::Vocabulary loaded = gf::Vocabulary::load("vocab.json");
    CHECK(loaded.tokens == vocab.tokens);
    CHECK(loaded.answers == vocab.answers);
    std::filesystem::remove("vocab.json");
}

TEST_CASE("encode_question contracts") {
    VqaConfig config = small_config();
    ParamStore params = gf::build_vqa_head(config, 3);
    VarMap vars = gf::make_var_map(params);

    CHECK_THROWS(gf::encode_question({}, vars));

    // bag of words: order does not matter
    auto a = gf::encode_question({1, 2, 3}, vars);
    auto b = gf::encode_question({3, 1, 2}, vars);
    for (int i = 0; i < config.q_dim; ++i) {
        CHECK(a->value.at(i) == doctest::Approx(b->value.at(i)));
    }

    // all-unknown tokens collapse to the unknown embedding
    auto u1 = gf::encode_question({0}, vars);
    auto u2 = gf::encode_question({0, 0, 0}, vars);
    for (int i = 0; i < config.q_dim; ++i) {
        CHECK(u1->value.at(i) == doctest::Approx(u2->value.at(i)));
    }

    // single token equals relu(linear(embedding row))
    const Tensor& table = params.at("vqa.embed.table");
    Tensor row({config.embed_dim});
    for (int e = 0; e < config.embed_dim; ++e) row.at(e) = table.at(2, e);
    Tensor expect = gf::kernels::relu(gf::kernels::linear(
        row, params.at("vqa.q.fc.w"), params.at("vqa.q.fc.b")));
    auto single = gf::encode_question({2}, vars);
    for (int i = 0; i < config.q_dim; ++i) {
        CHECK(single->value.at(i) == doctest::Approx(expect.at(i)));
    }
}

TEST_CASE("top_down_attention contracts") {
    VqaConfig config = small_config();
    ParamStore params = gf::build_vqa_head(config, 4);
    gf::Rng rng(501);

    Tensor rows({6, config.feature_dim});
    for (auto& v : rows.values()) v = rng.uniform(-1.0f, 1.0f);

    SUBCASE("single unmasked row takes all the weight") {
        VarMap vars = gf::make_var_map(params);
        auto q = gf::encode_question({1, 2}, vars);
        std::vector<bool> mask = {false, false, true, false, false, false};
        auto w = gf::top_down_attention(ad::constant(rows), mask, q, vars);
        CHECK(w->value.at(2) == doctest::Approx(1.0f));
        CHECK(w->value.at(0) == 0.0f);
    }

    SUBCASE("zero score layer gives uniform weights over unmasked rows") {
        ParamStore zeroed = params;
        zeroed.at("vqa.attn.fc2.w") = Tensor(zeroed.at("vqa.attn.fc2.w").shape(), 0.0f);
        zeroed.at("vqa.attn.fc2.b") = Tensor({1}, 0.0f);
        VarMap vars = gf::make_var_map(zeroed);
        auto q = gf::encode_question({1}, vars);
        std::vector<bool> mask = {true, true, false, true, false, true};
        auto w = gf::top_down_attention(ad::constant(rows), mask, q, vars);
        for (int i = 0; i < 6; ++i) {
            if (mask[static_cast<size_t>(i)]) {
                CHECK(w->value.at(i) == doctest::Approx(0.25f));
            } else {
                CHECK(w->value.at(i) == 0.0f);
            }
        }
    }

    SUBCASE("adding a constant to every score leaves weights unchanged") {
        VarMap vars = gf::make_var_map(params);
        auto q = gf::encode_question({1, 2}, vars);
        std::vector<bool> mask(6, true);
        auto w1 = gf::top_down_attention(ad::constant(rows), mask, q, vars);

        ParamStore shifted = params;
        shifted.at("vqa.attn.fc2.b").at(0) += 3.25f;
        VarMap vars2 = gf::make_var_map(shifted);
        auto q2 = gf::encode_question({1, 2}, vars2);
        auto w2 = gf::top_down_attention(ad::constant(rows), mask, q2, vars2);
        for (int i = 0; i < 6; ++i) {
            CHECK(w1->value.at(i) == doctest::Approx(w2->value.at(i)).epsilon(1e-5));
        }
    }

    SUBCASE("all rows masked is an error") {
        VarMap vars = gf::make_var_map(params);
        auto q = gf::encode_question({1}, vars);
        std::vector<bool> mask(6, false);
        CHECK_THROWS(gf::top_down_attention(ad::constant(rows), mask, q, vars));
    }

    SUBCASE("invariants hold across random masks") {
        VarMap vars = gf::make_var_map(params);
        for (int trial = 0; trial < 30; ++trial) {
            Tensor r({8, config.feature_dim});
            for (auto& v : r.values()) v = rng.uniform(-2.0f, 2.0f);
            std::vector<bool> mask(8);
            int real = 0;
            for (size_t i = 0; i < 8; ++i) {
                mask[i] = rng.uniform() < 0.7f;
                real += mask[i] ? 1 : 0;
            }
            if (real == 0) mask[0] = true;
            auto q = gf::encode_question({rng.uniform_int(0, 8)}, vars);
            auto w = gf::top_down_attention(ad::constant(r), mask, q, vars);
            double sum = 0.0;
            for (int i = 0; i < 8; ++i) {
                CHECK(w->value.at(i) >= 0.0f);
                if (!mask[static_cast<size_t>(i)]) CHECK(w->value.at(i) == 0.0f);
                sum += w->value.at(i);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("fuse_and_classify contracts") {
    VqaConfig config = small_config();
    ParamStore params = gf::build_vqa_head(config, 5);
    VarMap vars = gf::make_var_map(params);
    gf::Rng rng(502);

    Tensor rows({5, config.feature_dim});
    for (auto& v : rows.values()) v = rng.uniform(-1.0f, 1.0f);
    auto q = gf::encode_question({1, 3}, vars);

    SUBCASE("one-hot attention picks that row") {
        Tensor onehot({5}, std::vector<float>{0, 0, 1, 0, 0});
        auto logits =
            gf::fuse_and_classify(ad::constant(rows), ad::constant(onehot), q, vars);
        // recompute with the row directly
        Tensor row({config.feature_dim});
        for (int c = 0; c < config.feature_dim; ++c) row.at(c) = rows.at(2, c);
        Tensor proj = gf::kernels::linear(q->value, params.at("vqa.proj.w"),
                                          params.at("vqa.proj.b"));
        Tensor fused({config.feature_dim});
        for (int c = 0; c < config.feature_dim; ++c) fused.at(c) = row.at(c) * proj.at(c);
        Tensor hidden = gf::kernels::relu(gf::kernels::linear(
            fused, params.at("vqa.fuse.fc1.w"), params.at("vqa.fuse.fc1.b")));
        Tensor expect = gf::kernels::linear(hidden, params.at("vqa.fuse.fc2.w"),
                                            params.at("vqa.fuse.fc2.b"));
        for (int i = 0; i < config.num_answers; ++i) {
            CHECK(logits->value.at(i) == doctest::Approx(expect.at(i)).epsilon(1e-5));
        }
    }

    SUBCASE("zero features leave only bias terms") {
        Tensor zeros({5, config.feature_dim}, 0.0f);
        Tensor uniform({5}, 0.2f);
        auto l1 = gf::fuse_and_classify(ad::constant(zeros), ad::constant(uniform), q, vars);
        auto q2 = gf::encode_question({4, 5, 6}, vars);
        auto l2 = gf::fuse_and_classify(ad::constant(zeros), ad::constant(uniform), q2, vars);
        for (int i = 0; i < config.num_answers; ++i) {
            CHECK(l1->value.at(i) == doctest::Approx(l2->value.at(i)));
        }
    }

    SUBCASE("argmax is stable under matched row/attention permutation") {
        Tensor att({5});
        for (int i = 0; i < 5; ++i) att.at(i) = 0.1f + 0.05f * static_cast<float>(i);
        float s = 0.0f;
        for (int i = 0; i < 5; ++i) s += att.at(i);
        for (int i = 0; i < 5; ++i) att.at(i) /= s;

        auto logits = gf::fuse_and_classify(ad::constant(rows), ad::constant(att), q, vars);

        const int perm[5] = {3, 0, 4, 2, 1};
        Tensor prows({5, config.feature_dim});
        Tensor patt({5});
        for (int i = 0; i < 5; ++i) {
            patt.at(i) = att.at(perm[i]);
            for (int c = 0; c < config.feature_dim; ++c) {
                prows.at(i, c) = rows.at(perm[i], c);
            }
        }
        auto plogits = gf::fuse_and_classify(ad::constant(prows), ad::constant(patt), q, vars);

        int argmax = 0, pargmax = 0;
        for (int i = 1; i < config.num_answers; ++i) {
            if (logits->value.at(i) > logits->value.at(argmax)) argmax = i;
            if (plogits->value.at(i) > plogits->value.at(pargmax)) pargmax = i;
        }
        CHECK(argmax == pargmax);
    }
}

TEST_CASE("ppm shapes and degenerate pools") {
    gf::Rng rng(503);

    SUBCASE("default config adds 1536 channels") {
        VqaConfig config = small_config();
        config.use_ppm = true;
        config.ppm_input_dim = 4;
        config.feature_dim = 4 + 1536;
        ParamStore params = gf::build_vqa_head(config, 6);
        VarMap vars = gf::make_var_map(params);
        Tensor map({4, 8, 8});
        for (auto& v : map.values()) v = rng.uniform(-1.0f, 1.0f);
        auto out = gf::ppm(ad::constant(map), vars, config.ppm);
        CHECK(out->value.shape() == std::vector<int>{4 + 1536, 8, 8});
    }

    VqaConfig config = small_config();
    config.use_ppm = true;
    config.ppm_input_dim = 3;
    config.ppm.pool_sizes = {1, 2, 4};
    config.ppm.proj_dim = 6;
    config.feature_dim = 3 + 3 * 6;
    ParamStore params = gf::build_vqa_head(config, 7);
    VarMap vars = gf::make_var_map(params);

    SUBCASE("constant input gives spatially constant branches") {
        Tensor map({3, 4, 4}, 0.75f);
        auto out = gf::ppm(ad::constant(map), vars, config.ppm);
        for (int c = 3; c < out->value.dim(0); ++c) {
            const float first = out->value.at(c, 0, 0);
            for (int i = 0; i < 4; ++i) {
                for (int j = 0; j < 4; ++j) {
                    CHECK(out->value.at(c, i, j) == doctest::Approx(first));
                }
            }
        }
    }

    SUBCASE("pool size equal to the grid degenerates to a 1x1 conv of the input") {
        Tensor map({3, 4, 4});
        for (auto& v : map.values()) v = rng.uniform(-1.0f, 1.0f);
        auto out = gf::ppm(ad::constant(map), vars, config.ppm);
        // branch s=4: adaptive pool 4x4 on a 4x4 map is the identity
        Tensor conv = gf::kernels::conv2d(map, params.at("vqa.ppm.s4.conv.w"),
                                          params.at("vqa.ppm.s4.conv.b"), gf::ConvSpec{1, 1, 0});
        Tensor normed = gf::kernels::batchnorm_infer(
            conv, params.at("vqa.ppm.s4.bn.mean"), params.at("vqa.ppm.s4.bn.var"),
            params.at("vqa.ppm.s4.bn.gamma"), params.at("vqa.ppm.s4.bn.beta"), 1e-5f);
        Tensor expect = gf::kernels::relu(normed);
        const int offset = 3 + 2 * 6;  // input channels + two earlier branches
        for (int c = 0; c < 6; ++c) {
            for (int i = 0; i < 4; ++i) {
                for (int j = 0; j < 4; ++j) {
                    CHECK(out->value.at(offset + c, i, j) == doctest::Approx(expect.at(c, i, j)));
                }
            }
        }
    }

    SUBCASE("grid smaller than the largest pool size is an error") {
        Tensor map({3, 3, 3});
        CHECK_THROWS(gf::ppm(ad::constant(map), vars, config.ppm));
    }
}

TEST_CASE("render_attention_map contracts") {
    gf::Rng rng(504);

    SUBCASE("one-hot grid attention lights exactly one stride block") {
        Tensor map({2, 2, 3});
        FeatureSet set = gf::from_grid(map, 32, 64, 96);
        Tensor att({6}, 0.0f);
        att.at(0) = 1.0f;
        Tensor heat = gf::render_attention_map(att, set);
        REQUIRE(heat.shape() == std::vector<int>{64, 96});
        for (int y = 0; y < 64; ++y) {
            for (int x = 0; x < 96; ++x) {
                const float expect = (y < 32 && x < 32) ? 1.0f : 0.0f;
                CHECK(heat.at(y, x) == expect);
            }
        }
    }

    SUBCASE("uniform attention over tiling cells renders all 0.5") {
        Tensor map({2, 2, 2});
        FeatureSet set = gf::from_grid(map, 32, 64, 64);
        Tensor att({4}, 0.25f);
        Tensor heat = gf::render_attention_map(att, set);
        for (float v : heat.values()) CHECK(v == 0.5f);
    }

    SUBCASE("overlapping regions average before normalization") {
        FeatureSet set;
        set.kind = FeatureSet::Kind::region;
        set.vectors = Tensor({2, 3});
        set.mask = {true, true};
        set.boxes = {gf::Box{0, 0, 20, 10}, gf::Box{10, 0, 30, 10}};
        set.image_h = 10;
        set.image_w = 30;
        Tensor att({2}, std::vector<float>{0.6f, 0.4f});
        Tensor heat = gf::render_attention_map(att, set);
        // raw values 0.6 / 0.5 / 0.4 normalize to 1 / 0.5 / 0
        CHECK(heat.at(5, 5) == doctest::Approx(1.0f));
        CHECK(heat.at(5, 15) == doctest::Approx(0.5f));
        CHECK(heat.at(5, 25) == doctest::Approx(0.0f));
    }

    SUBCASE("zero-area unmasked geometry is an error") {
        FeatureSet set;
        set.kind = FeatureSet::Kind::region;
        set.vectors = Tensor({1, 3});
        set.mask = {true};
        set.boxes = {gf::Box{5, 5, 5, 9}};
        set.image_h = 20;
        set.image_w = 20;
        Tensor att({1}, 1.0f);
        CHECK_THROWS(gf::render_attention_map(att, set));
    }

    SUBCASE("output stays in [0,1] and attains both ends when non-constant") {
        for (int trial = 0; trial < 20; ++trial) {
            const int gh = rng.uniform_int(2, 4), gw = rng.uniform_int(2, 4);
            Tensor map({2, gh, gw});
            FeatureSet set = gf::from_grid(map, 16, gh * 16, gw * 16);
            Tensor att({gh * gw});
            float sum = 0.0f;
            for (auto& v : att.values()) {
                v = rng.uniform(0.0f, 1.0f);
                sum += v;
            }
            for (auto& v : att.values()) v /= sum;
            Tensor heat = gf::render_attention_map(att, set);
            float lo = 1.0f, hi = 0.0f;
            for (float v : heat.values()) {
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            bool constant = true;
            for (float v : att.values()) constant = constant && v == att.at(0);
            if (!constant) {
                CHECK(lo == 0.0f);
                CHECK(hi == 1.0f);
            }
        }
    }
}

TEST_CASE("full head with ppm passes end-to-end finite differences") {
    VqaConfig config = small_config();
    config.use_ppm = true;
    config.ppm_input_dim = 5;
    config.ppm.pool_sizes = {1, 4, 8};
    config.ppm.proj_dim = 4;
    config.feature_dim = 5 + 3 * 4;

    ParamStore params = gf::build_vqa_head(config, 8);
    gf::Rng rng(505);
    Tensor map({5, 8, 8});
    for (auto& v : map.values()) v = rng.uniform(-1.0f, 1.0f);
    FeatureSet set = gf::from_grid(map, 32, 256, 256);
    const std::vector<int> token_ids = {2, 5, 5};
    Tensor targets({config.num_answers});
    for (auto& v : targets.values()) v = rng.uniform(0.0f, 1.0f);

    // analytic gradients, with the grid map itself also trainable
    VarMap vars = gf::make_var_map(params, [](const std::string&) { return true; });
    ad::Var map_var = ad::leaf(map, true);
    ad::Var rows = ad::rows_from_grid(gf::ppm(map_var, vars, config.ppm));
    auto out = gf::vqa_head_forward(rows, set.mask, token_ids, vars, config);
    auto loss = gf::vqa_loss(out.logits, targets);
    ad::backward(loss);

    oracle::DParams base = oracle::widen_params(params);
    const DTensor dmap = oracle::widen(map);
    const DTensor dtargets = oracle::widen(targets);
    const std::vector<int> pools = {1, 4, 8};

    // sanity: the double reference agrees with the f32 forward value
    const double ref_loss = oracle::head_loss_reference(base, dmap, pools, token_ids, dtargets, true);
    CHECK(loss->value.at(0) == doctest::Approx(ref_loss).epsilon(1e-4));

    for (const auto& [name, tensor] : params) {
        if (name.find(".bn.mean") != std::string::npos ||
            name.find(".bn.var") != std::string::npos) {
            continue;  // frozen statistics are not trained
        }
        oracle::ScalarFn f = [&, pname = name](const std::vector<std::vector<double>>& in) {
            oracle::DParams P = base;
            P.at(pname).data = in[0];
            return oracle::head_loss_reference(P, dmap, pools, token_ids, dtargets, true);
        };
        std::vector<std::vector<double>> inputs = {base.at(name).data};
        const auto fd = oracle::fd_gradient(f, inputs, 0);
        const auto& analytic = vars.at(name)->grad;
        REQUIRE_MESSAGE(!analytic.empty(), name);
        CHECK_MESSAGE(oracle::grad_rel_err(analytic.values(), fd) < 1e-4, name);
    }

    // gradient w.r.t. the grid map (the end-to-end direction)
    oracle::ScalarFn f_map = [&](const std::vector<std::vector<double>>& in) {
        DTensor m = dmap;
        m.data = in[0];
        return oracle::head_loss_reference(base, m, pools, token_ids, dtargets, true);
    };
    std::vector<std::vector<double>> map_in = {oracle::flat(map)};
    const auto fd_map = oracle::fd_gradient(f_map, map_in, 0);
    CHECK(oracle::grad_rel_err(map_var->grad.values(), fd_map) < 1e-4);
}

TEST_CASE("head without ppm passes finite differences with masked rows") {
    VqaConfig config = small_config();
    ParamStore params = gf::build_vqa_head(config, 9);
    gf::Rng rng(506);

    Tensor rows({7, config.feature_dim});
    for (auto& v : rows.values()) v = rng.uniform(-1.0f, 1.0f);
    std::vector<bool> mask = {true, true, false, true, true, false, true};
    const std::vector<int> token_ids = {1, 4};
    Tensor targets({config.num_answers});
    for (auto& v : targets.values()) v = rng.uniform(0.0f, 1.0f);

    VarMap vars = gf::make_var_map(params, [](const std::string&) { return true; });
    auto out = gf::vqa_head_forward(ad::constant(rows), mask, token_ids, vars, config);
    auto loss = gf::vqa_loss(out.logits, targets);
    ad::backward(loss);

    oracle::DParams base = oracle::widen_params(params);
    const DTensor dtargets = oracle::widen(targets);

    auto masked_loss = [&](const oracle::DParams& P) {
        const int n = 7, d = config.feature_dim;
        const DTensor& table = P.at("vqa.embed.table");
        DTensor mean({table.dim(1)});
        for (int id : token_ids) {
            for (int e = 0; e < table.dim(1); ++e) mean.at(e) += table.at(id, e);
        }
        for (auto& v : mean.data) v /= 2.0;
        DTensor q =
            oracle::relu(oracle::linear(mean, P.at("vqa.q.fc.w"), P.at("vqa.q.fc.b")));
        DTensor scores({n});
        for (int i = 0; i < n; ++i) {
            DTensor joint({d + q.dim(0)});
            for (int c = 0; c < d; ++c) joint.at(c) = rows.at(i, c);
            for (int c = 0; c < q.dim(0); ++c) joint.at(d + c) = q.at(c);
            DTensor h = oracle::relu(
                oracle::linear(joint, P.at("vqa.attn.fc1.w"), P.at("vqa.attn.fc1.b")));
            scores.at(i) =
                oracle::linear(h, P.at("vqa.attn.fc2.w"), P.at("vqa.attn.fc2.b")).at(0);
        }
        DTensor w = oracle::masked_softmax(scores, mask);
        DTensor attended({d});
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < d; ++c) attended.at(c) += w.at(i) * rows.at(i, c);
        }
        DTensor proj = oracle::linear(q, P.at("vqa.proj.w"), P.at("vqa.proj.b"));
        DTensor fused({d});
        for (int c = 0; c < d; ++c) fused.at(c) = attended.at(c) * proj.at(c);
        DTensor hidden = oracle::relu(
            oracle::linear(fused, P.at("vqa.fuse.fc1.w"), P.at("vqa.fuse.fc1.b")));
        DTensor logits =
            oracle::linear(hidden, P.at("vqa.fuse.fc2.w"), P.at("vqa.fuse.fc2.b"));
        return oracle::bce_with_logits_mean(logits, dtargets);
    };

    for (const auto& [name, tensor] : params) {
        oracle::ScalarFn f = [&, pname = name](const std::vector<std::vector<double>>& in) {
            oracle::DParams P = base;
            P.at(pname).data = in[0];
            return masked_loss(P);
        };
        std::vector<std::vector<double>> inputs = {base.at(name).data};
        const auto fd = oracle::fd_gradient(f, inputs, 0);
        const auto& analytic = vars.at(name)->grad;
        REQUIRE_MESSAGE(!analytic.empty(), name);
        CHECK_MESSAGE(oracle::grad_rel_err(analytic.values(), fd) < 1e-4, name);
    }
}

TEST_CASE("vqa_loss closed form") {
    Tensor z({4}, 0.0f);
    Tensor t({4}, 0.5f);
    auto loss = gf::vqa_loss(ad::leaf(z, false), t);
    CHECK(loss->value.at(0) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("optimizer semantics") {
    SUBCASE("sgd with momentum and weight decay") {
        gf::TrainSchedule sched;
        sched.optimizer = gf::TrainSchedule::Optimizer::sgd_momentum;
        sched.base_lr = 0.1f;
        sched.clip_norm = 0.0f;
        gf::Optimizer opt(sched);

        ParamStore params;
        params.emplace("w", Tensor({1}, std::vector<float>{2.0f}));
        std::map<std::string, Tensor> grads;
        grads.emplace("w", Tensor({1}, std::vector<float>{1.0f}));

        opt.step(params, grads);
        // g' = 1 + 1e-4 * 2, v = g', w = 2 - 0.1 * v
        const float g1 = 1.0f + 1e-4f * 2.0f;
        CHECK(params.at("w").at(0) == doctest::Approx(2.0f - 0.1f * g1));

        const float w1 = 2.0f - 0.1f * g1;
        opt.step(params, grads);
        const float g2 = 1.0f + 1e-4f * w1;
        const float v2 = 0.9f * g1 + g2;
        CHECK(params.at("w").at(0) == doctest::Approx(w1 - 0.1f * v2));
    }

    SUBCASE("adamax matches the update rule") {
        gf::TrainSchedule sched;
        sched.optimizer = gf::TrainSchedule::Optimizer::adamax;
        sched.base_lr = 0.01f;
        sched.clip_norm = 0.0f;
        gf::Optimizer opt(sched);

        ParamStore params;
        params.emplace("w", Tensor({1}, std::vector<float>{1.0f}));
        std::map<std::string, Tensor> grads;
        grads.emplace("w", Tensor({1}, std::vector<float>{0.5f}));

        opt.step(params, grads);
        const float m = 0.1f * 0.5f;
        const float u = 0.5f;
        const float expect = 1.0f - (0.01f / (1.0f - 0.9f)) * m / (u + 1e-8f);
        CHECK(params.at("w").at(0) == doctest::Approx(expect));
    }

    SUBCASE("gradient clipping rescales by the global trainable norm") {
        gf::TrainSchedule sched;
        sched.optimizer = gf::TrainSchedule::Optimizer::sgd_momentum;
        sched.base_lr = 1.0f;
        sched.clip_norm = 1.0f;
        sched.freeze_prefixes = {"frozen."};
        gf::Optimizer opt(sched);

        ParamStore params;
        params.emplace("a", Tensor({1}, std::vector<float>{0.0f}));
        params.emplace("frozen.b", Tensor({1}, std::vector<float>{0.0f}));
        std::map<std::string, Tensor> grads;
        grads.emplace("a", Tensor({1}, std::vector<float>{3.0f}));
        grads.emplace("frozen.b", Tensor({1}, std::vector<float>{100.0f}));

        opt.step(params, grads);
        // frozen gradient is excluded from the norm and from updates
        CHECK(params.at("frozen.b").at(0) == 0.0f);
        CHECK(params.at("a").at(0) == doctest::Approx(-1.0f));  // 3 clipped to norm 1
    }

    SUBCASE("milestones decay the learning rate") {
        gf::TrainSchedule sched;
        sched.base_lr = 1.0f;
        sched.decay = 0.1f;
        sched.milestones = {5, 9};
        CHECK(sched.lr_at(0) == doctest::Approx(1.0f));
        CHECK(sched.lr_at(4) == doctest::Approx(1.0f));
        CHECK(sched.lr_at(5) == doctest::Approx(0.1f));
        CHECK(sched.lr_at(9) == doctest::Approx(0.01f));
    }

    SUBCASE("batchnorm statistics never update") {
        gf::TrainSchedule sched;
        sched.clip_norm = 0.0f;
        gf::Optimizer opt(sched);
        ParamStore params;
        params.emplace("bn.mean", Tensor({1}, std::vector<float>{0.5f}));
        std::map<std::string, Tensor> grads;
        grads.emplace("bn.mean", Tensor({1}, std::vector<float>{9.0f}));
        opt.step(params, grads);
        CHECK(params.at("bn.mean").at(0) == 0.5f);
    }
}

TEST_CASE("a small head overfits one batch") {
    VqaConfig config = small_config();
    ParamStore params = gf::build_vqa_head(config, 10);
    gf::Rng rng(507);

    // one memorizable example: fixed rows, fixed question, one-hot target
    Tensor rows({4, config.feature_dim});
    for (auto& v : rows.values()) v = rng.uniform(-1.0f, 1.0f);
    std::vector<bool> mask(4, true);
    const std::vector<int> token_ids = {1, 2, 3};
    Tensor target({config.num_answers}, 0.0f);
    target.at(2) = 1.0f;

    gf::TrainSchedule sched;
    sched.optimizer = gf::TrainSchedule::Optimizer::adamax;
    sched.base_lr = 0.01f;
    sched.clip_norm = 0.25f;
    gf::Optimizer opt(sched);

    float initial = 0.0f;
    float final_loss = 0.0f;
    for (int it = 0; it < 50; ++it) {
        VarMap vars = gf::make_var_map(params, [](const std::string&) { return true; });
        auto out = gf::vqa_head_forward(ad::constant(rows), mask, token_ids, vars, config);
        auto loss = gf::vqa_loss(out.logits, target);
        ad::backward(loss);
        std::map<std::string, Tensor> grads;
        for (auto& [name, v] : vars) {
            if (!v->grad.empty()) grads.emplace(name, v->grad);
        }
        opt.step(params, grads);
        if (it == 0) initial = loss->value.at(0);
        final_loss = loss->value.at(0);
    }
    CHECK(final_loss < 0.1f * initial);
}

TEST_CASE("loss log CSV") {
    std::vector<gf::LossLogRow> log = {{0, 1.5f, 0.01f}, {1, 1.2f, 0.01f}};
    gf::save_loss_log(log, "loss.csv");
    const std::string text = gf::io::read_text_file("loss.csv");
    CHECK(text.find("iteration,loss,lr") == 0);
    CHECK(text.find("0,1.5,0.01") != std::string::npos);
    std::filesystem::remove("loss.csv");
}

TEST_SUITE_END();
