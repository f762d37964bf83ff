#include "gf/vqa.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "gf/io_util.h"
#include "gf/kernels.h"

namespace gf {

namespace ad = gf::ad;
using nlohmann::json;

int Vocabulary::answer_id(const std::string& answer) const {
    for (size_t i = 0; i < answers.size(); ++i) {
        if (answers[i] == answer) return static_cast<int>(i);
    }
    throw std::invalid_argument("unknown answer: " + answer);
}

std::vector<int> Vocabulary::encode(const std::string& question) const {
    std::vector<int> ids;
    std::istringstream is(question);
    std::string word;
    while (is >> word) ids.push_back(token_id(word));
    return ids;
}

void Vocabulary::save(const std::string& path) const {
    json j;
    j["tokens"] = tokens;
    j["answers"] = answers;
    io::write_text_file(path, j.dump(2));
}

Vocabulary Vocabulary::load(const std::string& path) {
    const json j = json::parse(io::read_text_file(path));
    Vocabulary vocab;
    vocab.tokens = j.at("tokens").get<std::map<std::string, int>>();
    vocab.answers = j.at("answers").get<std::vector<std::string>>();
    return vocab;
}

void PPMConfig::validate(int grid_h, int grid_w) const {
    if (pool_sizes.empty()) throw std::invalid_argument("ppm: pool_sizes empty");
    for (size_t i = 0; i < pool_sizes.size(); ++i) {
        if (pool_sizes[i] < 1) throw std::invalid_argument("ppm: pool size must be >= 1");
        if (i > 0 && pool_sizes[i] <= pool_sizes[i - 1]) {
            throw std::invalid_argument("ppm: pool sizes must be strictly increasing");
        }
    }
    if (pool_sizes.back() > grid_h || pool_sizes.back() > grid_w) {
        throw std::invalid_argument("ppm: grid smaller than the largest pool size");
    }
    if (proj_dim < 1) throw std::invalid_argument("ppm: proj_dim must be positive");
}

void VqaConfig::validate() const {
    if (vocab_size < 1 || num_answers < 1 || feature_dim < 1) {
        throw std::invalid_argument("vqa: vocab_size, num_answers, feature_dim required");
    }
    if (embed_dim < 1 || q_dim < 1 || attn_hidden < 1 || fuse_hidden < 1) {
        throw std::invalid_argument("vqa: dimensions must be positive");
    }
    if (use_ppm && ppm_input_dim < 1) {
        throw std::invalid_argument("vqa: ppm_input_dim required with use_ppm");
    }
    if (use_ppm && feature_dim != ppm_input_dim + ppm.added_channels()) {
        throw std::invalid_argument("vqa: feature_dim must equal ppm output channels");
    }
}

namespace {

const ad::Var& var(const VarMap& vars, const std::string& name) {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::runtime_error("missing parameter: " + name);
    return it->second;
}

void add_linear(ParamStore& params, const std::string& name, int out_dim, int in_dim,
                Rng& rng) {
    params.emplace(name + ".w", he_normal({out_dim, in_dim}, in_dim, rng));
    params.emplace(name + ".b", Tensor({out_dim}, 0.0f));
}

}  // namespace

ParamStore build_vqa_head(const VqaConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(derive_seed(seed, "vqa-init"));
    ParamStore params;
    params.emplace("vqa.embed.table",
                   he_normal({config.vocab_size, config.embed_dim}, config.embed_dim, rng));
    add_linear(params, "vqa.q.fc", config.q_dim, config.embed_dim, rng);
    const int d = config.attended_dim();
    add_linear(params, "vqa.attn.fc1", config.attn_hidden, d + config.q_dim, rng);
    add_linear(params, "vqa.attn.fc2", 1, config.attn_hidden, rng);
    add_linear(params, "vqa.proj", d, config.q_dim, rng);
    add_linear(params, "vqa.fuse.fc1", config.fuse_hidden, d, rng);
    add_linear(params, "vqa.fuse.fc2", config.num_answers, config.fuse_hidden, rng);
    if (config.use_ppm) {
        for (int s : config.ppm.pool_sizes) {
            const std::string prefix = "vqa.ppm.s" + std::to_string(s);
            params.emplace(prefix + ".conv.w",
                           he_normal({config.ppm.proj_dim, config.ppm_input_dim, 1, 1},
                                     config.ppm_input_dim, rng));
            params.emplace(prefix + ".conv.b", Tensor({config.ppm.proj_dim}, 0.0f));
            params.emplace(prefix + ".bn.gamma", Tensor({config.ppm.proj_dim}, 1.0f));
            params.emplace(prefix + ".bn.beta", Tensor({config.ppm.proj_dim}, 0.0f));
            params.emplace(prefix + ".bn.mean", Tensor({config.ppm.proj_dim}, 0.0f));
            params.emplace(prefix + ".bn.var", Tensor({config.ppm.proj_dim}, 1.0f));
        }
    }
    return params;
}

ad::Var encode_question(const std::vector<int>& token_ids, const VarMap& vars) {
    if (token_ids.empty()) {
        throw std::invalid_argument("encode_question: empty question");
    }
    ad::Var mean = ad::embedding_mean(var(vars, "vqa.embed.table"), token_ids);
    return ad::relu(ad::linear(mean, var(vars, "vqa.q.fc.w"), var(vars, "vqa.q.fc.b")));
}

ad::Var top_down_attention(const ad::Var& rows, const std::vector<bool>& mask,
                           const ad::Var& q, const VarMap& vars) {
    const int n = rows->value.dim(0);
    if (static_cast<int>(mask.size()) != n) {
        throw std::invalid_argument("top_down_attention: mask length mismatch");
    }
    std::vector<ad::Var> scores;
    scores.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        ad::Var joint = ad::concat_vec(ad::row(rows, i), q);
        ad::Var hidden = ad::relu(
            ad::linear(joint, var(vars, "vqa.attn.fc1.w"), var(vars, "vqa.attn.fc1.b")));
        ad::Var score =
            ad::linear(hidden, var(vars, "vqa.attn.fc2.w"), var(vars, "vqa.attn.fc2.b"));
        scores.push_back(score);
    }
    ad::Var weights = ad::masked_softmax(ad::stack_scalars(scores), mask);

    // contract check on every forward pass
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const float w = weights->value.at(i);
        if (w < 0.0f) throw std::runtime_error("attention: negative weight");
        if (!mask[static_cast<size_t>(i)] && w != 0.0f) {
            throw std::runtime_error("attention: non-zero weight on padded row");
        }
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw std::runtime_error("attention: weights do not sum to 1");
    }
    return weights;
}

ad::Var fuse_and_classify(const ad::Var& rows, const ad::Var& attention, const ad::Var& q,
                          const VarMap& vars) {
    ad::Var attended = ad::weighted_sum_rows(attention, rows);
    ad::Var proj = ad::linear(q, var(vars, "vqa.proj.w"), var(vars, "vqa.proj.b"));
    ad::Var fused = ad::mul(attended, proj);
    ad::Var hidden = ad::relu(
        ad::linear(fused, var(vars, "vqa.fuse.fc1.w"), var(vars, "vqa.fuse.fc1.b")));
    return ad::linear(hidden, var(vars, "vqa.fuse.fc2.w"), var(vars, "vqa.fuse.fc2.b"));
}

ad::Var ppm(const ad::Var& grid_map, const VarMap& vars, const PPMConfig& config) {
    const int gh = grid_map->value.dim(1), gw = grid_map->value.dim(2);
    config.validate(gh, gw);
    std::vector<ad::Var> maps = {grid_map};
    for (int s : config.pool_sizes) {
        const std::string prefix = "vqa.ppm.s" + std::to_string(s);
        ad::Var pooled = ad::adaptive_avg_pool2d(grid_map, s, s);
        ad::Var projected = ad::conv2d(pooled, var(vars, prefix + ".conv.w"),
                                       var(vars, prefix + ".conv.b"), ConvSpec{1, 1, 0});
        ad::Var normed = ad::batchnorm(projected, var(vars, prefix + ".bn.gamma"),
                                       var(vars, prefix + ".bn.beta"),
                                       var(vars, prefix + ".bn.mean")->value,
                                       var(vars, prefix + ".bn.var")->value);
        maps.push_back(ad::upsample_nearest(ad::relu(normed), gh, gw));
    }
    return ad::concat_channels(maps);
}

ad::Var feature_rows(const FeatureSet& set, const VarMap& vars, const VqaConfig& config) {
    if (!config.use_ppm) {
        return ad::constant(set.vectors);
    }
    if (set.kind != FeatureSet::Kind::grid) {
        throw std::invalid_argument("feature_rows: ppm applies to grid features only");
    }
    ad::Var map = ad::constant(to_grid_map(set));
    return ad::rows_from_grid(ppm(map, vars, config.ppm));
}

VqaOutput vqa_head_forward(const ad::Var& rows, const std::vector<bool>& mask,
                           const std::vector<int>& token_ids, const VarMap& vars,
                           const VqaConfig& config) {
    config.validate();
    if (rows->value.dim(1) != config.attended_dim()) {
        throw std::invalid_argument("vqa_head_forward: row dimension mismatch");
    }
    ad::Var q = encode_question(token_ids, vars);
    VqaOutput out;
    out.attention = top_down_attention(rows, mask, q, vars);
    out.logits = fuse_and_classify(rows, out.attention, q, vars);
    return out;
}

ad::Var vqa_loss(const ad::Var& logits, const Tensor& answer_targets) {
    return ad::bce_with_logits_mean(logits, answer_targets);
}

Tensor render_attention_map(const Tensor& attention, const FeatureSet& set) {
    if (attention.rank() != 1 || attention.dim(0) != set.count()) {
        throw std::invalid_argument("render_attention_map: attention length mismatch");
    }
    const int H = set.image_h, W = set.image_w;
    const auto boxes = row_boxes(set);
    std::vector<double> raw(static_cast<size_t>(H) * W, 0.0);
    std::vector<int> cover(static_cast<size_t>(H) * W, 0);
    for (int i = 0; i < set.count(); ++i) {
        if (!set.mask[static_cast<size_t>(i)]) continue;
        const Box& b = boxes[static_cast<size_t>(i)];
        if (b.area() <= 0.0f) {
            throw std::invalid_argument("render_attention_map: zero-area geometry");
        }
        const int x0 = std::max(0, static_cast<int>(std::ceil(b.x1)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(b.y1)));
        const int x1 = std::min(W, static_cast<int>(std::ceil(b.x2)));
        const int y1 = std::min(H, static_cast<int>(std::ceil(b.y2)));
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                raw[static_cast<size_t>(y) * W + x] += attention.at(i);
                ++cover[static_cast<size_t>(y) * W + x];
            }
        }
    }
    for (size_t p = 0; p < raw.size(); ++p) {
        if (cover[p] > 0) raw[p] /= cover[p];
    }

    double lo = raw[0], hi = raw[0];
    for (double v : raw) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Tensor out({H, W});
    if (hi - lo < 1e-12) {
        for (auto& v : out.values()) v = 0.5f;
        return out;
    }
    const double inv = 1.0 / (hi - lo);
    for (size_t p = 0; p < raw.size(); ++p) {
        out.values()[p] = static_cast<float>((raw[p] - lo) * inv);
    }
    return out;
}

void TrainSchedule::validate() const {
    if (base_lr <= 0.0f) throw std::invalid_argument("schedule: lr must be positive");
    if (iterations < 1) throw std::invalid_argument("schedule: iterations must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("schedule: batch_size must be >= 1");
    if (clip_norm < 0.0f) throw std::invalid_argument("schedule: clip_norm must be >= 0");
    for (size_t i = 1; i < milestones.size(); ++i) {
        if (milestones[i] <= milestones[i - 1]) {
            throw std::invalid_argument("schedule: milestones must increase");
        }
    }
}

bool TrainSchedule::frozen(const std::string& name) const {
    for (const auto& prefix : freeze_prefixes) {
        if (name.rfind(prefix, 0) == 0) return true;
    }
    return false;
}

float TrainSchedule::lr_at(int iteration) const {
    float lr = base_lr;
    for (int m : milestones) {
        if (iteration >= m) lr *= decay;
    }
    return lr;
}

void save_loss_log(const std::vector<LossLogRow>& log, const std::string& path) {
    std::ostringstream os;
    os << "iteration,loss,lr\n";
    for (const auto& row : log) {
        os << row.iteration << "," << row.loss << "," << row.lr << "\n";
    }
    io::write_text_file(path, os.str());
}

namespace {

bool is_frozen_statistic(const std::string& name) {
    const auto ends_with = [&](const char* suffix) {
        const size_t len = std::string(suffix).size();
        return name.size() >= len && name.compare(name.size() - len, len, suffix) == 0;
    };
    return ends_with(".mean") || ends_with(".var");
}

}  // namespace

Optimizer::Optimizer(const TrainSchedule& schedule) : schedule_(schedule) {
    schedule_.validate();
}

float Optimizer::step(ParamStore& params, const std::map<std::string, Tensor>& grads) {
    const float lr = schedule_.lr_at(iteration_);
    ++iteration_;

    // global norm over trainable gradients
    float scale = 1.0f;
    if (schedule_.clip_norm > 0.0f) {
        double norm2 = 0.0;
        for (const auto& [name, grad] : grads) {
            if (schedule_.frozen(name) || is_frozen_statistic(name)) continue;
            for (float g : grad.values()) norm2 += static_cast<double>(g) * g;
        }
        const float norm = static_cast<float>(std::sqrt(norm2));
        if (norm > schedule_.clip_norm) scale = schedule_.clip_norm / norm;
    }

    for (const auto& [name, grad] : grads) {
        if (schedule_.frozen(name) || is_frozen_statistic(name)) continue;
        auto it = params.find(name);
        if (it == params.end()) throw std::runtime_error("optimizer: unknown parameter " + name);
        Tensor& theta = it->second;
        if (!theta.same_shape(grad)) {
            throw std::runtime_error("optimizer: gradient shape mismatch for " + name);
        }

        if (schedule_.optimizer == TrainSchedule::Optimizer::sgd_momentum) {
            constexpr float kMomentum = 0.9f;
            constexpr float kWeightDecay = 1e-4f;
            Tensor& v = momentum_.try_emplace(name, Tensor(theta.shape(), 0.0f)).first->second;
            for (int64_t i = 0; i < theta.numel(); ++i) {
                const float g = grad.data()[i] * scale + kWeightDecay * theta.data()[i];
                v.data()[i] = kMomentum * v.data()[i] + g;
                theta.data()[i] -= lr * v.data()[i];
            }
        } else {
            constexpr float kBeta1 = 0.9f;
            constexpr float kBeta2 = 0.999f;
            constexpr float kEps = 1e-8f;
            Tensor& m = adamax_m_.try_emplace(name, Tensor(theta.shape(), 0.0f)).first->second;
            Tensor& u = adamax_u_.try_emplace(name, Tensor(theta.shape(), 0.0f)).first->second;
            const float bias_fix =
                1.0f - std::pow(kBeta1, static_cast<float>(iteration_));
            for (int64_t i = 0; i < theta.numel(); ++i) {
                const float g = grad.data()[i] * scale;
                m.data()[i] = kBeta1 * m.data()[i] + (1.0f - kBeta1) * g;
                u.data()[i] = std::max(kBeta2 * u.data()[i], std::abs(g));
                theta.data()[i] -= (lr / bias_fix) * m.data()[i] / (u.data()[i] + kEps);
            }
        }
    }
    return lr;
}

}  // namespace gf
