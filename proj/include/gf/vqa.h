#pragma once

#include <map>
#include <string>
#include <vector>

#include "gf/autodiff.h"
#include "gf/backbone.h"
#include "gf/features.h"
#include "gf/tensor.h"
#include "gf/weights.h"

namespace gf {

// Token and answer tables. Id 0 is the reserved unknown token.
struct Vocabulary {
    std::map<std::string, int> tokens;
    std::vector<std::string> answers;

    int token_id(const std::string& word) const {
        auto it = tokens.find(word);
        return it == tokens.end() ? 0 : it->second;
    }
    int answer_id(const std::string& answer) const;
    int num_tokens() const { return static_cast<int>(tokens.size()) + 1; }
    int num_answers() const { return static_cast<int>(answers.size()); }

    std::vector<int> encode(const std::string& question) const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);
};

struct PPMConfig {
    std::vector<int> pool_sizes = {1, 4, 8};
    int proj_dim = 512;
    void validate(int grid_h, int grid_w) const;
    int added_channels() const {
        return static_cast<int>(pool_sizes.size()) * proj_dim;
    }
};

struct VqaConfig {
    int vocab_size = 0;    // token table size including unknown
    int num_answers = 0;
    int feature_dim = 0;   // D of the FeatureSet rows fed to attention
    int embed_dim = 32;
    int q_dim = 64;
    int attn_hidden = 64;
    int fuse_hidden = 128;
    bool use_ppm = false;  // grid features only
    PPMConfig ppm;
    int ppm_input_dim = 0;  // grid channel count before PPM when use_ppm
    void validate() const;
    int attended_dim() const {
        return use_ppm ? ppm_input_dim + ppm.added_channels() : feature_dim;
    }
};

ParamStore build_vqa_head(const VqaConfig& config, uint64_t seed);

// Bag-of-words question encoding: relu(linear(mean of token embeddings)).
ad::Var encode_question(const std::vector<int>& token_ids, const VarMap& vars);

// Per-row score mlp([feature_i ; q]); masked rows get -inf before softmax.
// The result always satisfies: non-negative, sums to 1 within 1e-6, exactly
// zero on masked rows (checked on every call).
ad::Var top_down_attention(const ad::Var& rows, const std::vector<bool>& mask,
                           const ad::Var& q, const VarMap& vars);

// v = sum_i w_i feature_i; logits = mlp(v * projection(q)).
ad::Var fuse_and_classify(const ad::Var& rows, const ad::Var& attention, const ad::Var& q,
                          const VarMap& vars);

// Pyramid pooling: per pool size s, adaptive-average to s x s, 1x1 conv to
// proj_dim, batchnorm, relu, nearest upsample back, then concatenate with
// the input map along channels.
ad::Var ppm(const ad::Var& grid_map, const VarMap& vars, const PPMConfig& config);

struct VqaOutput {
    ad::Var attention;  // N
    ad::Var logits;     // num_answers
};

// Full head on a feature matrix (rows may be constants for cached features
// or a live grid flattening for end-to-end training).
VqaOutput vqa_head_forward(const ad::Var& rows, const std::vector<bool>& mask,
                           const std::vector<int>& token_ids, const VarMap& vars,
                           const VqaConfig& config);

// Rows for the head from a FeatureSet; applies PPM when configured (grid
// kind only).
ad::Var feature_rows(const FeatureSet& set, const VarMap& vars, const VqaConfig& config);

// Soft-target binary cross entropy, mean over answers.
ad::Var vqa_loss(const ad::Var& logits, const Tensor& answer_targets);

// Per-pixel attention map in [0,1]: each pixel averages the attention of
// the unmasked elements covering it, then the raw map is min-max normalized
// (a constant raw map becomes all 0.5).
Tensor render_attention_map(const Tensor& attention, const FeatureSet& set);

// --- training ---

struct TrainSchedule {
    enum class Optimizer { sgd_momentum, adamax };
    Optimizer optimizer = Optimizer::adamax;
    float base_lr = 0.01f;
    float decay = 0.1f;
    std::vector<int> milestones;
    float clip_norm = 0.25f;  // 0 disables clipping
    int iterations = 1000;
    int batch_size = 32;
    uint64_t seed = 0;
    std::vector<std::string> freeze_prefixes;
    void validate() const;
    bool frozen(const std::string& name) const;
    float lr_at(int iteration) const;
};

struct LossLogRow {
    int iteration = 0;
    float loss = 0.0f;
    float lr = 0.0f;
};

void save_loss_log(const std::vector<LossLogRow>& log, const std::string& path);

// Milestone-decayed SGD with momentum 0.9 / weight decay 1e-4, or Adamax
// with betas 0.9/0.999 and no weight decay. Gradient clipping rescales by
// the global norm over trainable parameters. Frozen parameters and the
// .mean/.var batchnorm statistics receive no updates.
class Optimizer {
public:
    explicit Optimizer(const TrainSchedule& schedule);

    // grads maps parameter name to gradient; returns the lr applied
    float step(ParamStore& params, const std::map<std::string, Tensor>& grads);

    int iteration() const { return iteration_; }

private:
    TrainSchedule schedule_;
    int iteration_ = 0;
    std::map<std::string, Tensor> momentum_;
    std::map<std::string, Tensor> adamax_m_;
    std::map<std::string, Tensor> adamax_u_;
};

}  // namespace gf
