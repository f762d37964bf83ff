#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gf/autodiff.h"
#include "gf/tensor.h"
#include "gf/weights.h"

namespace gf {

// Residual ConvNet with a two-conv stride-4 stem followed by basic-block
// stages. The second-to-last stage output is the shared C4 map (stride 16),
// the last stage is C5 (stride 32 standard). In dilated mode the C5 entry
// stride becomes 1 and subsequent 3x3 convolutions use dilation 2 with
// padding equal to the dilation, so C5 keeps the C4 resolution while
// reusing the same weights. Every stride-2 convolution maps an extent of x
// to ceil(x/2), giving C4 extents ceil(H/16) x ceil(W/16).
struct BackboneConfig {
    std::vector<int> stage_channels = {8, 16, 32, 64, 128};
    std::vector<int> blocks_per_stage = {1, 1, 1, 1, 1};
    int stem_stride = 4;  // 2 or 4
    // Entry stride per stage; stage 0 always rides at stem resolution.
    // Empty means the default ladder reaching stride 32 at the last stage.
    std::vector<int> stage_strides;

    enum class C5Mode { standard, dilated };
    C5Mode c5_mode = C5Mode::standard;

    int num_stages() const { return static_cast<int>(stage_channels.size()); }
    int c4_channels() const { return stage_channels[stage_channels.size() - 2]; }
    int c5_channels() const { return stage_channels.back(); }
    std::vector<int> resolved_strides() const;
    void validate() const;
};

using VarMap = std::map<std::string, ad::Var>;

// Wraps every parameter in a tape leaf; is_trainable decides requires_grad
// (null means nothing trains).
VarMap make_var_map(const ParamStore& params,
                    const std::function<bool(const std::string&)>& is_trainable = nullptr);

// Deterministic He-initialized weights; same (config, seed) gives identical
// bytes. Conv layers are bias-free; batchnorm statistics initialize to
// mean 0 / var 1 and stay frozen (the trainer never updates .mean/.var).
ParamStore build_backbone(const BackboneConfig& config, uint64_t seed);

// image 3xHxW (H, W >= 32) -> C4 map at stride 16.
ad::Var forward_to_c4(const ad::Var& image, const VarMap& vars,
                      const BackboneConfig& config);

ad::Var forward_c5(const ad::Var& c4, const VarMap& vars, const BackboneConfig& config,
                   BackboneConfig::C5Mode mode);

// Convenience non-tape wrappers.
Tensor forward_to_c4(const Tensor& image, const ParamStore& params,
                     const BackboneConfig& config);
Tensor forward_c5(const Tensor& c4, const ParamStore& params,
                  const BackboneConfig& config, BackboneConfig::C5Mode mode);

// Grid feature extraction always runs the standard (undilated) C5 head on
// top of C4, whatever mode the weights were trained with.
Tensor grid_features(const Tensor& image, const ParamStore& params,
                     const BackboneConfig& config);

constexpr int kGridStride = 32;

inline int grid_count(int h, int w) {
    return ((h + kGridStride - 1) / kGridStride) * ((w + kGridStride - 1) / kGridStride);
}

// Parameter-name prefixes for the stem plus the first n residual stages,
// the freeze unit used by end-to-end fine-tuning.
std::vector<std::string> freeze_prefixes_for_stages(int first_n_stages);

}  // namespace gf
