#include "gf/backbone.h"

#include <stdexcept>

namespace gf {

namespace ad = gf::ad;

std::vector<int> BackboneConfig::resolved_strides() const {
    if (!stage_strides.empty()) return stage_strides;
    // stage 0 at stem resolution, one more stride-1 stage, then halve until
    // the last stage lands at stride 32 (16 entering C5 in dilated mode)
    const int n = num_stages();
    std::vector<int> s(static_cast<size_t>(n), 2);
    int budget = 32 / stem_stride;  // factors of 2 left to distribute
    int twos = 0;
    while ((1 << twos) < budget) ++twos;
    for (int i = 0; i < n - twos; ++i) s[static_cast<size_t>(i)] = 1;
    return s;
}

void BackboneConfig::validate() const {
    if (stage_channels.size() < 2) {
        throw std::invalid_argument("backbone: need at least two stages (C4 and C5)");
    }
    if (blocks_per_stage.size() != stage_channels.size()) {
        throw std::invalid_argument("backbone: blocks_per_stage length mismatch");
    }
    for (int c : stage_channels) {
        if (c <= 0) throw std::invalid_argument("backbone: zero-channel stage");
    }
    for (int b : blocks_per_stage) {
        if (b <= 0) throw std::invalid_argument("backbone: stages need >= 1 block");
    }
    if (stem_stride != 2 && stem_stride != 4) {
        throw std::invalid_argument("backbone: stem_stride must be 2 or 4");
    }
    const auto strides = resolved_strides();
    if (strides.size() != stage_channels.size()) {
        throw std::invalid_argument("backbone: stage_strides length mismatch");
    }
    int total = stem_stride;
    for (int s : strides) {
        if (s != 1 && s != 2) {
            throw std::invalid_argument("backbone: stage strides must be 1 or 2");
        }
        total *= s;
    }
    if (total != 32) {
        throw std::invalid_argument(
            "backbone: strides through C5 must multiply to 32 in standard mode");
    }
}

VarMap make_var_map(const ParamStore& params,
                    const std::function<bool(const std::string&)>& is_trainable) {
    VarMap vars;
    for (const auto& [name, tensor] : params) {
        const bool trainable = is_trainable ? is_trainable(name) : false;
        vars.emplace(name, ad::leaf(tensor, trainable));
    }
    return vars;
}

namespace {

const ad::Var& var(const VarMap& vars, const std::string& name) {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::runtime_error("missing parameter: " + name);
    return it->second;
}

void add_conv(ParamStore& params, const std::string& name, int out_ch, int in_ch, int k,
              Rng& rng) {
    params.emplace(name + ".w", he_normal({out_ch, in_ch, k, k}, in_ch * k * k, rng));
}

void add_bn(ParamStore& params, const std::string& name, int ch) {
    params.emplace(name + ".gamma", Tensor({ch}, 1.0f));
    params.emplace(name + ".beta", Tensor({ch}, 0.0f));
    params.emplace(name + ".mean", Tensor({ch}, 0.0f));
    params.emplace(name + ".var", Tensor({ch}, 1.0f));
}

ad::Var conv_bn(const ad::Var& x, const VarMap& vars, const std::string& conv_name,
                const std::string& bn_name, const ConvSpec& spec) {
    ad::Var y = ad::conv2d(x, var(vars, conv_name + ".w"), nullptr, spec);
    return ad::batchnorm(y, var(vars, bn_name + ".gamma"), var(vars, bn_name + ".beta"),
                         var(vars, bn_name + ".mean")->value,
                         var(vars, bn_name + ".var")->value);
}

struct BlockGeom {
    int stride = 1;  // runtime entry stride
    int conv1_dilation = 1;
    int conv2_dilation = 1;
    bool project = false;
};

ad::Var basic_block(const ad::Var& x, const VarMap& vars, const std::string& prefix,
                    const BlockGeom& geom) {
    ad::Var y = conv_bn(x, vars, prefix + ".conv1", prefix + ".bn1",
                        ConvSpec{geom.stride, geom.conv1_dilation, geom.conv1_dilation});
    y = ad::relu(y);
    y = conv_bn(y, vars, prefix + ".conv2", prefix + ".bn2",
                ConvSpec{1, geom.conv2_dilation, geom.conv2_dilation});
    ad::Var shortcut = x;
    if (geom.project) {
        shortcut = conv_bn(x, vars, prefix + ".proj", prefix + ".bnp",
                           ConvSpec{geom.stride, 1, 0});
    }
    return ad::relu(ad::add(y, shortcut));
}

// Geometry of each block in a stage. In dilated mode the stride-2 entry conv
// becomes stride 1 but keeps dilation 1 (it reads the original-resolution
// map); every conv after it sees a 2x denser map and dilates by 2. Whether
// the shortcut projects must not depend on the mode, so both modes apply
// identical weights.
std::vector<BlockGeom> stage_geometry(int blocks, int entry_stride, int in_ch, int out_ch,
                                      bool dilated) {
    std::vector<BlockGeom> geoms;
    for (int b = 0; b < blocks; ++b) {
        BlockGeom g;
        if (b == 0) {
            g.stride = dilated ? 1 : entry_stride;
            g.project = entry_stride != 1 || in_ch != out_ch;
            g.conv1_dilation = dilated && entry_stride == 1 ? 2 : 1;
        } else {
            g.conv1_dilation = dilated ? 2 : 1;
        }
        g.conv2_dilation = dilated ? 2 : 1;
        geoms.push_back(g);
    }
    return geoms;
}

ad::Var run_stage(const ad::Var& input, const VarMap& vars, const BackboneConfig& config,
                  int stage, bool dilated) {
    const auto strides = config.resolved_strides();
    const int in_ch =
        stage == 0 ? config.stage_channels[0] : config.stage_channels[static_cast<size_t>(stage - 1)];
    const int out_ch = config.stage_channels[static_cast<size_t>(stage)];
    const auto geoms = stage_geometry(config.blocks_per_stage[static_cast<size_t>(stage)],
                                      strides[static_cast<size_t>(stage)], in_ch, out_ch,
                                      dilated);
    ad::Var x = input;
    for (size_t b = 0; b < geoms.size(); ++b) {
        const std::string prefix =
            "backbone.stage" + std::to_string(stage) + ".block" + std::to_string(b);
        x = basic_block(x, vars, prefix, geoms[b]);
    }
    return x;
}

ad::Var run_stem(const ad::Var& image, const VarMap& vars, const BackboneConfig& config) {
    ad::Var x = conv_bn(image, vars, "backbone.stem.conv1", "backbone.stem.bn1",
                        ConvSpec{2, 1, 1});
    x = ad::relu(x);
    if (config.stem_stride == 4) {
        x = conv_bn(x, vars, "backbone.stem.conv2", "backbone.stem.bn2", ConvSpec{2, 1, 1});
        x = ad::relu(x);
    }
    return x;
}

}  // namespace

ParamStore build_backbone(const BackboneConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(derive_seed(seed, "backbone-init"));
    ParamStore params;
    const int stem_ch = config.stage_channels[0];
    add_conv(params, "backbone.stem.conv1", stem_ch, 3, 3, rng);
    add_bn(params, "backbone.stem.bn1", stem_ch);
    if (config.stem_stride == 4) {
        add_conv(params, "backbone.stem.conv2", stem_ch, stem_ch, 3, rng);
        add_bn(params, "backbone.stem.bn2", stem_ch);
    }
    const auto strides = config.resolved_strides();
    for (int stage = 0; stage < config.num_stages(); ++stage) {
        const int in_ch = stage == 0 ? stem_ch : config.stage_channels[static_cast<size_t>(stage - 1)];
        const int out_ch = config.stage_channels[static_cast<size_t>(stage)];
        for (int b = 0; b < config.blocks_per_stage[static_cast<size_t>(stage)]; ++b) {
            const std::string prefix =
                "backbone.stage" + std::to_string(stage) + ".block" + std::to_string(b);
            const int block_in = b == 0 ? in_ch : out_ch;
            add_conv(params, prefix + ".conv1", out_ch, block_in, 3, rng);
            add_bn(params, prefix + ".bn1", out_ch);
            add_conv(params, prefix + ".conv2", out_ch, out_ch, 3, rng);
            add_bn(params, prefix + ".bn2", out_ch);
            const bool project =
                b == 0 && (strides[static_cast<size_t>(stage)] != 1 || block_in != out_ch);
            if (project) {
                add_conv(params, prefix + ".proj", out_ch, block_in, 1, rng);
                add_bn(params, prefix + ".bnp", out_ch);
            }
        }
    }
    return params;
}

ad::Var forward_to_c4(const ad::Var& image, const VarMap& vars,
                      const BackboneConfig& config) {
    if (image->value.rank() != 3 || image->value.dim(0) != 3) {
        throw std::invalid_argument("forward_to_c4: image must be 3xHxW");
    }
    if (image->value.dim(1) < 32 || image->value.dim(2) < 32) {
        throw std::invalid_argument("forward_to_c4: image extents must be >= 32");
    }
    ad::Var x = run_stem(image, vars, config);
    for (int stage = 0; stage + 1 < config.num_stages(); ++stage) {
        x = run_stage(x, vars, config, stage, /*dilated=*/false);
    }
    return x;
}

ad::Var forward_c5(const ad::Var& c4, const VarMap& vars, const BackboneConfig& config,
                   BackboneConfig::C5Mode mode) {
    return run_stage(c4, vars, config, config.num_stages() - 1,
                     mode == BackboneConfig::C5Mode::dilated);
}

Tensor forward_to_c4(const Tensor& image, const ParamStore& params,
                     const BackboneConfig& config) {
    return forward_to_c4(ad::constant(image), make_var_map(params), config)->value;
}

Tensor forward_c5(const Tensor& c4, const ParamStore& params, const BackboneConfig& config,
                  BackboneConfig::C5Mode mode) {
    return forward_c5(ad::constant(c4), make_var_map(params), config, mode)->value;
}

Tensor grid_features(const Tensor& image, const ParamStore& params,
                     const BackboneConfig& config) {
    const VarMap vars = make_var_map(params);
    ad::Var c4 = forward_to_c4(ad::constant(image), vars, config);
    return forward_c5(c4, vars, config, BackboneConfig::C5Mode::standard)->value;
}

std::vector<std::string> freeze_prefixes_for_stages(int first_n_stages) {
    std::vector<std::string> prefixes = {"backbone.stem."};
    for (int i = 0; i < first_n_stages; ++i) {
        prefixes.push_back("backbone.stage" + std::to_string(i) + ".");
    }
    return prefixes;
}

}  // namespace gf
