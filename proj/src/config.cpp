#include "gf/config.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "gf/rng.h"

namespace gf {

namespace {

enum class KeyType { integer, floating, boolean, text, int_list, float_list };

struct KeySpec {
    KeyType type;
    const char* default_value;
};

// registry of every known key with its documented default
const std::map<std::string, KeySpec>& registry() {
    static const std::map<std::string, KeySpec> keys = {
        {"seed", {KeyType::integer, "0"}},
        {"backbone.stage_channels", {KeyType::int_list, "8,16,32,64,128"}},
        {"backbone.blocks_per_stage", {KeyType::int_list, "1,1,1,1,1"}},
        {"backbone.stem_stride", {KeyType::integer, "4"}},
        {"backbone.c5_mode", {KeyType::text, "standard"}},
        {"detector.num_classes", {KeyType::integer, "1600"}},
        {"detector.num_attributes", {KeyType::integer, "400"}},
        {"detector.head_mode", {KeyType::text, "c5_14x14"}},
        {"detector.fc_dim", {KeyType::integer, "1024"}},
        {"detector.n", {KeyType::integer, "100"}},
        {"detector.anchor_scales", {KeyType::float_list, "32,64,128,256,512"}},
        {"detector.anchor_ratios", {KeyType::float_list, "0.5,1,2"}},
        {"detector.pre_nms_topk", {KeyType::integer, "6000"}},
        {"detector.post_nms_topk", {KeyType::integer, "1000"}},
        {"detector.rpn_nms_iou", {KeyType::floating, "0.7"}},
        {"detector.rpn_score_thresh", {KeyType::floating, "0"}},
        {"detector.class_nms_iou", {KeyType::floating, "0.3"}},
        {"detector.class_score_thresh", {KeyType::floating, "0"}},
        {"detector.attr_weight", {KeyType::floating, "0.5"}},
        {"detector.roi_mean_pool", {KeyType::boolean, "false"}},
        {"vqa.embed_dim", {KeyType::integer, "32"}},
        {"vqa.q_dim", {KeyType::integer, "64"}},
        {"vqa.attn_hidden", {KeyType::integer, "64"}},
        {"vqa.fuse_hidden", {KeyType::integer, "128"}},
        {"vqa.use_ppm", {KeyType::boolean, "false"}},
        {"vqa.ppm_pool_sizes", {KeyType::int_list, "1,4,8"}},
        {"vqa.ppm_proj_dim", {KeyType::integer, "512"}},
        {"data.height", {KeyType::integer, "96"}},
        {"data.width", {KeyType::integer, "128"}},
        {"data.max_objects", {KeyType::integer, "8"}},
        {"data.questions_per_scene", {KeyType::integer, "5"}},
        {"train.optimizer", {KeyType::text, "adamax"}},
        {"train.lr", {KeyType::floating, "0.01"}},
        {"train.decay", {KeyType::floating, "0.1"}},
        {"train.milestones", {KeyType::int_list, "5000,7000,9000,11000"}},
        {"train.clip_norm", {KeyType::floating, "0.25"}},
        {"train.iterations", {KeyType::integer, "12000"}},
        {"train.batch_size", {KeyType::integer, "32"}},
        {"train.frozen_stages", {KeyType::integer, "0"}},
        {"extract.shorter_side", {KeyType::integer, "600"}},
        {"extract.longer_side", {KeyType::integer, "1000"}},
        {"extract.resize", {KeyType::boolean, "false"}},
        {"bench.reps", {KeyType::integer, "5"}},
        {"bench.warmup", {KeyType::integer, "1"}},
        {"bench.threads", {KeyType::integer, "1"}},
        {"bench.image_h", {KeyType::integer, "600"}},
        {"bench.image_w", {KeyType::integer, "1000"}},
        {"bench.images", {KeyType::integer, "1"}},
    };
    return keys;
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

void check_type(const std::string& key, const std::string& value, KeyType type) {
    const auto parse_one = [&](const std::string& v, bool integral) {
        try {
            size_t pos = 0;
            if (integral) {
                (void)std::stoll(v, &pos);
            } else {
                (void)std::stod(v, &pos);
            }
            if (pos != v.size()) throw std::invalid_argument(v);
        } catch (...) {
            throw ConfigError("config: key '" + key + "' expects " +
                              (integral ? "an integer" : "a number") + ", got '" + v + "'");
        }
    };
    switch (type) {
        case KeyType::integer:
            parse_one(value, true);
            break;
        case KeyType::floating:
            parse_one(value, false);
            break;
        case KeyType::boolean:
            if (value != "true" && value != "false") {
                throw ConfigError("config: key '" + key + "' expects true/false, got '" +
                                  value + "'");
            }
            break;
        case KeyType::text:
            break;
        case KeyType::int_list:
        case KeyType::float_list: {
            std::istringstream is(value);
            std::string piece;
            bool any = false;
            while (std::getline(is, piece, ',')) {
                parse_one(trim(piece), type == KeyType::int_list);
                any = true;
            }
            if (!any) throw ConfigError("config: key '" + key + "' expects a list");
            break;
        }
    }
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig config;
    for (const auto& [key, spec] : registry()) {
        config.values_[key] = spec.default_value;
    }
    return config;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto it = registry().find(key);
    if (it == registry().end()) {
        throw ConfigError("config: unknown key '" + key + "'");
    }
    check_type(key, value, it->second.type);
    values_[key] = value;
}

void RunConfig::apply_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                              ": expected key = value");
        }
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void RunConfig::apply_override(const std::string& key_equals_value) {
    const auto eq = key_equals_value.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("config: override must be key=value, got '" + key_equals_value +
                          "'");
    }
    set(trim(key_equals_value.substr(0, eq)), trim(key_equals_value.substr(eq + 1)));
}

int RunConfig::get_int(const std::string& key) const {
    return static_cast<int>(std::stoll(get_string(key)));
}

float RunConfig::get_float(const std::string& key) const {
    return std::stof(get_string(key));
}

bool RunConfig::get_bool(const std::string& key) const { return get_string(key) == "true"; }

const std::string& RunConfig::get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
    std::vector<int> out;
    std::istringstream is(get_string(key));
    std::string piece;
    while (std::getline(is, piece, ',')) out.push_back(std::stoi(trim(piece)));
    return out;
}

std::vector<float> RunConfig::get_float_list(const std::string& key) const {
    std::vector<float> out;
    std::istringstream is(get_string(key));
    std::string piece;
    while (std::getline(is, piece, ',')) out.push_back(std::stof(trim(piece)));
    return out;
}

uint64_t RunConfig::seed() const { return static_cast<uint64_t>(std::stoull(get_string("seed"))); }

std::string RunConfig::resolved_text() const {
    std::ostringstream os;
    for (const auto& [key, value] : values_) {
        os << key << " = " << value << "\n";
    }
    return os.str();
}

std::string RunConfig::fingerprint() const {
    std::ostringstream os;
    os << std::hex << fnv1a(resolved_text());
    return os.str();
}

BackboneConfig RunConfig::backbone() const {
    BackboneConfig bb;
    bb.stage_channels = get_int_list("backbone.stage_channels");
    bb.blocks_per_stage = get_int_list("backbone.blocks_per_stage");
    bb.stem_stride = get_int("backbone.stem_stride");
    const std::string mode = get_string("backbone.c5_mode");
    if (mode == "standard") {
        bb.c5_mode = BackboneConfig::C5Mode::standard;
    } else if (mode == "dilated") {
        bb.c5_mode = BackboneConfig::C5Mode::dilated;
    } else {
        throw ConfigError("config: backbone.c5_mode must be standard or dilated");
    }
    try {
        bb.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return bb;
}

DetectorConfig RunConfig::detector() const {
    DetectorConfig det;
    det.num_classes = get_int("detector.num_classes");
    det.num_attributes = get_int("detector.num_attributes");
    const std::string mode = get_string("detector.head_mode");
    if (mode == "c5_14x14") {
        det.head.mode = RegionHeadConfig::Mode::c5_14x14;
        det.head.pool_size = 14;
    } else if (mode == "fc2_1x1") {
        det.head.mode = RegionHeadConfig::Mode::fc2_1x1;
        det.head.pool_size = 1;
    } else {
        throw ConfigError("config: detector.head_mode must be c5_14x14 or fc2_1x1");
    }
    det.head.fc_dim = get_int("detector.fc_dim");
    det.head.mean_pool = get_bool("detector.roi_mean_pool");
    det.top_n = get_int("detector.n");
    det.rpn.anchor_scales = get_float_list("detector.anchor_scales");
    det.rpn.anchor_ratios = get_float_list("detector.anchor_ratios");
    det.rpn.pre_nms_topk = get_int("detector.pre_nms_topk");
    det.rpn.post_nms_topk = get_int("detector.post_nms_topk");
    det.rpn.nms_iou = get_float("detector.rpn_nms_iou");
    det.rpn.score_thresh = get_float("detector.rpn_score_thresh");
    det.class_nms_iou = get_float("detector.class_nms_iou");
    det.class_score_thresh = get_float("detector.class_score_thresh");
    det.attr_weight = get_float("detector.attr_weight");
    try {
        det.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return det;
}

synth::SceneConfig RunConfig::scene() const {
    synth::SceneConfig scene;
    scene.height = get_int("data.height");
    scene.width = get_int("data.width");
    scene.max_objects = get_int("data.max_objects");
    scene.questions_per_scene = get_int("data.questions_per_scene");
    try {
        scene.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return scene;
}

TrainSchedule RunConfig::schedule() const {
    TrainSchedule s;
    const std::string opt = get_string("train.optimizer");
    if (opt == "adamax") {
        s.optimizer = TrainSchedule::Optimizer::adamax;
    } else if (opt == "sgd_momentum") {
        s.optimizer = TrainSchedule::Optimizer::sgd_momentum;
    } else {
        throw ConfigError("config: train.optimizer must be adamax or sgd_momentum");
    }
    s.base_lr = get_float("train.lr");
    s.decay = get_float("train.decay");
    s.milestones = get_int_list("train.milestones");
    s.clip_norm = get_float("train.clip_norm");
    s.iterations = get_int("train.iterations");
    s.batch_size = get_int("train.batch_size");
    s.seed = seed();
    const int frozen = get_int("train.frozen_stages");
    if (frozen > 0) s.freeze_prefixes = freeze_prefixes_for_stages(frozen);
    try {
        s.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return s;
}

VqaConfig RunConfig::vqa_base() const {
    VqaConfig model;
    model.embed_dim = get_int("vqa.embed_dim");
    model.q_dim = get_int("vqa.q_dim");
    model.attn_hidden = get_int("vqa.attn_hidden");
    model.fuse_hidden = get_int("vqa.fuse_hidden");
    model.use_ppm = get_bool("vqa.use_ppm");
    model.ppm.pool_sizes = get_int_list("vqa.ppm_pool_sizes");
    model.ppm.proj_dim = get_int("vqa.ppm_proj_dim");
    return model;
}

}  // namespace gf
