#include "gf/synth.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "gf/io_util.h"

namespace gf::synth {

using nlohmann::json;

namespace {

constexpr const char* kShapeNames[kNumShapeClasses] = {"circle", "square", "triangle",
                                                       "bar"};
constexpr const char* kColorNames[kNumColorAttrs] = {"red", "green", "blue", "yellow"};

constexpr std::array<uint8_t, 3> kColorRgb[kNumColorAttrs] = {
    {200, 40, 40}, {40, 160, 60}, {50, 70, 200}, {220, 200, 50}};

int shape_id(const std::string& name) {
    for (int i = 0; i < kNumShapeClasses; ++i) {
        if (name == kShapeNames[i]) return i;
    }
    throw std::invalid_argument("unknown shape: " + name);
}

int color_id(const std::string& name) {
    for (int i = 0; i < kNumColorAttrs; ++i) {
        if (name == kColorNames[i]) return i;
    }
    throw std::invalid_argument("unknown color: " + name);
}

// wide shapes (bars) extend past the nominal half-extent horizontally
float effective_half_width(const SceneObject& o) {
    return o.shape_class == 3 ? 1.4f * o.size : o.size;
}
float effective_half_height(const SceneObject& o) {
    return o.shape_class == 3 ? 0.45f * o.size : o.size;
}
float effective_radius(const SceneObject& o) {
    return std::max(effective_half_width(o), effective_half_height(o));
}

bool covers(const SceneObject& o, float px, float py) {
    const float dx = px - o.cx;
    const float dy = py - o.cy;
    const float s = o.size;
    switch (o.shape_class) {
        case 0:  // circle
            return dx * dx + dy * dy <= s * s;
        case 1:  // square
            return std::abs(dx) <= 0.92f * s && std::abs(dy) <= 0.92f * s;
        case 2: {  // upward triangle
            const float ax = 0.0f, ay = -s;
            const float bx = -0.95f * s, by = 0.75f * s;
            const float cx = 0.95f * s, cy = 0.75f * s;
            const auto side = [&](float x1, float y1, float x2, float y2) {
                return (x2 - x1) * (dy - y1) - (y2 - y1) * (dx - x1);
            };
            const float d1 = side(ax, ay, bx, by);
            const float d2 = side(bx, by, cx, cy);
            const float d3 = side(cx, cy, ax, ay);
            const bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
            const bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
            return !(has_neg && has_pos);
        }
        case 3:  // bar
            return std::abs(dx) <= 1.4f * s && std::abs(dy) <= 0.45f * s;
        default:
            return false;
    }
}

const char* type_name(QuestionType t) {
    switch (t) {
        case QuestionType::existence: return "existence";
        case QuestionType::color_query: return "color";
        case QuestionType::count: return "count";
        case QuestionType::spatial: return "spatial";
    }
    return "existence";
}

QuestionType type_from_name(const std::string& name) {
    if (name == "existence") return QuestionType::existence;
    if (name == "color") return QuestionType::color_query;
    if (name == "count") return QuestionType::count;
    if (name == "spatial") return QuestionType::spatial;
    throw std::invalid_argument("unknown question type: " + name);
}

}  // namespace

const char* shape_name(int shape_class) {
    if (shape_class < 0 || shape_class >= kNumShapeClasses) {
        throw std::out_of_range("shape class out of range");
    }
    return kShapeNames[shape_class];
}

const char* color_name(int color_attr) {
    if (color_attr < 0 || color_attr >= kNumColorAttrs) {
        throw std::out_of_range("color attr out of range");
    }
    return kColorNames[color_attr];
}

void SceneConfig::validate() const {
    if (height < 48 || width < 48) {
        throw std::invalid_argument("scene: canvas must be at least 48x48");
    }
    if (max_objects < 1 || max_objects > 8) {
        throw std::invalid_argument("scene: max_objects must be in [1,8]");
    }
    if (questions_per_scene < 1) {
        throw std::invalid_argument("scene: questions_per_scene must be >= 1");
    }
}

Scene gen_scene(uint64_t seed, const SceneConfig& config) {
    config.validate();
    Rng rng(derive_seed(seed, "scene"));
    SceneSpec spec;
    spec.height = config.height;
    spec.width = config.width;
    spec.seed = seed;

    const int n_objects = rng.uniform_int(1, config.max_objects);
    const float base = static_cast<float>(std::min(config.height, config.width));
    // crowded scenes draw smaller objects so placement always succeeds
    const float size_hi = 0.14f - 0.007f * static_cast<float>(n_objects - 1);
    for (int i = 0; i < n_objects; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            SceneObject o;
            o.shape_class = rng.uniform_int(0, kNumShapeClasses - 1);
            o.color_attr = rng.uniform_int(0, kNumColorAttrs - 1);
            o.size = base * rng.uniform(0.07f, size_hi);
            const float hw = effective_half_width(o) + 2.0f;
            const float hh = effective_half_height(o) + 2.0f;
            if (2.0f * hw >= spec.width || 2.0f * hh >= spec.height) continue;
            o.cx = rng.uniform(hw, spec.width - hw);
            o.cy = rng.uniform(hh, spec.height - hh);
            bool separated = true;
            for (const SceneObject& other : spec.objects) {
                const float dx = o.cx - other.cx;
                const float dy = o.cy - other.cy;
                const float min_sep = effective_radius(o) + effective_radius(other);
                if (dx * dx + dy * dy < min_sep * min_sep) {
                    separated = false;
                    break;
                }
            }
            if (separated) {
                spec.objects.push_back(o);
                placed = true;
            }
        }
        if (!placed) {
            throw std::runtime_error("gen_scene: object placement failed after 100 retries");
        }
    }

    Scene scene;
    scene.spec = spec;
    scene.image = Image(spec.height, spec.width, spec.background);
    for (const SceneObject& o : spec.objects) {
        const auto& rgb = kColorRgb[o.color_attr];
        const int y0 = std::max(0, static_cast<int>(o.cy - effective_half_height(o)) - 1);
        const int y1 = std::min(spec.height,
                                static_cast<int>(o.cy + effective_half_height(o)) + 2);
        const int x0 = std::max(0, static_cast<int>(o.cx - effective_half_width(o)) - 1);
        const int x1 =
            std::min(spec.width, static_cast<int>(o.cx + effective_half_width(o)) + 2);
        int min_x = spec.width, min_y = spec.height, max_x = -1, max_y = -1;
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                if (covers(o, static_cast<float>(x) + 0.5f, static_cast<float>(y) + 0.5f)) {
                    scene.image.at(y, x, 0) = rgb[0];
                    scene.image.at(y, x, 1) = rgb[1];
                    scene.image.at(y, x, 2) = rgb[2];
                    min_x = std::min(min_x, x);
                    min_y = std::min(min_y, y);
                    max_x = std::max(max_x, x);
                    max_y = std::max(max_y, y);
                }
            }
        }
        if (max_x < 0) throw std::runtime_error("gen_scene: object rendered no pixels");
        GtObject gt;
        gt.box = Box{static_cast<float>(min_x), static_cast<float>(min_y),
                     static_cast<float>(max_x + 1), static_cast<float>(max_y + 1)};
        gt.class_id = o.shape_class;
        gt.attr_id = o.color_attr;
        scene.ground_truth.push_back(gt);
    }
    return scene;
}

Vocabulary default_vocabulary() {
    Vocabulary vocab;
    const std::vector<std::string> words = {
        "is",   "there", "a",     "what", "color", "the",  "how",      "many",
        "left", "of",    "red",   "green", "blue",  "yellow", "circle", "square",
        "triangle", "bar"};
    int next = 1;  // id 0 reserved for unknown
    for (const auto& w : words) vocab.tokens.emplace(w, next++);
    vocab.answers = {"yes", "no", "0", "1", "2", "3", "4", "5", "6", "7", "8",
                     "red", "green", "blue", "yellow"};
    return vocab;
}

namespace {

struct ComboPresence {
    // (color, shape) combinations present in a scene, with object counts
    std::set<std::pair<int, int>> present;
    std::array<int, kNumShapeClasses> shape_counts{};
    std::vector<int> unique_combo_objects;  // indices of objects whose combo is unique

    explicit ComboPresence(const SceneSpec& spec) {
        std::map<std::pair<int, int>, int> combo_counts;
        std::array<int, kNumShapeClasses> counts{};
        for (const auto& o : spec.objects) {
            present.emplace(o.color_attr, o.shape_class);
            ++combo_counts[{o.color_attr, o.shape_class}];
            ++counts[static_cast<size_t>(o.shape_class)];
        }
        shape_counts = counts;
        for (size_t i = 0; i < spec.objects.size(); ++i) {
            const auto& o = spec.objects[i];
            if (combo_counts[{o.color_attr, o.shape_class}] == 1) {
                unique_combo_objects.push_back(static_cast<int>(i));
            }
        }
    }
};

QAPair existence_question(const SceneSpec& spec, const ComboPresence& combos, Rng& rng,
                          const Vocabulary& vocab) {
    const bool want_yes = rng.uniform() < 0.5f;
    std::vector<std::pair<int, int>> pool;
    for (int c = 0; c < kNumColorAttrs; ++c) {
        for (int s = 0; s < kNumShapeClasses; ++s) {
            const bool p = combos.present.count({c, s}) > 0;
            if (p == want_yes) pool.emplace_back(c, s);
        }
    }
    bool answer_yes = want_yes;
    if (pool.empty()) {
        // flip when the wanted truth value has no witness
        answer_yes = !want_yes;
        for (int c = 0; c < kNumColorAttrs; ++c) {
            for (int s = 0; s < kNumShapeClasses; ++s) {
                const bool p = combos.present.count({c, s}) > 0;
                if (p == answer_yes) pool.emplace_back(c, s);
            }
        }
    }
    const auto [color, shape] = pool[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
    (void)spec;
    QAPair qa;
    qa.type = QuestionType::existence;
    qa.question = {"is", "there", "a", color_name(color), shape_name(shape)};
    qa.answer = answer_yes ? "yes" : "no";
    qa.answer_id = vocab.answer_id(qa.answer);
    return qa;
}

QAPair count_question(const SceneSpec& spec, const ComboPresence& combos, Rng& rng,
                      const Vocabulary& vocab) {
    (void)spec;
    const int shape = rng.uniform_int(0, kNumShapeClasses - 1);
    QAPair qa;
    qa.type = QuestionType::count;
    qa.question = {"how", "many", shape_name(shape)};
    qa.answer = std::to_string(combos.shape_counts[static_cast<size_t>(shape)]);
    qa.answer_id = vocab.answer_id(qa.answer);
    return qa;
}

}  // namespace

std::vector<QAPair> gen_questions(const SceneSpec& spec, uint64_t seed,
                                  const SceneConfig& config) {
    if (spec.objects.empty()) {
        throw std::invalid_argument("gen_questions: empty scene");
    }
    Rng rng(derive_seed(seed, "questions"));
    const Vocabulary vocab = default_vocabulary();
    const ComboPresence combos(spec);

    std::vector<QAPair> out;
    const QuestionType cycle[5] = {QuestionType::existence, QuestionType::color_query,
                                   QuestionType::count, QuestionType::spatial,
                                   QuestionType::existence};
    for (int i = 0; i < config.questions_per_scene; ++i) {
        QuestionType want = cycle[i % 5];

        if (want == QuestionType::color_query) {
            // needs a shape with exactly one instance
            std::vector<int> unique_shapes;
            for (int s = 0; s < kNumShapeClasses; ++s) {
                if (combos.shape_counts[static_cast<size_t>(s)] == 1) unique_shapes.push_back(s);
            }
            if (unique_shapes.empty()) {
                want = QuestionType::existence;
            } else {
                const int shape = unique_shapes[static_cast<size_t>(
                    rng.uniform_int(0, static_cast<int>(unique_shapes.size()) - 1))];
                int color = -1;
                for (const auto& o : spec.objects) {
                    if (o.shape_class == shape) color = o.color_attr;
                }
                QAPair qa;
                qa.type = QuestionType::color_query;
                qa.question = {"what", "color", "is", "the", shape_name(shape)};
                qa.answer = color_name(color);
                qa.answer_id = vocab.answer_id(qa.answer);
                out.push_back(std::move(qa));
                continue;
            }
        }

        if (want == QuestionType::spatial) {
            if (combos.unique_combo_objects.size() < 2) {
                want = QuestionType::existence;
            } else {
                const int n = static_cast<int>(combos.unique_combo_objects.size());
                int a = rng.uniform_int(0, n - 1);
                int b = rng.uniform_int(0, n - 2);
                if (b >= a) ++b;
                const SceneObject& oa =
                    spec.objects[static_cast<size_t>(combos.unique_combo_objects[static_cast<size_t>(a)])];
                const SceneObject& ob =
                    spec.objects[static_cast<size_t>(combos.unique_combo_objects[static_cast<size_t>(b)])];
                QAPair qa;
                qa.type = QuestionType::spatial;
                qa.question = {"is",
                               "the",
                               color_name(oa.color_attr),
                               shape_name(oa.shape_class),
                               "left",
                               "of",
                               color_name(ob.color_attr),
                               shape_name(ob.shape_class)};
                qa.answer = oa.cx < ob.cx ? "yes" : "no";
                qa.answer_id = vocab.answer_id(qa.answer);
                out.push_back(std::move(qa));
                continue;
            }
        }

        if (want == QuestionType::count) {
            out.push_back(count_question(spec, combos, rng, vocab));
        } else {
            out.push_back(existence_question(spec, combos, rng, vocab));
        }
    }
    return out;
}

std::string derive_answer(const SceneSpec& spec, const QAPair& qa) {
    const ComboPresence combos(spec);
    switch (qa.type) {
        case QuestionType::existence: {
            const int color = color_id(qa.question.at(3));
            const int shape = shape_id(qa.question.at(4));
            return combos.present.count({color, shape}) > 0 ? "yes" : "no";
        }
        case QuestionType::color_query: {
            const int shape = shape_id(qa.question.at(4));
            int color = -1;
            int count = 0;
            for (const auto& o : spec.objects) {
                if (o.shape_class == shape) {
                    color = o.color_attr;
                    ++count;
                }
            }
            if (count != 1) throw std::runtime_error("derive_answer: shape not unique");
            return color_name(color);
        }
        case QuestionType::count: {
            const int shape = shape_id(qa.question.at(2));
            return std::to_string(combos.shape_counts[static_cast<size_t>(shape)]);
        }
        case QuestionType::spatial: {
            const int color_a = color_id(qa.question.at(2));
            const int shape_a = shape_id(qa.question.at(3));
            const int color_b = color_id(qa.question.at(6));
            const int shape_b = shape_id(qa.question.at(7));
            const SceneObject* oa = nullptr;
            const SceneObject* ob = nullptr;
            for (const auto& o : spec.objects) {
                if (o.color_attr == color_a && o.shape_class == shape_a) oa = &o;
                if (o.color_attr == color_b && o.shape_class == shape_b) ob = &o;
            }
            if (!oa || !ob) throw std::runtime_error("derive_answer: objects not found");
            return oa->cx < ob->cx ? "yes" : "no";
        }
    }
    throw std::logic_error("derive_answer: bad question type");
}

void AugmentPolicy::validate() const {
    if (brightness < 0.0f || brightness > 0.2f || contrast < 0.0f || contrast > 0.2f) {
        throw std::invalid_argument("augment: brightness/contrast jitter limited to 20%");
    }
    if (max_rotate_deg < 0.0f || max_rotate_deg > 10.0f) {
        throw std::invalid_argument("augment: rotation limited to 10 degrees");
    }
    if (max_translate < 0.0f || max_translate > 0.05f) {
        throw std::invalid_argument("augment: translation limited to 5%");
    }
}

Image augment(const Image& image, uint64_t seed, const AugmentPolicy& policy) {
    policy.validate();
    if (policy.identity()) return image;
    Rng rng(derive_seed(seed, "augment"));
    const float b = rng.uniform(-policy.brightness, policy.brightness);
    const float c = rng.uniform(-policy.contrast, policy.contrast);
    const float angle =
        rng.uniform(-policy.max_rotate_deg, policy.max_rotate_deg) * 3.14159265358979f / 180.0f;
    const float tx = rng.uniform(-policy.max_translate, policy.max_translate) *
                     static_cast<float>(image.width);
    const float ty = rng.uniform(-policy.max_translate, policy.max_translate) *
                     static_cast<float>(image.height);

    // photometric pass
    Image lit = image;
    for (auto& v : lit.pixels) {
        float f = (static_cast<float>(v) - 128.0f) * (1.0f + c) + 128.0f;
        f *= 1.0f + b;
        v = static_cast<uint8_t>(std::clamp(std::lround(f), 0l, 255l));
    }

    // inverse-mapped affine with nearest sampling
    Image out(image.height, image.width, policy.fill);
    const float cx = static_cast<float>(image.width) * 0.5f;
    const float cy = static_cast<float>(image.height) * 0.5f;
    const float cos_a = std::cos(-angle), sin_a = std::sin(-angle);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const float dx = static_cast<float>(x) + 0.5f - cx - tx;
            const float dy = static_cast<float>(y) + 0.5f - cy - ty;
            const int sx = static_cast<int>(std::floor(cos_a * dx - sin_a * dy + cx));
            const int sy = static_cast<int>(std::floor(sin_a * dx + cos_a * dy + cy));
            if (sx >= 0 && sx < image.width && sy >= 0 && sy < image.height) {
                for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = lit.at(sy, sx, ch);
            }
        }
    }
    return out;
}

namespace {

json scene_to_json(const SceneRecord& record) {
    json j;
    j["image_id"] = record.image_id;
    j["height"] = record.spec.height;
    j["width"] = record.spec.width;
    j["scene_seed"] = record.spec.seed;
    j["background"] = record.spec.background;
    json objs = json::array();
    for (size_t i = 0; i < record.spec.objects.size(); ++i) {
        const auto& o = record.spec.objects[i];
        const auto& gt = record.ground_truth[i];
        objs.push_back({{"shape", shape_name(o.shape_class)},
                        {"color", color_name(o.color_attr)},
                        {"cx", o.cx},
                        {"cy", o.cy},
                        {"size", o.size},
                        {"box", {gt.box.x1, gt.box.y1, gt.box.x2, gt.box.y2}}});
    }
    j["objects"] = std::move(objs);
    json qas = json::array();
    for (const auto& qa : record.qa) {
        qas.push_back({{"question", qa.question},
                       {"answer", qa.answer},
                       {"answer_id", qa.answer_id},
                       {"type", type_name(qa.type)}});
    }
    j["qa"] = std::move(qas);
    return j;
}

SceneRecord scene_from_json(const json& j) {
    SceneRecord record;
    record.image_id = j.at("image_id").get<std::string>();
    record.spec.height = j.at("height").get<int>();
    record.spec.width = j.at("width").get<int>();
    record.spec.seed = j.at("scene_seed").get<uint64_t>();
    record.spec.background = j.at("background").get<std::array<uint8_t, 3>>();
    for (const auto& oj : j.at("objects")) {
        SceneObject o;
        o.shape_class = shape_id(oj.at("shape").get<std::string>());
        o.color_attr = color_id(oj.at("color").get<std::string>());
        o.cx = oj.at("cx").get<float>();
        o.cy = oj.at("cy").get<float>();
        o.size = oj.at("size").get<float>();
        record.spec.objects.push_back(o);
        GtObject gt;
        const auto& b = oj.at("box");
        gt.box = Box{b.at(0).get<float>(), b.at(1).get<float>(), b.at(2).get<float>(),
                     b.at(3).get<float>()};
        gt.class_id = o.shape_class;
        gt.attr_id = o.color_attr;
        record.ground_truth.push_back(gt);
    }
    for (const auto& qj : j.at("qa")) {
        QAPair qa;
        qa.question = qj.at("question").get<std::vector<std::string>>();
        qa.answer = qj.at("answer").get<std::string>();
        qa.answer_id = qj.at("answer_id").get<int>();
        qa.type = type_from_name(qj.at("type").get<std::string>());
        record.qa.push_back(std::move(qa));
    }
    return record;
}

std::string image_id_for(const std::string& split, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%06d", split.c_str(), index);
    return buf;
}

std::pair<SceneRecord, Image> make_scene(uint64_t dataset_seed, const std::string& split,
                                         int index, const SceneConfig& config) {
    const uint64_t scene_seed =
        derive_seed(dataset_seed, split + "#" + std::to_string(index));
    Scene scene = gen_scene(scene_seed, config);
    SceneRecord record;
    record.image_id = image_id_for(split, index);
    record.spec = scene.spec;
    record.ground_truth = scene.ground_truth;
    record.qa = gen_questions(scene.spec, scene_seed, config);
    return {std::move(record), std::move(scene.image)};
}

}  // namespace

std::vector<std::pair<SceneRecord, Image>> generate_split(uint64_t seed,
                                                          const std::string& split, int count,
                                                          const SceneConfig& config) {
    std::vector<std::pair<SceneRecord, Image>> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(make_scene(seed, split, i, config));
    return out;
}

DatasetManifest export_dataset(int n_train, int n_val, int n_test, uint64_t seed,
                               const SceneConfig& config, const std::string& out_dir) {
    if (n_train < 1 || n_val < 1 || n_test < 1) {
        throw std::invalid_argument("export_dataset: split sizes must be positive");
    }
    config.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.scene = config;
    manifest.n_train = n_train;
    manifest.n_val = n_val;
    manifest.n_test = n_test;

    const std::pair<std::string, int> splits[3] = {
        {"train", n_train}, {"val", n_val}, {"test", n_test}};
    for (const auto& [split, count] : splits) {
        fs::create_directories(fs::path(out_dir) / split);
        std::ostringstream lines;
        for (int i = 0; i < count; ++i) {
            auto [record, image] = make_scene(seed, split, i, config);
            save_ppm(image, (fs::path(out_dir) / split / (record.image_id + ".ppm")).string());
            lines << scene_to_json(record).dump() << "\n";
        }
        io::write_text_file((fs::path(out_dir) / (split + ".jsonl")).string(), lines.str());
    }

    json mj;
    mj["seed"] = manifest.seed;
    mj["template_version"] = manifest.template_version;
    mj["scene"] = {{"height", config.height},
                   {"width", config.width},
                   {"max_objects", config.max_objects},
                   {"questions_per_scene", config.questions_per_scene}};
    mj["counts"] = {{"train", n_train}, {"val", n_val}, {"test", n_test}};
    io::write_text_file((fs::path(out_dir) / "manifest.json").string(), mj.dump(2));
    return manifest;
}

DatasetManifest load_manifest(const std::string& dir) {
    const json j = json::parse(io::read_text_file(dir + "/manifest.json"));
    DatasetManifest m;
    m.seed = j.at("seed").get<uint64_t>();
    m.template_version = j.at("template_version").get<int>();
    m.scene.height = j.at("scene").at("height").get<int>();
    m.scene.width = j.at("scene").at("width").get<int>();
    m.scene.max_objects = j.at("scene").at("max_objects").get<int>();
    m.scene.questions_per_scene = j.at("scene").at("questions_per_scene").get<int>();
    m.n_train = j.at("counts").at("train").get<int>();
    m.n_val = j.at("counts").at("val").get<int>();
    m.n_test = j.at("counts").at("test").get<int>();
    return m;
}

std::vector<SceneRecord> load_split(const std::string& dir, const std::string& split) {
    std::ifstream is(dir + "/" + split + ".jsonl");
    if (!is) throw std::runtime_error("cannot open split annotations: " + split);
    std::vector<SceneRecord> records;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        records.push_back(scene_from_json(json::parse(line)));
    }
    return records;
}

std::string split_image_path(const std::string& dir, const std::string& split,
                             const std::string& image_id) {
    return dir + "/" + split + "/" + image_id + ".ppm";
}

}  // namespace gf::synth
