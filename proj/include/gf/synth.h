#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gf/detector.h"
#include "gf/image.h"
#include "gf/rng.h"
#include "gf/vqa.h"

namespace gf::synth {

constexpr int kNumShapeClasses = 4;   // circle, square, triangle, bar
constexpr int kNumColorAttrs = 4;     // red, green, blue, yellow

const char* shape_name(int shape_class);
const char* color_name(int color_attr);

struct SceneObject {
    int shape_class = 0;
    int color_attr = 0;
    float cx = 0.0f;
    float cy = 0.0f;
    float size = 0.0f;  // half-extent in pixels
};

struct SceneSpec {
    int height = 0;
    int width = 0;
    std::vector<SceneObject> objects;
    std::array<uint8_t, 3> background = {232, 232, 236};
    uint64_t seed = 0;
};

enum class QuestionType { existence, color_query, count, spatial };

struct QAPair {
    std::vector<std::string> question;  // tokens
    std::string answer;
    int answer_id = -1;  // into the fixed answer table
    QuestionType type = QuestionType::existence;
};

struct SceneConfig {
    int height = 96;
    int width = 128;
    int max_objects = 8;  // difficulty: object count is uniform on [1, max]
    int questions_per_scene = 5;
    void validate() const;
};

struct Scene {
    SceneSpec spec;
    Image image;
    std::vector<GtObject> ground_truth;  // tight boxes, class = shape, attr = color
};

// Deterministic in (seed, config): same seed renders identical bytes.
// Object placement retries are bounded; exhausting them throws rather than
// silently drawing a different scene.
Scene gen_scene(uint64_t seed, const SceneConfig& config);

// The fixed token/answer tables shared by every generated dataset.
Vocabulary default_vocabulary();

// Answers are computed from the SceneSpec, never from pixels. Existence
// questions draw their target truth value from a fair coin first, keeping
// yes/no balanced.
std::vector<QAPair> gen_questions(const SceneSpec& spec, uint64_t seed,
                                  const SceneConfig& config);

// Recomputes the answer of a generated question from the spec alone.
std::string derive_answer(const SceneSpec& spec, const QAPair& qa);

struct AugmentPolicy {
    float brightness = 0.0f;       // max relative jitter, <= 0.2
    float contrast = 0.0f;         // max relative jitter, <= 0.2
    float max_rotate_deg = 0.0f;   // <= 10
    float max_translate = 0.0f;    // fraction of each extent, <= 0.05
    std::array<uint8_t, 3> fill = {232, 232, 236};
    bool identity() const {
        return brightness == 0.0f && contrast == 0.0f && max_rotate_deg == 0.0f &&
               max_translate == 0.0f;
    }
    void validate() const;
};

// Photometric jitter then affine warp (nearest sampling, border fill);
// deterministic under the seed, output extents unchanged.
Image augment(const Image& image, uint64_t seed, const AugmentPolicy& policy);

struct SceneRecord {
    std::string image_id;
    SceneSpec spec;
    std::vector<GtObject> ground_truth;
    std::vector<QAPair> qa;
};

struct DatasetManifest {
    uint64_t seed = 0;
    int template_version = 1;
    SceneConfig scene;
    int n_train = 0;
    int n_val = 0;
    int n_test = 0;
};

// Writes {out_dir}/{split}/{image_id}.ppm, {out_dir}/{split}.jsonl (one
// scene per line with boxes, classes, attributes and QA pairs) and
// {out_dir}/manifest.json. Fully reproducible from the manifest.
DatasetManifest export_dataset(int n_train, int n_val, int n_test, uint64_t seed,
                               const SceneConfig& config, const std::string& out_dir);

DatasetManifest load_manifest(const std::string& dir);

// Reads a split's annotations back.
std::vector<SceneRecord> load_split(const std::string& dir, const std::string& split);

std::string split_image_path(const std::string& dir, const std::string& split,
                             const std::string& image_id);

// In-memory regeneration of a split's scenes (same derivation the export
// uses), avoiding disk round-trips inside experiments.
std::vector<std::pair<SceneRecord, Image>> generate_split(uint64_t seed,
                                                          const std::string& split, int count,
                                                          const SceneConfig& config);

}  // namespace gf::synth
