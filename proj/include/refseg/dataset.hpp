// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "refseg/geometry.hpp"
#include "refseg/image.hpp"
#include "refseg/relations.hpp"

namespace refseg {

enum class ShapeClass { circle, square, triangle, ellipse };
enum class ColorName { red, green, blue, yellow, purple, orange };

const char* shape_name(ShapeClass s);
const char* color_name(ColorName c);
Rgb color_rgb(ColorName c);

struct SceneObject {
  ShapeClass shape;
  ColorName color;
  BoundingBox box;
  BinaryMask mask;
  int64_t area = 0;
};

struct ExpressionAnnotation {
  std::string text;
  int target_id = -1;
  ExprStructure structure;
  bool uniquely_identifying = false;
};

struct Scene {
  ImageRgb image;
  std::vector<SceneObject> objects;
  std::vector<ExpressionAnnotation> expressions;
};

struct GenConfig {
  int canvas = 128;
  int min_objects = 2;
  int max_objects = 6;
  int min_radius = 9;
  int max_radius = 22;
  double distractor_prob = 0.5;       // chance of an attribute-identical pair
  int max_expressions = 2;            // per scene, >= 1
  int contour_points = 16;            // K for the stored contour annotation
  int max_place_tries = 400;
  int min_gap = 3;                    // pixel gap between object boxes
  double centroid_margin = 10.0;      // min centroid split for LEFT/RIGHT/ABOVE/BELOW
  double area_ratio_margin = 1.6;     // min area ratio for BIGGER/SMALLER
  std::vector<ShapeClass> shapes = {ShapeClass::circle, ShapeClass::square,
                                    ShapeClass::triangle, ShapeClass::ellipse};
  std::vector<ColorName> colors = {ColorName::red, ColorName::green, ColorName::blue,
                                   ColorName::yellow, ColorName::purple, ColorName::orange};
  std::vector<RelationGroup> relations = {RelationGroup::LEFT, RelationGroup::RIGHT,
                                          RelationGroup::ABOVE, RelationGroup::BELOW,
                                          RelationGroup::BIGGER, RelationGroup::SMALLER,
                                          RelationGroup::BETWEEN};
};

// Deterministic for a given seed. Throws Errc::run when placement cannot
// satisfy the config within max_place_tries.
Scene generate_scene(uint64_t seed, const GenConfig& cfg);

struct DatasetSplit {
  std::vector<int> annotated_ids;
  std::vector<int> unlabeled_ids;
  double label_rate = 100.0;
};

// Uniform random subset of round(x% * N); x in (0, 100].
DatasetSplit make_split(const std::vector<int>& dataset_ids, double x_percent, uint64_t seed);

struct SampleRecord {
  int scene_id = 0;
  int expr_id = 0;
  std::string text;
  ExprStructure structure;
  bool annotated = true;
  std::optional<BoundingBox> box;
  std::optional<BinaryMask> mask;
  std::optional<ContourSequence> contour;
  bool operator==(const SampleRecord&) const = default;
};

struct DatasetMeta {
  GenConfig config;
  uint64_t root_seed = 0;
  std::vector<uint64_t> scene_seeds;  // one per scene, regeneration handles
};

struct Dataset {
  DatasetMeta meta;
  std::vector<ImageRgb> images;        // per scene
  std::vector<SampleRecord> records;   // per (scene, expression)
};

// Scene seeds are derived from the root seed; scenes regenerate bit-identically.
Dataset generate_dataset(uint64_t root_seed, int n_scenes, const GenConfig& cfg);
Scene regenerate_scene(const DatasetMeta& meta, int scene_id);

// Marks records and strips mask/box/contour from the unlabeled subset
// (box % equals mask %).
void apply_split(Dataset& ds, const DatasetSplit& split);

// Layout: images/<id>.png, annotations.jsonl, dataset_meta.json.
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

struct ProposalConfig {
  double jitter_frac = 0.10;  // edge jitter as a fraction of box size
  int distractors = 2;
};

struct Proposal {
  int id = 0;
  BoundingBox box;
};

// Candidate boxes for zero-shot REC: jittered ground-truth boxes plus random
// distractors. Stand-in for a pretrained detector.
std::vector<Proposal> make_proposals(const Scene& scene, const ProposalConfig& cfg,
                                     uint64_t seed, int canvas);

}  // namespace refseg
