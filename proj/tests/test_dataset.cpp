// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "refseg/dataset.hpp"
#include "refseg/rng.hpp"

using namespace refseg;
namespace fs = std::filesystem;

namespace {

GenConfig small_cfg() {
  GenConfig cfg;
  cfg.canvas = 96;
  cfg.min_objects = 2;
  cfg.max_objects = 4;
  cfg.min_radius = 8;
  cfg.max_radius = 16;
  return cfg;
}

bool scenes_equal(const Scene& a, const Scene& b) {
  if (!(a.image == b.image)) return false;
  if (a.objects.size() != b.objects.size() || a.expressions.size() != b.expressions.size())
    return false;
  for (size_t i = 0; i < a.objects.size(); ++i) {
    if (a.objects[i].shape != b.objects[i].shape || a.objects[i].color != b.objects[i].color ||
        !(a.objects[i].box == b.objects[i].box) || !(a.objects[i].mask == b.objects[i].mask))
      return false;
  }
  for (size_t i = 0; i < a.expressions.size(); ++i) {
    if (a.expressions[i].text != b.expressions[i].text ||
        a.expressions[i].target_id != b.expressions[i].target_id ||
        !(a.expressions[i].structure == b.expressions[i].structure))
      return false;
  }
  return true;
}

// Brute-force: objects matching the expression's constraints.
std::vector<int> satisfying_objects(const Scene& s, const ExpressionAnnotation& e) {
  std::vector<int> out;
  for (size_t i = 0; i < s.objects.size(); ++i) {
    const auto& obj = s.objects[i];
    if (e.structure.subject.noun != shape_name(obj.shape)) continue;
    bool attrs_ok = true;
    for (const auto& a : e.structure.subject.attrs)
      if (a != color_name(obj.color)) attrs_ok = false;
    if (!attrs_ok) continue;
    if (e.structure.relation) {
      // resolve reference objects by their (unique) attribute chunks
      std::vector<const SceneObject*> refs;
      for (const auto& chunk : e.structure.objects) {
        for (const auto& cand : s.objects) {
          if (chunk.noun == shape_name(cand.shape) && chunk.attrs.size() == 1 &&
              chunk.attrs[0] == color_name(cand.color)) {
            refs.push_back(&cand);
            break;
          }
        }
      }
      if (refs.empty()) continue;
      int p = refs.size() > 1 ? spatial_prob(*e.structure.relation, obj.box, refs[0]->box, &refs[1]->box)
                              : spatial_prob(*e.structure.relation, obj.box, refs[0]->box);
      if (p != 1) continue;
    }
    out.push_back(static_cast<int>(i));
  }
  return out;
}

}  // namespace

TEST_CASE("generate_scene is deterministic") {
  GenConfig cfg = small_cfg();
  Scene a = generate_scene(1234, cfg);
  Scene b = generate_scene(1234, cfg);
  CHECK(scenes_equal(a, b));
  Scene c = generate_scene(1235, cfg);
  CHECK(!scenes_equal(a, c));
}

TEST_CASE("generate_scene respects the object count range") {
  GenConfig cfg = small_cfg();
  cfg.min_objects = 2;
  cfg.max_objects = 2;
  for (uint64_t s = 0; s < 20; ++s) {
    Scene sc = generate_scene(s, cfg);
    CHECK(sc.objects.size() == 2);
  }
}

TEST_CASE("scene invariants: disjoint objects, valid expressions") {
  GenConfig cfg = small_cfg();
  cfg.distractor_prob = 1.0;
  cfg.min_objects = 3;
  int relation_exprs = 0;
  for (uint64_t s = 100; s < 140; ++s) {
    Scene sc = generate_scene(s, cfg);
    // mask/box/area agreement
    for (const auto& o : sc.objects) {
      CHECK(mask_to_box(o.mask) == o.box);
      CHECK(o.mask.area() == o.area);
    }
    // pairwise overlap under 20% IoU (generator places them disjoint)
    for (size_t i = 0; i < sc.objects.size(); ++i)
      for (size_t j = i + 1; j < sc.objects.size(); ++j)
        CHECK(iou_mask(sc.objects[i].mask, sc.objects[j].mask) < 0.2);
    // every expression targets a real object; unique expressions are unique
    for (const auto& e : sc.expressions) {
      REQUIRE(e.target_id >= 0);
      REQUIRE(e.target_id < (int)sc.objects.size());
      auto sat = satisfying_objects(sc, e);
      if (e.uniquely_identifying) {
        REQUIRE(sat.size() == 1);
        CHECK(sat[0] == e.target_id);
      }
      if (e.structure.relation) ++relation_exprs;
    }
  }
  CHECK(relation_exprs >= 35);  // distractor_prob=1 forces relation expressions
}

TEST_CASE("ground truth masks survive the contour round trip") {
  GenConfig cfg = small_cfg();
  for (uint64_t s = 7; s < 17; ++s) {
    Scene sc = generate_scene(s, cfg);
    for (const auto& o : sc.objects) {
      ContourSequence c = sample_contour(o.mask, 16);
      BinaryMask back = contour_to_mask(c, cfg.canvas, cfg.canvas);
      CHECK(iou_mask(o.mask, back) >= 0.9);
    }
  }
}

TEST_CASE("make_split sizes and determinism") {
  std::vector<int> ids(2000);
  for (int i = 0; i < 2000; ++i) ids[i] = i;

  DatasetSplit s30 = make_split(ids, 30.0, 9);
  CHECK(s30.annotated_ids.size() == 600);
  CHECK(s30.unlabeled_ids.size() == 1400);

  DatasetSplit again = make_split(ids, 30.0, 9);
  CHECK(s30.annotated_ids == again.annotated_ids);

  DatasetSplit s100 = make_split(ids, 100.0, 9);
  CHECK(s100.unlabeled_ids.empty());

  CHECK_THROWS_AS(make_split(ids, 0.0, 9), Error);
  CHECK_THROWS_AS(make_split(ids, 101.0, 9), Error);

  // partition property
  std::set<int> all(s30.annotated_ids.begin(), s30.annotated_ids.end());
  for (int id : s30.unlabeled_ids) CHECK(all.insert(id).second);
  CHECK(all.size() == 2000);
}

TEST_CASE("dataset write/read round trip") {
  GenConfig cfg = small_cfg();
  Dataset ds = generate_dataset(77, 10, cfg);
  REQUIRE(ds.records.size() >= 10);

  std::vector<int> ids(ds.records.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = (int)i;
  apply_split(ds, make_split(ids, 50.0, 3));

  fs::path dir = fs::temp_directory_path() / "refseg_test_ds";
  fs::remove_all(dir);
  write_dataset(ds, dir.string());
  Dataset back = read_dataset(dir.string());

  CHECK(back.records == ds.records);
  CHECK(back.images == ds.images);
  CHECK(back.meta.scene_seeds == ds.meta.scene_seeds);

  // unlabeled records carry no ground truth
  int n_unlabeled = 0;
  for (const auto& r : back.records)
    if (!r.annotated) {
      ++n_unlabeled;
      CHECK(!r.box);
      CHECK(!r.mask);
      CHECK(!r.contour);
      CHECK(!r.text.empty());
    }
  CHECK(n_unlabeled > 0);

  // scene regeneration reproduces the stored images
  for (size_t i = 0; i < back.images.size(); ++i) {
    Scene sc = regenerate_scene(back.meta, (int)i);
    CHECK(sc.image == back.images[i]);
  }
  fs::remove_all(dir);
}

TEST_CASE("truncated annotations give a schema error") {
  GenConfig cfg = small_cfg();
  Dataset ds = generate_dataset(78, 3, cfg);
  fs::path dir = fs::temp_directory_path() / "refseg_test_trunc";
  fs::remove_all(dir);
  write_dataset(ds, dir.string());
  {
    std::ofstream f(dir / "annotations.jsonl", std::ios::app);
    f << "{\"scene_id\": 0, \"expr\n";
  }
  try {
    read_dataset(dir.string());
    FAIL("expected schema error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::schema);
    CHECK(std::string(e.what()).find("line") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("proposals jitter ground truth and stay in canvas") {
  GenConfig cfg = small_cfg();
  Scene sc = generate_scene(555, cfg);
  ProposalConfig pc;
  auto props = make_proposals(sc, pc, 42, cfg.canvas);
  REQUIRE(props.size() == sc.objects.size() + 2);
  for (size_t i = 0; i < props.size(); ++i) {
    CHECK(props[i].id == (int)i);
    CHECK(props[i].box.valid());
    CHECK(props[i].box.x_min >= 0);
    CHECK(props[i].box.y_max <= cfg.canvas - 1);
  }
  // object proposals overlap their source objects
  for (size_t i = 0; i < sc.objects.size(); ++i) {
    const auto& gt = sc.objects[i].box;
    const auto& pb = props[i].box;
    CHECK(dice_box(gt, pb) > 0.5);
  }
  auto again = make_proposals(sc, pc, 42, cfg.canvas);
  for (size_t i = 0; i < props.size(); ++i) CHECK(props[i].box == again[i].box);
}
