// SPDX-License-Identifier: Apache-2.0
#include "refseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "refseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace refseg {

const char* shape_name(ShapeClass s) {
  switch (s) {
    case ShapeClass::circle: return "circle";
    case ShapeClass::square: return "square";
    case ShapeClass::triangle: return "triangle";
    case ShapeClass::ellipse: return "ellipse";
  }
  return "?";
}

const char* color_name(ColorName c) {
  switch (c) {
    case ColorName::red: return "red";
    case ColorName::green: return "green";
    case ColorName::blue: return "blue";
    case ColorName::yellow: return "yellow";
    case ColorName::purple: return "purple";
    case ColorName::orange: return "orange";
  }
  return "?";
}

Rgb color_rgb(ColorName c) {
  switch (c) {
    case ColorName::red: return {220, 50, 47};
    case ColorName::green: return {64, 180, 76};
    case ColorName::blue: return {58, 98, 222};
    case ColorName::yellow: return {230, 208, 52};
    case ColorName::purple: return {160, 66, 202};
    case ColorName::orange: return {240, 140, 38};
  }
  return {0, 0, 0};
}

namespace {

ShapeClass shape_from_name(const std::string& s) {
  for (ShapeClass v : {ShapeClass::circle, ShapeClass::square, ShapeClass::triangle, ShapeClass::ellipse})
    if (s == shape_name(v)) return v;
  throw_error(Errc::schema, "unknown shape: " + s);
}

ColorName color_from_name(const std::string& s) {
  for (ColorName v : {ColorName::red, ColorName::green, ColorName::blue, ColorName::yellow,
                      ColorName::purple, ColorName::orange})
    if (s == color_name(v)) return v;
  throw_error(Errc::schema, "unknown color: " + s);
}

struct PendingObject {
  ShapeClass shape;
  ColorName color;
  int cx = 0, cy = 0, r = 0;
  bool tall_ellipse = false;
};

BinaryMask rasterize(const PendingObject& o, int canvas) {
  BinaryMask m(canvas, canvas);
  int x0 = std::max(0, o.cx - o.r - 1), x1 = std::min(canvas - 1, o.cx + o.r + 1);
  int y0 = std::max(0, o.cy - o.r - 1), y1 = std::min(canvas - 1, o.cy + o.r + 1);
  double a = o.r, b = o.r;
  if (o.shape == ShapeClass::ellipse) {
    if (o.tall_ellipse)
      a = o.r / 1.6;
    else
      b = o.r / 1.6;
  }
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      double dx = x - o.cx, dy = y - o.cy;
      bool in = false;
      switch (o.shape) {
        case ShapeClass::circle:
          in = dx * dx + dy * dy <= double(o.r) * o.r;
          break;
        case ShapeClass::square:
          in = std::abs(dx) <= o.r && std::abs(dy) <= o.r;
          break;
        case ShapeClass::ellipse:
          in = (dx * dx) / (a * a) + (dy * dy) / (b * b) <= 1.0;
          break;
        case ShapeClass::triangle: {
          // up-pointing isoceles with apex (cx, cy-r), base y = cy+r
          if (dy < -o.r || dy > o.r) break;
          double half_width = (dy + o.r) * 0.5;  // width grows toward the base
          in = std::abs(dx) <= half_width;
          break;
        }
      }
      if (in) m.set(x, y);
    }
  }
  return m;
}

struct RelPhrase {
  RelationGroup group;
  const char* phrase;
};

const RelPhrase kPhrases[] = {
    {RelationGroup::LEFT, "on the left of"},   {RelationGroup::LEFT, "to the left of"},
    {RelationGroup::LEFT, "west of"},          {RelationGroup::RIGHT, "on the right of"},
    {RelationGroup::RIGHT, "to the right of"}, {RelationGroup::RIGHT, "east of"},
    {RelationGroup::ABOVE, "above"},           {RelationGroup::ABOVE, "north of"},
    {RelationGroup::BELOW, "below"},           {RelationGroup::BELOW, "south of"},
    {RelationGroup::BELOW, "under"},           {RelationGroup::BIGGER, "bigger than"},
    {RelationGroup::BIGGER, "larger than"},    {RelationGroup::SMALLER, "smaller than"},
    {RelationGroup::SMALLER, "tinier than"},   {RelationGroup::INSIDE, "inside"},
    {RelationGroup::BEHIND, "behind"},         {RelationGroup::FRONT, "in front of"},
};

std::string pick_phrase(RelationGroup g, Rng& rng) {
  std::vector<const char*> opts;
  for (const auto& p : kPhrases)
    if (p.group == g) opts.push_back(p.phrase);
  if (opts.empty()) return "between";
  return opts[static_cast<size_t>(rng.irange(0, static_cast<int64_t>(opts.size()) - 1))];
}

NounChunk chunk_for(const SceneObject& o) {
  return NounChunk{{color_name(o.color)}, shape_name(o.shape)};
}

// Margin-checked truth of R(target, ref) that is also false for `other`.
// Margins keep the predicate stable under proposal jitter.
bool relation_separates(RelationGroup g, const SceneObject& t, const SceneObject& o,
                        const SceneObject& ref, const GenConfig& cfg) {
  const double m = cfg.centroid_margin;
  switch (g) {
    case RelationGroup::LEFT:
      return t.box.cx() <= ref.box.cx() - m && o.box.cx() >= ref.box.cx() + m;
    case RelationGroup::RIGHT:
      return t.box.cx() >= ref.box.cx() + m && o.box.cx() <= ref.box.cx() - m;
    case RelationGroup::ABOVE:
      return t.box.cy() <= ref.box.cy() - m && o.box.cy() >= ref.box.cy() + m;
    case RelationGroup::BELOW:
      return t.box.cy() >= ref.box.cy() + m && o.box.cy() <= ref.box.cy() - m;
    case RelationGroup::BIGGER:
      return double(t.area) >= cfg.area_ratio_margin * ref.area &&
             double(o.area) * cfg.area_ratio_margin <= double(ref.area);
    case RelationGroup::SMALLER:
      return double(t.area) * cfg.area_ratio_margin <= double(ref.area) &&
             double(o.area) >= cfg.area_ratio_margin * ref.area;
    default:
      return false;
  }
}

bool between_separates(const SceneObject& t, const SceneObject& o, const SceneObject& ra,
                       const SceneObject& rb) {
  const double slack = 5.0, margin = 4.0;
  double lox = std::min(ra.box.cx(), rb.box.cx()), hix = std::max(ra.box.cx(), rb.box.cx());
  double loy = std::min(ra.box.cy(), rb.box.cy()), hiy = std::max(ra.box.cy(), rb.box.cy());
  bool t_in = t.box.cx() >= lox + margin && t.box.cx() <= hix - margin && t.box.cy() >= loy - slack + margin &&
              t.box.cy() <= hiy + slack - margin;
  bool o_out = o.box.cx() < lox - slack - margin || o.box.cx() > hix + slack + margin ||
               o.box.cy() < loy - slack - margin || o.box.cy() > hiy + slack + margin;
  return t_in && o_out;
}

}  // namespace

Scene generate_scene(uint64_t seed, const GenConfig& cfg) {
  if (cfg.shapes.empty() || cfg.colors.empty() || cfg.min_objects < 2 ||
      cfg.max_objects < cfg.min_objects || cfg.max_expressions < 1)
    throw_error(Errc::config, "generate_scene: invalid generation config");
  Rng rng(derive_seed(seed, 0xa11ce));

  for (int attempt = 0; attempt < cfg.max_place_tries; ++attempt) {
    int n = static_cast<int>(rng.irange(cfg.min_objects, cfg.max_objects));
    bool want_pair = n >= 3 && rng.chance(cfg.distractor_prob);

    // attributes
    std::vector<PendingObject> pend(n);
    auto rand_shape = [&] { return cfg.shapes[rng.irange(0, (int64_t)cfg.shapes.size() - 1)]; };
    auto rand_color = [&] { return cfg.colors[rng.irange(0, (int64_t)cfg.colors.size() - 1)]; };
    for (auto& p : pend) {
      p.shape = rand_shape();
      p.color = rand_color();
      p.r = static_cast<int>(rng.irange(cfg.min_radius, cfg.max_radius));
      p.tall_ellipse = rng.chance(0.5);
    }
    if (want_pair) {
      pend[1].shape = pend[0].shape;
      pend[1].color = pend[0].color;
      // make the pair discriminable by size relations some of the time
      if (rng.chance(0.5)) {
        pend[0].r = cfg.min_radius;
        pend[1].r = cfg.max_radius;
      }
      // exactly two objects may share the pair attributes
      for (int i = 2; i < n; ++i)
        while (pend[i].shape == pend[0].shape && pend[i].color == pend[0].color) {
          pend[i].shape = rand_shape();
          pend[i].color = rand_color();
          if (cfg.shapes.size() * cfg.colors.size() < 2) break;
        }
    }

    // placement: boxes strictly disjoint with a gap
    bool placed_all = true;
    std::vector<BoundingBox> approx;
    for (auto& p : pend) {
      bool ok = false;
      for (int t = 0; t < 60 && !ok; ++t) {
        p.cx = static_cast<int>(rng.irange(p.r + 1, cfg.canvas - p.r - 2));
        p.cy = static_cast<int>(rng.irange(p.r + 1, cfg.canvas - p.r - 2));
        BoundingBox b{p.cx - p.r - cfg.min_gap, p.cy - p.r - cfg.min_gap,
                      p.cx + p.r + cfg.min_gap, p.cy + p.r + cfg.min_gap};
        ok = std::none_of(approx.begin(), approx.end(), [&](const BoundingBox& q) {
          return !(b.x_max < q.x_min || q.x_max < b.x_min || b.y_max < q.y_min || q.y_max < b.y_min);
        });
        if (ok) approx.push_back(b);
      }
      if (!ok) {
        placed_all = false;
        break;
      }
    }
    if (!placed_all) continue;

    Scene scene;
    scene.image = ImageRgb(cfg.canvas, cfg.canvas, {28, 28, 32});
    for (const auto& p : pend) {
      SceneObject obj;
      obj.shape = p.shape;
      obj.color = p.color;
      obj.mask = rasterize(p, cfg.canvas);
      obj.area = obj.mask.area();
      if (obj.area < 1) break;
      obj.box = mask_to_box(obj.mask);
      scene.objects.push_back(std::move(obj));
    }
    if (scene.objects.size() != static_cast<size_t>(n)) continue;

    for (const auto& o : scene.objects) {
      Rgb c = color_rgb(o.color);
      for (int y = o.box.y_min; y <= o.box.y_max; ++y)
        for (int x = o.box.x_min; x <= o.box.x_max; ++x)
          if (o.mask.at(x, y)) scene.image.set(x, y, c);
    }

    // uniqueness map over (color, shape)
    auto is_unique = [&](int i) {
      for (size_t j = 0; j < scene.objects.size(); ++j)
        if (static_cast<int>(j) != i && scene.objects[j].shape == scene.objects[i].shape &&
            scene.objects[j].color == scene.objects[i].color)
          return false;
      return true;
    };
    std::vector<int> unique_ids;
    for (int i = 0; i < n; ++i)
      if (is_unique(i)) unique_ids.push_back(i);

    // relation expression disambiguating the attribute-identical pair
    if (want_pair) {
      if (unique_ids.empty()) continue;
      int target = static_cast<int>(rng.irange(0, 1));
      int other = 1 - target;
      const auto& t = scene.objects[target];
      const auto& o = scene.objects[other];

      std::vector<RelationGroup> rels = cfg.relations;
      for (size_t i = rels.size(); i > 1; --i)
        std::swap(rels[i - 1], rels[static_cast<size_t>(rng.irange(0, (int64_t)i - 1))]);

      bool made = false;
      for (RelationGroup g : rels) {
        if (g == RelationGroup::BETWEEN) {
          if (unique_ids.size() < 2) continue;
          for (size_t a = 0; a < unique_ids.size() && !made; ++a)
            for (size_t b = a + 1; b < unique_ids.size() && !made; ++b) {
              const auto& ra = scene.objects[unique_ids[a]];
              const auto& rb = scene.objects[unique_ids[b]];
              if (!between_separates(t, o, ra, rb)) continue;
              ExpressionAnnotation e;
              e.target_id = target;
              e.structure.subject = chunk_for(t);
              e.structure.relation = RelationGroup::BETWEEN;
              e.structure.objects = {chunk_for(ra), chunk_for(rb)};
              e.structure.uniquely_identifying = true;
              e.uniquely_identifying = true;
              e.text = e.structure.subject.text() + " between the " + e.structure.objects[0].text() +
                       " and the " + e.structure.objects[1].text();
              scene.expressions.push_back(std::move(e));
              made = true;
            }
        } else {
          for (int rid : unique_ids) {
            const auto& ref = scene.objects[rid];
            if (!relation_separates(g, t, o, ref, cfg)) continue;
            ExpressionAnnotation e;
            e.target_id = target;
            e.structure.subject = chunk_for(t);
            e.structure.relation = g;
            e.structure.objects = {chunk_for(ref)};
            e.structure.uniquely_identifying = true;
            e.uniquely_identifying = true;
            e.text = e.structure.subject.text() + " " + pick_phrase(g, rng) + " the " +
                     e.structure.objects[0].text();
            scene.expressions.push_back(std::move(e));
            made = true;
            break;
          }
        }
        if (made) break;
      }
      if (!made) continue;  // replace the scene; pair must be resolvable
    }

    // attribute-only expressions on unique objects
    std::vector<int> pool = unique_ids;
    for (size_t i = pool.size(); i > 1; --i)
      std::swap(pool[i - 1], pool[static_cast<size_t>(rng.irange(0, (int64_t)i - 1))]);
    for (int id : pool) {
      if (scene.expressions.size() >= static_cast<size_t>(cfg.max_expressions)) break;
      const auto& obj = scene.objects[id];
      ExpressionAnnotation e;
      e.target_id = id;
      e.structure.subject = chunk_for(obj);
      e.structure.uniquely_identifying = true;
      e.uniquely_identifying = true;
      e.text = e.structure.subject.text();
      scene.expressions.push_back(std::move(e));
    }
    if (scene.expressions.empty()) continue;
    return scene;
  }
  throw_error(Errc::run, "generate_scene: could not satisfy config after max_place_tries");
}

DatasetSplit make_split(const std::vector<int>& dataset_ids, double x_percent, uint64_t seed) {
  if (!(x_percent > 0.0) || x_percent > 100.0)
    throw_error(Errc::config, "make_split: label rate must be in (0, 100]");
  DatasetSplit split;
  split.label_rate = x_percent;
  std::vector<int> ids = dataset_ids;
  Rng rng(derive_seed(seed, 0x5b117));
  for (size_t i = ids.size(); i > 1; --i)
    std::swap(ids[i - 1], ids[static_cast<size_t>(rng.irange(0, (int64_t)i - 1))]);
  size_t k = static_cast<size_t>(std::llround(x_percent / 100.0 * double(ids.size())));
  k = std::min(k, ids.size());
  if (k == 0) k = 1;
  split.annotated_ids.assign(ids.begin(), ids.begin() + k);
  split.unlabeled_ids.assign(ids.begin() + k, ids.end());
  std::sort(split.annotated_ids.begin(), split.annotated_ids.end());
  std::sort(split.unlabeled_ids.begin(), split.unlabeled_ids.end());
  return split;
}

Dataset generate_dataset(uint64_t root_seed, int n_scenes, const GenConfig& cfg) {
  Dataset ds;
  ds.meta.config = cfg;
  ds.meta.root_seed = root_seed;
  for (int i = 0; i < n_scenes; ++i) ds.meta.scene_seeds.push_back(derive_seed(root_seed, 0x5ce7e, i));

  for (int i = 0; i < n_scenes; ++i) {
    Scene s = generate_scene(ds.meta.scene_seeds[i], cfg);
    for (size_t e = 0; e < s.expressions.size(); ++e) {
      const auto& ex = s.expressions[e];
      SampleRecord rec;
      rec.scene_id = i;
      rec.expr_id = static_cast<int>(e);
      rec.text = ex.text;
      rec.structure = ex.structure;
      rec.annotated = true;
      const auto& obj = s.objects[static_cast<size_t>(ex.target_id)];
      rec.box = obj.box;
      rec.mask = obj.mask;
      // stored contours are integer-valued (the on-disk encoding is integral)
      rec.contour = contour_from_flat(contour_to_flat(sample_contour(obj.mask, cfg.contour_points)));
      ds.records.push_back(std::move(rec));
    }
    ds.images.push_back(std::move(s.image));
  }
  return ds;
}

Scene regenerate_scene(const DatasetMeta& meta, int scene_id) {
  if (scene_id < 0 || static_cast<size_t>(scene_id) >= meta.scene_seeds.size())
    throw_error(Errc::run, "regenerate_scene: scene id out of range");
  return generate_scene(meta.scene_seeds[static_cast<size_t>(scene_id)], meta.config);
}

void apply_split(Dataset& ds, const DatasetSplit& split) {
  size_t n = ds.records.size();
  for (int id : split.annotated_ids)
    if (id < 0 || static_cast<size_t>(id) >= n) throw_error(Errc::run, "apply_split: bad id");
  std::vector<uint8_t> annotated(n, 0);
  for (int id : split.annotated_ids) annotated[static_cast<size_t>(id)] = 1;
  for (size_t i = 0; i < n; ++i) {
    ds.records[i].annotated = annotated[i] != 0;
    if (!annotated[i]) {
      ds.records[i].box.reset();
      ds.records[i].mask.reset();
      ds.records[i].contour.reset();
    }
  }
}

namespace {

json config_to_json(const GenConfig& c) {
  json j;
  j["canvas"] = c.canvas;
  j["min_objects"] = c.min_objects;
  j["max_objects"] = c.max_objects;
  j["min_radius"] = c.min_radius;
  j["max_radius"] = c.max_radius;
  j["distractor_prob"] = c.distractor_prob;
  j["max_expressions"] = c.max_expressions;
  j["contour_points"] = c.contour_points;
  j["max_place_tries"] = c.max_place_tries;
  j["min_gap"] = c.min_gap;
  j["centroid_margin"] = c.centroid_margin;
  j["area_ratio_margin"] = c.area_ratio_margin;
  j["shapes"] = json::array();
  for (auto s : c.shapes) j["shapes"].push_back(shape_name(s));
  j["colors"] = json::array();
  for (auto cl : c.colors) j["colors"].push_back(color_name(cl));
  j["relations"] = json::array();
  for (auto r : c.relations) j["relations"].push_back(relation_name(r));
  return j;
}

GenConfig config_from_json(const json& j) {
  GenConfig c;
  c.canvas = j.at("canvas");
  c.min_objects = j.at("min_objects");
  c.max_objects = j.at("max_objects");
  c.min_radius = j.at("min_radius");
  c.max_radius = j.at("max_radius");
  c.distractor_prob = j.at("distractor_prob");
  c.max_expressions = j.at("max_expressions");
  c.contour_points = j.at("contour_points");
  c.max_place_tries = j.at("max_place_tries");
  c.min_gap = j.at("min_gap");
  c.centroid_margin = j.at("centroid_margin");
  c.area_ratio_margin = j.at("area_ratio_margin");
  c.shapes.clear();
  for (const auto& s : j.at("shapes")) c.shapes.push_back(shape_from_name(s.get<std::string>()));
  c.colors.clear();
  for (const auto& s : j.at("colors")) c.colors.push_back(color_from_name(s.get<std::string>()));
  c.relations.clear();
  for (const auto& s : j.at("relations")) {
    auto g = relation_from_name(s.get<std::string>());
    if (!g) throw_error(Errc::schema, "unknown relation in dataset meta");
    c.relations.push_back(*g);
  }
  return c;
}

json structure_to_json(const ExprStructure& s) {
  json j;
  j["subject_attrs"] = s.subject.attrs;
  j["subject_noun"] = s.subject.noun;
  if (s.relation) j["relation"] = relation_name(*s.relation);
  if (!s.objects.empty()) {
    j["object_attrs"] = s.objects[0].attrs;
    j["object_noun"] = s.objects[0].noun;
  }
  if (s.objects.size() > 1) {
    j["object2_attrs"] = s.objects[1].attrs;
    j["object2_noun"] = s.objects[1].noun;
  }
  j["uniquely_identifying"] = s.uniquely_identifying;
  return j;
}

ExprStructure structure_from_json(const json& j) {
  ExprStructure s;
  s.subject.attrs = j.at("subject_attrs").get<std::vector<std::string>>();
  s.subject.noun = j.at("subject_noun").get<std::string>();
  if (j.contains("relation")) {
    auto g = relation_from_name(j.at("relation").get<std::string>());
    if (!g) throw_error(Errc::schema, "unknown relation in record structure");
    s.relation = g;
  }
  if (j.contains("object_noun")) {
    NounChunk c;
    c.attrs = j.at("object_attrs").get<std::vector<std::string>>();
    c.noun = j.at("object_noun").get<std::string>();
    s.objects.push_back(std::move(c));
  }
  if (j.contains("object2_noun")) {
    NounChunk c;
    c.attrs = j.at("object2_attrs").get<std::vector<std::string>>();
    c.noun = j.at("object2_noun").get<std::string>();
    s.objects.push_back(std::move(c));
  }
  s.uniquely_identifying = j.value("uniquely_identifying", false);
  return s;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");

  json meta;
  meta["schema_version"] = 1;
  meta["config"] = config_to_json(ds.meta.config);
  meta["root_seed"] = ds.meta.root_seed;
  meta["scene_seeds"] = ds.meta.scene_seeds;
  {
    std::ofstream f(fs::path(dir) / "dataset_meta.json");
    f << meta.dump(2) << "\n";
  }

  for (size_t i = 0; i < ds.images.size(); ++i)
    save_png(ds.images[i], (fs::path(dir) / "images" / (std::to_string(i) + ".png")).string());

  std::ofstream f(fs::path(dir) / "annotations.jsonl");
  for (const auto& rec : ds.records) {
    json j;
    j["scene_id"] = rec.scene_id;
    j["expr_id"] = rec.expr_id;
    j["text"] = rec.text;
    j["structure"] = structure_to_json(rec.structure);
    j["split"] = rec.annotated ? "annotated" : "unlabeled";
    if (rec.box) j["box"] = {rec.box->x_min, rec.box->y_min, rec.box->x_max, rec.box->y_max};
    if (rec.mask) j["mask_rle"] = mask_to_rle(*rec.mask);
    if (rec.contour) j["contour"] = contour_to_flat(*rec.contour);
    f << j.dump() << "\n";
  }
}

Dataset read_dataset(const std::string& dir) {
  Dataset ds;
  json meta;
  {
    std::ifstream f(fs::path(dir) / "dataset_meta.json");
    if (!f) throw_error(Errc::schema, "read_dataset: missing dataset_meta.json in " + dir);
    try {
      f >> meta;
    } catch (const json::exception& e) {
      throw_error(Errc::schema, std::string("read_dataset: malformed dataset_meta.json: ") + e.what());
    }
  }
  try {
    ds.meta.config = config_from_json(meta.at("config"));
    ds.meta.root_seed = meta.at("root_seed");
    ds.meta.scene_seeds = meta.at("scene_seeds").get<std::vector<uint64_t>>();
  } catch (const json::exception& e) {
    throw_error(Errc::schema, std::string("read_dataset: dataset_meta.json: ") + e.what());
  }

  for (size_t i = 0; i < ds.meta.scene_seeds.size(); ++i) {
    auto p = fs::path(dir) / "images" / (std::to_string(i) + ".png");
    if (!fs::exists(p)) throw_error(Errc::schema, "read_dataset: missing image " + p.string());
    ds.images.push_back(load_png(p.string()));
  }

  std::ifstream f(fs::path(dir) / "annotations.jsonl");
  if (!f) throw_error(Errc::schema, "read_dataset: missing annotations.jsonl in " + dir);
  std::string line;
  int lineno = 0;
  int canvas = ds.meta.config.canvas;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw_error(Errc::schema, "read_dataset: annotations.jsonl line " + std::to_string(lineno) +
                                    ": " + e.what());
    }
    try {
      SampleRecord rec;
      rec.scene_id = j.at("scene_id");
      rec.expr_id = j.at("expr_id");
      rec.text = j.at("text");
      rec.structure = structure_from_json(j.at("structure"));
      std::string split = j.at("split");
      if (split != "annotated" && split != "unlabeled")
        throw_error(Errc::schema, "read_dataset: bad split value at line " + std::to_string(lineno));
      rec.annotated = split == "annotated";
      if (j.contains("box")) {
        auto b = j.at("box").get<std::vector<int>>();
        if (b.size() != 4) throw_error(Errc::schema, "read_dataset: bad box at line " + std::to_string(lineno));
        rec.box = BoundingBox{b[0], b[1], b[2], b[3]};
      }
      if (j.contains("mask_rle")) rec.mask = mask_from_rle(j.at("mask_rle"), canvas, canvas);
      if (j.contains("contour")) rec.contour = contour_from_flat(j.at("contour").get<std::vector<int>>());
      if (rec.scene_id < 0 || static_cast<size_t>(rec.scene_id) >= ds.images.size())
        throw_error(Errc::schema, "read_dataset: scene_id out of range at line " + std::to_string(lineno));
      ds.records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw_error(Errc::schema, "read_dataset: annotations.jsonl line " + std::to_string(lineno) +
                                    ": " + e.what());
    }
  }
  return ds;
}

std::vector<Proposal> make_proposals(const Scene& scene, const ProposalConfig& cfg,
                                     uint64_t seed, int canvas) {
  Rng rng(derive_seed(seed, 0x9c0b0));
  std::vector<Proposal> out;
  auto clampi = [&](int v) { return std::clamp(v, 0, canvas - 1); };
  int id = 0;
  for (const auto& obj : scene.objects) {
    const auto& b = obj.box;
    int w = b.x_max - b.x_min + 1, h = b.y_max - b.y_min + 1;
    auto jit = [&](int extent) {
      double f = rng.real(-cfg.jitter_frac, cfg.jitter_frac);
      return static_cast<int>(std::lround(f * extent));
    };
    BoundingBox jb{clampi(b.x_min + jit(w)), clampi(b.y_min + jit(h)), clampi(b.x_max + jit(w)),
                   clampi(b.y_max + jit(h))};
    if (jb.x_min > jb.x_max) std::swap(jb.x_min, jb.x_max);
    if (jb.y_min > jb.y_max) std::swap(jb.y_min, jb.y_max);
    out.push_back({id++, jb});
  }
  for (int d = 0; d < cfg.distractors; ++d) {
    int w = static_cast<int>(rng.irange(12, std::max(13, canvas / 3)));
    int h = static_cast<int>(rng.irange(12, std::max(13, canvas / 3)));
    int x0 = static_cast<int>(rng.irange(0, canvas - w - 1));
    int y0 = static_cast<int>(rng.irange(0, canvas - h - 1));
    out.push_back({id++, BoundingBox{x0, y0, x0 + w, y0 + h}});
  }
  return out;
}

}  // namespace refseg
