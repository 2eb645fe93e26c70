// SPDX-License-Identifier: Apache-2.0
#include "refseg/zsrec.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <mutex>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "refseg/rng.hpp"

namespace refseg {

namespace {

const char* kStopwords[] = {"the", "a", "an", "on", "to", "of", "in", "than"};

bool is_stopword(const std::string& w) {
  for (const char* s : kStopwords)
    if (w == s) return true;
  return false;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!word.empty()) out.push_back(word);
      word.clear();
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!word.empty()) out.push_back(word);
  return out;
}

NounChunk chunk_from(const std::vector<std::string>& words) {
  NounChunk c;
  std::vector<std::string> kept;
  for (const auto& w : words)
    if (!is_stopword(w)) kept.push_back(w);
  if (kept.empty()) return c;  // empty noun marks failure
  c.noun = kept.back();
  c.attrs.assign(kept.begin(), kept.end() - 1);
  return c;
}

}  // namespace

ReferringExpression parse_expression(const std::string& text, const RelationLexicon& lexicon) {
  ReferringExpression expr;
  expr.raw = text;
  std::vector<std::string> toks = tokenize(text);
  if (toks.empty()) throw_error(Errc::parse, "parse_expression: empty expression");

  int rel_at = -1;
  std::optional<RelationGroup> rel;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (auto g = lexicon.lookup(toks[i])) {
      rel = g;
      rel_at = static_cast<int>(i);
      break;
    }
  }

  if (rel_at < 0) {
    expr.subject = chunk_from(toks);
    if (expr.subject.noun.empty())
      throw_error(Errc::parse, "parse_expression: no noun chunk in '" + text + "'");
    return expr;
  }

  std::vector<std::string> before(toks.begin(), toks.begin() + rel_at);
  std::vector<std::string> after(toks.begin() + rel_at + 1, toks.end());
  expr.subject = chunk_from(before);
  if (expr.subject.noun.empty())
    throw_error(Errc::parse, "parse_expression: no subject noun in '" + text + "'");

  if (*rel == RelationGroup::BETWEEN) {
    auto and_it = std::find(after.begin(), after.end(), "and");
    if (and_it != after.end()) {
      NounChunk first = chunk_from({after.begin(), and_it});
      NounChunk second = chunk_from({and_it + 1, after.end()});
      if (!first.noun.empty() && !second.noun.empty()) {
        expr.relation = rel;
        expr.objects = {first, second};
        return expr;
      }
    }
    // malformed reference list: fall back to the no-relation path
    return expr;
  }

  NounChunk obj = chunk_from(after);
  if (obj.noun.empty()) return expr;  // dangling relation word, no reference
  expr.relation = rel;
  expr.objects = {obj};
  return expr;
}

SparcFlags parse_flags(const std::string& csv) {
  SparcFlags f{false, false, false, false};
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "red_box")
      f.red_box = true;
    else if (item == "blur")
      f.blur = true;
    else if (item == "crop")
      f.crop = true;
    else if (item == "spatial")
      f.spatial = true;
    else
      throw_error(Errc::config, "unknown prompt flag: " + item);
  }
  return f;
}

std::string flags_to_string(const SparcFlags& f) {
  std::string s;
  auto add = [&](bool v, const char* n) {
    if (!v) return;
    if (!s.empty()) s += ',';
    s += n;
  };
  add(f.red_box, "red_box");
  add(f.blur, "blur");
  add(f.crop, "crop");
  add(f.spatial, "spatial");
  return s;
}

namespace {

ImageRgb gaussian_blur(const ImageRgb& img, double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[static_cast<size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= sum;

  ImageRgb tmp(img.width, img.height), out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc[3] = {0, 0, 0};
      for (int i = -radius; i <= radius; ++i) {
        int xx = std::clamp(x + i, 0, img.width - 1);
        Rgb c = img.at(xx, y);
        for (int ch = 0; ch < 3; ++ch) acc[ch] += kernel[static_cast<size_t>(i + radius)] * c[ch];
      }
      tmp.set(x, y, {static_cast<uint8_t>(std::lround(acc[0])), static_cast<uint8_t>(std::lround(acc[1])),
                     static_cast<uint8_t>(std::lround(acc[2]))});
    }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc[3] = {0, 0, 0};
      for (int i = -radius; i <= radius; ++i) {
        int yy = std::clamp(y + i, 0, img.height - 1);
        Rgb c = tmp.at(x, yy);
        for (int ch = 0; ch < 3; ++ch) acc[ch] += kernel[static_cast<size_t>(i + radius)] * c[ch];
      }
      out.set(x, y, {static_cast<uint8_t>(std::lround(acc[0])), static_cast<uint8_t>(std::lround(acc[1])),
                     static_cast<uint8_t>(std::lround(acc[2]))});
    }
  return out;
}

}  // namespace

ImageRgb build_prompt(const ImageRgb& image, const BoundingBox& box, const SparcFlags& flags,
                      const PromptConfig& cfg) {
  if (!box.valid() || box.x_min < 0 || box.y_min < 0 || box.x_max >= image.width ||
      box.y_max >= image.height)
    throw_error(Errc::run, "build_prompt: box outside the image");
  if (flags.crop && flags.red_box)
    throw_error(Errc::config, "build_prompt: crop and red_box are mutually exclusive");

  ImageRgb out = image;
  if (flags.blur) {
    ImageRgb blurred = gaussian_blur(image, cfg.blur_sigma);
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) {
        bool interior = x >= box.x_min && x <= box.x_max && y >= box.y_min && y <= box.y_max;
        if (!interior) out.set(x, y, blurred.at(x, y));
      }
  }
  if (flags.red_box) {
    for (int t = 1; t <= cfg.border_thickness; ++t) {
      int x0 = box.x_min - t, x1 = box.x_max + t;
      int y0 = box.y_min - t, y1 = box.y_max + t;
      for (int x = x0; x <= x1; ++x) {
        if (x >= 0 && x < out.width) {
          if (y0 >= 0) out.set(x, y0, {255, 0, 0});
          if (y1 < out.height) out.set(x, y1, {255, 0, 0});
        }
      }
      for (int y = y0; y <= y1; ++y) {
        if (y >= 0 && y < out.height) {
          if (x0 >= 0) out.set(x0, y, {255, 0, 0});
          if (x1 < out.width) out.set(x1, y, {255, 0, 0});
        }
      }
    }
  }
  if (flags.crop) {
    ImageRgb cropped(box.x_max - box.x_min + 1, box.y_max - box.y_min + 1);
    for (int y = box.y_min; y <= box.y_max; ++y)
      for (int x = box.x_min; x <= box.x_max; ++x)
        cropped.set(x - box.x_min, y - box.y_min, out.at(x, y));
    return cropped;
  }
  return out;
}

namespace {

double iou_box(const BoundingBox& a, const BoundingBox& b) {
  int ix0 = std::max(a.x_min, b.x_min), iy0 = std::max(a.y_min, b.y_min);
  int ix1 = std::min(a.x_max, b.x_max), iy1 = std::min(a.y_max, b.y_max);
  if (ix0 > ix1 || iy0 > iy1) return 0.0;
  double inter = double(ix1 - ix0 + 1) * (iy1 - iy0 + 1);
  return inter / (double(a.area()) + double(b.area()) - inter);
}

// best-overlap scene object for a proposal box; -1 when nothing matches
int object_under_box(const Scene& scene, const BoundingBox& box) {
  int best = -1;
  double best_iou = 0.25;
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    double v = iou_box(scene.objects[i].box, box);
    if (v > best_iou) {
      best_iou = v;
      best = static_cast<int>(i);
    }
  }
  return best;
}

// attribute match for "<color...> <shape>" style chunks
double attr_match_score(ShapeClass shape, ColorName color, const std::string& text, double floor) {
  std::vector<std::string> toks = tokenize(text);
  std::vector<std::string> kept;
  for (const auto& w : toks)
    if (!is_stopword(w)) kept.push_back(w);
  if (kept.empty()) return floor;
  if (kept.back() != shape_name(shape)) return floor;
  for (size_t i = 0; i + 1 < kept.size(); ++i)
    if (kept[i] != color_name(color)) return floor;
  return 1.0;
}

uint64_t hash_box_text(const BoundingBox& b, const std::string& text) {
  uint64_t h = 1469598103934665603ULL;
  auto mixin = [&](uint64_t v) { h = (h ^ v) * 1099511628211ULL; };
  mixin(static_cast<uint64_t>(b.x_min));
  mixin(static_cast<uint64_t>(b.y_min));
  mixin(static_cast<uint64_t>(b.x_max));
  mixin(static_cast<uint64_t>(b.y_max));
  for (char c : text) mixin(static_cast<uint64_t>(static_cast<unsigned char>(c)));
  return h;
}

}  // namespace

double OracleScorer::score(const ImageRgb&, const BoundingBox& box, const std::string& text) {
  int idx = object_under_box(*scene_, box);
  if (idx < 0) return floor_;
  const auto& obj = scene_->objects[static_cast<size_t>(idx)];
  return attr_match_score(obj.shape, obj.color, text, floor_);
}

double NoisyScorer::score(const ImageRgb&, const BoundingBox& box, const std::string& text) {
  int idx = object_under_box(*scene_, box);
  if (idx < 0) return floor_;
  const auto& obj = scene_->objects[static_cast<size_t>(idx)];
  ShapeClass shape = obj.shape;
  ColorName color = obj.color;
  Rng rng(derive_seed(seed_, hash_box_text(box, text), 0x0153));
  if (rng.chance(confusion_)) {
    // mis-perceive one attribute
    if (rng.chance(0.5)) {
      const ColorName all[] = {ColorName::red, ColorName::green, ColorName::blue,
                               ColorName::yellow, ColorName::purple, ColorName::orange};
      color = all[rng.irange(0, 5)];
    } else {
      const ShapeClass all[] = {ShapeClass::circle, ShapeClass::square, ShapeClass::triangle,
                                ShapeClass::ellipse};
      shape = all[rng.irange(0, 3)];
    }
  }
  return attr_match_score(shape, color, text, floor_);
}

struct RemoteScorer::Impl {
  httplib::Client client;
  std::mutex mu;
  std::condition_variable cv;
  int inflight = 0;
  int max_inflight;
  Impl(const std::string& host, int port, int timeout_ms, int max_in)
      : client(host, port), max_inflight(max_in) {
    client.set_connection_timeout(0, timeout_ms * 1000);
    client.set_read_timeout(0, timeout_ms * 1000);
    client.set_write_timeout(0, timeout_ms * 1000);
  }
};

RemoteScorer::RemoteScorer(const std::string& host, int port, int timeout_ms, int max_inflight)
    : impl_(std::make_unique<Impl>(host, port, timeout_ms, max_inflight)) {}

RemoteScorer::~RemoteScorer() = default;

double RemoteScorer::score(const ImageRgb& prompted, const BoundingBox&, const std::string& text) {
  {
    std::unique_lock<std::mutex> lock(impl_->mu);
    impl_->cv.wait(lock, [&] { return impl_->inflight < impl_->max_inflight; });
    ++impl_->inflight;
  }
  struct Release {
    Impl* impl;
    ~Release() {
      std::lock_guard<std::mutex> lock(impl->mu);
      --impl->inflight;
      impl->cv.notify_one();
    }
  } release{impl_.get()};

  std::vector<uint8_t> png = encode_png(prompted);
  nlohmann::json req;
  req["image_b64"] = base64_encode(png.data(), png.size());
  req["text"] = text;
  auto res = impl_->client.Post("/score", req.dump(), "application/json");
  if (!res) throw_error(Errc::scorer, "remote scorer: request failed or timed out");
  if (res->status != 200)
    throw_error(Errc::scorer, "remote scorer: HTTP " + std::to_string(res->status));
  try {
    auto body = nlohmann::json::parse(res->body);
    double s = body.at("score");
    if (!(s >= 0.0) || !std::isfinite(s))
      throw_error(Errc::scorer, "remote scorer: negative or non-finite score");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw_error(Errc::scorer, std::string("remote scorer: bad response: ") + e.what());
  }
}

ScoreResult score_proposals(const ImageRgb& image, const ReferringExpression& expr,
                            const std::vector<Proposal>& proposals, Scorer& scorer,
                            const SparcFlags& flags, const PromptConfig& pcfg) {
  if (proposals.empty()) throw_error(Errc::run, "score_proposals: no proposals");
  ScoreResult out;

  std::vector<double> raw(proposals.size());
  std::vector<ImageRgb> prompts(proposals.size());
  for (size_t i = 0; i < proposals.size(); ++i) {
    prompts[i] = build_prompt(image, proposals[i].box, flags, pcfg);
    raw[i] = scorer.score(prompts[i], proposals[i].box, expr.subject.text());
  }

  std::vector<double> combined = raw;
  bool applied_spatial = false;
  if (expr.relation && flags.spatial && !expr.objects.empty()) {
    // reference proposal(s): scorer argmax over the object chunk text
    std::vector<const BoundingBox*> refs;
    for (const auto& chunk : expr.objects) {
      size_t best = 0;
      double best_s = -1;
      for (size_t i = 0; i < proposals.size(); ++i) {
        double s = scorer.score(prompts[i], proposals[i].box, chunk.text());
        if (s > best_s) {
          best_s = s;
          best = i;
        }
      }
      refs.push_back(&proposals[best].box);
    }
    applied_spatial = true;
    for (size_t i = 0; i < proposals.size(); ++i) {
      int pr = refs.size() > 1
                   ? spatial_prob(*expr.relation, proposals[i].box, *refs[0], refs[1])
                   : spatial_prob(*expr.relation, proposals[i].box, *refs[0]);
      combined[i] = raw[i] * pr;
    }
  }

  bool all_zero = true;
  for (double v : combined)
    if (v > 0) all_zero = false;
  if (applied_spatial && all_zero) {
    std::fprintf(stderr, "[refseg] warning: all spatial probabilities were 0; ranking by raw scores\n");
    combined = raw;
    out.fallback_raw = true;
  }

  std::vector<size_t> order(proposals.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (combined[a] != combined[b]) return combined[a] > combined[b];
    return proposals[a].id < proposals[b].id;
  });
  for (size_t i : order) out.ranked.push_back({proposals[i], combined[i]});
  return out;
}

BoundingBox zs_rec(const ImageRgb& image, const std::string& text,
                   const std::vector<Proposal>& proposals, Scorer& scorer,
                   const SparcFlags& flags, const RelationLexicon& lexicon,
                   const PromptConfig& pcfg) {
  ReferringExpression expr = parse_expression(text, lexicon);
  ScoreResult res = score_proposals(image, expr, proposals, scorer, flags, pcfg);
  return res.ranked.front().proposal.box;
}

}  // namespace refseg
