// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "refseg/dataset.hpp"
#include "refseg/geometry.hpp"
#include "refseg/image.hpp"
#include "refseg/relations.hpp"

namespace refseg {

// Parsed form of a referring expression; `raw` keeps the original text.
struct ReferringExpression {
  std::string raw;
  NounChunk subject;
  std::optional<RelationGroup> relation;
  std::vector<NounChunk> objects;  // one reference, two for BETWEEN
};

// Splits the expression into noun chunks and a relation keyword. Unknown
// relation words fall back to the no-relation path; a missing noun chunk is a
// parse error (Errc::parse).
ReferringExpression parse_expression(const std::string& text, const RelationLexicon& lexicon);

struct SparcFlags {
  bool red_box = true;
  bool blur = true;
  bool crop = false;
  bool spatial = true;
};

// "red_box,blur,spatial" -> flags; unknown names are a config error.
SparcFlags parse_flags(const std::string& csv);
std::string flags_to_string(const SparcFlags& f);

struct PromptConfig {
  int border_thickness = 3;  // drawn just outside the box
  double blur_sigma = 2.0;
};

// Visual prompt: red border outside the box, Gaussian blur on the background,
// or a crop of the box region. Interior pixels are never altered by
// red_box/blur. crop+red_box is rejected.
ImageRgb build_prompt(const ImageRgb& image, const BoundingBox& box, const SparcFlags& flags,
                      const PromptConfig& cfg = {});

// Region-text match oracle boundary. `box` is the unprompted proposal;
// remote implementations see only the prompted pixels.
class Scorer {
public:
  virtual ~Scorer() = default;
  virtual double score(const ImageRgb& prompted, const BoundingBox& box,
                       const std::string& text) = 0;
};

// Reads ground-truth attributes of the scene object under the box.
class OracleScorer : public Scorer {
public:
  explicit OracleScorer(const Scene& scene, double floor = 0.05)
      : scene_(&scene), floor_(floor) {}
  double score(const ImageRgb&, const BoundingBox& box, const std::string& text) override;

private:
  const Scene* scene_;
  double floor_;
};

// Oracle plus a seeded chance of mis-perceiving the object attributes;
// deterministic for a given (seed, box, text).
class NoisyScorer : public Scorer {
public:
  NoisyScorer(const Scene& scene, double confusion, uint64_t seed, double floor = 0.05)
      : scene_(&scene), confusion_(confusion), seed_(seed), floor_(floor) {}
  double score(const ImageRgb&, const BoundingBox& box, const std::string& text) override;

private:
  const Scene* scene_;
  double confusion_;
  uint64_t seed_;
  double floor_;
};

// HTTP scorer: POST /score {"image_b64": <png>, "text": ...} -> {"score": x}.
// Failures surface as Errc::scorer; callers treat them as per-sample filter
// failures. Concurrent use is bounded by max_inflight.
class RemoteScorer : public Scorer {
public:
  RemoteScorer(const std::string& host, int port, int timeout_ms = 2000, int max_inflight = 4);
  ~RemoteScorer() override;
  double score(const ImageRgb& prompted, const BoundingBox& box, const std::string& text) override;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct ScoredProposal {
  Proposal proposal;
  double score = 0.0;
};

struct ScoreResult {
  std::vector<ScoredProposal> ranked;  // descending score, ties by lower id
  bool fallback_raw = false;           // all spatial probabilities were zero
};

// Scores each proposal's prompted image against the subject chunk, selects
// the reference proposal(s) by scorer argmax over the object chunk(s), and
// multiplies in the binary spatial predicate when a relation is present.
ScoreResult score_proposals(const ImageRgb& image, const ReferringExpression& expr,
                            const std::vector<Proposal>& proposals, Scorer& scorer,
                            const SparcFlags& flags, const PromptConfig& pcfg = {});

// parse -> score -> top-1 box
BoundingBox zs_rec(const ImageRgb& image, const std::string& text,
                   const std::vector<Proposal>& proposals, Scorer& scorer,
                   const SparcFlags& flags, const RelationLexicon& lexicon,
                   const PromptConfig& pcfg = {});

}  // namespace refseg
