// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "refseg/geometry.hpp"

namespace refseg {

enum class RelationGroup { RIGHT, LEFT, SMALLER, BIGGER, BETWEEN, INSIDE, ABOVE, BELOW, BEHIND, FRONT };

const char* relation_name(RelationGroup g);
std::optional<RelationGroup> relation_from_name(const std::string& name);

// Keyword -> group lookup, case-insensitive. Groups are disjoint.
class RelationLexicon {
public:
  RelationLexicon();  // default word groups
  std::optional<RelationGroup> lookup(const std::string& word) const;
  const std::vector<std::pair<std::string, RelationGroup>>& entries() const { return entries_; }

private:
  std::vector<std::pair<std::string, RelationGroup>> entries_;
};

// An attribute list plus a head noun ("red circle" -> {red}, circle).
struct NounChunk {
  std::vector<std::string> attrs;
  std::string noun;
  bool operator==(const NounChunk&) const = default;
  std::string text() const;
};

// Parsed referring expression: subject, optional relation, reference
// object chunk(s) (two for BETWEEN).
struct ExprStructure {
  NounChunk subject;
  std::optional<RelationGroup> relation;
  std::vector<NounChunk> objects;
  bool uniquely_identifying = false;
  bool operator==(const ExprStructure&) const = default;
};

// Hard {0,1} spatial predicate on bounding boxes (image coordinates,
// y grows downward). `third` is the second reference for BETWEEN.
// Ties (equal centroids / equal areas) yield 0 for both orderings.
int spatial_prob(RelationGroup rel, const BoundingBox& x, const BoundingBox& y,
                 const BoundingBox* third = nullptr);

}  // namespace refseg
