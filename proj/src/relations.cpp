// SPDX-License-Identifier: Apache-2.0
#include "refseg/relations.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace refseg {

const char* relation_name(RelationGroup g) {
  switch (g) {
    case RelationGroup::RIGHT: return "RIGHT";
    case RelationGroup::LEFT: return "LEFT";
    case RelationGroup::SMALLER: return "SMALLER";
    case RelationGroup::BIGGER: return "BIGGER";
    case RelationGroup::BETWEEN: return "BETWEEN";
    case RelationGroup::INSIDE: return "INSIDE";
    case RelationGroup::ABOVE: return "ABOVE";
    case RelationGroup::BELOW: return "BELOW";
    case RelationGroup::BEHIND: return "BEHIND";
    case RelationGroup::FRONT: return "FRONT";
  }
  return "?";
}

std::optional<RelationGroup> relation_from_name(const std::string& name) {
  static const std::pair<const char*, RelationGroup> table[] = {
      {"RIGHT", RelationGroup::RIGHT},     {"LEFT", RelationGroup::LEFT},
      {"SMALLER", RelationGroup::SMALLER}, {"BIGGER", RelationGroup::BIGGER},
      {"BETWEEN", RelationGroup::BETWEEN}, {"INSIDE", RelationGroup::INSIDE},
      {"ABOVE", RelationGroup::ABOVE},     {"BELOW", RelationGroup::BELOW},
      {"BEHIND", RelationGroup::BEHIND},   {"FRONT", RelationGroup::FRONT}};
  for (const auto& [n, g] : table)
    if (name == n) return g;
  return std::nullopt;
}

RelationLexicon::RelationLexicon() {
  auto add = [&](RelationGroup g, std::initializer_list<const char*> words) {
    for (const char* w : words) entries_.push_back({w, g});
  };
  add(RelationGroup::RIGHT, {"right", "east"});
  add(RelationGroup::LEFT, {"left", "west"});
  add(RelationGroup::SMALLER, {"smaller", "tinier", "further"});
  add(RelationGroup::BIGGER, {"bigger", "larger", "closer"});
  add(RelationGroup::BETWEEN, {"between"});
  add(RelationGroup::INSIDE, {"within", "inside"});
  add(RelationGroup::ABOVE, {"above", "north", "top"});
  add(RelationGroup::BELOW, {"below", "under", "south"});
  add(RelationGroup::BEHIND, {"back", "behind"});
  add(RelationGroup::FRONT, {"front"});
}

std::optional<RelationGroup> RelationLexicon::lookup(const std::string& word) const {
  std::string lower(word);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  for (const auto& [w, g] : entries_)
    if (w == lower) return g;
  return std::nullopt;
}

std::string NounChunk::text() const {
  std::string s;
  for (const auto& a : attrs) {
    s += a;
    s += ' ';
  }
  s += noun;
  return s;
}

int spatial_prob(RelationGroup rel, const BoundingBox& x, const BoundingBox& y,
                 const BoundingBox* third) {
  switch (rel) {
    case RelationGroup::LEFT:
      return x.cx() < y.cx() ? 1 : 0;
    case RelationGroup::RIGHT:
      return x.cx() > y.cx() ? 1 : 0;
    case RelationGroup::ABOVE:
      return x.cy() < y.cy() ? 1 : 0;  // y grows downward
    case RelationGroup::BELOW:
      return x.cy() > y.cy() ? 1 : 0;
    case RelationGroup::SMALLER:
    case RelationGroup::BEHIND:  // 2D proxy: further-away objects look smaller
      return x.area() < y.area() ? 1 : 0;
    case RelationGroup::BIGGER:
    case RelationGroup::FRONT:
      return x.area() > y.area() ? 1 : 0;
    case RelationGroup::INSIDE:
      return y.contains(x) ? 1 : 0;
    case RelationGroup::BETWEEN: {
      if (!third) return 0;
      const double slack = 5.0;
      double lox = std::min(y.cx(), third->cx()) - slack;
      double hix = std::max(y.cx(), third->cx()) + slack;
      double loy = std::min(y.cy(), third->cy()) - slack;
      double hiy = std::max(y.cy(), third->cy()) + slack;
      return (x.cx() >= lox && x.cx() <= hix && x.cy() >= loy && x.cy() <= hiy) ? 1 : 0;
    }
  }
  return 0;
}

}  // namespace refseg
