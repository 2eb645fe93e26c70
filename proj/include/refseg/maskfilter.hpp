// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "refseg/geometry.hpp"
#include "refseg/zsrec.hpp"

namespace refseg {

struct MvfConfig {
  double tau = 0.1;        // reject when DSC < tau (strictly less)
  int contour_points = 16; // resample count for accepted masks
  SparcFlags flags;
  PromptConfig prompt;
};

enum class MvfReason { ok, low_dsc, empty_mask, parse_error, scorer_error };

const char* mvf_reason_name(MvfReason r);

struct MvfVerdict {
  bool accepted = false;
  double dsc = 0.0;
  BoundingBox mask_box;
  BoundingBox sparc_box;
  MvfReason reason = MvfReason::empty_mask;
};

// Box-vs-box Dice agreement between the decoded mask and the zero-shot box.
// Component failures become rejecting verdicts, never exceptions: one bad
// sample must not abort a labeling round.
MvfVerdict validate_pseudo_mask(const BinaryMask& pseudo_mask, const ImageRgb& image,
                                const std::string& text, const std::vector<Proposal>& proposals,
                                Scorer& scorer, const MvfConfig& cfg,
                                const RelationLexicon& lexicon);

// Contours resampled from the accepted masks only; the pseudo-label payload.
std::vector<std::pair<int, ContourSequence>> resample_accepted(
    const std::vector<int>& sample_ids, const std::vector<MvfVerdict>& verdicts,
    const std::vector<BinaryMask>& masks, int k);

std::string mvf_verdict_to_json(int sample_id, const MvfVerdict& v);

}  // namespace refseg
