// SPDX-License-Identifier: Apache-2.0
#include "refseg/maskfilter.hpp"

#include <json.hpp>

namespace refseg {

const char* mvf_reason_name(MvfReason r) {
  switch (r) {
    case MvfReason::ok: return "ok";
    case MvfReason::low_dsc: return "low_dsc";
    case MvfReason::empty_mask: return "empty_mask";
    case MvfReason::parse_error: return "parse_error";
    case MvfReason::scorer_error: return "scorer_error";
  }
  return "?";
}

MvfVerdict validate_pseudo_mask(const BinaryMask& pseudo_mask, const ImageRgb& image,
                                const std::string& text, const std::vector<Proposal>& proposals,
                                Scorer& scorer, const MvfConfig& cfg,
                                const RelationLexicon& lexicon) {
  MvfVerdict v;
  try {
    v.mask_box = mask_to_box(pseudo_mask);
  } catch (const Error&) {
    v.reason = MvfReason::empty_mask;
    return v;
  }
  try {
    v.sparc_box = zs_rec(image, text, proposals, scorer, cfg.flags, lexicon, cfg.prompt);
  } catch (const Error& e) {
    v.reason = e.code() == Errc::parse ? MvfReason::parse_error : MvfReason::scorer_error;
    return v;
  }
  v.dsc = dice_box(v.mask_box, v.sparc_box);
  if (v.dsc < cfg.tau) {
    v.reason = MvfReason::low_dsc;
    return v;
  }
  v.accepted = true;
  v.reason = MvfReason::ok;
  return v;
}

std::vector<std::pair<int, ContourSequence>> resample_accepted(
    const std::vector<int>& sample_ids, const std::vector<MvfVerdict>& verdicts,
    const std::vector<BinaryMask>& masks, int k) {
  if (sample_ids.size() != verdicts.size() || sample_ids.size() != masks.size())
    throw_error(Errc::dim_mismatch, "resample_accepted: length mismatch");
  std::vector<std::pair<int, ContourSequence>> out;
  for (size_t i = 0; i < verdicts.size(); ++i) {
    if (!verdicts[i].accepted) continue;
    out.push_back({sample_ids[i], sample_contour(masks[i], k)});
  }
  return out;
}

std::string mvf_verdict_to_json(int sample_id, const MvfVerdict& v) {
  nlohmann::json j;
  j["sample_id"] = sample_id;
  j["accepted"] = v.accepted;
  j["dsc"] = v.dsc;
  j["reason"] = mvf_reason_name(v.reason);
  if (v.reason == MvfReason::ok || v.reason == MvfReason::low_dsc) {
    j["mask_box"] = {v.mask_box.x_min, v.mask_box.y_min, v.mask_box.x_max, v.mask_box.y_max};
    j["sparc_box"] = {v.sparc_box.x_min, v.sparc_box.y_min, v.sparc_box.x_max, v.sparc_box.y_max};
  }
  return j.dump();
}

}  // namespace refseg
