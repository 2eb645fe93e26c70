// SPDX-License-Identifier: Apache-2.0
#include "refseg/config.hpp"

#include <cmath>
#include <fstream>

using nlohmann::json;

namespace refseg {

double gamma_at(const GammaSchedule& s, int round) {
  if (round < 0 || round >= s.rounds)
    throw_error(Errc::run, "gamma_at: round out of range");
  if (s.rounds == 1) return s.gamma_max;
  double t = double(round) / double(s.rounds - 1);
  switch (s.kind) {
    case GammaSchedule::Kind::linear:
      return s.gamma0 + t * (s.gamma_max - s.gamma0);
    case GammaSchedule::Kind::step:
      return round == s.rounds - 1 ? s.gamma_max : s.gamma0;
    case GammaSchedule::Kind::cosine:
      return s.gamma0 + (s.gamma_max - s.gamma0) * 0.5 * (1.0 - std::cos(M_PI * t));
  }
  return s.gamma_max;
}

int default_rounds_for_label_rate(double x_percent) { return x_percent <= 10.0 ? 7 : 4; }

void RunConfig::validate() const {
  if (!(label_rate > 0.0) || label_rate > 100.0)
    throw_error(Errc::config, "run config: label_rate must be in (0, 100]");
  if (batch_size < 1 || epochs_initial < 0 || epochs_round < 0)
    throw_error(Errc::config, "run config: bad batch/epoch settings");
  if (schedule.rounds < 1) throw_error(Errc::config, "run config: rounds must be >= 1");
  if (schedule.gamma0 > schedule.gamma_max)
    throw_error(Errc::config, "run config: gamma0 must not exceed gamma_max");
  if (mvf.tau < 0.0 || mvf.tau > 1.0) throw_error(Errc::config, "run config: tau must be in [0,1]");
  if (loss.psi < 0 || loss.lambda < 0 || !(loss.rho > 0.0 && loss.rho < 1.0))
    throw_error(Errc::config, "run config: psi,lambda >= 0 and 0 < rho < 1");
  if (threads < 1) throw_error(Errc::config, "run config: threads must be >= 1");
  if (train_dir.empty() && train_scenes < 1)
    throw_error(Errc::config, "run config: train_scenes must be >= 1");
  model.validate();
  if (gen.canvas != model.canvas)
    throw_error(Errc::config, "run config: generator canvas must match model canvas");
}

namespace {

json gen_to_json(const GenConfig& c) {
  json j;
  j["canvas"] = c.canvas;
  j["min_objects"] = c.min_objects;
  j["max_objects"] = c.max_objects;
  j["min_radius"] = c.min_radius;
  j["max_radius"] = c.max_radius;
  j["distractor_prob"] = c.distractor_prob;
  j["max_expressions"] = c.max_expressions;
  j["contour_points"] = c.contour_points;
  return j;
}

void gen_from_json(const json& j, GenConfig& c) {
  c.canvas = j.value("canvas", c.canvas);
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.min_radius = j.value("min_radius", c.min_radius);
  c.max_radius = j.value("max_radius", c.max_radius);
  c.distractor_prob = j.value("distractor_prob", c.distractor_prob);
  c.max_expressions = j.value("max_expressions", c.max_expressions);
  c.contour_points = j.value("contour_points", c.contour_points);
}

const char* schedule_kind_name(GammaSchedule::Kind k) {
  switch (k) {
    case GammaSchedule::Kind::linear: return "linear";
    case GammaSchedule::Kind::step: return "step";
    case GammaSchedule::Kind::cosine: return "cosine";
  }
  return "linear";
}

GammaSchedule::Kind schedule_kind_from(const std::string& s) {
  if (s == "linear") return GammaSchedule::Kind::linear;
  if (s == "step") return GammaSchedule::Kind::step;
  if (s == "cosine") return GammaSchedule::Kind::cosine;
  throw_error(Errc::config, "unknown gamma schedule kind: " + s);
}

const char* scorer_kind_name(ScorerSpec::Kind k) {
  switch (k) {
    case ScorerSpec::Kind::oracle: return "oracle";
    case ScorerSpec::Kind::noisy: return "noisy";
    case ScorerSpec::Kind::remote: return "remote";
  }
  return "noisy";
}

ScorerSpec::Kind scorer_kind_from(const std::string& s) {
  if (s == "oracle") return ScorerSpec::Kind::oracle;
  if (s == "noisy") return ScorerSpec::Kind::noisy;
  if (s == "remote") return ScorerSpec::Kind::remote;
  throw_error(Errc::config, "unknown scorer kind: " + s);
}

}  // namespace

json run_config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["label_rate"] = c.label_rate;
  j["train_dir"] = c.train_dir;
  j["eval_dir"] = c.eval_dir;
  j["train_scenes"] = c.train_scenes;
  j["eval_scenes"] = c.eval_scenes;
  j["gen"] = gen_to_json(c.gen);
  j["model"] = {{"canvas", c.model.canvas},
                {"patch", c.model.patch},
                {"embed_dim", c.model.embed_dim},
                {"heads", c.model.heads},
                {"img_layers", c.model.img_layers},
                {"text_layers", c.model.text_layers},
                {"dec_layers", c.model.dec_layers},
                {"ffn_mult", c.model.ffn_mult},
                {"bins", c.model.bins},
                {"contour_points", c.model.contour_points},
                {"max_text_len", c.model.max_text_len}};
  j["loss"] = {{"psi", c.loss.psi},       {"lambda", c.loss.lambda}, {"rho", c.loss.rho},
               {"temp", c.loss.temp},     {"hist_bins", c.loss.hist_bins},
               {"eps", c.loss.eps}};
  j["optim"] = {{"lr", c.optim.lr},
                {"beta1", c.optim.beta1},
                {"beta2", c.optim.beta2},
                {"eps", c.optim.eps},
                {"weight_decay", c.optim.weight_decay}};
  j["batch_size"] = c.batch_size;
  j["epochs_initial"] = c.epochs_initial;
  j["epochs_round"] = c.epochs_round;
  j["warmup_frac"] = c.warmup_frac;
  j["decay_at_frac"] = c.decay_at_frac;
  j["decay_ratio"] = c.decay_ratio;
  j["schedule"] = {{"gamma0", c.schedule.gamma0},
                   {"gamma_max", c.schedule.gamma_max},
                   {"rounds", c.schedule.rounds},
                   {"kind", schedule_kind_name(c.schedule.kind)}};
  j["mvf"] = {{"tau", c.mvf.tau},
              {"contour_points", c.mvf.contour_points},
              {"flags", flags_to_string(c.mvf.flags)},
              {"border_thickness", c.mvf.prompt.border_thickness},
              {"blur_sigma", c.mvf.prompt.blur_sigma}};
  j["proposals"] = {{"jitter_frac", c.proposals.jitter_frac}, {"distractors", c.proposals.distractors}};
  j["scorer"] = {{"kind", scorer_kind_name(c.scorer.kind)},
                 {"floor", c.scorer.floor},
                 {"confusion", c.scorer.confusion},
                 {"host", c.scorer.host},
                 {"port", c.scorer.port},
                 {"timeout_ms", c.scorer.timeout_ms},
                 {"max_inflight", c.scorer.max_inflight}};
  j["use_mvf"] = c.use_mvf;
  j["disable_cross"] = c.disable_cross;
  j["threads"] = c.threads;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.label_rate = j.value("label_rate", c.label_rate);
    c.train_dir = j.value("train_dir", c.train_dir);
    c.eval_dir = j.value("eval_dir", c.eval_dir);
    c.train_scenes = j.value("train_scenes", c.train_scenes);
    c.eval_scenes = j.value("eval_scenes", c.eval_scenes);
    if (j.contains("gen")) gen_from_json(j["gen"], c.gen);
    if (j.contains("model")) {
      const auto& m = j["model"];
      c.model.canvas = m.value("canvas", c.model.canvas);
      c.model.patch = m.value("patch", c.model.patch);
      c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
      c.model.heads = m.value("heads", c.model.heads);
      c.model.img_layers = m.value("img_layers", c.model.img_layers);
      c.model.text_layers = m.value("text_layers", c.model.text_layers);
      c.model.dec_layers = m.value("dec_layers", c.model.dec_layers);
      c.model.ffn_mult = m.value("ffn_mult", c.model.ffn_mult);
      c.model.bins = m.value("bins", c.model.bins);
      c.model.contour_points = m.value("contour_points", c.model.contour_points);
      c.model.max_text_len = m.value("max_text_len", c.model.max_text_len);
    }
    if (j.contains("loss")) {
      const auto& l = j["loss"];
      c.loss.psi = l.value("psi", c.loss.psi);
      c.loss.lambda = l.value("lambda", c.loss.lambda);
      c.loss.rho = l.value("rho", c.loss.rho);
      c.loss.temp = l.value("temp", c.loss.temp);
      c.loss.hist_bins = l.value("hist_bins", c.loss.hist_bins);
      c.loss.eps = l.value("eps", c.loss.eps);
    }
    if (j.contains("optim")) {
      const auto& o = j["optim"];
      c.optim.lr = o.value("lr", c.optim.lr);
      c.optim.beta1 = o.value("beta1", c.optim.beta1);
      c.optim.beta2 = o.value("beta2", c.optim.beta2);
      c.optim.eps = o.value("eps", c.optim.eps);
      c.optim.weight_decay = o.value("weight_decay", c.optim.weight_decay);
    }
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs_initial = j.value("epochs_initial", c.epochs_initial);
    c.epochs_round = j.value("epochs_round", c.epochs_round);
    c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
    c.decay_at_frac = j.value("decay_at_frac", c.decay_at_frac);
    c.decay_ratio = j.value("decay_ratio", c.decay_ratio);
    c.schedule.rounds = default_rounds_for_label_rate(c.label_rate);
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      c.schedule.gamma0 = s.value("gamma0", c.schedule.gamma0);
      c.schedule.gamma_max = s.value("gamma_max", c.schedule.gamma_max);
      c.schedule.rounds = s.value("rounds", c.schedule.rounds);
      if (s.contains("kind")) c.schedule.kind = schedule_kind_from(s["kind"]);
    }
    if (j.contains("mvf")) {
      const auto& m = j["mvf"];
      c.mvf.tau = m.value("tau", c.mvf.tau);
      c.mvf.contour_points = m.value("contour_points", c.mvf.contour_points);
      if (m.contains("flags")) c.mvf.flags = parse_flags(m["flags"]);
      c.mvf.prompt.border_thickness = m.value("border_thickness", c.mvf.prompt.border_thickness);
      c.mvf.prompt.blur_sigma = m.value("blur_sigma", c.mvf.prompt.blur_sigma);
    }
    if (j.contains("proposals")) {
      c.proposals.jitter_frac = j["proposals"].value("jitter_frac", c.proposals.jitter_frac);
      c.proposals.distractors = j["proposals"].value("distractors", c.proposals.distractors);
    }
    if (j.contains("scorer")) {
      const auto& s = j["scorer"];
      if (s.contains("kind")) c.scorer.kind = scorer_kind_from(s["kind"]);
      c.scorer.floor = s.value("floor", c.scorer.floor);
      c.scorer.confusion = s.value("confusion", c.scorer.confusion);
      c.scorer.host = s.value("host", c.scorer.host);
      c.scorer.port = s.value("port", c.scorer.port);
      c.scorer.timeout_ms = s.value("timeout_ms", c.scorer.timeout_ms);
      c.scorer.max_inflight = s.value("max_inflight", c.scorer.max_inflight);
    }
    c.use_mvf = j.value("use_mvf", c.use_mvf);
    c.disable_cross = j.value("disable_cross", c.disable_cross);
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw_error(Errc::config, std::string("run config: ") + e.what());
  }
  // keep MVF resampling and dataset contours aligned with the model K
  c.mvf.contour_points = c.model.contour_points;
  c.gen.contour_points = c.model.contour_points;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw_error(Errc::config, "cannot open config file " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw_error(Errc::config, "config parse error in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

uint64_t config_hash(const RunConfig& c) {
  std::string s = run_config_to_json(c).dump();
  uint64_t h = 1469598103934665603ULL;
  for (char ch : s) h = (h ^ static_cast<uint64_t>(static_cast<unsigned char>(ch))) * 1099511628211ULL;
  return h;
}

}  // namespace refseg
