// SPDX-License-Identifier: Apache-2.0
#include "refseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "refseg/rng.hpp"

namespace refseg {

TrainItem make_train_item(const Model& model, const SampleRecord& rec, int sample_id) {
  if (!rec.mask) throw_error(Errc::run, "make_train_item: record has no mask annotation");
  const ModelConfig& cfg = model.config();
  TrainItem it;
  it.sample_id = sample_id;
  it.scene_id = rec.scene_id;
  it.text_ids = model.vocab().encode(rec.text, cfg.max_text_len);
  ContourSequence c = sample_contour(*rec.mask, cfg.contour_points);
  it.seq = contour_to_tokens(c, cfg.canvas, cfg.canvas, cfg.bins).tokens;
  it.mask_grid = downsample_mask(*rec.mask, cfg.grid());
  return it;
}

TrainItem make_pseudo_item(const Model& model, const SampleRecord& rec, int sample_id,
                           const ContourSequence& contour) {
  const ModelConfig& cfg = model.config();
  if (static_cast<int>(contour.points.size()) != cfg.contour_points)
    throw_error(Errc::run, "make_pseudo_item: contour length does not match K");
  TrainItem it;
  it.sample_id = sample_id;
  it.scene_id = rec.scene_id;
  it.is_pseudo = true;
  it.text_ids = model.vocab().encode(rec.text, cfg.max_text_len);
  it.seq = contour_to_tokens(contour, cfg.canvas, cfg.canvas, cfg.bins).tokens;
  BinaryMask m = contour_to_mask(contour, cfg.canvas, cfg.canvas);
  it.mask_grid = downsample_mask(m, cfg.grid());
  return it;
}

namespace {

// fixed partition: determinism does not depend on the worker count
constexpr int kChunks = 4;

struct BatchSlot {
  ModelCache cache;
  nn::Mat dlogits;
  nn::Vec dmap;
  double ce = 0.0;
};

void run_chunked(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  int workers = std::min(threads, n);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  for (auto& t : pool) t.join();
}

}  // namespace

PhaseResult train_phase(Model& model, AdamW& opt, const std::vector<ImageRgb>& scene_images,
                        const std::vector<TrainItem>& items, const PhaseConfig& pc,
                        std::ostream* metrics, TrainState& state) {
  PhaseResult res;
  if (items.empty() || pc.epochs == 0) return res;
  const ModelConfig& mcfg = model.config();
  const int n = static_cast<int>(items.size());
  const int batches_per_epoch = (n + pc.batch_size - 1) / pc.batch_size;
  const int64_t total_steps = static_cast<int64_t>(batches_per_epoch) * pc.epochs;
  const int64_t warmup_steps = std::max<int64_t>(1, static_cast<int64_t>(pc.warmup_frac * total_steps));

  std::vector<int> order(items.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  std::vector<BatchSlot> slots(static_cast<size_t>(pc.batch_size));
  std::vector<Grads> chunk_grads;
  for (int i = 0; i < kChunks; ++i) chunk_grads.emplace_back(model.store());
  Grads total(model.store());

  int64_t phase_step = 0;
  for (int epoch = 0; epoch < pc.epochs; ++epoch) {
    Rng shuffle(derive_seed(pc.shuffle_seed, 0xe60c4, epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(shuffle.irange(0, (int64_t)i - 1))]);

    for (int b = 0; b < batches_per_epoch; ++b) {
      int lo = b * pc.batch_size;
      int hi = std::min(n, lo + pc.batch_size);
      int bs = hi - lo;

      // chunk boundaries are fixed by index
      std::vector<std::pair<int, int>> chunks;
      int per = (bs + kChunks - 1) / kChunks;
      for (int c = 0; c < kChunks; ++c) {
        int clo = c * per, chi = std::min(bs, (c + 1) * per);
        if (clo < chi) chunks.push_back({clo, chi});
      }

      run_chunked(static_cast<int>(chunks.size()), pc.threads, [&](int ci) {
        auto [clo, chi] = chunks[static_cast<size_t>(ci)];
        for (int s = clo; s < chi; ++s) {
          const TrainItem& it = items[static_cast<size_t>(order[static_cast<size_t>(lo + s)])];
          BatchSlot& slot = slots[static_cast<size_t>(s)];
          nn::Mat patches = patches_from_image(scene_images[static_cast<size_t>(it.scene_id)], mcfg);
          model.encode_fused(patches, it.text_ids, slot.cache, pc.disable_cross);
          model.decode_teacher(it.seq, slot.cache);
          std::vector<int> targets(it.seq.begin() + 1, it.seq.end());
          slot.ce = ce_loss(slot.cache.logits, targets);
          slot.dlogits = ce_backward(slot.cache.logits, targets);
          slot.dmap.resize(0);
        }
      });

      // group (GT vs pseudo) losses per Eq. 3 / Eq. 4
      double group_ce[2] = {0, 0}, group_total[2] = {0, 0};
      double loc_sum = 0, kl_sum = 0;
      int group_n[2] = {0, 0};
      for (int g = 0; g < 2; ++g) {
        std::vector<int> members;
        for (int s = 0; s < bs; ++s) {
          const TrainItem& it = items[static_cast<size_t>(order[static_cast<size_t>(lo + s)])];
          if ((int)it.is_pseudo == g) members.push_back(s);
        }
        group_n[g] = static_cast<int>(members.size());
        if (members.empty()) continue;
        double ce = 0;
        for (int s : members) ce += slots[static_cast<size_t>(s)].ce;
        ce /= members.size();
        group_ce[g] = ce;

        double amcr_norm = 0.0;
        if (pc.lambda > 0.0 && !pc.disable_cross) {
          std::vector<Eigen::VectorXd> a, m;
          for (int s : members) {
            a.push_back(slots[static_cast<size_t>(s)].cache.attn_map.cast<double>());
            m.push_back(items[static_cast<size_t>(order[static_cast<size_t>(lo + s)])].mask_grid);
          }
          AmcrResult ar = amcr_loss(a, m, pc.amcr, true);
          loc_sum += ar.localization;
          kl_sum += ar.kl;
          amcr_norm = ar.total / members.size();
          double w = (g == 1 && pc.gamma_active) ? pc.gamma : 1.0;
          for (size_t k = 0; k < members.size(); ++k) {
            BatchSlot& slot = slots[static_cast<size_t>(members[k])];
            slot.dmap = (w * pc.lambda / double(members.size()) * ar.grad_a[k]).cast<float>();
          }
        }
        group_total[g] = total_loss(ce, amcr_norm, pc.lambda);
        double w = (g == 1 && pc.gamma_active) ? pc.gamma : 1.0;
        for (int s : members)
          slots[static_cast<size_t>(s)].dlogits *= static_cast<float>(w / members.size());
      }

      double batch_loss;
      double logged_ce;
      if (pc.gamma_active) {
        std::optional<double> gt, ps;
        if (group_n[0] > 0) gt = group_total[0];
        if (group_n[1] > 0) ps = group_total[1];
        batch_loss = weakly_supervised_loss(gt, ps, pc.gamma, pc.gamma0, pc.gamma_max);
        logged_ce = group_ce[0] + (group_n[1] ? pc.gamma * group_ce[1] : 0.0);
      } else {
        batch_loss = group_total[0] + group_total[1];
        logged_ce = group_ce[0] + group_ce[1];
      }
      if (!std::isfinite(batch_loss)) {
        if (!pc.dump_dir.empty()) {
          std::filesystem::create_directories(pc.dump_dir);
          std::ofstream dump(std::filesystem::path(pc.dump_dir) / "diagnostic_dump.json");
          dump << "{\"step\":" << state.step << ",\"epoch\":" << epoch << ",\"batch\":" << b
               << ",\"sample_ids\":[";
          for (int s = 0; s < bs; ++s)
            dump << (s ? "," : "")
                 << items[static_cast<size_t>(order[static_cast<size_t>(lo + s)])].sample_id;
          dump << "],\"ce_gt\":" << group_ce[0] << ",\"ce_pseudo\":" << group_ce[1] << "}\n";
        }
        throw_error(Errc::run, "train_phase: loss diverged (non-finite); diagnostics dumped");
      }

      // backward, per fixed chunk, reduced in chunk order
      for (auto& g : chunk_grads) g.zero();
      run_chunked(static_cast<int>(chunks.size()), pc.threads, [&](int ci) {
        auto [clo, chi] = chunks[static_cast<size_t>(ci)];
        for (int s = clo; s < chi; ++s) {
          BatchSlot& slot = slots[static_cast<size_t>(s)];
          model.backward(slot.cache, slot.dlogits,
                         slot.dmap.size() ? slot.dmap : nn::Vec(),
                         chunk_grads[static_cast<size_t>(ci)]);
        }
      });
      total.zero();
      for (const auto& g : chunk_grads) total.add(g);

      double lr_scale = pc.lr_scale;
      if (phase_step < warmup_steps) lr_scale *= double(phase_step + 1) / double(warmup_steps);
      if (phase_step >= static_cast<int64_t>(pc.decay_at_frac * total_steps))
        lr_scale *= pc.decay_ratio;
      opt.step(model.store().data(), total.g, lr_scale);

      ++phase_step;
      ++state.step;
      ++res.steps;
      res.final_loss = batch_loss;
      if (metrics) {
        *metrics << "{\"step\":" << state.step << ",\"ce\":" << logged_ce
                 << ",\"amcr_localization\":" << loc_sum / bs << ",\"amcr_kl\":" << kl_sum
                 << ",\"total\":" << batch_loss << ",\"gamma\":" << (pc.gamma_active ? pc.gamma : 0.0)
                 << "}\n";
      }
    }
  }
  return res;
}

double evaluate_miou(Model& model, const Dataset& ds, int threads, bool disable_cross) {
  std::vector<size_t> with_gt;
  for (size_t i = 0; i < ds.records.size(); ++i)
    if (ds.records[i].annotated && ds.records[i].mask) with_gt.push_back(i);
  if (with_gt.empty()) throw_error(Errc::run, "evaluate_miou: eval set has no ground truth");

  std::vector<double> ious(with_gt.size(), 0.0);
  run_chunked(static_cast<int>(with_gt.size()), threads, [&](int k) {
    const SampleRecord& rec = ds.records[with_gt[static_cast<size_t>(k)]];
    ModelCache cache;
    auto mask = model.predict_mask(ds.images[static_cast<size_t>(rec.scene_id)], rec.text, cache,
                                   disable_cross);
    ious[static_cast<size_t>(k)] = mask ? iou_mask(*mask, *rec.mask) : 0.0;
  });
  // summation over sorted values makes the mean independent of eval order
  std::sort(ious.begin(), ious.end());
  double sum = 0;
  for (double v : ious) sum += v;
  return sum / double(ious.size());
}

}  // namespace refseg
