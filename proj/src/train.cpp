#include "costflow/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

namespace costflow {

void Adam::step(Model& model, const std::map<std::string, Mat>& grads,
                const std::function<bool(const std::string&)>& filter) {
  ++t;
  double bc1 = 1.0 - std::pow(beta1, (double)t);
  double bc2 = 1.0 - std::pow(beta2, (double)t);
  for (const auto& [name, g] : grads) {
    if (filter && !filter(name)) continue;
    Mat& p = model.P(name);
    auto [it1, n1] = m1.try_emplace(name, Mat::Zero(g.rows(), g.cols()));
    auto [it2, n2] = m2.try_emplace(name, Mat::Zero(g.rows(), g.cols()));
    (void)n1;
    (void)n2;
    it1->second = beta1 * it1->second + (1.0 - beta1) * g;
    it2->second = beta2 * it2->second.array() +
                  (1.0 - beta2) * g.array().square();
    Mat mhat = it1->second / bc1;
    Mat vhat = it2->second / bc2;
    p.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
  }
}

double normalized_label(Metric m, const CostVector& c) {
  switch (m) {
    case Metric::Power: return c.power / 9.999;
    case Metric::Area: return c.area / 999.9;
    case Metric::Ff: return (double)c.ff / 9999.0;
    case Metric::Cycles: return (double)c.cycles / 999999.0;
  }
  return 0.0;
}

std::array<DigitCode, kNumMetrics> metric_teacher(const ModelConfig& cfg,
                                                  const CostVector& c) {
  std::array<DigitCode, kNumMetrics> t;
  for (int i = 0; i < kNumMetrics; ++i)
    t[i] = encode_value(quantize_metric((Metric)i, c), cfg.base, cfg.widths[i]);
  return t;
}

std::array<DigitCode, 6> feature_teacher(const ModelConfig& cfg,
                                         const FeatureVector& f) {
  long cap = 1;
  for (int j = 0; j < cfg.feat_width; ++j) cap *= cfg.base;
  --cap;
  long vals[6] = {f.module_count, f.mux_count, f.mul_count,
                  f.add_count,    f.ff_count,  f.mem_ports};
  std::array<DigitCode, 6> t;
  for (int i = 0; i < 6; ++i)
    t[i] = encode_value(std::min(vals[i], cap), cfg.base, cfg.feat_width);
  return t;
}

namespace {

// mean per-digit CE of one logits node, added to `terms`
void add_ce_terms(Tape& t, int logits_node, const DigitCode& target,
                  double weight, std::vector<int>* terms) {
  int ls = t.log_softmax_rows(logits_node);
  for (int j = 0; j < target.width; ++j)
    terms->push_back(t.neg(
        t.scale(t.pick(ls, j, target.digits[j]), weight / target.width)));
}

int mse_term(Tape& t, int pred_node, double target, double weight) {
  int diff = t.add(pred_node, t.constant(Mat::Constant(1, 1, -target)));
  return t.scale(t.mul_elem(diff, diff), weight);
}

}  // namespace

int record_loss_tape(const Model& m, const ModelInput& in, Tape& tape,
                     std::map<std::string, Mat>& grads, const TrainConfig& cfg,
                     const DatasetRecord& rec, bool train_cycles) {
  auto teacher = metric_teacher(m.cfg, rec.labels);
  std::array<DigitCode, 6> feat;
  bool use_aux =
      cfg.aux_weight > 0.0 && rec.format == RecordFormat::Reasoning;
  if (use_aux) feat = feature_teacher(m.cfg, rec.features);
  TapeForward fw = forward_tape(m, in, tape, grads, cfg.use_masks, teacher,
                                use_aux ? &feat : nullptr);
  std::vector<int> terms;
  int n_metrics = train_cycles ? kNumMetrics : kNumMetrics - 1;
  for (int i = 0; i < kNumMetrics; ++i) {
    if ((Metric)i == Metric::Cycles && !train_cycles) continue;
    add_ce_terms(tape, fw.digit_logits[i], teacher[i], 1.0 / n_metrics,
                 &terms);
    if (cfg.train_regression)
      terms.push_back(mse_term(tape, fw.regression[i],
                               normalized_label((Metric)i, rec.labels),
                               cfg.regression_weight / n_metrics));
  }
  if (use_aux)
    for (int i = 0; i < 6; ++i)
      add_ce_terms(tape, fw.feat_logits[i], feat[i], cfg.aux_weight / 6.0,
                   &terms);
  return tape.sum(terms);
}

TrainStats train_static(Model& m, const std::vector<DatasetRecord>& dataset,
                        const TrainConfig& cfg) {
  TrainStats stats;
  auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  std::vector<ModelInput> inputs;
  inputs.reserve(dataset.size());
  for (const auto& r : dataset) inputs.push_back(make_input(r.workload, cfg.mode));

  Adam opt;
  opt.lr = cfg.lr;
  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  auto clip = [&](std::map<std::string, Mat>& grads) {
    if (cfg.grad_clip <= 0) return;
    double sq = 0;
    for (auto& [k, g] : grads) sq += g.squaredNorm();
    double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip)
      for (auto& [k, g] : grads) g *= cfg.grad_clip / norm;
  };
  auto lr_at = [&](int epoch) {
    if (epoch < cfg.warmup_epochs)
      return cfg.lr * (epoch + 1) / (double)(cfg.warmup_epochs + 1);
    double prog = cfg.epochs > cfg.warmup_epochs
                      ? (double)(epoch - cfg.warmup_epochs) /
                            (cfg.epochs - cfg.warmup_epochs)
                      : 1.0;
    double lo = cfg.lr * cfg.final_lr_fraction;
    return lo + (cfg.lr - lo) * 0.5 * (1.0 + std::cos(M_PI * prog));
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.lr = lr_at(epoch);
    std::mt19937_64 rng(cfg.seed * 2654435761ull + (uint64_t)epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    long n = 0;
    std::map<std::string, Mat> grads;
    int in_batch = 0;
    for (size_t idx : order) {
      const DatasetRecord& rec = dataset[idx];
      Tape tape;
      bool train_cycles = rec.workload.input.has_value();
      int loss = record_loss_tape(m, inputs[idx], tape, grads, cfg, rec,
                                  train_cycles);
      tape.backward(loss);
      epoch_loss += tape.value(loss)(0, 0);
      ++n;
      ++stats.records_seen;
      if (++in_batch == cfg.batch_size) {
        for (auto& [k, g] : grads) g /= (double)in_batch;
        clip(grads);
        opt.step(m, grads, {});
        grads.clear();
        in_batch = 0;
      }
      if (cfg.time_budget_sec > 0 && elapsed() > cfg.time_budget_sec) {
        stats.budget_hit = true;
        break;
      }
    }
    if (in_batch > 0) {
      for (auto& [k, g] : grads) g /= (double)in_batch;
      clip(grads);
      opt.step(m, grads, {});
    }
    stats.epoch_loss.push_back(n ? epoch_loss / n : 0.0);
    if (stats.budget_hit) break;
  }
  stats.seconds = elapsed();
  return stats;
}

}  // namespace costflow
