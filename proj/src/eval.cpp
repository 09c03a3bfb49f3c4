#include "costflow/eval.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace costflow {

using nlohmann::json;

MapeResult mape(const std::vector<double>& preds,
                const std::vector<double>& truths) {
  if (preds.empty() || preds.size() != truths.size()) throw EmptyInput();
  MapeResult r;
  double acc = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (truths[i] <= 0.0) {
      ++r.zero_truth;
      continue;
    }
    acc += std::abs(preds[i] - truths[i]) / truths[i];
    ++r.used;
  }
  if (r.used == 0) throw EmptyInput();
  r.mape = 100.0 * acc / r.used;
  return r;
}

double mse(const std::vector<double>& preds, const std::vector<double>& truths) {
  if (preds.empty() || preds.size() != truths.size()) throw EmptyInput();
  double acc = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    double d = preds[i] - truths[i];
    acc += d * d;
  }
  return acc / preds.size();
}

double confidence_error_correlation(const std::vector<double>& confidences,
                                    const std::vector<double>& squared_errors) {
  size_t n = confidences.size();
  if (n < 3 || squared_errors.size() != n) throw EmptyInput();
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += confidences[i];
    my += squared_errors[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    double dx = confidences[i] - mx, dy = squared_errors[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ZeroVariance();
  return sxy / std::sqrt(sxx * syy);
}

namespace {

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  if (v.empty()) return 0.0;
  double idx = p / 100.0 * (v.size() - 1);
  size_t lo = (size_t)idx;
  size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = idx - lo;
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

EdgeErrorReport edge_error_report(const std::vector<double>& preds,
                                  const std::vector<double>& truths,
                                  const std::vector<double>& train_labels) {
  if (preds.empty() || preds.size() != truths.size() || train_labels.empty())
    throw EmptyInput();
  EdgeErrorReport r;
  r.p5 = percentile(train_labels, 5.0);
  r.p95 = percentile(train_labels, 95.0);
  std::vector<double> ep, et, cp, ct;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (truths[i] <= 0.0) continue;
    if (truths[i] < r.p5 || truths[i] > r.p95) {
      ep.push_back(preds[i]);
      et.push_back(truths[i]);
    } else {
      cp.push_back(preds[i]);
      ct.push_back(truths[i]);
    }
  }
  r.edge_count = (int)ep.size();
  r.central_count = (int)cp.size();
  if (ep.empty())
    r.edge_bin_empty = true;
  else
    r.edge_mape = mape(ep, et).mape;
  if (!cp.empty()) r.central_mape = mape(cp, ct).mape;
  return r;
}

PassAtK pass_at_k(const std::vector<std::vector<double>>& samples_per_item,
                  const std::vector<double>& truths, int k) {
  if (samples_per_item.empty() || samples_per_item.size() != truths.size())
    throw EmptyInput();
  std::vector<double> best, med;
  for (size_t i = 0; i < truths.size(); ++i) {
    if ((int)samples_per_item[i].size() != k) throw WrongSampleCount();
    std::vector<double> s = samples_per_item[i];
    double b = s[0];
    for (double x : s)
      if (std::abs(x - truths[i]) < std::abs(b - truths[i])) b = x;
    std::sort(s.begin(), s.end());
    best.push_back(b);
    med.push_back(s[s.size() / 2]);
  }
  PassAtK r;
  r.best_of = mape(best, truths).mape;
  r.median_of = mape(med, truths).mape;
  return r;
}

// ---------------------------------------------------------------------------

namespace {

double dequantize(Metric m, long q) {
  switch (m) {
    case Metric::Power: return q / 1000.0;
    case Metric::Area: return q / 10.0;
    default: return (double)q;
  }
}

double truth_of(Metric m, const CostVector& c) {
  switch (m) {
    case Metric::Power: return c.power;
    case Metric::Area: return c.area;
    case Metric::Ff: return (double)c.ff;
    case Metric::Cycles: return (double)c.cycles;
  }
  return 0.0;
}

double denorm_cap(Metric m) {
  switch (m) {
    case Metric::Power: return 9.999;
    case Metric::Area: return 999.9;
    case Metric::Ff: return 9999.0;
    case Metric::Cycles: return 999999.0;
  }
  return 1.0;
}

}  // namespace

PredColumn predict_column(const Model& m, const std::vector<DatasetRecord>& recs,
                          Metric metric, int beam_width, bool use_masks,
                          TokenizerMode mode) {
  PredColumn col;
  for (const auto& r : recs) {
    Prediction p =
        predict(m, r.workload, r.workload.input, beam_width, 1, nullptr,
                use_masks, mode);
    double pred = dequantize(metric, p.metric[(int)metric].value);
    double truth = truth_of(metric, r.labels);
    col.preds.push_back(pred);
    col.truths.push_back(truth);
    col.confidences.push_back(p.metric[(int)metric].confidence);
    double d = pred - truth;
    col.sq_errors.push_back(d * d);
  }
  return col;
}

PredColumn regression_column(const Model& m,
                             const std::vector<DatasetRecord>& recs,
                             Metric metric, bool use_masks) {
  PredColumn col;
  for (const auto& r : recs) {
    Workload w = r.workload;
    ModelInput in = make_input(w);
    InferResult res = infer(m, in, use_masks);
    double pred = res.regression[(int)metric] * denorm_cap(metric);
    double truth = truth_of(metric, r.labels);
    col.preds.push_back(pred);
    col.truths.push_back(truth);
    col.confidences.push_back(0.0);
    double d = pred - truth;
    col.sq_errors.push_back(d * d);
  }
  return col;
}

std::string eval_report_to_json(const EvalReport& r) {
  json j;
  for (int i = 0; i < kNumMetrics; ++i)
    j["metrics"][kMetricNames[i]] = {{"mape", r.metric[i].mape},
                                     {"mse", r.metric[i].mse},
                                     {"n", r.metric[i].n}};
  auto opt = [&](const char* k, const std::optional<double>& v) {
    if (v) j[k] = *v;
  };
  opt("confidence_error_pearson", r.confidence_error_pearson);
  if (r.edge)
    j["edge"] = {{"edge_mape", r.edge->edge_mape},
                 {"central_mape", r.edge->central_mape},
                 {"edge_count", r.edge->edge_count},
                 {"central_count", r.edge->central_count},
                 {"edge_bin_empty", r.edge->edge_bin_empty},
                 {"p5", r.edge->p5},
                 {"p95", r.edge->p95}};
  if (r.pass5)
    j["pass_at_5"] = {{"best_of", r.pass5->best_of},
                      {"median_of", r.pass5->median_of}};
  opt("delta_encoding_off", r.delta_encoding_off);
  opt("delta_mask_off", r.delta_mask_off);
  opt("delta_dpo_off", r.delta_dpo_off);
  opt("regression_edge_mape", r.regression_edge_mape);
  opt("digit_edge_mape", r.digit_edge_mape);
  return j.dump(2);
}

EvalReport run_ablation(const AblationConfig& cfg) {
  GenConfig gc;
  gc.seed = cfg.seed;
  auto all = build_dataset(gc, cfg.train_n + cfg.eval_n);
  std::vector<DatasetRecord> train(all.begin(),
                                   all.end() - std::min((size_t)cfg.eval_n,
                                                        all.size()));
  std::vector<DatasetRecord> eval_set(all.end() - std::min((size_t)cfg.eval_n,
                                                           all.size()),
                                      all.end());

  auto train_arm = [&](TokenizerMode mode, bool use_masks) {
    Model m = init_model(cfg.model, cfg.seed);
    TrainConfig tc = cfg.train;
    tc.mode = mode;
    tc.use_masks = use_masks;
    train_static(m, train, tc);
    return m;
  };

  EvalReport rep;
  Model base = train_arm(TokenizerMode::Digitwise, true);
  PredColumn basec = predict_column(base, eval_set, Metric::Cycles);
  double base_mape = mape(basec.preds, basec.truths).mape;
  for (int i = 0; i < kNumMetrics; ++i) {
    PredColumn c = predict_column(base, eval_set, (Metric)i);
    rep.metric[i].mape = mape(c.preds, c.truths).mape;
    rep.metric[i].mse = mse(c.preds, c.truths);
    rep.metric[i].n = (int)c.preds.size();
  }

  {
    Model arm = train_arm(TokenizerMode::RawNumber, true);
    PredColumn c = predict_column(arm, eval_set, Metric::Cycles, 3, true,
                                  TokenizerMode::RawNumber);
    rep.delta_encoding_off = mape(c.preds, c.truths).mape - base_mape;
  }
  {
    Model arm = train_arm(TokenizerMode::Digitwise, false);
    PredColumn c = predict_column(arm, eval_set, Metric::Cycles, 3, false);
    rep.delta_mask_off = mape(c.preds, c.truths).mape - base_mape;
  }
  {
    std::vector<double> train_labels;
    for (const auto& r : train) train_labels.push_back((double)r.labels.cycles);
    PredColumn dc = predict_column(base, eval_set, Metric::Cycles);
    PredColumn rc = regression_column(base, eval_set, Metric::Cycles);
    EdgeErrorReport de = edge_error_report(dc.preds, dc.truths, train_labels);
    EdgeErrorReport re = edge_error_report(rc.preds, rc.truths, train_labels);
    rep.digit_edge_mape = de.edge_bin_empty ? 0.0 : de.edge_mape;
    rep.regression_edge_mape = re.edge_bin_empty ? 0.0 : re.edge_mape;
    rep.edge = de;
  }
  return rep;
}

}  // namespace costflow
