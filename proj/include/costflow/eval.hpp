#ifndef COSTFLOW_EVAL_HPP
#define COSTFLOW_EVAL_HPP

#include <optional>
#include <string>
#include <vector>

#include "costflow/model.hpp"
#include "costflow/synth.hpp"
#include "costflow/train.hpp"

// Evaluation metrics (percentage errors, confidence correlation, edge-bin
// analysis, pass@k) plus the ablation harness.

namespace costflow {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyInput : EvalError {
  EmptyInput() : EvalError("EmptyInput") {}
};
struct ZeroVariance : EvalError {
  ZeroVariance() : EvalError("ZeroVariance") {}
};
struct WrongSampleCount : EvalError {
  WrongSampleCount() : EvalError("WrongSampleCount") {}
};

struct MapeResult {
  double mape = 0.0;     // percent
  int used = 0;          // pairs with truth > 0
  int zero_truth = 0;    // excluded pairs
};

MapeResult mape(const std::vector<double>& preds,
                const std::vector<double>& truths);
double mse(const std::vector<double>& preds, const std::vector<double>& truths);

double confidence_error_correlation(const std::vector<double>& confidences,
                                    const std::vector<double>& squared_errors);

struct EdgeErrorReport {
  double edge_mape = 0.0;
  double central_mape = 0.0;
  int edge_count = 0;
  int central_count = 0;
  bool edge_bin_empty = false;
  double p5 = 0.0, p95 = 0.0;  // training-label percentile cut points
};

// Bins defined by percentiles of the TRAINING label distribution; a held-out
// pair is "edge" when its truth lies below the 5th or above the 95th
// percentile of train_labels.
EdgeErrorReport edge_error_report(const std::vector<double>& preds,
                                  const std::vector<double>& truths,
                                  const std::vector<double>& train_labels);

struct PassAtK {
  double best_of = 0.0;    // MAPE with per-item min-error sample
  double median_of = 0.0;  // MAPE with per-item median sample
};

PassAtK pass_at_k(const std::vector<std::vector<double>>& samples_per_item,
                  const std::vector<double>& truths, int k = 5);

// ---------------------------------------------------------------------------

struct MetricEval {
  double mape = 0.0;
  double mse = 0.0;
  int n = 0;
};

struct EvalReport {
  MetricEval metric[kNumMetrics];
  std::optional<double> confidence_error_pearson;  // cycles head
  std::optional<EdgeErrorReport> edge;             // cycles head
  std::optional<PassAtK> pass5;
  // paired ablation deltas (arm MAPE − baseline MAPE), when run
  std::optional<double> delta_encoding_off;
  std::optional<double> delta_mask_off;
  std::optional<double> delta_dpo_off;
  std::optional<double> regression_edge_mape;
  std::optional<double> digit_edge_mape;
};

// Predictions for a metric across a record set (beam decode).
struct PredColumn {
  std::vector<double> preds, truths, confidences, sq_errors;
};

PredColumn predict_column(const Model& m, const std::vector<DatasetRecord>& recs,
                          Metric metric, int beam_width = 3,
                          bool use_masks = true,
                          TokenizerMode mode = TokenizerMode::Digitwise);

// Regression-head predictions denormalized back to label units.
PredColumn regression_column(const Model& m,
                             const std::vector<DatasetRecord>& recs,
                             Metric metric, bool use_masks = true);

std::string eval_report_to_json(const EvalReport& r);

struct AblationConfig {
  uint64_t seed = 0;
  int train_n = 600;
  int eval_n = 150;
  ModelConfig model;
  TrainConfig train;
};

// Trains paired arms under identical seeds/budgets and fills the deltas.
EvalReport run_ablation(const AblationConfig& cfg);

}  // namespace costflow

#endif  // COSTFLOW_EVAL_HPP
