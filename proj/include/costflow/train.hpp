#ifndef COSTFLOW_TRAIN_HPP
#define COSTFLOW_TRAIN_HPP

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "costflow/model.hpp"
#include "costflow/synth.hpp"

// Static-stage trainer: teacher-forced per-digit cross-entropy over the four
// metric decoders, optional auxiliary hardware-feature decoding for
// reasoning-format records, and an MSE arm for the regression baseline head.

namespace costflow {

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::map<std::string, Mat> m1, m2;

  // Applies one update from accumulated gradients; `filter` (when set)
  // restricts which parameters move (used by the calibration stage).
  void step(Model& model, const std::map<std::string, Mat>& grads,
            const std::function<bool(const std::string&)>& filter = {});
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 8;
  double lr = 1e-3;
  uint64_t seed = 0;
  double aux_weight = 0.25;
  bool train_regression = true;
  double regression_weight = 1.0;
  bool use_masks = true;
  TokenizerMode mode = TokenizerMode::Digitwise;
  double time_budget_sec = 0.0;  // 0 = unlimited
  int warmup_epochs = 1;         // linear ramp to lr
  double final_lr_fraction = 0.1;  // cosine decay target
  double grad_clip = 1.0;          // global-norm clip; 0 disables
};

struct TrainStats {
  std::vector<double> epoch_loss;  // mean per-record loss
  long records_seen = 0;
  double seconds = 0.0;
  bool budget_hit = false;
};

// Regression target in [0, 1]: label divided by its cap.
double normalized_label(Metric m, const CostVector& c);

// Digit teachers for a record's labels / features.
std::array<DigitCode, kNumMetrics> metric_teacher(const ModelConfig& cfg,
                                                  const CostVector& c);
std::array<DigitCode, 6> feature_teacher(const ModelConfig& cfg,
                                         const FeatureVector& f);

// Per-record loss on the tape; returns the loss node. Cycles CE included only
// when `train_cycles` (records carrying runtime inputs).
int record_loss_tape(const Model& m, const ModelInput& in, Tape& tape,
                     std::map<std::string, Mat>& grads, const TrainConfig& cfg,
                     const DatasetRecord& rec, bool train_cycles);

TrainStats train_static(Model& m, const std::vector<DatasetRecord>& dataset,
                        const TrainConfig& cfg);

}  // namespace costflow

#endif  // COSTFLOW_TRAIN_HPP
