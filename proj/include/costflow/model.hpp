#ifndef COSTFLOW_MODEL_HPP
#define COSTFLOW_MODEL_HPP

#include <array>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "costflow/codec.hpp"
#include "costflow/ir.hpp"
#include "costflow/oracle.hpp"
#include "costflow/tensor.hpp"

// Segment-masked attention predictor: per-segment local encoder layers, one
// global mixing layer with control-flow-separation masks, per-metric pooling,
// autoregressive digit decoders, and a sigmoid regression baseline head.

namespace costflow {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SegmentMapMismatch : ModelError {
  SegmentMapMismatch() : ModelError("SegmentMapMismatch") {}
};
struct StructureChanged : ModelError {
  StructureChanged() : ModelError("StructureChanged: fall back to full forward") {}
};

enum class Metric { Power = 0, Area = 1, Ff = 2, Cycles = 3 };
constexpr int kNumMetrics = 4;
extern const char* const kMetricNames[kNumMetrics];

// Integer label codes: power in milli-units, area in deci-units.
long quantize_metric(Metric m, const CostVector& c);

struct ModelConfig {
  int embed_dim = 128;
  int local_layers = 2;
  int heads = 4;
  int ff_dim = 256;
  int base = 10;
  std::array<int, kNumMetrics> widths = {4, 4, 4, 6};
  int feat_width = 4;  // auxiliary feature-decoder digit width
  int vocab_size = 0;  // 0 -> filled from the process vocabulary
  int max_pos = 320;
  double temperature = 1.0;
};

struct Model {
  ModelConfig cfg;
  std::string vocab_version;
  std::map<std::string, Mat> params;

  Mat& P(const std::string& name) { return params.at(name); }
  const Mat& P(const std::string& name) const { return params.at(name); }
  long parameter_count() const;

  // Parameters updated by dynamic calibration: the global mixing layer, the
  // cycles pooling query, and the cycles digit decoder. Everything feeding
  // the static heads stays frozen so power/area/ff are bit-stable.
  bool is_cycles_path(const std::string& name) const;
};

Model init_model(const ModelConfig& cfg, uint64_t seed);

// ---------------------------------------------------------------------------

struct ModelInput {
  std::vector<int> tokens;
  SegmentMap segmap;
  std::vector<OperatorClass> classes;  // per operator
};

ModelInput make_input(const Workload& w,
                      TokenizerMode mode = TokenizerMode::Digitwise);

// Token-level mask via its segment factorization: blocked (i, j) iff one
// token lies in a Class I operator span and the other in the DATA span.
struct SeparationMask {
  int num_tokens = 0;
  std::vector<std::pair<int, int>> blocked_span_pairs;  // indices into spans
};

SeparationMask build_separation_mask(const SegmentMap& segmap,
                                     const std::vector<OperatorClass>& classes);

// Additive attention mask (0 / -1e30) including both the separation mask and
// the decoupled inter-operator blocks. Identity-free rows are untouched.
Mat additive_mask(const SegmentMap& segmap, const SeparationMask& sep,
                  bool use_masks);

// ---------------------------------------------------------------------------

struct InferResult {
  std::array<Mat, kNumMetrics> pooled;       // 1 x embed_dim each
  std::array<double, kNumMetrics> regression;  // sigmoid-normalized scalars
};

InferResult infer(const Model& m, const ModelInput& in, bool use_masks = true);

// Autoregressive next-digit distribution for one metric given its pooled
// vector; drives greedy/beam/stochastic decoding.
DigitStepFn decoder_step_fn(const Model& m, Metric metric, const Mat& pooled);

// Distribution rows along a given digit path (teacher-forced).
DigitDistribution forced_distribution(const Model& m, Metric metric,
                                      const Mat& pooled, const DigitCode& code);

struct MetricPrediction {
  long value = 0;
  double confidence = 0.0;
  double logprob = 0.0;
  std::vector<long> samples;  // present when sampling was requested
};

struct Prediction {
  std::array<MetricPrediction, kNumMetrics> metric;
  std::array<double, kNumMetrics> regression;
};

Prediction predict(const Model& m, const Workload& w,
                   const std::optional<RuntimeInput>& input, int beam_width,
                   int samples, std::mt19937_64* sample_rng = nullptr,
                   bool use_masks = true,
                   TokenizerMode mode = TokenizerMode::Digitwise);

// ---------------------------------------------------------------------------
// segment caching / incremental recompute

struct SegmentCacheEntry {
  uint64_t content_hash = 0;
  SegmentLabel label = SegmentLabel::G;
  int class_tag = -1;  // OperatorClass for OP spans, -1 otherwise
  Mat local;    // per-segment local encodings
  Mat q, k, v;  // global-layer projections
};

struct SegmentCache {
  bool valid = false;
  std::vector<SegmentCacheEntry> segs;
  // pre-softmax score blocks, per head: key (row_seg, col_seg)
  std::map<std::pair<int, int>, std::vector<Mat>> score_blocks;
  InferResult out;
};

struct RecomputeStats {
  int tokens_total = 0;
  int tokens_recomputed = 0;
  int blocks_total = 0;
  int blocks_recomputed = 0;
  double token_fraction() const {
    return tokens_total ? (double)tokens_recomputed / tokens_total : 0.0;
  }
  double block_fraction() const {
    return blocks_total ? (double)blocks_recomputed / blocks_total : 0.0;
  }
};

// Reuses cached local encodings / projections / score blocks for segments
// whose content hash is unchanged. Throws StructureChanged when the segment
// structure (count, labels, classes) differs from the cached one.
InferResult incremental_forward(const Model& m, const ModelInput& in,
                                SegmentCache* cache, RecomputeStats* stats,
                                bool use_masks = true);

// ---------------------------------------------------------------------------
// training-time tape forward

struct TapeForward {
  std::array<int, kNumMetrics> digit_logits;  // width x base matrix nodes
  std::array<int, kNumMetrics> regression;    // 1x1 nodes (sigmoid output)
  std::array<int, 6> feat_logits;             // aux feature decoders
  int static_pool_node = -1;
  int cycles_pool_node = -1;
};

// Gradients accumulate into `grads` (created on demand, keyed like params).
TapeForward forward_tape(const Model& m, const ModelInput& in, Tape& tape,
                         std::map<std::string, Mat>& grads, bool use_masks,
                         const std::array<DigitCode, kNumMetrics>& teacher,
                         const std::array<DigitCode, 6>* feat_teacher);

// Teacher-forced digit logits for one metric from an existing pooled node.
int decoder_logits_tape(const Model& m, const std::string& prefix, Tape& tape,
                        std::map<std::string, Mat>& grads, int pooled_node,
                        const DigitCode& teacher);

// ---------------------------------------------------------------------------
// checkpoints

void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

}  // namespace costflow

#endif  // COSTFLOW_MODEL_HPP
