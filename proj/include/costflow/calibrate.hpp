#ifndef COSTFLOW_CALIBRATE_HPP
#define COSTFLOW_CALIBRATE_HPP

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "costflow/model.hpp"
#include "costflow/synth.hpp"
#include "costflow/train.hpp"

// Online calibration of the cycles head by direct preference optimization
// against oracle feedback, with a FIFO replay buffer. Only the cycles pathway
// moves; the static heads stay bit-identical.

namespace costflow {

struct CalibrateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyStream : CalibrateError {
  EmptyStream() : CalibrateError("EmptyStream") {}
};

struct PreferenceTriplet {
  Workload workload;  // carries the runtime input in workload.input
  DigitCode y_w;      // profiled ground truth
  DigitCode y_l;      // model's (wrong) beam-1 prediction
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity = 64, int minibatch = 8)
      : capacity_(capacity), minibatch_(minibatch) {}

  void push(PreferenceTriplet t);
  // Uniform without replacement within the window; ≤ minibatch items.
  std::vector<const PreferenceTriplet*> sample(std::mt19937_64& rng) const;
  int size() const { return (int)window_.size(); }
  int capacity() const { return capacity_; }
  const PreferenceTriplet& at(int i) const { return window_[i]; }

 private:
  int capacity_;
  int minibatch_;
  std::vector<PreferenceTriplet> window_;  // oldest first
};

// Beam-1 cycles prediction vs. oracle; nullopt = Skip (already correct).
std::optional<PreferenceTriplet> make_preference(
    const Model& m, const Workload& w, const RuntimeInput& input);

struct DpoResult {
  double loss = 0.0;
  double margin = 0.0;  // Δ
  double logp_w = 0.0, logp_l = 0.0;  // under θ
};

// loss = −log σ(β·Δ); gradients (cycles pathway only) accumulate into grads.
DpoResult dpo_loss(const Model& m, const Model& ref,
                   const PreferenceTriplet& triplet, double beta,
                   std::map<std::string, Mat>* grads);

// Sequence log-probability of a digit code under the model's cycles decoder.
double cycles_sequence_logprob(const Model& m, const Workload& w,
                               const DigitCode& code);

struct CalibrateConfig {
  double beta = 0.1;
  int buffer_capacity = 64;
  int minibatch = 8;
  int iterations = 10;
  int draws_per_iteration = 8;  // profiled states pushed per outer iteration
  double lr = 1e-3;
  uint64_t seed = 0;
  int refresh_ref_every = 0;  // 0 = never
  int updates_per_iteration = 8;  // minibatch draws per outer iteration
};

struct CalibrateTrace {
  struct Point {
    int iteration = 0;  // 0 = baseline, pre-update
    int buffer_size = 0;
    double minibatch_loss = 0.0;
    double heldout_mape = 0.0;
  };
  std::vector<Point> points;
  std::string to_text() const;
};

// Per iteration: draw state → predict → profile → push triplet → sample
// minibatch → DPO update; held-out cycles MAPE recorded after each iteration.
CalibrateTrace calibrate_loop(Model& m,
                              const std::vector<std::pair<Workload, RuntimeInput>>& stream,
                              const std::vector<DatasetRecord>& heldout,
                              const CalibrateConfig& cfg);

}  // namespace costflow

#endif  // COSTFLOW_CALIBRATE_HPP
