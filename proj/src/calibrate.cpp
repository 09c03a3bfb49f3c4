#include "costflow/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "costflow/eval.hpp"

namespace costflow {

void ReplayBuffer::push(PreferenceTriplet t) {
  window_.push_back(std::move(t));
  if ((int)window_.size() > capacity_)
    window_.erase(window_.begin(), window_.begin() + (window_.size() - capacity_));
}

std::vector<const PreferenceTriplet*> ReplayBuffer::sample(
    std::mt19937_64& rng) const {
  std::vector<int> idx(window_.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = (int)i;
  std::shuffle(idx.begin(), idx.end(), rng);
  int n = std::min((int)idx.size(), minibatch_);
  std::vector<const PreferenceTriplet*> out;
  for (int i = 0; i < n; ++i) out.push_back(&window_[idx[i]]);
  return out;
}

std::optional<PreferenceTriplet> make_preference(const Model& m,
                                                 const Workload& w,
                                                 const RuntimeInput& input) {
  Workload wi = w;
  wi.input = input;
  OracleResult truth = evaluate_full(wi, input);
  Prediction p = predict(m, w, input, 3, 1, nullptr);
  long actual = std::min(truth.cost.cycles, 999999L);
  long predicted = p.metric[(int)Metric::Cycles].value;
  if (actual == predicted) return std::nullopt;
  PreferenceTriplet t;
  t.workload = wi;
  int width = m.cfg.widths[(int)Metric::Cycles];
  t.y_w = encode_value(actual, m.cfg.base, width);
  t.y_l = encode_value(predicted, m.cfg.base, width);
  return t;
}

double cycles_sequence_logprob(const Model& m, const Workload& w,
                               const DigitCode& code) {
  ModelInput in = make_input(w);
  InferResult res = infer(m, in);
  DigitStepFn fn =
      decoder_step_fn(m, Metric::Cycles, res.pooled[(int)Metric::Cycles]);
  return sequence_logprob(path_probs(fn, code));
}

namespace {

// sum over positions of log-softmax picked at the code's digits
int logprob_node(Tape& t, int logits_node, const DigitCode& code) {
  int ls = t.log_softmax_rows(logits_node);
  std::vector<int> terms;
  for (int j = 0; j < code.width; ++j)
    terms.push_back(t.pick(ls, j, code.digits[j]));
  return t.sum(terms);
}

}  // namespace

DpoResult dpo_loss(const Model& m, const Model& ref,
                   const PreferenceTriplet& triplet, double beta,
                   std::map<std::string, Mat>* grads) {
  const Workload& w = triplet.workload;
  double ref_w = cycles_sequence_logprob(ref, w, triplet.y_w);
  double ref_l = cycles_sequence_logprob(ref, w, triplet.y_l);

  ModelInput in = make_input(w);
  Tape tape;
  std::map<std::string, Mat> local_grads;
  std::map<std::string, Mat>& g = grads ? *grads : local_grads;
  std::array<DigitCode, kNumMetrics> teacher;
  for (int i = 0; i < kNumMetrics; ++i)
    teacher[i] = (Metric)i == Metric::Cycles
                     ? triplet.y_w
                     : encode_value(0, m.cfg.base, m.cfg.widths[i]);
  TapeForward fw = forward_tape(m, in, tape, g, true, teacher, nullptr);
  int lw = logprob_node(tape, fw.digit_logits[(int)Metric::Cycles], triplet.y_w);
  int ll_logits = decoder_logits_tape(m, "dec.cycles.", tape, g,
                                      fw.cycles_pool_node, triplet.y_l);
  int ll = logprob_node(tape, ll_logits, triplet.y_l);
  // Δ = (lw − ref_w) − (ll − ref_l)
  int delta = tape.sum({lw, tape.neg(ll),
                        tape.constant(Mat::Constant(1, 1, ref_l - ref_w))});
  int loss = tape.softplus(tape.scale(delta, -beta));
  tape.backward(loss);

  // only the cycles pathway is calibrated; drop grads of frozen parameters
  if (grads)
    for (auto it = grads->begin(); it != grads->end();)
      it = m.is_cycles_path(it->first) ? std::next(it) : grads->erase(it);

  DpoResult r;
  r.loss = tape.value(loss)(0, 0);
  r.margin = tape.value(delta)(0, 0);
  r.logp_w = tape.value(lw)(0, 0);
  r.logp_l = tape.value(ll)(0, 0);
  return r;
}

std::string CalibrateTrace::to_text() const {
  std::ostringstream os;
  os << "iteration\tbuffer\tminibatch_loss\theldout_mape\n";
  for (const auto& p : points)
    os << p.iteration << "\t" << p.buffer_size << "\t" << p.minibatch_loss
       << "\t" << p.heldout_mape << "\n";
  return os.str();
}

namespace {

double heldout_cycles_mape(const Model& m,
                           const std::vector<DatasetRecord>& heldout) {
  PredColumn c = predict_column(m, heldout, Metric::Cycles);
  return mape(c.preds, c.truths).mape;
}

}  // namespace

CalibrateTrace calibrate_loop(
    Model& m, const std::vector<std::pair<Workload, RuntimeInput>>& stream,
    const std::vector<DatasetRecord>& heldout, const CalibrateConfig& cfg) {
  if (stream.empty()) throw EmptyStream();
  Model ref = m;
  ReplayBuffer buffer(cfg.buffer_capacity, cfg.minibatch);
  Adam opt;
  opt.lr = cfg.lr;
  std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ull + 1);
  auto filter = [&m](const std::string& name) { return m.is_cycles_path(name); };

  CalibrateTrace trace;
  trace.points.push_back({0, 0, 0.0, heldout_cycles_mape(m, heldout)});

  int next = 0;
  for (int it = 1; it <= cfg.iterations; ++it) {
    for (int d = 0; d < std::max(1, cfg.draws_per_iteration); ++d) {
      const auto& [w, input] = stream[next++ % stream.size()];
      auto triplet = make_preference(m, w, input);
      if (triplet) buffer.push(*triplet);
    }
    double last_loss = 0.0;
    if (buffer.size() > 0) {
      for (int u = 0; u < cfg.updates_per_iteration; ++u) {
        auto batch = buffer.sample(rng);
        std::map<std::string, Mat> grads;
        double mean_loss = 0.0;
        for (const auto* t : batch) {
          DpoResult r = dpo_loss(m, ref, *t, cfg.beta, &grads);
          mean_loss += r.loss;
        }
        mean_loss /= batch.size();
        for (auto& [k, gmat] : grads) gmat /= (double)batch.size();
        opt.step(m, grads, filter);
        last_loss = mean_loss;
      }
    }
    if (cfg.refresh_ref_every > 0 && it % cfg.refresh_ref_every == 0) ref = m;
    trace.points.push_back(
        {it, buffer.size(), last_loss, heldout_cycles_mape(m, heldout)});
  }
  return trace;
}

}  // namespace costflow
