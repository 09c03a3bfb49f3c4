#include "doctest.h"

#include <cstdio>

#include "costflow/model.hpp"
#include "costflow/synth.hpp"
#include "fixtures.hpp"

using namespace costflow;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.embed_dim = 16;
  cfg.ff_dim = 32;
  cfg.heads = 2;
  return cfg;
}

Model tiny_model(uint64_t seed = 3) { return init_model(tiny_config(), seed); }

DatasetRecord sample_record(uint64_t seed, bool class2) {
  GenConfig cfg;
  cfg.seed = seed;
  auto recs = build_dataset(cfg, 60);
  for (auto& r : recs) {
    bool has2 = false;
    for (auto c : classify_all(r.workload))
      if (c == OperatorClass::ClassII) has2 = true;
    if (has2 == class2) return r;
  }
  REQUIRE(false);
  return recs[0];
}

bool pair_blocked(const SeparationMask& m, int a, int b) {
  for (auto& [x, y] : m.blocked_span_pairs)
    if ((x == a && y == b) || (x == b && y == a)) return true;
  return false;
}

std::array<DigitCode, kNumMetrics> dummy_teachers(const Model& m) {
  std::array<DigitCode, kNumMetrics> t;
  for (int i = 0; i < kNumMetrics; ++i)
    t[i] = encode_value(1 + i, 10, m.cfg.widths[i]);
  return t;
}

// Hybrid workload: one input-independent and one input-dependent operator
// sharing a DATA span.
Workload hybrid_workload() {
  Workload w;
  w.graph.nodes = {"vadd", "vaddN"};
  w.operators = {fx::vec_add_op(),
                 fx::vec_add_op(Pragma::None, Bound::sym("N"))};
  w.operators[1].name = "vaddN";
  RuntimeInput ri;
  ri.bindings = {{"N", 10}};
  w.input = ri;
  return w;
}

}  // namespace

TEST_CASE("metric quantization respects caps and widths") {
  CostVector c{0.395, 19.5, 16, 70};
  CHECK(quantize_metric(Metric::Power, c) == 395);  // x1000
  CHECK(quantize_metric(Metric::Area, c) == 195);   // x10
  CHECK(quantize_metric(Metric::Ff, c) == 16);
  CHECK(quantize_metric(Metric::Cycles, c) == 70);
  CostVector big{99.0, 5000.0, 123456, 5000000};
  CHECK(quantize_metric(Metric::Power, big) == 9999);  // capped
  CHECK(quantize_metric(Metric::Area, big) == 9999);
  CHECK(quantize_metric(Metric::Ff, big) == 9999);
  CHECK(quantize_metric(Metric::Cycles, big) == 999999);
}

TEST_CASE("separation mask blocks input-independent OP spans from DATA") {
  Workload wboth = hybrid_workload();
  ModelInput in = make_input(wboth);
  SeparationMask m = build_separation_mask(in.segmap, classify_all(wboth));
  int c1_span = -1, c2_span = -1, d_span = -1;
  for (int s = 0; s < (int)in.segmap.spans.size(); ++s) {
    auto& sp = in.segmap.spans[s];
    if (sp.label == SegmentLabel::OP && sp.op_index == 0) c1_span = s;
    if (sp.label == SegmentLabel::OP && sp.op_index == 1) c2_span = s;
    if (sp.label == SegmentLabel::DATA) d_span = s;
  }
  REQUIRE(c1_span >= 0);
  REQUIRE(c2_span >= 0);
  REQUIRE(d_span >= 0);
  CHECK(pair_blocked(m, c1_span, d_span));   // input-independent x DATA
  CHECK(!pair_blocked(m, c2_span, d_span));  // input-dependent x DATA open
}

TEST_CASE("additive mask also decouples inter-operator attention") {
  Workload wboth = hybrid_workload();
  ModelInput in = make_input(wboth);
  SeparationMask sep = build_separation_mask(in.segmap, classify_all(wboth));
  Mat mask = additive_mask(in.segmap, sep, true);
  const SegmentSpan *op0 = nullptr, *op1 = nullptr;
  for (auto& sp : in.segmap.spans) {
    if (sp.label == SegmentLabel::OP && sp.op_index == 0) op0 = &sp;
    if (sp.label == SegmentLabel::OP && sp.op_index == 1) op1 = &sp;
  }
  REQUIRE(op0);
  REQUIRE(op1);
  CHECK(mask(op0->token_begin, op1->token_begin) < -1e20);
  CHECK(mask(op1->token_begin, op0->token_begin) < -1e20);
  CHECK(mask(op0->token_begin, op0->token_begin) == 0.0);
  Mat off = additive_mask(in.segmap, sep, false);
  CHECK(off.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("static heads are bit-exact invariant to runtime data changes") {
  Model m = tiny_model();
  DatasetRecord r = sample_record(41, true);
  Workload w = r.workload;
  REQUIRE(w.input.has_value());
  InferResult a = infer(m, make_input(w));
  for (auto& [k, v] : w.input->bindings) v += 17;
  InferResult b = infer(m, make_input(w));
  for (Metric metric : {Metric::Power, Metric::Area, Metric::Ff}) {
    const Mat& pa = a.pooled[(int)metric];
    const Mat& pb = b.pooled[(int)metric];
    CHECK((pa - pb).cwiseAbs().maxCoeff() == 0.0);  // exact, not approximate
  }
  // cycles pooling must see the data
  CHECK((a.pooled[(int)Metric::Cycles] - b.pooled[(int)Metric::Cycles])
            .cwiseAbs()
            .maxCoeff() > 0.0);
}

TEST_CASE("tape forward reproduces the plain inference path") {
  Model m = tiny_model();
  for (bool class2 : {false, true}) {
    DatasetRecord r = sample_record(42, class2);
    ModelInput in = make_input(r.workload);
    InferResult base = infer(m, in);
    Tape tape;
    std::map<std::string, Mat> grads;
    TapeForward tf =
        forward_tape(m, in, tape, grads, true, dummy_teachers(m), nullptr);
    for (int i = 0; i < kNumMetrics; ++i) {
      double diff = tape.value(tf.regression[i])(0, 0) - base.regression[i];
      CHECK(std::abs(diff) <= 1e-12);
    }
  }
}

TEST_CASE("tape gradients match finite differences through the full model") {
  ModelConfig small;
  small.embed_dim = 8;
  small.ff_dim = 16;
  small.heads = 2;
  Model m = init_model(small, 5);
  DatasetRecord r = sample_record(43, true);
  ModelInput in = make_input(r.workload);
  auto teacher = dummy_teachers(m);
  auto loss_of = [&](Model& mm, std::map<std::string, Mat>* grads) {
    Tape tape;
    std::map<std::string, Mat> local;
    TapeForward tf = forward_tape(mm, in, tape, grads ? *grads : local, true,
                                  teacher, nullptr);
    std::vector<int> parts;
    for (int i = 0; i < kNumMetrics; ++i) {
      int ls = tape.log_softmax_rows(tf.digit_logits[i]);
      for (int pos = 0; pos < teacher[i].width; ++pos)
        parts.push_back(tape.neg(tape.pick(ls, pos, teacher[i].digits[pos])));
    }
    int loss = tape.sum(parts);
    double v = tape.value(loss)(0, 0);
    if (grads) tape.backward(loss);
    return v;
  };
  std::map<std::string, Mat> grads;
  loss_of(m, &grads);
  double eps = 1e-5;
  int checked = 0;
  for (const char* name :
       {"embed.tok", "global.attn.wq", "local0.ff.w1", "dec.cycles.wh",
        "pool.power.q", "pool.cycles.ln.g"}) {
    Mat& p = m.params[name];
    REQUIRE(grads.count(name));
    for (int k = 0; k < 3; ++k) {
      int i = (k * 7) % p.rows(), j = (k * 13) % p.cols();
      double keep = p(i, j);
      p(i, j) = keep + eps;
      double up = loss_of(m, nullptr);
      p(i, j) = keep - eps;
      double dn = loss_of(m, nullptr);
      p(i, j) = keep;
      double fd = (up - dn) / (2 * eps);
      double an = grads[name](i, j);
      if (std::abs(fd) > 1e-7 || std::abs(an) > 1e-7) {
        CHECK(an == doctest::Approx(fd).epsilon(2e-3).scale(1.0));
        ++checked;
      }
    }
  }
  CHECK(checked >= 8);
}

TEST_CASE("incremental forward matches full recomputation on data edits") {
  Model m = tiny_model();
  DatasetRecord r = sample_record(44, true);
  Workload w = r.workload;
  REQUIRE(w.input.has_value());
  SegmentCache cache;
  RecomputeStats st1{};
  InferResult inc1 = incremental_forward(m, make_input(w), &cache, &st1);
  InferResult full1 = infer(m, make_input(w));
  for (int i = 0; i < kNumMetrics; ++i)
    CHECK(std::abs(inc1.regression[i] - full1.regression[i]) <= 1e-5);

  for (auto& [k, v] : w.input->bindings) v += 5;
  RecomputeStats st2{};
  InferResult inc2 = incremental_forward(m, make_input(w), &cache, &st2);
  InferResult full2 = infer(m, make_input(w));
  for (int i = 0; i < kNumMetrics; ++i)
    CHECK(std::abs(inc2.regression[i] - full2.regression[i]) <= 1e-5);
  CHECK(st2.token_fraction() <= 0.60);
  CHECK(st2.token_fraction() > 0.0);
  CHECK(st2.block_fraction() < 1.0);
}

TEST_CASE("blocked attention blocks are never materialized in the cache") {
  Model m = tiny_model();
  Workload wboth = hybrid_workload();
  ModelInput in = make_input(wboth);
  SegmentCache cache;
  incremental_forward(m, in, &cache, nullptr);
  SeparationMask mask = build_separation_mask(in.segmap, in.classes);
  for (auto& [key, blocks] : cache.score_blocks) {
    CHECK(!pair_blocked(mask, key.first, key.second));
    // inter-operator blocks are decoupled too
    auto& a = in.segmap.spans[key.first];
    auto& b = in.segmap.spans[key.second];
    CHECK(!(a.label == SegmentLabel::OP && b.label == SegmentLabel::OP &&
            a.op_index != b.op_index));
  }
}

TEST_CASE("structural edits raise StructureChanged") {
  Model m = tiny_model();
  DatasetRecord r = sample_record(45, true);
  Workload w = r.workload;
  SegmentCache cache;
  incremental_forward(m, make_input(w), &cache, nullptr);
  Workload w2 = w;
  Operator extra = fx::vec_add_op();
  extra.name = "zz_extra";
  w2.operators.push_back(extra);
  w2.graph.nodes.push_back("zz_extra");
  CHECK_THROWS_AS(incremental_forward(m, make_input(w2), &cache, nullptr),
                  StructureChanged);
  // after a fresh cache the new structure evaluates fine
  SegmentCache fresh;
  InferResult inc = incremental_forward(m, make_input(w2), &fresh, nullptr);
  InferResult full = infer(m, make_input(w2));
  for (int i = 0; i < kNumMetrics; ++i)
    CHECK(std::abs(inc.regression[i] - full.regression[i]) <= 1e-5);
}

TEST_CASE("checkpoints roundtrip bit-exactly") {
  Model m = tiny_model();
  std::string path = "model_roundtrip_tmp.bin";
  save_model(m, path);
  Model back = load_model(path);
  std::remove(path.c_str());
  CHECK(back.cfg.embed_dim == m.cfg.embed_dim);
  CHECK(back.vocab_version == m.vocab_version);
  REQUIRE(back.params.size() == m.params.size());
  for (auto& [k, v] : m.params) {
    REQUIRE(back.params.count(k));
    CHECK((back.params.at(k) - v).cwiseAbs().maxCoeff() == 0.0);
  }
  DatasetRecord r = sample_record(46, true);
  InferResult a = infer(m, make_input(r.workload));
  InferResult b = infer(back, make_input(r.workload));
  for (int i = 0; i < kNumMetrics; ++i)
    CHECK(a.regression[i] == b.regression[i]);
}

TEST_CASE("prediction exposes per-metric values with confidences") {
  Model m = tiny_model();
  DatasetRecord r = sample_record(47, true);
  std::mt19937_64 rng(1);
  Prediction p = predict(m, r.workload, r.workload.input, 3, 4, &rng);
  for (int i = 0; i < kNumMetrics; ++i) {
    CHECK(p.metric[i].confidence > 0.0);
    CHECK(p.metric[i].confidence <= 1.0);
    CHECK(p.metric[i].value >= 0);
    long cap = 1;
    for (int k = 0; k < m.cfg.widths[i]; ++k) cap *= 10;
    CHECK(p.metric[i].value < cap);
    CHECK((int)p.metric[i].samples.size() == 4);
  }
}
