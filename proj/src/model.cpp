#include "costflow/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace costflow {

using nlohmann::json;

const char* const kMetricNames[kNumMetrics] = {"power", "area", "ff", "cycles"};

long quantize_metric(Metric m, const CostVector& c) {
  long v = 0;
  switch (m) {
    case Metric::Power: v = std::lround(c.power * 1000.0); break;
    case Metric::Area: v = std::lround(c.area * 10.0); break;
    case Metric::Ff: v = c.ff; break;
    case Metric::Cycles: v = c.cycles; break;
  }
  long cap = (m == Metric::Cycles) ? 999999 : 9999;
  return std::clamp(v, 0L, cap);
}

namespace {

constexpr double kMaskNegInf = -1e30;
constexpr int kNumFeatFields = 6;

std::vector<std::string> layer_param_names(const std::string& p) {
  return {p + "attn.wq", p + "attn.bq", p + "attn.wk", p + "attn.bk",
          p + "attn.wv", p + "attn.bv", p + "attn.wo", p + "attn.bo",
          p + "ln1.g",   p + "ln1.b",   p + "ln2.g",   p + "ln2.b",
          p + "ff.w1",   p + "ff.b1",   p + "ff.w2",   p + "ff.b2"};
}

}  // namespace

// ---------------------------------------------------------------------------
// init

Model init_model(const ModelConfig& cfg_in, uint64_t seed) {
  ModelConfig cfg = cfg_in;
  if (cfg.vocab_size == 0) cfg.vocab_size = vocabulary().size();
  if (cfg.embed_dim % cfg.heads != 0)
    throw ModelError("embed_dim must be divisible by heads");
  Model m;
  m.cfg = cfg;
  m.vocab_version = vocabulary().version();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.02);
  auto wmat = [&](int r, int c) {
    Mat w(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) w(i, j) = nd(rng);
    return w;
  };
  const int d = cfg.embed_dim, f = cfg.ff_dim, D = cfg.base;

  m.params["embed.tok"] = wmat(cfg.vocab_size, d);
  m.params["embed.seg"] = wmat(4, d);
  m.params["embed.pos"] = wmat(cfg.max_pos, d);

  auto add_layer = [&](const std::string& p) {
    m.params[p + "attn.wq"] = wmat(d, d);
    m.params[p + "attn.bq"] = Mat::Zero(1, d);
    m.params[p + "attn.wk"] = wmat(d, d);
    m.params[p + "attn.bk"] = Mat::Zero(1, d);
    m.params[p + "attn.wv"] = wmat(d, d);
    m.params[p + "attn.bv"] = Mat::Zero(1, d);
    m.params[p + "attn.wo"] = wmat(d, d);
    m.params[p + "attn.bo"] = Mat::Zero(1, d);
    m.params[p + "ln1.g"] = Mat::Ones(1, d);
    m.params[p + "ln1.b"] = Mat::Zero(1, d);
    m.params[p + "ln2.g"] = Mat::Ones(1, d);
    m.params[p + "ln2.b"] = Mat::Zero(1, d);
    m.params[p + "ff.w1"] = wmat(d, f);
    m.params[p + "ff.b1"] = Mat::Zero(1, f);
    m.params[p + "ff.w2"] = wmat(f, d);
    m.params[p + "ff.b2"] = Mat::Zero(1, d);
  };
  for (int l = 0; l < cfg.local_layers; ++l)
    add_layer("local" + std::to_string(l) + ".");
  add_layer("global.");

  auto add_decoder = [&](const std::string& p) {
    m.params[p + "win"] = wmat(d, d);
    m.params[p + "bin"] = Mat::Zero(1, d);
    m.params[p + "wh"] = wmat(d, d);
    m.params[p + "wx"] = wmat(d, d);
    m.params[p + "bh"] = Mat::Zero(1, d);
    m.params[p + "wout"] = wmat(d, D);
    m.params[p + "bout"] = Mat::Zero(1, D);
    m.params[p + "demb"] = wmat(D + 1, d);  // row D is the BOS embedding
  };
  for (int i = 0; i < kNumMetrics; ++i) {
    std::string name = kMetricNames[i];
    m.params["pool." + name + ".q"] = wmat(1, d);
    m.params["pool." + name + ".gate"] = Mat::Zero(1, d);
    m.params["pool." + name + ".ln.g"] = Mat::Ones(1, d);
    m.params["pool." + name + ".ln.b"] = Mat::Zero(1, d);
    add_decoder("dec." + name + ".");
    m.params["reg." + name + ".w"] = wmat(d, 1);
    m.params["reg." + name + ".b"] = Mat::Zero(1, 1);
  }
  m.params["pool.feat.q"] = wmat(1, d);
  m.params["pool.feat.gate"] = Mat::Zero(1, d);
  m.params["pool.feat.ln.g"] = Mat::Ones(1, d);
  m.params["pool.feat.ln.b"] = Mat::Zero(1, d);
  add_decoder("dec.feat.");
  m.params["feat.embed"] = wmat(kNumFeatFields, d);
  return m;
}

long Model::parameter_count() const {
  long n = 0;
  for (const auto& [k, v] : params) n += (long)v.size();
  return n;
}

bool Model::is_cycles_path(const std::string& name) const {
  return name.rfind("global.", 0) == 0 || name.rfind("pool.cycles.", 0) == 0 ||
         name.rfind("dec.cycles.", 0) == 0 || name.rfind("reg.cycles.", 0) == 0;
}

// ---------------------------------------------------------------------------
// input + masks

ModelInput make_input(const Workload& w, TokenizerMode mode) {
  ModelInput in;
  auto tk = tokenize_rendered(render_pieces(w), mode);
  in.tokens = std::move(tk.stream.tokens);
  in.segmap = std::move(tk.segmap);
  in.classes = classify_all(w);
  return in;
}

SeparationMask build_separation_mask(const SegmentMap& segmap,
                                     const std::vector<OperatorClass>& classes) {
  SeparationMask mask;
  int data_span = -1;
  for (size_t i = 0; i < segmap.spans.size(); ++i) {
    if (segmap.spans[i].label == SegmentLabel::DATA) data_span = (int)i;
    mask.num_tokens = std::max(mask.num_tokens, segmap.spans[i].token_end);
  }
  if (data_span < 0) return mask;  // blocks nothing without a DATA span
  for (size_t i = 0; i < segmap.spans.size(); ++i) {
    const SegmentSpan& s = segmap.spans[i];
    if (s.label != SegmentLabel::OP) continue;
    if (classes.at(s.op_index) == OperatorClass::ClassI)
      mask.blocked_span_pairs.push_back({(int)i, data_span});
  }
  return mask;
}

namespace {

bool spans_blocked(const SegmentMap& segmap, const SeparationMask& sep,
                   bool use_masks, int a, int b) {
  if (!use_masks || a == b) return false;
  const SegmentSpan& sa = segmap.spans[a];
  const SegmentSpan& sb = segmap.spans[b];
  // decoupled inter-operator pattern
  if (sa.label == SegmentLabel::OP && sb.label == SegmentLabel::OP) return true;
  for (const auto& [x, y] : sep.blocked_span_pairs)
    if ((x == a && y == b) || (x == b && y == a)) return true;
  return false;
}

}  // namespace

Mat additive_mask(const SegmentMap& segmap, const SeparationMask& sep,
                  bool use_masks) {
  int n = 0;
  for (const auto& s : segmap.spans) n = std::max(n, s.token_end);
  Mat m = Mat::Zero(n, n);
  if (!use_masks) return m;
  for (size_t a = 0; a < segmap.spans.size(); ++a)
    for (size_t b = 0; b < segmap.spans.size(); ++b)
      if (spans_blocked(segmap, sep, true, (int)a, (int)b)) {
        const auto& sa = segmap.spans[a];
        const auto& sb = segmap.spans[b];
        m.block(sa.token_begin, sb.token_begin, sa.token_end - sa.token_begin,
                sb.token_end - sb.token_begin)
            .setConstant(kMaskNegInf);
      }
  return m;
}

// ---------------------------------------------------------------------------
// plain-Eigen inference helpers

namespace {

Mat ln_rows(const Mat& x, const Mat& g, const Mat& b) {
  Mat mu = x.rowwise().mean();
  Mat c = x.colwise() - mu.col(0);
  Mat var = c.array().square().rowwise().mean();
  Mat inv = (var.array() + 1e-5).rsqrt();
  Mat xhat = c.array().colwise() * inv.col(0).array();
  xhat.array().rowwise() *= g.row(0).array();
  xhat.rowwise() += b.row(0);
  return xhat;
}

Mat softmax_rows_masked(Mat s, const Mat* addmask) {
  if (addmask) s += *addmask;
  Mat mx = s.rowwise().maxCoeff();
  Mat e = (s.colwise() - mx.col(0)).array().exp();
  Mat sum = e.rowwise().sum();
  return e.array().colwise() / sum.col(0).array();
}

struct LayerRef {
  const Model& m;
  std::string p;
  const Mat& P(const std::string& n) const { return m.P(p + n); }
};

Mat attention_infer(const LayerRef& L, const Mat& x, const Mat* addmask) {
  const int d = (int)x.cols(), h = L.m.cfg.heads, dk = d / h;
  Mat xn = ln_rows(x, L.P("ln1.g"), L.P("ln1.b"));
  Mat q = (xn * L.P("attn.wq")).rowwise() + L.P("attn.bq").row(0);
  Mat k = (xn * L.P("attn.wk")).rowwise() + L.P("attn.bk").row(0);
  Mat v = (xn * L.P("attn.wv")).rowwise() + L.P("attn.bv").row(0);
  Mat o(x.rows(), d);
  for (int i = 0; i < h; ++i) {
    Mat s = q.middleCols(i * dk, dk) * k.middleCols(i * dk, dk).transpose() /
            std::sqrt((double)dk);
    Mat p = softmax_rows_masked(std::move(s), addmask);
    o.middleCols(i * dk, dk) = p * v.middleCols(i * dk, dk);
  }
  Mat y = x + ((o * L.P("attn.wo")).rowwise() + L.P("attn.bo").row(0));
  Mat yn = ln_rows(y, L.P("ln2.g"), L.P("ln2.b"));
  Mat hh = ((yn * L.P("ff.w1")).rowwise() + L.P("ff.b1").row(0)).cwiseMax(0.0);
  return y + ((hh * L.P("ff.w2")).rowwise() + L.P("ff.b2").row(0));
}

Mat embed_segment(const Model& m, const ModelInput& in, const SegmentSpan& s) {
  const Mat& tok = m.P("embed.tok");
  const Mat& seg = m.P("embed.seg");
  const Mat& pos = m.P("embed.pos");
  int n = s.token_end - s.token_begin;
  Mat x(n, m.cfg.embed_dim);
  for (int i = 0; i < n; ++i) {
    int t = in.tokens[s.token_begin + i];
    x.row(i) = tok.row(t) + seg.row((int)s.label) + pos.row(i);
  }
  return x;
}

Mat local_encode_segment(const Model& m, const ModelInput& in,
                         const SegmentSpan& s) {
  Mat x = embed_segment(m, in, s);
  for (int l = 0; l < m.cfg.local_layers; ++l) {
    LayerRef L{m, "local" + std::to_string(l) + "."};
    x = attention_infer(L, x, nullptr);
  }
  return x;
}

Mat pool_infer(const Model& m, const std::string& prefix, const Mat& x) {
  const Mat& q = m.P(prefix + "q");
  Mat s = q * x.transpose() / std::sqrt((double)x.cols());
  Mat p = softmax_rows_masked(std::move(s), nullptr);
  // attention pool plus a gated column sum: the sum term gives the decoders
  // counting capacity (costs are additive over program elements)
  Mat pooled = p * x;
  pooled.array() +=
      m.P(prefix + "gate").row(0).array() * x.colwise().sum().array();
  // normalize scale so downstream tanh/sigmoid heads stay unsaturated
  return ln_rows(pooled, m.P(prefix + "ln.g"), m.P(prefix + "ln.b"));
}

double regression_infer(const Model& m, const std::string& name, const Mat& pool) {
  double z = (pool * m.P("reg." + name + ".w"))(0, 0) +
             m.P("reg." + name + ".b")(0, 0);
  return 1.0 / (1.0 + std::exp(-z));
}

int non_data_rows(const SegmentMap& segmap) {
  int n = 0;
  for (const auto& s : segmap.spans)
    if (s.label != SegmentLabel::DATA) n = std::max(n, s.token_end);
  return n;
}

void finish_infer(const Model& m, const SegmentMap& segmap, const Mat& local_all,
                  const Mat& global_out, InferResult* out) {
  int nd = non_data_rows(segmap);
  Mat static_src = local_all.topRows(nd);
  for (int i = 0; i < kNumMetrics; ++i) {
    std::string name = kMetricNames[i];
    const Mat& src = (Metric)i == Metric::Cycles ? global_out : static_src;
    out->pooled[i] = pool_infer(m, "pool." + name + ".", src);
    out->regression[i] = regression_infer(m, name, out->pooled[i]);
  }
}

}  // namespace

InferResult infer(const Model& m, const ModelInput& in, bool use_masks) {
  if (in.segmap.spans.empty() ||
      in.segmap.spans.back().token_end != (int)in.tokens.size())
    throw SegmentMapMismatch();
  std::vector<Mat> locals;
  for (const auto& s : in.segmap.spans)
    locals.push_back(local_encode_segment(m, in, s));
  Mat local_all((long)in.tokens.size(), m.cfg.embed_dim);
  long at = 0;
  for (const auto& l : locals) {
    local_all.middleRows(at, l.rows()) = l;
    at += l.rows();
  }
  SeparationMask sep = build_separation_mask(in.segmap, in.classes);
  Mat mask = additive_mask(in.segmap, sep, use_masks);
  LayerRef G{m, "global."};
  Mat global_out = attention_infer(G, local_all, &mask);
  InferResult out;
  finish_infer(m, in.segmap, local_all, global_out, &out);
  return out;
}

// ---------------------------------------------------------------------------
// digit decoding

namespace {

Mat decoder_state0(const Model& m, const std::string& p, const Mat& pooled) {
  return ((pooled * m.P(p + "win")).rowwise() + m.P(p + "bin").row(0))
      .array()
      .tanh();
}

Mat decoder_step(const Model& m, const std::string& p, const Mat& h,
                 const Mat& pooled, int prev) {
  Mat xe = m.P(p + "demb").row(prev);
  Mat z = (h * m.P(p + "wh")).rowwise() + m.P(p + "bh").row(0);
  z += xe * m.P(p + "wx");
  z += pooled * m.P(p + "win");  // context injected at every step
  return z.array().tanh();
}

std::vector<double> decoder_probs(const Model& m, const std::string& p,
                                  const Mat& h, double temperature) {
  Mat logits = (h * m.P(p + "wout")).rowwise() + m.P(p + "bout").row(0);
  logits /= temperature;
  double mx = logits.maxCoeff();
  std::vector<double> out(logits.cols());
  double sum = 0;
  for (int i = 0; i < logits.cols(); ++i) {
    out[i] = std::exp(logits(0, i) - mx);
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

}  // namespace

DigitStepFn decoder_step_fn(const Model& m, Metric metric, const Mat& pooled) {
  std::string p = "dec." + std::string(kMetricNames[(int)metric]) + ".";
  const Model* mp = &m;
  Mat pool = pooled;
  double temp = m.cfg.temperature;
  int bos = m.cfg.base;
  return [mp, p, pool, temp, bos](const std::vector<int>& prefix) {
    Mat h = decoder_state0(*mp, p, pool);
    int prev = bos;
    for (int d : prefix) {
      h = decoder_step(*mp, p, h, pool, prev);
      (void)d;
      prev = d;
    }
    h = decoder_step(*mp, p, h, pool, prev);
    return decoder_probs(*mp, p, h, temp);
  };
}

DigitDistribution forced_distribution(const Model& m, Metric metric,
                                      const Mat& pooled, const DigitCode& code) {
  DigitDistribution dist;
  dist.base = m.cfg.base;
  auto fn = decoder_step_fn(m, metric, pooled);
  std::vector<int> prefix;
  for (int j = 0; j < code.width; ++j) {
    dist.rows.push_back(fn(prefix));
    prefix.push_back(code.digits[j]);
  }
  return dist;
}

Prediction predict(const Model& m, const Workload& w,
                   const std::optional<RuntimeInput>& input, int beam_width,
                   int samples, std::mt19937_64* sample_rng, bool use_masks,
                   TokenizerMode mode) {
  Workload wr = w;
  wr.input = input;
  ModelInput in = make_input(wr, mode);
  InferResult res = infer(m, in, use_masks);
  Prediction out;
  out.regression = res.regression;
  for (int i = 0; i < kNumMetrics; ++i) {
    auto fn = decoder_step_fn(m, (Metric)i, res.pooled[i]);
    auto beam = decode_beam(fn, m.cfg.base, m.cfg.widths[i], beam_width);
    out.metric[i].value = beam[0].code.value();
    out.metric[i].confidence = beam[0].confidence;
    out.metric[i].logprob = beam[0].logprob;
    if (samples > 1 && sample_rng) {
      for (int s = 0; s < samples; ++s) {
        std::vector<int> prefix;
        for (int j = 0; j < m.cfg.widths[i]; ++j) {
          std::vector<double> probs = fn(prefix);
          double r = ((*sample_rng)() >> 11) * (1.0 / 9007199254740992.0);
          double acc = 0;
          int chosen = m.cfg.base - 1;
          for (int d = 0; d < m.cfg.base; ++d) {
            acc += probs[d];
            if (r < acc) {
              chosen = d;
              break;
            }
          }
          prefix.push_back(chosen);
        }
        DigitCode c{m.cfg.base, m.cfg.widths[i], prefix};
        out.metric[i].samples.push_back(c.value());
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// cached / incremental global attention

namespace {

uint64_t fnv_hash(const ModelInput& in, const SegmentSpan& s, int class_tag) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&](uint64_t x) {
    h ^= x;
    h *= 1099511628211ull;
  };
  mix((uint64_t)s.label);
  mix((uint64_t)(s.op_index + 1));
  mix((uint64_t)(class_tag + 1));
  for (int i = s.token_begin; i < s.token_end; ++i) mix((uint64_t)in.tokens[i]);
  return h;
}

}  // namespace

InferResult incremental_forward(const Model& m, const ModelInput& in,
                                SegmentCache* cache, RecomputeStats* stats,
                                bool use_masks) {
  const int ns = (int)in.segmap.spans.size();
  const int d = m.cfg.embed_dim, h = m.cfg.heads, dk = d / h;
  SeparationMask sep = build_separation_mask(in.segmap, in.classes);

  std::vector<int> class_tags(ns, -1);
  for (int a = 0; a < ns; ++a)
    if (in.segmap.spans[a].label == SegmentLabel::OP)
      class_tags[a] = (int)in.classes.at(in.segmap.spans[a].op_index);

  if (cache->valid) {
    if ((int)cache->segs.size() != ns) throw StructureChanged();
    // structure = ordered segment labels and operator classes
    for (int a = 0; a < ns; ++a)
      if (cache->segs[a].label != in.segmap.spans[a].label ||
          cache->segs[a].class_tag != class_tags[a])
        throw StructureChanged();
  } else {
    cache->segs.assign(ns, {});
    cache->score_blocks.clear();
  }

  std::vector<bool> changed(ns, false);
  LayerRef G{m, "global."};
  for (int a = 0; a < ns; ++a) {
    uint64_t hash = fnv_hash(in, in.segmap.spans[a], class_tags[a]);
    auto& e = cache->segs[a];
    if (!cache->valid || e.content_hash != hash) {
      changed[a] = true;
      e.content_hash = hash;
      e.label = in.segmap.spans[a].label;
      e.class_tag = class_tags[a];
      e.local = local_encode_segment(m, in, in.segmap.spans[a]);
      Mat xn = ln_rows(e.local, G.P("ln1.g"), G.P("ln1.b"));
      e.q = (xn * G.P("attn.wq")).rowwise() + G.P("attn.bq").row(0);
      e.k = (xn * G.P("attn.wk")).rowwise() + G.P("attn.bk").row(0);
      e.v = (xn * G.P("attn.wv")).rowwise() + G.P("attn.bv").row(0);
    }
    if (stats) {
      int span_tokens =
          in.segmap.spans[a].token_end - in.segmap.spans[a].token_begin;
      stats->tokens_total += span_tokens;
      if (changed[a]) stats->tokens_recomputed += span_tokens;
    }
  }

  // score blocks: recompute only rows/cols touching a changed segment
  for (int a = 0; a < ns; ++a) {
    for (int b = 0; b < ns; ++b) {
      if (stats) ++stats->blocks_total;
      if (spans_blocked(in.segmap, sep, use_masks, a, b))
        continue;  // pre-initialized to zero attention, never computed
      auto key = std::make_pair(a, b);
      bool have = cache->score_blocks.count(key) > 0;
      if (have && !changed[a] && !changed[b]) continue;
      if (stats) ++stats->blocks_recomputed;
      std::vector<Mat>& blocks = cache->score_blocks[key];
      blocks.resize(h);
      for (int i = 0; i < h; ++i)
        blocks[i] = cache->segs[a].q.middleCols(i * dk, dk) *
                    cache->segs[b].k.middleCols(i * dk, dk).transpose() /
                    std::sqrt((double)dk);
    }
  }

  // recombine softmax and values per row segment
  long n_tokens = (long)in.tokens.size();
  Mat local_all(n_tokens, d);
  for (int a = 0; a < ns; ++a)
    local_all.middleRows(in.segmap.spans[a].token_begin,
                         cache->segs[a].local.rows()) = cache->segs[a].local;

  Mat o(n_tokens, d);
  for (int a = 0; a < ns; ++a) {
    long ra = cache->segs[a].local.rows();
    std::vector<int> cols;
    for (int b = 0; b < ns; ++b)
      if (!spans_blocked(in.segmap, sep, use_masks, a, b)) cols.push_back(b);
    for (int i = 0; i < h; ++i) {
      long width = 0;
      for (int b : cols) width += cache->segs[b].local.rows();
      Mat s(ra, width);
      long at = 0;
      for (int b : cols) {
        const Mat& blk = cache->score_blocks.at({a, b})[i];
        s.middleCols(at, blk.cols()) = blk;
        at += blk.cols();
      }
      Mat p = softmax_rows_masked(std::move(s), nullptr);
      Mat vcat(width, dk);
      at = 0;
      for (int b : cols) {
        long rb = cache->segs[b].local.rows();
        vcat.middleRows(at, rb) = cache->segs[b].v.middleCols(i * dk, dk);
        at += rb;
      }
      o.block(in.segmap.spans[a].token_begin, i * dk, ra, dk) = p * vcat;
    }
  }
  Mat y = local_all + ((o * G.P("attn.wo")).rowwise() + G.P("attn.bo").row(0));
  Mat yn = ln_rows(y, G.P("ln2.g"), G.P("ln2.b"));
  Mat hh = ((yn * G.P("ff.w1")).rowwise() + G.P("ff.b1").row(0)).cwiseMax(0.0);
  Mat global_out = y + ((hh * G.P("ff.w2")).rowwise() + G.P("ff.b2").row(0));

  InferResult out;
  finish_infer(m, in.segmap, local_all, global_out, &out);
  cache->out = out;
  cache->valid = true;
  return out;
}

// ---------------------------------------------------------------------------
// tape forward (training)

namespace {

struct TapeCtx {
  Tape& tape;
  const Model& m;
  std::map<std::string, Mat>& grads;
  std::map<std::string, int> param_nodes;

  int pn(const std::string& name) {
    auto it = param_nodes.find(name);
    if (it != param_nodes.end()) return it->second;
    const Mat& v = m.P(name);
    auto [git, inserted] = grads.try_emplace(name, Mat::Zero(v.rows(), v.cols()));
    (void)inserted;
    int id = tape.param(v, &git->second);
    param_nodes[name] = id;
    return id;
  }
  Mat* gptr(const std::string& name) {
    const Mat& v = m.P(name);
    auto [git, _] = grads.try_emplace(name, Mat::Zero(v.rows(), v.cols()));
    return &git->second;
  }
};

int attention_tape(TapeCtx& c, const std::string& p, int x, int mask_node) {
  Tape& t = c.tape;
  const int d = c.m.cfg.embed_dim, h = c.m.cfg.heads, dk = d / h;
  int xn = t.layernorm_rows(x, c.pn(p + "ln1.g"), c.pn(p + "ln1.b"));
  int q = t.add_rowvec(t.matmul(xn, c.pn(p + "attn.wq")), c.pn(p + "attn.bq"));
  int k = t.add_rowvec(t.matmul(xn, c.pn(p + "attn.wk")), c.pn(p + "attn.bk"));
  int v = t.add_rowvec(t.matmul(xn, c.pn(p + "attn.wv")), c.pn(p + "attn.bv"));
  std::vector<int> heads;
  for (int i = 0; i < h; ++i) {
    int qh = t.slice_cols(q, i * dk, dk);
    int kh = t.slice_cols(k, i * dk, dk);
    int vh = t.slice_cols(v, i * dk, dk);
    int s = t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt((double)dk));
    int pr = t.softmax_rows(s, mask_node);
    heads.push_back(t.matmul(pr, vh));
  }
  int o = t.concat_cols(heads);
  int y = t.add(x, t.add_rowvec(t.matmul(o, c.pn(p + "attn.wo")),
                                c.pn(p + "attn.bo")));
  int yn = t.layernorm_rows(y, c.pn(p + "ln2.g"), c.pn(p + "ln2.b"));
  int ff = t.add_rowvec(t.matmul(yn, c.pn(p + "ff.w1")), c.pn(p + "ff.b1"));
  ff = t.relu(ff);
  ff = t.add_rowvec(t.matmul(ff, c.pn(p + "ff.w2")), c.pn(p + "ff.b2"));
  return t.add(y, ff);
}

int pool_tape(TapeCtx& c, const std::string& prefix, int x) {
  Tape& t = c.tape;
  int q = c.pn(prefix + "q");
  int s = t.scale(t.matmul_nt(q, x),
                  1.0 / std::sqrt((double)c.m.cfg.embed_dim));
  int p = t.softmax_rows(s, -1);
  int attn = t.matmul(p, x);
  int n = (int)c.tape.value(x).rows();
  int ones = t.constant(Mat::Ones(1, n));
  int colsum = t.matmul(ones, x);
  int gated = t.mul_elem(c.pn(prefix + "gate"), colsum);
  int pooled = t.add(attn, gated);
  return t.layernorm_rows(pooled, c.pn(prefix + "ln.g"), c.pn(prefix + "ln.b"));
}

int decoder_tape(TapeCtx& c, const std::string& p, int pooled,
                 const DigitCode& teacher) {
  Tape& t = c.tape;
  int hnode = t.tanh_(
      t.add_rowvec(t.matmul(pooled, c.pn(p + "win")), c.pn(p + "bin")));
  std::vector<int> logit_rows;
  int prev = c.m.cfg.base;  // BOS
  for (int j = 0; j < teacher.width; ++j) {
    int xe = t.gather_rows(c.m.P(p + "demb"), {prev}, c.gptr(p + "demb"));
    int z = t.add_rowvec(t.matmul(hnode, c.pn(p + "wh")), c.pn(p + "bh"));
    z = t.add(z, t.matmul(xe, c.pn(p + "wx")));
    z = t.add(z, t.matmul(pooled, c.pn(p + "win")));
    hnode = t.tanh_(z);
    logit_rows.push_back(
        t.add_rowvec(t.matmul(hnode, c.pn(p + "wout")), c.pn(p + "bout")));
    prev = teacher.digits[j];
  }
  return t.concat_rows(logit_rows);
}

}  // namespace

int decoder_logits_tape(const Model& m, const std::string& prefix, Tape& tape,
                        std::map<std::string, Mat>& grads, int pooled_node,
                        const DigitCode& teacher) {
  TapeCtx c{tape, m, grads, {}};
  return decoder_tape(c, prefix, pooled_node, teacher);
}

TapeForward forward_tape(const Model& m, const ModelInput& in, Tape& tape,
                         std::map<std::string, Mat>& grads, bool use_masks,
                         const std::array<DigitCode, kNumMetrics>& teacher,
                         const std::array<DigitCode, 6>* feat_teacher) {
  TapeCtx c{tape, m, grads, {}};
  Tape& t = tape;

  std::vector<int> local_nodes;
  for (const auto& s : in.segmap.spans) {
    int n = s.token_end - s.token_begin;
    std::vector<int> tok_rows(in.tokens.begin() + s.token_begin,
                              in.tokens.begin() + s.token_end);
    int xe = t.gather_rows(m.P("embed.tok"), tok_rows, c.gptr("embed.tok"));
    std::vector<int> seg_rows(n, (int)s.label);
    int se = t.gather_rows(m.P("embed.seg"), seg_rows, c.gptr("embed.seg"));
    std::vector<int> pos_rows(n);
    for (int i = 0; i < n; ++i) pos_rows[i] = i;
    int pe = t.gather_rows(m.P("embed.pos"), pos_rows, c.gptr("embed.pos"));
    int x = t.add(t.add(xe, se), pe);
    for (int l = 0; l < m.cfg.local_layers; ++l)
      x = attention_tape(c, "local" + std::to_string(l) + ".", x, -1);
    local_nodes.push_back(x);
  }
  int local_all = t.concat_rows(local_nodes);

  SeparationMask sep = build_separation_mask(in.segmap, in.classes);
  int mask_node = t.constant(additive_mask(in.segmap, sep, use_masks));
  int global_out = attention_tape(c, "global.", local_all, mask_node);

  int nd = non_data_rows(in.segmap);
  int static_src = nd == (int)in.tokens.size() ? local_all
                                               : t.slice_rows(local_all, 0, nd);

  TapeForward out;
  out.static_pool_node = -1;
  for (int i = 0; i < kNumMetrics; ++i) {
    std::string name = kMetricNames[i];
    int src = (Metric)i == Metric::Cycles ? global_out : static_src;
    int pooled = pool_tape(c, "pool." + name + ".", src);
    if ((Metric)i == Metric::Cycles)
      out.cycles_pool_node = pooled;
    else if (out.static_pool_node < 0)
      out.static_pool_node = pooled;
    out.digit_logits[i] = decoder_tape(c, "dec." + name + ".", pooled, teacher[i]);
    int z = t.add(t.matmul(pooled, c.pn("reg." + name + ".w")),
                  c.pn("reg." + name + ".b"));
    out.regression[i] = t.sigmoid(z);
  }
  if (feat_teacher) {
    int fpool = pool_tape(c, "pool.feat.", static_src);
    for (int fidx = 0; fidx < 6; ++fidx) {
      int fe = t.gather_rows(m.P("feat.embed"), {fidx}, c.gptr("feat.embed"));
      int fp = t.add(fpool, fe);
      out.feat_logits[fidx] =
          decoder_tape(c, "dec.feat.", fp, (*feat_teacher)[fidx]);
    }
  } else {
    out.feat_logits.fill(-1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints

void save_model(const Model& m, const std::string& path) {
  json hdr;
  hdr["format"] = "costflow-ckpt-1";
  hdr["vocab_version"] = m.vocab_version;
  hdr["config"] = {{"embed_dim", m.cfg.embed_dim},
                   {"local_layers", m.cfg.local_layers},
                   {"heads", m.cfg.heads},
                   {"ff_dim", m.cfg.ff_dim},
                   {"base", m.cfg.base},
                   {"widths", m.cfg.widths},
                   {"feat_width", m.cfg.feat_width},
                   {"vocab_size", m.cfg.vocab_size},
                   {"max_pos", m.cfg.max_pos},
                   {"temperature", m.cfg.temperature}};
  json tensors = json::array();
  for (const auto& [name, v] : m.params)
    tensors.push_back({{"name", name}, {"rows", v.rows()}, {"cols", v.cols()}});
  hdr["tensors"] = tensors;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ModelError("cannot write checkpoint: " + path);
  f << hdr.dump() << "\n";
  for (const auto& [name, v] : m.params)
    f.write(reinterpret_cast<const char*>(v.data()),
            (std::streamsize)(v.size() * sizeof(double)));
}

Model load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ModelError("cannot read checkpoint: " + path);
  std::string line;
  std::getline(f, line);
  json hdr = json::parse(line);
  if (hdr.at("format") != "costflow-ckpt-1")
    throw ModelError("unknown checkpoint format");
  Model m;
  m.vocab_version = hdr.at("vocab_version");
  const json& c = hdr.at("config");
  m.cfg.embed_dim = c.at("embed_dim");
  m.cfg.local_layers = c.at("local_layers");
  m.cfg.heads = c.at("heads");
  m.cfg.ff_dim = c.at("ff_dim");
  m.cfg.base = c.at("base");
  for (int i = 0; i < kNumMetrics; ++i) m.cfg.widths[i] = c.at("widths")[i];
  m.cfg.feat_width = c.at("feat_width");
  m.cfg.vocab_size = c.at("vocab_size");
  m.cfg.max_pos = c.at("max_pos");
  m.cfg.temperature = c.at("temperature");
  for (const auto& tj : hdr.at("tensors")) {
    Mat v((long)tj.at("rows"), (long)tj.at("cols"));
    f.read(reinterpret_cast<char*>(v.data()),
           (std::streamsize)(v.size() * sizeof(double)));
    m.params[tj.at("name").get<std::string>()] = std::move(v);
  }
  if (!f) throw ModelError("truncated checkpoint: " + path);
  return m;
}

}  // namespace costflow
