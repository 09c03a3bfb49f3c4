#include "costflow/synth.hpp"

#include "costflow/codec.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace costflow {

using nlohmann::json;

namespace {

long rnd(Rng& rng, long lo, long hi) {  // inclusive
  return lo + (long)(rng() % (uint64_t)(hi - lo + 1));
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rnd(rng, 0, (long)v.size() - 1)];
}

double rnd01(Rng& rng) { return (rng() >> 11) * (1.0 / 9007199254740992.0); }

// -------------------------------------------------------------------------
// loop-tree walking

void for_each_loop(LoopNode& l, const std::function<void(LoopNode&)>& fn) {
  fn(l);
  for (auto& it : l.body)
    if (it.is_loop()) for_each_loop(it.loop(), fn);
}

void count_stmts_rec(const std::vector<Statement>& body, long* arr, long* tot);

void count_stmt_node(const Statement& s, long* arr, long* tot) {
  ++*tot;
  if (s.kind == StmtKind::ArrayLoad || s.kind == StmtKind::ArrayStore) ++*arr;
  if (s.kind == StmtKind::Branch) {
    count_stmts_rec(s.then_body, arr, tot);
    count_stmts_rec(s.else_body, arr, tot);
  }
}

void count_stmts_rec(const std::vector<Statement>& body, long* arr, long* tot) {
  for (const auto& s : body) count_stmt_node(s, arr, tot);
}

void count_loop_stmts(const LoopNode& l, long* arr, long* tot) {
  for (const auto& it : l.body) {
    if (it.is_loop())
      count_loop_stmts(it.loop(), arr, tot);
    else
      count_stmt_node(it.stmt(), arr, tot);
  }
}

// Cheap cycle upper bound used to reject blow-ups before interpreting.
long estimate_cycles_upper(const LoopNode& l, long sym_value, long mem_delay,
                           long lanes) {
  long body = 0;
  for (const auto& it : l.body) {
    if (it.is_loop()) {
      body += estimate_cycles_upper(it.loop(), sym_value, mem_delay, lanes);
    } else {
      long a = 0, t = 0;
      count_stmt_node(it.stmt(), &a, &t);
      body += t * std::max(mem_delay, 8L);
    }
  }
  long hi = l.upper.symbolic ? sym_value : l.upper.literal;
  long lo = l.lower.symbolic ? 0 : l.lower.literal;
  long trips = hi <= lo ? 0 : (hi - lo + l.step - 1) / l.step;
  if (l.pragma == Pragma::UnrollFull) return body;
  if (l.pragma == Pragma::ParallelFor) {
    long used = std::max(1L, std::min(trips, lanes));
    return (trips + used - 1) / used * body;
  }
  if (body > 0 && trips > (1L << 40) / body) return 1L << 40;
  return trips * body;
}

// -------------------------------------------------------------------------
// statement generation

struct OpBuilder {
  Operator op;
  int next_temp = 0;
  std::vector<std::string> temps;

  std::string fresh_temp() {
    std::string t = "t" + std::to_string(next_temp++);
    temps.push_back(t);
    return t;
  }
  std::string any_temp(Rng& rng) {
    if (temps.empty()) return fresh_temp();
    return pick(rng, temps);
  }
};

Statement make_load(OpBuilder& b, Rng& rng, const std::string& ivar) {
  Statement s;
  s.kind = StmtKind::ArrayLoad;
  s.operands = {Ref{b.fresh_temp(), ""}, Ref{pick(rng, b.op.arrays).name, ivar}};
  return s;
}

Statement make_store(OpBuilder& b, Rng& rng, const std::string& ivar) {
  Statement s;
  s.kind = StmtKind::ArrayStore;
  s.operands = {Ref{pick(rng, b.op.arrays).name, ivar}, Ref{b.any_temp(rng), ""}};
  return s;
}

Statement make_arith(OpBuilder& b, Rng& rng, StmtKind kind) {
  Statement s;
  s.kind = kind;
  std::string a = b.any_temp(rng), c = b.any_temp(rng);
  s.operands = {Ref{b.fresh_temp(), ""}, Ref{a, ""}, Ref{c, ""}};
  return s;
}

Statement make_branch(OpBuilder& b, Rng& rng, const std::string& ivar,
                      bool data_dependent, const std::string& input_sym) {
  Statement s;
  s.kind = StmtKind::Branch;
  if (data_dependent) {
    s.cond.lhs = CondOperand::elem(pick(rng, b.op.arrays).name, ivar);
    s.cond.op = CmpOp::Gt;
    s.cond.rhs = input_sym.empty() ? CondOperand::lit(rnd(rng, 32, 224))
                                   : CondOperand::input(input_sym);
  } else {
    s.cond.lhs = CondOperand::ivar(ivar);
    s.cond.op = CmpOp::Lt;
    s.cond.rhs = CondOperand::lit(rnd(rng, 1, 8));
  }
  s.then_body.push_back(make_load(b, rng, ivar));
  if (rnd(rng, 0, 1)) s.else_body.push_back(make_store(b, rng, ivar));
  return s;
}

const std::vector<std::string> kIvars = {"i", "j", "k", "l", "m"};

}  // namespace

int max_loop_depth(const Operator& op) {
  std::function<int(const LoopNode&)> depth = [&](const LoopNode& l) {
    int best = 1;
    for (const auto& it : l.body)
      if (it.is_loop()) best = std::max(best, 1 + depth(it.loop()));
    return best;
  };
  return depth(op.root);
}

std::pair<long, long> array_stmt_counts(const Workload& w) {
  long arr = 0, tot = 0;
  for (const auto& op : w.operators) count_loop_stmts(op.root, &arr, &tot);
  return {arr, tot};
}

// ---------------------------------------------------------------------------
// AST tier: 1-3 operators, depth 1-2, literal bounds only

Workload gen_ast_program(const GenConfig& cfg, Rng& rng) {
  (void)cfg;
  Workload w;
  int nops = (int)rnd(rng, 1, 3);
  for (int k = 0; k < nops; ++k) {
    OpBuilder b;
    b.op.name = "op" + std::to_string(k);
    int narr = (int)rnd(rng, 2, 3);
    for (int a = 0; a < narr; ++a)
      b.op.arrays.push_back(
          {std::string(1, char('a' + a)), 32, {rnd(rng, 8, 32)}});
    int depth = (int)rnd(rng, 1, 2);
    LoopNode inner;
    inner.induction_var = kIvars[depth - 1];
    inner.lower = Bound::lit(0);
    inner.upper = Bound::lit(rnd(rng, 4, 12));
    inner.step = 1;
    int nstmt = (int)rnd(rng, 2, 5);
    for (int s = 0; s < nstmt; ++s) {
      double r = rnd01(rng);
      Statement st;
      if (r < 0.50 || b.temps.empty())
        st = make_load(b, rng, inner.induction_var);
      else if (r < 0.88)
        st = make_store(b, rng, inner.induction_var);
      else if (r < 0.92)
        st = make_arith(b, rng, StmtKind::Add);
      else if (r < 0.94)
        st = make_arith(b, rng, StmtKind::Mul);
      else if (r < 0.95)
        st = make_arith(b, rng, StmtKind::Sub);
      else if (r < 0.96)
        st = make_arith(b, rng, StmtKind::Compare);
      else
        st = make_branch(b, rng, inner.induction_var, false, "");
      inner.body.push_back(BodyItem{std::move(st)});
    }
    if (depth == 2) {
      LoopNode outer;
      outer.induction_var = kIvars[0];
      outer.lower = Bound::lit(0);
      outer.upper = Bound::lit(rnd(rng, 3, 8));
      outer.step = 1;
      outer.body.push_back(BodyItem{std::move(inner)});
      b.op.root = std::move(outer);
    } else {
      b.op.root = std::move(inner);
    }
    b.op.input_symbols = referenced_input_symbols(b.op);
    w.operators.push_back(std::move(b.op));
    w.graph.nodes.push_back(w.operators.back().name);
  }
  for (int k = 1; k < nops; ++k)
    if (rnd01(rng) < 0.7)
      w.graph.edges.push_back(
          {w.graph.nodes[rnd(rng, 0, k - 1)], w.graph.nodes[k]});
  return w;
}

// ---------------------------------------------------------------------------
// dataflow tier: loop-tree templates, depth in range, one Class II operator

namespace {

Operator gen_dataflow_operator(const GenConfig& cfg, Rng& rng, int op_index,
                               bool class2) {
  OpBuilder b;
  b.op.name = "op" + std::to_string(op_index);
  int narr = (int)rnd(rng, 2, 3);
  for (int a = 0; a < narr; ++a)
    b.op.arrays.push_back({std::string(1, char('a' + a)), 32, {rnd(rng, 8, 64)}});

  int depth = (int)rnd(rng, cfg.depth_min, cfg.depth_max);
  // literal bounds shrink with depth so trip products stay modest
  std::vector<long> bound_pool = depth <= 3 ? std::vector<long>{4, 5, 6, 8}
                                : depth == 4 ? std::vector<long>{3, 4, 5}
                                             : std::vector<long>{2, 3, 4};
  bool symbolic_bound = class2 && rnd01(rng) < 0.7;
  std::string input_sym = "n" + std::to_string(op_index);

  // loop headers, outermost first; order is a random permutation of the pool
  struct Header {
    long upper;
    long step;
  };
  std::vector<Header> headers(depth);
  for (auto& h : headers) {
    h.upper = pick(rng, bound_pool);
    double r = rnd01(rng);
    h.step = r < 0.7 ? 1 : r < 0.9 ? 2 : 4;
    if (h.step >= h.upper) h.step = 1;
  }
  std::shuffle(headers.begin(), headers.end(), rng);

  // innermost body: array-heavy statement mix
  std::vector<Statement> body;
  std::string inner_ivar = kIvars[depth - 1];
  std::string idx_a = inner_ivar;
  std::string idx_b = depth >= 2 && rnd01(rng) < 0.4 ? kIvars[depth - 2] : inner_ivar;
  int nloads = (int)rnd(rng, 2, 4);
  for (int s = 0; s < nloads; ++s)
    body.push_back(make_load(b, rng, s % 2 ? idx_b : idx_a));
  if (rnd01(rng) < 0.20)
    body.push_back(make_arith(
        b, rng, rnd01(rng) < 0.6 ? StmtKind::Add : StmtKind::Mul));
  if (class2 && !symbolic_bound)
    body.push_back(make_branch(b, rng, inner_ivar, true, input_sym));
  body.push_back(make_store(b, rng, idx_a));
  if (rnd01(rng) < 0.5) body.push_back(make_store(b, rng, idx_b));

  // build nest, innermost first
  LoopNode cur;
  cur.induction_var = inner_ivar;
  cur.lower = Bound::lit(0);
  cur.upper = Bound::lit(headers[depth - 1].upper);
  cur.step = headers[depth - 1].step;
  for (auto& st : body) cur.body.push_back(BodyItem{std::move(st)});
  for (int d = depth - 2; d >= 0; --d) {
    LoopNode outer;
    outer.induction_var = kIvars[d];
    outer.lower = Bound::lit(0);
    outer.upper = Bound::lit(headers[d].upper);
    outer.step = headers[d].step;
    // occasional statement alongside the nested loop
    if (rnd01(rng) < 0.2)
      outer.body.push_back(BodyItem{make_load(b, rng, outer.induction_var)});
    outer.body.push_back(BodyItem{std::move(cur)});
    cur = std::move(outer);
  }
  if (symbolic_bound) {
    cur.upper = Bound::sym(input_sym);
    cur.step = 1;
  }
  b.op.root = std::move(cur);
  b.op.input_symbols = referenced_input_symbols(b.op);
  return b.op;
}

}  // namespace

Workload gen_dataflow_program(const GenConfig& cfg, Rng& rng) {
  Workload w;
  int nops = rnd01(rng) < 0.65 ? 1 : 2;
  int class2_at = (int)rnd(rng, 0, nops - 1);
  for (int k = 0; k < nops; ++k) {
    w.operators.push_back(gen_dataflow_operator(cfg, rng, k, k == class2_at));
    w.graph.nodes.push_back(w.operators.back().name);
  }
  for (int k = 1; k < nops; ++k)
    w.graph.edges.push_back({w.graph.nodes[k - 1], w.graph.nodes[k]});
  return w;
}

// ---------------------------------------------------------------------------
// mutation tier

namespace {

bool try_widen_bounds(Workload& w, Rng& rng) {
  std::vector<LoopNode*> cands;
  for (auto& op : w.operators)
    for_each_loop(op.root, [&](LoopNode& l) {
      if (!l.upper.symbolic && l.upper.literal <= 32) cands.push_back(&l);
    });
  if (cands.empty()) return false;
  cands[rnd(rng, 0, (long)cands.size() - 1)]->upper.literal += 2;
  return true;
}

bool try_fission(Workload& w, Rng& rng) {
  // split a nested loop with >=2 statements into two sibling loops
  struct Site {
    std::vector<BodyItem>* parent;
    size_t index;
  };
  std::vector<Site> sites;
  for (auto& op : w.operators)
    for_each_loop(op.root, [&](LoopNode& l) {
      for (size_t i = 0; i < l.body.size(); ++i) {
        if (!l.body[i].is_loop()) continue;
        LoopNode& child = l.body[i].loop();
        size_t nstmt = 0;
        for (const auto& it : child.body)
          if (!it.is_loop()) ++nstmt;
        if (nstmt >= 2 && nstmt == child.body.size())
          sites.push_back({&l.body, i});
      }
    });
  if (sites.empty()) return false;
  Site s = sites[rnd(rng, 0, (long)sites.size() - 1)];
  LoopNode orig = (*s.parent)[s.index].loop();
  LoopNode first = orig, second = orig;
  size_t half = orig.body.size() / 2;
  first.body.assign(orig.body.begin(), orig.body.begin() + half);
  second.body.assign(orig.body.begin() + half, orig.body.end());
  (*s.parent)[s.index].item = std::move(first);
  BodyItem bi;
  bi.item = std::move(second);
  s.parent->insert(s.parent->begin() + s.index + 1, std::move(bi));
  return true;
}

bool loops_fusible(const LoopNode& a, const LoopNode& b) {
  return a.induction_var == b.induction_var && !a.upper.symbolic &&
         !b.upper.symbolic && a.upper.literal == b.upper.literal &&
         a.lower.literal == b.lower.literal && a.step == b.step &&
         a.pragma == b.pragma;
}

bool try_fusion(Workload& w, Rng& rng) {
  struct Site {
    std::vector<BodyItem>* parent;
    size_t index;
  };
  std::vector<Site> sites;
  for (auto& op : w.operators)
    for_each_loop(op.root, [&](LoopNode& l) {
      for (size_t i = 0; i + 1 < l.body.size(); ++i)
        if (l.body[i].is_loop() && l.body[i + 1].is_loop() &&
            loops_fusible(l.body[i].loop(), l.body[i + 1].loop()))
          sites.push_back({&l.body, i});
    });
  if (sites.empty()) return false;
  Site s = sites[rnd(rng, 0, (long)sites.size() - 1)];
  LoopNode& a = (*s.parent)[s.index].loop();
  LoopNode& b = (*s.parent)[s.index + 1].loop();
  for (auto& it : b.body) a.body.push_back(std::move(it));
  s.parent->erase(s.parent->begin() + s.index + 1);
  return true;
}

bool try_duplicate_operator(Workload& w, Rng& rng) {
  if (w.operators.size() >= 3) return false;
  const Operator& src = w.operators[rnd(rng, 0, (long)w.operators.size() - 1)];
  Operator dup = src;
  dup.name = "op" + std::to_string(w.operators.size());
  for_each_loop(dup.root, [&](LoopNode& l) {
    if (!l.upper.symbolic && l.upper.literal > l.lower.literal + 1 &&
        rnd01(rng) < 0.5)
      l.upper.literal += rnd(rng, 0, 1) ? 1 : -1;
  });
  std::string from = w.graph.nodes.back();
  w.operators.push_back(std::move(dup));
  w.graph.nodes.push_back(w.operators.back().name);
  w.graph.edges.push_back({from, w.graph.nodes.back()});
  return true;
}

}  // namespace

Workload mutate_semantic(const Workload& w, Rng& rng) {
  Workload out = w;
  std::vector<int> rules = {0, 1, 2, 3};
  std::shuffle(rules.begin(), rules.end(), rng);
  for (int r : rules) {
    bool ok = false;
    switch (r) {
      case 0: ok = try_widen_bounds(out, rng); break;
      case 1: ok = try_fission(out, rng); break;
      case 2: ok = try_fusion(out, rng); break;
      case 3: ok = try_duplicate_operator(out, rng); break;
    }
    if (ok) {
      validate(out);
      return out;
    }
  }
  throw MutationInapplicable();
}

// ---------------------------------------------------------------------------
// hardware params, inputs

namespace {

bool body_accumulates(const LoopNode& l, const std::vector<std::string>& scalars) {
  bool found = false;
  std::function<void(const LoopNode&)> walk = [&](const LoopNode& loop) {
    for (const auto& it : loop.body) {
      if (it.is_loop()) {
        walk(it.loop());
        continue;
      }
      const Statement& s = it.stmt();
      if (s.kind == StmtKind::Add || s.kind == StmtKind::Sub ||
          s.kind == StmtKind::Mul || s.kind == StmtKind::Div) {
        if (!s.operands.empty() && !s.operands[0].is_array()) {
          const std::string& dst = s.operands[0].name;
          if (std::find(scalars.begin(), scalars.end(), dst) != scalars.end())
            for (size_t i = 1; i < s.operands.size(); ++i)
              if (!s.operands[i].is_array() && s.operands[i].name == dst)
                found = true;
        }
      }
    }
  };
  walk(l);
  return found;
}

}  // namespace

Workload inject_hw_params(const Workload& w, const GenConfig& cfg, Rng& rng) {
  Workload out = w;
  out.params.mem_delay_read = pick(rng, cfg.mem_delay_choices);
  out.params.mem_delay_write = pick(rng, cfg.mem_delay_choices);
  out.params.parallel_lanes = pick(rng, std::vector<long>{2, 4, 8});
  if (rnd01(rng) < 0.5) {
    struct Cand {
      LoopNode* loop;
      bool unrollable;
    };
    std::vector<Cand> cands;
    for (auto& op : out.operators) {
      auto& scalars = op.scalars;
      for_each_loop(op.root, [&](LoopNode& l) {
        if (l.upper.symbolic || l.pragma != Pragma::None) return;
        long trip = (l.upper.literal - l.lower.literal + l.step - 1) / l.step;
        if (trip < 2 || trip > 12) return;
        long arr = 0, tot = 0;
        count_loop_stmts(l, &arr, &tot);
        if (tot * trip > 200) return;  // keep replicated area inside label caps
        cands.push_back({&l, !body_accumulates(l, scalars)});
      });
    }
    if (!cands.empty()) {
      Cand c = cands[rnd(rng, 0, (long)cands.size() - 1)];
      c.loop->pragma = rnd(rng, 0, 1) && c.unrollable ? Pragma::ParallelFor
                                                      : Pragma::UnrollFull;
    }
  }
  return out;
}

namespace {

std::vector<std::string> all_input_symbols(const Workload& w) {
  std::set<std::string> s;
  for (const auto& op : w.operators)
    s.insert(op.input_symbols.begin(), op.input_symbols.end());
  return {s.begin(), s.end()};
}

std::vector<RuntimeInput> draw_inputs(const Workload& w, Rng& rng, int k,
                                      double lo_frac, double hi_frac,
                                      long base) {
  auto syms = all_input_symbols(w);
  if (syms.empty()) throw NoInputSymbols();
  long lo = (long)std::ceil(lo_frac * base);
  long hi = (long)std::floor(hi_frac * base);
  if (hi < lo) hi = lo;
  std::vector<RuntimeInput> out;
  for (int i = 0; i < k; ++i) {
    RuntimeInput in;
    for (const auto& s : syms) in.bindings.push_back({s, rnd(rng, lo, hi)});
    out.push_back(std::move(in));
  }
  return out;
}

}  // namespace

std::vector<RuntimeInput> vary_inputs(const Workload& w, const GenConfig& cfg,
                                      Rng& rng, int k) {
  return draw_inputs(w, rng, k, 1.0 - cfg.input_variation,
                     1.0 + cfg.input_variation, cfg.base_input_value);
}

std::vector<RuntimeInput> shifted_inputs(const Workload& w, const GenConfig& cfg,
                                         Rng& rng, int k, double lo, double hi) {
  return draw_inputs(w, rng, k, lo, hi, cfg.base_input_value);
}

// ---------------------------------------------------------------------------
// records

DatasetRecord format_record(const Workload& w,
                            const std::optional<RuntimeInput>& input,
                            RecordFormat fmt) {
  DatasetRecord r;
  r.workload = w;
  r.workload.input = input;
  RuntimeInput in = input.value_or(RuntimeInput{});
  OracleResult res = evaluate_full(w, in);
  r.labels = res.cost;
  r.features = res.features;
  r.format = fmt;
  if (fmt == RecordFormat::Reasoning) {
    std::ostringstream os;
    os << "<think> modules = " << res.features.module_count
       << " mux = " << res.features.mux_count
       << " mul = " << res.features.mul_count
       << " add = " << res.features.add_count
       << " ff = " << res.features.ff_count
       << " mem_ports = " << res.features.mem_ports << " </think>";
    r.reasoning_text = os.str();
  }
  return r;
}

namespace {

bool labels_fit(const GenConfig& cfg, const CostVector& c) {
  return c.power <= cfg.max_power && c.area <= cfg.max_area &&
         c.ff <= cfg.max_ff && c.cycles <= cfg.max_cycles && c.cycles >= 1;
}

// All-inputs probe: every training input fits, and a 3x-shifted input still
// fits so the calibration experiment cannot overflow the cycles code.
bool workload_usable(const GenConfig& cfg, const Workload& w,
                     const std::vector<RuntimeInput>& inputs) {
  try {
    validate(w);
    if (tokenize_rendered(render_pieces(w)).stream.tokens.size() > 260)
      return false;
    for (const auto& op : w.operators)
      if ((long)estimate_cycles_upper(op.root, 3 * cfg.base_input_value, 10, 1) >
          4 * cfg.max_cycles)
        return false;
    StaticCosts s = evaluate_static(w);
    if (s.power > cfg.max_power || s.area > cfg.max_area || s.ff > cfg.max_ff)
      return false;
    if (inputs.empty()) {
      CycleStats cs = evaluate_cycles(w, RuntimeInput{});
      return labels_fit(cfg, {s.power, s.area, s.ff, cs.cycles});
    }
    for (const auto& in : inputs) {
      CycleStats cs = evaluate_cycles(w, in);
      if (!labels_fit(cfg, {s.power, s.area, s.ff, cs.cycles})) return false;
    }
    if (!all_input_symbols(w).empty()) {
      RuntimeInput probe;
      for (const auto& sym : all_input_symbols(w))
        probe.bindings.push_back({sym, 3 * cfg.base_input_value});
      CycleStats cs = evaluate_cycles(w, probe);
      if (cs.cycles > cfg.max_cycles) return false;
    }
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

std::vector<DatasetRecord> build_dataset(const GenConfig& cfg, int n) {
  Rng rng(cfg.seed);
  int n_ast = (int)std::lround(n * cfg.mix_ast);
  int n_mut = (int)std::lround(n * cfg.mix_mutation);
  int n_df = n - n_ast - n_mut;

  std::vector<DatasetRecord> out;
  int wl_counter = 0;
  auto fmt_for = [&](size_t idx) {
    if (cfg.alternate_formats)
      return idx % 2 ? RecordFormat::Reasoning : RecordFormat::Direct;
    return cfg.emit_reasoning ? RecordFormat::Reasoning : RecordFormat::Direct;
  };
  auto push_workload = [&](const Workload& w, RecordSource src, int quota) {
    // returns number of records emitted (0 on rejection)
    bool class2 = !all_input_symbols(w).empty();
    std::vector<RuntimeInput> inputs;
    if (class2) {
      int k = cfg.variants_per_class2;
      if (quota >= k + 2 || quota <= k) {
        // keep at least 2 variants for the last workload of a tier
      } else {
        k = quota;
      }
      if (k < 2) k = 2;
      inputs = vary_inputs(w, cfg, rng, k);
    }
    if (!workload_usable(cfg, w, inputs)) return 0;
    int wl = wl_counter++;
    int emitted = 0;
    if (class2) {
      for (size_t v = 0; v < inputs.size(); ++v) {
        DatasetRecord r = format_record(w, inputs[v], fmt_for(out.size()));
        r.id = "w" + std::to_string(wl) + "_v" + std::to_string(v);
        r.source = src;
        out.push_back(std::move(r));
        ++emitted;
      }
    } else {
      // Class I: cycle counts need no bindings; an empty input marks the
      // record as cycle-trainable.
      DatasetRecord r = format_record(w, RuntimeInput{}, fmt_for(out.size()));
      r.id = "w" + std::to_string(wl) + "_v0";
      r.source = src;
      out.push_back(std::move(r));
      emitted = 1;
    }
    return emitted;
  };

  auto fill_tier = [&](RecordSource src, int quota) {
    int made = 0, attempts = 0;
    while (made < quota) {
      if (++attempts > 50 * quota + 500)
        throw SynthError("dataset generation stalled");
      Workload base;
      switch (src) {
        case RecordSource::Ast:
          base = gen_ast_program(cfg, rng);
          break;
        case RecordSource::Dataflow:
          base = gen_dataflow_program(cfg, rng);
          break;
        case RecordSource::Mutation: {
          Workload seed_w = rnd01(rng) < 0.5 ? gen_ast_program(cfg, rng)
                                             : gen_dataflow_program(cfg, rng);
          try {
            base = mutate_semantic(seed_w, rng);
          } catch (const MutationInapplicable&) {
            continue;
          }
          break;
        }
      }
      Workload w = inject_hw_params(base, cfg, rng);
      made += push_workload(w, src, quota - made);
    }
  };

  fill_tier(RecordSource::Ast, n_ast);
  fill_tier(RecordSource::Dataflow, n_df);
  fill_tier(RecordSource::Mutation, n_mut);
  // variant grouping can overshoot a tier quota by a record or two
  if ((int)out.size() > n) out.resize(n);
  return out;
}

// ---------------------------------------------------------------------------
// IO

namespace {

const char* source_name(RecordSource s) {
  switch (s) {
    case RecordSource::Ast: return "ast";
    case RecordSource::Dataflow: return "dataflow";
    case RecordSource::Mutation: return "mutation";
  }
  return "?";
}

RecordSource source_from(const std::string& s) {
  if (s == "ast") return RecordSource::Ast;
  if (s == "dataflow") return RecordSource::Dataflow;
  if (s == "mutation") return RecordSource::Mutation;
  throw SynthError("unknown record source: " + s);
}

}  // namespace

std::string record_to_json(const DatasetRecord& r) {
  json j;
  j["id"] = r.id;
  j["source"] = source_name(r.source);
  j["workload"] = json::parse(workload_to_json(r.workload));
  j["labels"] = json{{"power", r.labels.power},
                     {"area", r.labels.area},
                     {"ff", r.labels.ff},
                     {"cycles", r.labels.cycles}};
  j["features"] = json{{"module_count", r.features.module_count},
                       {"mux_count", r.features.mux_count},
                       {"mul_count", r.features.mul_count},
                       {"add_count", r.features.add_count},
                       {"ff_count", r.features.ff_count},
                       {"mem_ports", r.features.mem_ports}};
  j["format"] = r.format == RecordFormat::Reasoning ? "reasoning" : "direct";
  if (r.format == RecordFormat::Reasoning) j["reasoning_text"] = r.reasoning_text;
  return j.dump();
}

DatasetRecord record_from_json(const std::string& line) {
  json j = json::parse(line);
  DatasetRecord r;
  r.id = j.at("id");
  r.source = source_from(j.at("source"));
  r.workload = workload_from_json(j.at("workload").dump());
  r.labels.power = j.at("labels").at("power");
  r.labels.area = j.at("labels").at("area");
  r.labels.ff = j.at("labels").at("ff");
  r.labels.cycles = j.at("labels").at("cycles");
  r.features.module_count = j.at("features").at("module_count");
  r.features.mux_count = j.at("features").at("mux_count");
  r.features.mul_count = j.at("features").at("mul_count");
  r.features.add_count = j.at("features").at("add_count");
  r.features.ff_count = j.at("features").at("ff_count");
  r.features.mem_ports = j.at("features").at("mem_ports");
  r.format = j.at("format") == "reasoning" ? RecordFormat::Reasoning
                                           : RecordFormat::Direct;
  if (j.contains("reasoning_text")) r.reasoning_text = j.at("reasoning_text");
  return r;
}

void write_records(const std::string& path,
                   const std::vector<DatasetRecord>& recs) {
  std::ofstream f(path);
  if (!f) throw SynthError("cannot open for writing: " + path);
  for (const auto& r : recs) f << record_to_json(r) << "\n";
}

std::vector<DatasetRecord> read_records(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw SynthError("cannot open: " + path);
  std::vector<DatasetRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    out.push_back(record_from_json(line));
  }
  return out;
}

CorpusStats corpus_stats(const std::vector<DatasetRecord>& recs) {
  CorpusStats st;
  long arr = 0, tot = 0, depth_sum = 0, df_n = 0;
  for (const auto& r : recs) {
    auto [a, t] = array_stmt_counts(r.workload);
    arr += a;
    tot += t;
    switch (r.source) {
      case RecordSource::Ast: st.count_ast++; break;
      case RecordSource::Dataflow: st.count_dataflow++; break;
      case RecordSource::Mutation: st.count_mutation++; break;
    }
    if (r.source == RecordSource::Dataflow) {
      int d = 0;
      for (const auto& op : r.workload.operators)
        d = std::max(d, max_loop_depth(op));
      depth_sum += d;
      ++df_n;
    }
  }
  st.array_stmt_fraction = tot ? (double)arr / tot : 0.0;
  st.mean_depth_dataflow = df_n ? (double)depth_sum / df_n : 0.0;
  return st;
}

}  // namespace costflow
