#include "costflow/oracle.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace costflow {

namespace {

// -------------------------------------------------------------------------
// structural counts

struct Counts {
  long add = 0, mul = 0, mux = 0, stmts = 0, counter_ff = 0;

  Counts& operator+=(const Counts& o) {
    add += o.add;
    mul += o.mul;
    mux += o.mux;
    stmts += o.stmts;
    counter_ff += o.counter_ff;
    return *this;
  }
  Counts scaled(long k) const {
    return {add * k, mul * k, mux * k, stmts * k, counter_ff * k};
  }
};

void collect_assigned(const std::vector<Statement>& body,
                      std::set<std::string>* out) {
  for (const auto& s : body)
    if (!s.operands.empty()) out->insert(s.operands[0].name);
}

Counts count_stmt(const Statement& s) {
  Counts c;
  c.stmts = 1;
  switch (s.kind) {
    case StmtKind::Add:
    case StmtKind::Sub:
    case StmtKind::Compare:
      c.add = 1;
      break;
    case StmtKind::Mul:
    case StmtKind::Div:
      c.mul = 1;
      break;
    case StmtKind::Branch: {
      std::set<std::string> assigned;
      collect_assigned(s.then_body, &assigned);
      collect_assigned(s.else_body, &assigned);
      c.mux = (long)assigned.size();
      for (const auto* arm : {&s.then_body, &s.else_body})
        for (const auto& st : *arm) c += count_stmt(st);
      break;
    }
    default:
      break;
  }
  return c;
}

Counts count_loop(const LoopNode& l) {
  Counts body;
  for (const auto& it : l.body) {
    if (it.is_loop())
      body += count_loop(it.loop());
    else
      body += count_stmt(it.stmt());
  }
  return body;  // caller applies replication and adds the counter register
}

long static_trip_or_throw(const LoopNode& l) {
  if (l.upper.symbolic || l.lower.symbolic) throw UnresolvableTrip();
  return (l.upper.literal - l.lower.literal + l.step - 1) / l.step;
}

Counts count_loop_replicated(const LoopNode& l, long lanes) {
  Counts body;
  for (const auto& it : l.body) {
    if (it.is_loop())
      body += count_loop_replicated(it.loop(), lanes);
    else
      body += count_stmt(it.stmt());
  }
  long factor = 1;
  if (l.pragma == Pragma::UnrollFull) {
    factor = static_trip_or_throw(l);
  } else if (l.pragma == Pragma::ParallelFor) {
    factor = std::min(static_trip_or_throw(l), lanes);
  }
  Counts out = body.scaled(factor);
  out.counter_ff += 16;
  return out;
}

void collect_accumulators(const std::vector<BodyItem>& body,
                          const std::vector<std::string>& scalars,
                          std::set<std::string>* out) {
  for (const auto& it : body) {
    if (it.is_loop()) {
      collect_accumulators(it.loop().body, scalars, out);
      continue;
    }
    const Statement& s = it.stmt();
    auto check = [&](const Statement& st) {
      if (st.kind != StmtKind::Add && st.kind != StmtKind::Sub &&
          st.kind != StmtKind::Mul && st.kind != StmtKind::Div)
        return;
      if (st.operands.empty() || st.operands[0].is_array()) return;
      const std::string& dst = st.operands[0].name;
      if (std::find(scalars.begin(), scalars.end(), dst) == scalars.end())
        return;
      for (size_t i = 1; i < st.operands.size(); ++i)
        if (!st.operands[i].is_array() && st.operands[i].name == dst)
          out->insert(dst);
    };
    check(s);
    if (s.kind == StmtKind::Branch)
      for (const auto* arm : {&s.then_body, &s.else_body})
        for (const auto& st : *arm) check(st);
  }
}

}  // namespace

StaticCosts evaluate_static(const Workload& w) {
  StaticCosts out;
  out.features.module_count = (long)w.operators.size();
  for (const auto& op : w.operators) {
    Counts c = count_loop_replicated(op.root, w.params.parallel_lanes);
    std::set<std::string> accs;
    collect_accumulators(op.root.body, op.scalars, &accs);
    long ff = c.counter_ff + 32 * (long)op.scalars.size() + 32 * (long)accs.size();
    long ports = (long)op.arrays.size();
    out.ff += ff;
    out.features.ff_count += ff;
    out.features.add_count += c.add;
    out.features.mul_count += c.mul;
    out.features.mux_count += c.mux;
    out.features.mem_ports += ports;
    out.area += 1.0 * ff + 12.0 * c.mul + 2.0 * c.add + 3.0 * c.mux + 0.5 * ports;
    out.power += 0.01 * (1.0 * ff + 12.0 * c.mul + 2.0 * c.add + 3.0 * c.mux +
                         0.5 * ports) +
                 0.05 * c.stmts;
  }
  return out;
}

// ---------------------------------------------------------------------------
// interpretation

namespace {

struct Lat {
  long cycles = 0;
  long loads = 0;  // loads that contribute to `cycles`
  Lat& operator+=(const Lat& o) {
    cycles += o.cycles;
    loads += o.loads;
    return *this;
  }
};

struct Interp {
  const HardwareParams& hw;
  const RuntimeInput& input;
  std::map<std::string, long> ivars;

  long operand_value(const CondOperand& o) {
    switch (o.kind) {
      case CondOperand::Kind::Literal:
        return o.literal;
      case CondOperand::Kind::InductionVar:
        return ivars.at(o.name);
      case CondOperand::Kind::Scalar:
        return 0;  // scalars carry no tracked data values
      case CondOperand::Kind::InputSymbol: {
        auto v = input.lookup(o.name);
        if (!v) throw UnboundSymbol(o.name);
        return *v;
      }
      case CondOperand::Kind::ArrayElem:
        return synthetic_array_value(ivars.at(o.index_var));
    }
    return 0;
  }

  bool eval_cond(const Condition& c) {
    long a = operand_value(c.lhs), b = operand_value(c.rhs);
    switch (c.op) {
      case CmpOp::Lt: return a < b;
      case CmpOp::Le: return a <= b;
      case CmpOp::Gt: return a > b;
      case CmpOp::Ge: return a >= b;
      case CmpOp::Eq: return a == b;
      case CmpOp::Ne: return a != b;
    }
    return false;
  }

  Lat stmt_latency(const Statement& s) {
    switch (s.kind) {
      case StmtKind::ArrayLoad:
        return {hw.mem_delay_read, 1};
      case StmtKind::ArrayStore:
        return {hw.mem_delay_write, 0};
      case StmtKind::Add:
      case StmtKind::Sub:
      case StmtKind::Compare:
        return {1, 0};
      case StmtKind::Mul:
        return {3, 0};
      case StmtKind::Div:
        return {8, 0};
      case StmtKind::Branch: {
        Lat l{1, 0};
        const auto& arm = eval_cond(s.cond) ? s.then_body : s.else_body;
        for (const auto& st : arm) l += stmt_latency(st);
        return l;
      }
    }
    return {};
  }

  Lat body_latency(const std::vector<BodyItem>& body) {
    Lat l;
    for (const auto& it : body) {
      if (it.is_loop())
        l += loop_latency(it.loop());
      else
        l += stmt_latency(it.stmt());
    }
    return l;
  }

  Lat loop_latency(const LoopNode& loop) {
    auto resolve = [&](const Bound& b) -> long {
      if (!b.symbolic) return b.literal;
      auto v = input.lookup(b.symbol);
      if (!v) throw UnboundSymbol(b.symbol);
      return *v;
    };
    long lo = resolve(loop.lower), hi = resolve(loop.upper);
    if (hi < lo) throw NegativeRange();
    long trips = (hi - lo + loop.step - 1) / loop.step;
    if (trips == 0) return {};

    if (loop.pragma == Pragma::None) {
      Lat total;
      for (long k = 0; k < trips; ++k) {
        ivars[loop.induction_var] = lo + k * loop.step;
        total += body_latency(loop.body);
      }
      ivars.erase(loop.induction_var);
      return total;
    }
    // unroll_full / parallel_for: latency governed by the slowest iteration
    Lat worst;
    for (long k = 0; k < trips; ++k) {
      ivars[loop.induction_var] = lo + k * loop.step;
      Lat l = body_latency(loop.body);
      if (l.cycles > worst.cycles) worst = l;
    }
    ivars.erase(loop.induction_var);
    if (loop.pragma == Pragma::UnrollFull) return worst;
    long lanes_used = std::min(trips, hw.parallel_lanes);
    long waves = (trips + lanes_used - 1) / lanes_used;
    return {waves * worst.cycles, waves * worst.loads};
  }
};

}  // namespace

CycleStats evaluate_cycles(const Workload& w, const RuntimeInput& input) {
  std::map<std::string, const Operator*> by_name;
  for (const auto& op : w.operators) by_name[op.name] = &op;
  CycleStats out;
  for (const auto& name : topo_order(w.graph)) {
    Interp in{w.params, input, {}};
    Lat l = in.loop_latency(by_name.at(name)->root);
    out.cycles += l.cycles;
    out.executed_loads += l.loads;
  }
  return out;
}

OracleResult evaluate_full(const Workload& w, const RuntimeInput& input) {
  OracleResult r;
  StaticCosts s = evaluate_static(w);
  r.stats = evaluate_cycles(w, input);
  r.cost = CostVector{s.power, s.area, s.ff, r.stats.cycles};
  r.features = s.features;
  return r;
}

}  // namespace costflow
