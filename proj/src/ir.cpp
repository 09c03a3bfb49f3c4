#include "costflow/ir.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace costflow {

using nlohmann::json;

// ---------------------------------------------------------------------------
// classification

namespace {

void collect_branch_symbols(const Statement& s, std::set<std::string>* out);

void collect_cond_symbols(const Condition& c, std::set<std::string>* out) {
  for (const CondOperand* o : {&c.lhs, &c.rhs})
    if (o->kind == CondOperand::Kind::InputSymbol) out->insert(o->name);
}

void collect_body_symbols(const std::vector<BodyItem>& body,
                          std::set<std::string>* out) {
  for (const auto& it : body) {
    if (it.is_loop()) {
      const LoopNode& l = it.loop();
      if (l.upper.symbolic) out->insert(l.upper.symbol);
      if (l.lower.symbolic) out->insert(l.lower.symbol);
      collect_body_symbols(l.body, out);
    } else {
      collect_branch_symbols(it.stmt(), out);
    }
  }
}

void collect_branch_symbols(const Statement& s, std::set<std::string>* out) {
  if (s.kind != StmtKind::Branch) return;
  collect_cond_symbols(s.cond, out);
  for (const auto* arm : {&s.then_body, &s.else_body})
    for (const auto& st : *arm) collect_branch_symbols(st, out);
}

}  // namespace

std::vector<std::string> referenced_input_symbols(const Operator& op) {
  std::set<std::string> syms;
  if (op.root.upper.symbolic) syms.insert(op.root.upper.symbol);
  if (op.root.lower.symbolic) syms.insert(op.root.lower.symbol);
  collect_body_symbols(op.root.body, &syms);
  return {syms.begin(), syms.end()};
}

OperatorClass classify_operator(const Operator& op) {
  return referenced_input_symbols(op).empty() ? OperatorClass::ClassI
                                              : OperatorClass::ClassII;
}

std::vector<OperatorClass> classify_all(const Workload& w) {
  std::vector<OperatorClass> out;
  out.reserve(w.operators.size());
  for (const auto& op : w.operators) out.push_back(classify_operator(op));
  return out;
}

// ---------------------------------------------------------------------------
// topo order

std::vector<std::string> topo_order(const DataflowGraph& g) {
  std::map<std::string, int> index;
  for (size_t i = 0; i < g.nodes.size(); ++i) index[g.nodes[i]] = (int)i;
  std::vector<int> indeg(g.nodes.size(), 0);
  std::vector<std::vector<int>> adj(g.nodes.size());
  for (const auto& [p, c] : g.edges) {
    adj[index.at(p)].push_back(index.at(c));
    indeg[index.at(c)]++;
  }
  // Kahn with smallest-declaration-index tie break.
  std::set<int> ready;
  for (size_t i = 0; i < g.nodes.size(); ++i)
    if (indeg[i] == 0) ready.insert((int)i);
  std::vector<std::string> order;
  while (!ready.empty()) {
    int n = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(g.nodes[n]);
    for (int m : adj[n])
      if (--indeg[m] == 0) ready.insert(m);
  }
  if (order.size() != g.nodes.size()) throw CyclicGraph();
  return order;
}

// ---------------------------------------------------------------------------
// trip count

std::optional<long> trip_count(const LoopNode& loop, const RuntimeInput* input) {
  auto resolve = [&](const Bound& b) -> std::optional<long> {
    if (!b.symbolic) return b.literal;
    if (input) return input->lookup(b.symbol);
    return std::nullopt;
  };
  auto lo = resolve(loop.lower);
  auto hi = resolve(loop.upper);
  if (!lo || !hi) return std::nullopt;
  if (*hi < *lo) throw NegativeRange();
  return (*hi - *lo + loop.step - 1) / loop.step;
}

// ---------------------------------------------------------------------------
// validation

namespace {

bool ref_is_temp(const Ref& r) { return r.name.size() >= 2 && r.name[0] == 't'; }

bool is_accumulation(const Statement& s, const std::vector<std::string>& scalars) {
  if (s.kind != StmtKind::Add && s.kind != StmtKind::Sub &&
      s.kind != StmtKind::Mul && s.kind != StmtKind::Div)
    return false;
  if (s.operands.empty() || s.operands[0].is_array()) return false;
  const std::string& dst = s.operands[0].name;
  if (std::find(scalars.begin(), scalars.end(), dst) == scalars.end())
    return false;
  for (size_t i = 1; i < s.operands.size(); ++i)
    if (!s.operands[i].is_array() && s.operands[i].name == dst) return true;
  return false;
}

bool body_has_accumulation(const std::vector<BodyItem>& body,
                           const std::vector<std::string>& scalars) {
  for (const auto& it : body) {
    if (it.is_loop()) {
      if (body_has_accumulation(it.loop().body, scalars)) return true;
    } else {
      const Statement& s = it.stmt();
      if (is_accumulation(s, scalars)) return true;
      if (s.kind == StmtKind::Branch) {
        for (const auto* arm : {&s.then_body, &s.else_body})
          for (const auto& st : *arm)
            if (is_accumulation(st, scalars)) return true;
      }
    }
  }
  return false;
}

struct OpScope {
  std::set<std::string> arrays, scalars, inputs, ivars;
};

void check_statement(const Statement& s, const OpScope& sc) {
  for (const auto& r : s.operands) {
    if (r.is_array()) {
      if (!sc.arrays.count(r.name))
        throw IrError("undeclared array: " + r.name);
      if (!sc.ivars.count(r.index_var))
        throw IrError("undeclared index var: " + r.index_var);
    }
  }
  if (s.kind == StmtKind::Branch) {
    for (const CondOperand* o : {&s.cond.lhs, &s.cond.rhs}) {
      switch (o->kind) {
        case CondOperand::Kind::Literal:
          break;
        case CondOperand::Kind::InductionVar:
          if (!sc.ivars.count(o->name))
            throw IrError("condition references unknown induction var " +
                          o->name);
          break;
        case CondOperand::Kind::Scalar:
          if (!sc.scalars.count(o->name))
            throw IrError("condition references unknown scalar " + o->name);
          break;
        case CondOperand::Kind::InputSymbol:
          if (!sc.inputs.count(o->name))
            throw IrError("condition references unknown input symbol " +
                          o->name);
          break;
        case CondOperand::Kind::ArrayElem:
          if (!sc.arrays.count(o->name))
            throw IrError("condition references unknown array " + o->name);
          if (!sc.ivars.count(o->index_var))
            throw IrError("condition index var unknown: " + o->index_var);
          break;
      }
    }
    for (const auto* arm : {&s.then_body, &s.else_body})
      for (const auto& st : *arm) check_statement(st, sc);
  }
}

void check_loop(const LoopNode& l, OpScope sc,
                const std::vector<std::string>& scalars) {
  if (l.step < 1) throw IrError("loop step must be >= 1");
  if (!l.lower.symbolic && !l.upper.symbolic && l.lower.literal > l.upper.literal)
    throw IrError("literal bounds out of order");
  if (l.lower.symbolic) throw IrError("symbolic lower bound not supported");
  if (l.pragma == Pragma::ParallelFor && body_has_accumulation(l.body, scalars))
    throw IrError("parallel_for on loop with scalar accumulation");
  sc.ivars.insert(l.induction_var);
  for (const auto& it : l.body) {
    if (it.is_loop())
      check_loop(it.loop(), sc, scalars);
    else
      check_statement(it.stmt(), sc);
  }
}

}  // namespace

void validate(const Workload& w) {
  if (w.params.mem_delay_read < 1 || w.params.mem_delay_write < 1 ||
      w.params.parallel_lanes < 1)
    throw IrError("hardware params must be >= 1");
  if (w.graph.nodes.size() != w.operators.size())
    throw IrError("graph node count != operator count");
  for (size_t i = 0; i < w.operators.size(); ++i)
    if (w.graph.nodes[i] != w.operators[i].name)
      throw IrError("operators not listed in graph node order");
  std::set<std::string> declared(w.graph.nodes.begin(), w.graph.nodes.end());
  for (const auto& [p, c] : w.graph.edges)
    if (!declared.count(p) || !declared.count(c))
      throw IrError("edge endpoint not a declared node");
  topo_order(w.graph);  // throws on cycle

  for (const auto& op : w.operators) {
    OpScope sc;
    for (const auto& a : op.arrays) sc.arrays.insert(a.name);
    sc.scalars = {op.scalars.begin(), op.scalars.end()};
    sc.inputs = {op.input_symbols.begin(), op.input_symbols.end()};
    check_loop(op.root, sc, op.scalars);
    auto refd = referenced_input_symbols(op);
    std::set<std::string> refset(refd.begin(), refd.end());
    if (refset != sc.inputs)
      throw IrError("input_symbols mismatch for operator " + op.name);
  }
  if (w.input) {
    std::set<std::string> all_inputs;
    for (const auto& op : w.operators)
      all_inputs.insert(op.input_symbols.begin(), op.input_symbols.end());
    for (const auto& [k, v] : w.input->bindings) {
      if (!all_inputs.count(k))
        throw IrError("bound symbol not an input symbol: " + k);
      if (v < 0) throw IrError("input values must be >= 0");
    }
  }
}

// ---------------------------------------------------------------------------
// rendering

namespace {

const char* cmp_str(CmpOp op) {
  switch (op) {
    case CmpOp::Lt: return "<";
    case CmpOp::Le: return "<=";
    case CmpOp::Gt: return ">";
    case CmpOp::Ge: return ">=";
    case CmpOp::Eq: return "==";
    case CmpOp::Ne: return "!=";
  }
  return "?";
}

void emit_cond_operand(std::ostringstream& os, const CondOperand& o) {
  switch (o.kind) {
    case CondOperand::Kind::Literal: os << o.literal; break;
    case CondOperand::Kind::ArrayElem: os << o.name << "[" << o.index_var << "]"; break;
    default: os << o.name; break;
  }
}

void emit_ref(std::ostringstream& os, const Ref& r) {
  os << r.name;
  if (r.is_array()) os << "[" << r.index_var << "]";
}

void emit_stmt(std::ostringstream& os, const Statement& s);

void emit_body(std::ostringstream& os, const std::vector<Statement>& body) {
  for (const auto& st : body) {
    os << " ";
    emit_stmt(os, st);
  }
}

const char* binop_str(StmtKind k) {
  switch (k) {
    case StmtKind::Add: return "+";
    case StmtKind::Sub: return "-";
    case StmtKind::Mul: return "*";
    case StmtKind::Div: return "/";
    case StmtKind::Compare: return "<";
    default: return "?";
  }
}

void emit_stmt(std::ostringstream& os, const Statement& s) {
  switch (s.kind) {
    case StmtKind::ArrayLoad:
    case StmtKind::ArrayStore:
      emit_ref(os, s.operands[0]);
      os << " = ";
      emit_ref(os, s.operands[1]);
      os << " ;";
      break;
    case StmtKind::Add:
    case StmtKind::Sub:
    case StmtKind::Mul:
    case StmtKind::Div:
    case StmtKind::Compare:
      emit_ref(os, s.operands[0]);
      os << " = ";
      emit_ref(os, s.operands[1]);
      os << " " << binop_str(s.kind) << " ";
      emit_ref(os, s.operands[2]);
      os << " ;";
      break;
    case StmtKind::Branch: {
      os << "if ( ";
      emit_cond_operand(os, s.cond.lhs);
      os << " " << cmp_str(s.cond.op) << " ";
      emit_cond_operand(os, s.cond.rhs);
      os << " ) {";
      emit_body(os, s.then_body);
      os << " }";
      if (!s.else_body.empty()) {
        os << " else {";
        emit_body(os, s.else_body);
        os << " }";
      }
      break;
    }
  }
}

void emit_loop(std::ostringstream& os, const LoopNode& l) {
  if (l.pragma == Pragma::UnrollFull)
    os << "#pragma clang loop unroll(full) ";
  else if (l.pragma == Pragma::ParallelFor)
    os << "#pragma omp parallel for ";
  os << "for " << l.induction_var << " in ";
  os << l.lower.literal;
  os << ".." << (l.upper.symbolic ? l.upper.symbol : std::to_string(l.upper.literal));
  os << " step " << l.step << " {";
  for (const auto& it : l.body) {
    os << " ";
    if (it.is_loop()) {
      emit_loop(os, it.loop());
    } else {
      std::ostringstream tmp;
      emit_stmt(tmp, it.stmt());
      os << tmp.str();
    }
  }
  os << " }";
}

}  // namespace

RenderedWorkload render_pieces(const Workload& w) {
  RenderedWorkload out;
  {
    std::ostringstream os;
    os << "<G> nodes :";
    for (const auto& n : w.graph.nodes) os << " " << n;
    os << " ; edges :";
    for (const auto& [p, c] : w.graph.edges) os << " " << p << " -> " << c;
    os << " ;";
    out.pieces.push_back({{SegmentLabel::G, -1, 0, 0}, os.str()});
  }
  for (size_t k = 0; k < w.operators.size(); ++k) {
    const Operator& op = w.operators[k];
    std::ostringstream os;
    os << "<OP> " << k << " arrays :";
    for (const auto& a : op.arrays) {
      os << " " << a.name;
      for (long d : a.dims) os << "[" << d << "]";
    }
    os << " ;";
    if (!op.scalars.empty()) {
      os << " scalars :";
      for (const auto& s : op.scalars) os << " " << s;
      os << " ;";
    }
    os << " ";
    emit_loop(os, op.root);
    out.pieces.push_back({{SegmentLabel::OP, (int)k, 0, 0}, os.str()});
  }
  {
    std::ostringstream os;
    os << "<PARAMS> mem_read = " << w.params.mem_delay_read
       << " ; mem_write = " << w.params.mem_delay_write
       << " ; lanes = " << w.params.parallel_lanes << " ;";
    out.pieces.push_back({{SegmentLabel::PARAMS, -1, 0, 0}, os.str()});
  }
  if (w.input) {
    std::ostringstream os;
    os << "<DATA>";
    for (const auto& [k, v] : w.input->bindings) os << " " << k << " = " << v << " ,";
    out.pieces.push_back({{SegmentLabel::DATA, -1, 0, 0}, os.str()});
  }
  std::ostringstream full;
  for (size_t i = 0; i < out.pieces.size(); ++i) {
    if (i) full << " ";
    full << out.pieces[i].second;
  }
  out.text = full.str();
  return out;
}

// ---------------------------------------------------------------------------
// JSON serialization

namespace {

json bound_to_json(const Bound& b) {
  if (b.symbolic) return json{{"sym", b.symbol}};
  return json(b.literal);
}

Bound bound_from_json(const json& j) {
  if (j.is_object()) return Bound::sym(j.at("sym").get<std::string>());
  return Bound::lit(j.get<long>());
}

json cond_operand_to_json(const CondOperand& o) {
  switch (o.kind) {
    case CondOperand::Kind::Literal: return json{{"lit", o.literal}};
    case CondOperand::Kind::InductionVar: return json{{"ivar", o.name}};
    case CondOperand::Kind::Scalar: return json{{"scalar", o.name}};
    case CondOperand::Kind::InputSymbol: return json{{"input", o.name}};
    case CondOperand::Kind::ArrayElem:
      return json{{"array", o.name}, {"index", o.index_var}};
  }
  return {};
}

CondOperand cond_operand_from_json(const json& j) {
  if (j.contains("lit")) return CondOperand::lit(j.at("lit").get<long>());
  if (j.contains("ivar")) return CondOperand::ivar(j.at("ivar"));
  if (j.contains("scalar")) return CondOperand::scalar(j.at("scalar"));
  if (j.contains("input")) return CondOperand::input(j.at("input"));
  return CondOperand::elem(j.at("array"), j.at("index"));
}

const std::map<StmtKind, std::string> kKindNames = {
    {StmtKind::ArrayLoad, "array_load"}, {StmtKind::ArrayStore, "array_store"},
    {StmtKind::Add, "add"},              {StmtKind::Sub, "sub"},
    {StmtKind::Mul, "mul"},              {StmtKind::Div, "div"},
    {StmtKind::Compare, "compare"},      {StmtKind::Branch, "branch"}};

StmtKind kind_from_name(const std::string& n) {
  for (const auto& [k, v] : kKindNames)
    if (v == n) return k;
  throw IrError("unknown statement kind: " + n);
}

const std::map<CmpOp, std::string> kCmpNames = {
    {CmpOp::Lt, "lt"}, {CmpOp::Le, "le"}, {CmpOp::Gt, "gt"},
    {CmpOp::Ge, "ge"}, {CmpOp::Eq, "eq"}, {CmpOp::Ne, "ne"}};

CmpOp cmp_from_name(const std::string& n) {
  for (const auto& [k, v] : kCmpNames)
    if (v == n) return k;
  throw IrError("unknown cmp op: " + n);
}

json stmt_to_json(const Statement& s);

json stmt_list_to_json(const std::vector<Statement>& v) {
  json arr = json::array();
  for (const auto& s : v) arr.push_back(stmt_to_json(s));
  return arr;
}

json stmt_to_json(const Statement& s) {
  json j;
  j["kind"] = kKindNames.at(s.kind);
  json ops = json::array();
  for (const auto& r : s.operands) {
    if (r.is_array())
      ops.push_back(json{{"name", r.name}, {"index", r.index_var}});
    else
      ops.push_back(json{{"name", r.name}});
  }
  j["operands"] = ops;
  if (s.kind == StmtKind::Branch) {
    j["cond"] = json{{"lhs", cond_operand_to_json(s.cond.lhs)},
                     {"op", kCmpNames.at(s.cond.op)},
                     {"rhs", cond_operand_to_json(s.cond.rhs)}};
    j["then"] = stmt_list_to_json(s.then_body);
    j["else"] = stmt_list_to_json(s.else_body);
  }
  return j;
}

Statement stmt_from_json(const json& j);

std::vector<Statement> stmt_list_from_json(const json& arr) {
  std::vector<Statement> out;
  for (const auto& e : arr) out.push_back(stmt_from_json(e));
  return out;
}

Statement stmt_from_json(const json& j) {
  Statement s;
  s.kind = kind_from_name(j.at("kind"));
  for (const auto& o : j.at("operands")) {
    Ref r;
    r.name = o.at("name");
    if (o.contains("index")) r.index_var = o.at("index");
    s.operands.push_back(r);
  }
  if (s.kind == StmtKind::Branch) {
    s.cond.lhs = cond_operand_from_json(j.at("cond").at("lhs"));
    s.cond.op = cmp_from_name(j.at("cond").at("op"));
    s.cond.rhs = cond_operand_from_json(j.at("cond").at("rhs"));
    s.then_body = stmt_list_from_json(j.at("then"));
    s.else_body = stmt_list_from_json(j.at("else"));
  }
  return s;
}

json loop_to_json(const LoopNode& l) {
  json j;
  j["var"] = l.induction_var;
  j["lower"] = bound_to_json(l.lower);
  j["upper"] = bound_to_json(l.upper);
  j["step"] = l.step;
  j["pragma"] = l.pragma == Pragma::UnrollFull    ? "unroll_full"
                : l.pragma == Pragma::ParallelFor ? "parallel_for"
                                                  : "none";
  json body = json::array();
  for (const auto& it : l.body) {
    if (it.is_loop())
      body.push_back(json{{"loop", loop_to_json(it.loop())}});
    else
      body.push_back(json{{"stmt", stmt_to_json(it.stmt())}});
  }
  j["body"] = body;
  return j;
}

LoopNode loop_from_json(const json& j) {
  LoopNode l;
  l.induction_var = j.at("var");
  l.lower = bound_from_json(j.at("lower"));
  l.upper = bound_from_json(j.at("upper"));
  l.step = j.at("step").get<long>();
  std::string p = j.at("pragma");
  l.pragma = p == "unroll_full"    ? Pragma::UnrollFull
             : p == "parallel_for" ? Pragma::ParallelFor
                                   : Pragma::None;
  for (const auto& e : j.at("body")) {
    BodyItem it;
    if (e.contains("loop"))
      it.item = loop_from_json(e.at("loop"));
    else
      it.item = stmt_from_json(e.at("stmt"));
    l.body.push_back(std::move(it));
  }
  return l;
}

}  // namespace

std::string workload_to_json(const Workload& w) {
  json j;
  j["graph"]["nodes"] = w.graph.nodes;
  json edges = json::array();
  for (const auto& [p, c] : w.graph.edges) edges.push_back(json::array({p, c}));
  j["graph"]["edges"] = edges;
  json ops = json::array();
  for (const auto& op : w.operators) {
    json jo;
    jo["name"] = op.name;
    json arrs = json::array();
    for (const auto& a : op.arrays)
      arrs.push_back(json{{"name", a.name}, {"bits", a.element_bits}, {"dims", a.dims}});
    jo["arrays"] = arrs;
    jo["scalars"] = op.scalars;
    jo["root"] = loop_to_json(op.root);
    jo["input_symbols"] = op.input_symbols;
    ops.push_back(jo);
  }
  j["operators"] = ops;
  j["params"] = json{{"mem_delay_read", w.params.mem_delay_read},
                     {"mem_delay_write", w.params.mem_delay_write},
                     {"parallel_lanes", w.params.parallel_lanes}};
  if (w.input) {
    json b = json::array();
    for (const auto& [k, v] : w.input->bindings)
      b.push_back(json::array({k, v}));
    j["input"] = b;
  }
  return j.dump();
}

Workload workload_from_json(const std::string& text) {
  json j = json::parse(text);
  Workload w;
  w.graph.nodes = j.at("graph").at("nodes").get<std::vector<std::string>>();
  for (const auto& e : j.at("graph").at("edges"))
    w.graph.edges.push_back({e.at(0), e.at(1)});
  for (const auto& jo : j.at("operators")) {
    Operator op;
    op.name = jo.at("name");
    for (const auto& a : jo.at("arrays")) {
      ArrayDecl d;
      d.name = a.at("name");
      d.element_bits = a.at("bits");
      d.dims = a.at("dims").get<std::vector<long>>();
      op.arrays.push_back(d);
    }
    op.scalars = jo.at("scalars").get<std::vector<std::string>>();
    op.root = loop_from_json(jo.at("root"));
    op.input_symbols = jo.at("input_symbols").get<std::vector<std::string>>();
    w.operators.push_back(std::move(op));
  }
  w.params.mem_delay_read = j.at("params").at("mem_delay_read");
  w.params.mem_delay_write = j.at("params").at("mem_delay_write");
  w.params.parallel_lanes = j.at("params").at("parallel_lanes");
  if (j.contains("input")) {
    RuntimeInput in;
    for (const auto& b : j.at("input"))
      in.bindings.push_back({b.at(0), b.at(1)});
    w.input = in;
  }
  return w;
}

bool structurally_equal(const Workload& a, const Workload& b) {
  return workload_to_json(a) == workload_to_json(b);
}

}  // namespace costflow
