#ifndef COSTFLOW_IR_HPP
#define COSTFLOW_IR_HPP

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

// Dataflow-program intermediate representation: a graph of loop-tree
// operators plus hardware parameters and optional runtime input bindings.

namespace costflow {

struct IrError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CyclicGraph : IrError {
  CyclicGraph() : IrError("CyclicGraph: dataflow graph contains a cycle") {}
};
struct NegativeRange : IrError {
  NegativeRange() : IrError("NegativeRange: resolved upper < lower") {}
};

// A loop bound: integer literal, or a reference to a runtime input symbol.
struct Bound {
  bool symbolic = false;
  long literal = 0;
  std::string symbol;

  static Bound lit(long v) { return {false, v, {}}; }
  static Bound sym(std::string s) { return {true, 0, std::move(s)}; }
};

enum class Pragma { None, UnrollFull, ParallelFor };

enum class StmtKind {
  ArrayLoad,
  ArrayStore,
  Add,
  Sub,
  Mul,
  Div,
  Compare,
  Branch,
};

enum class CmpOp { Lt, Le, Gt, Ge, Eq, Ne };

// One side of a branch condition.
struct CondOperand {
  enum class Kind { Literal, InductionVar, Scalar, InputSymbol, ArrayElem };
  Kind kind = Kind::Literal;
  long literal = 0;
  std::string name;       // var / scalar / symbol / array name
  std::string index_var;  // for ArrayElem: indexing induction variable

  static CondOperand lit(long v) { return {Kind::Literal, v, {}, {}}; }
  static CondOperand ivar(std::string n) {
    return {Kind::InductionVar, 0, std::move(n), {}};
  }
  static CondOperand scalar(std::string n) {
    return {Kind::Scalar, 0, std::move(n), {}};
  }
  static CondOperand input(std::string n) {
    return {Kind::InputSymbol, 0, std::move(n), {}};
  }
  static CondOperand elem(std::string arr, std::string idx) {
    return {Kind::ArrayElem, 0, std::move(arr), std::move(idx)};
  }
};

struct Condition {
  CondOperand lhs;
  CmpOp op = CmpOp::Lt;
  CondOperand rhs;
};

// An array access `name[index_var]` (or a plain scalar when index empty).
struct Ref {
  std::string name;
  std::string index_var;  // empty → scalar/temp reference
  bool is_array() const { return !index_var.empty(); }
};

struct LoopNode;

// Primitive statement. Destination first, sources after.
//   ArrayLoad:  dst temp,  src array ref
//   ArrayStore: dst array ref, src temp
//   Add/Sub/Mul/Div/Compare: dst temp, two sources
//   Branch: condition + then/else bodies
struct Statement {
  StmtKind kind = StmtKind::Add;
  std::vector<Ref> operands;
  Condition cond;  // Branch only
  std::vector<Statement> then_body;
  std::vector<Statement> else_body;
};

// Body item: either a statement or a nested loop.
struct BodyItem;

struct LoopNode {
  std::string induction_var;
  Bound lower;  // literal only (by construction)
  Bound upper;  // literal or input symbol
  long step = 1;
  Pragma pragma = Pragma::None;
  std::vector<BodyItem> body;
};

struct BodyItem {
  // exactly one of the two is active
  std::variant<Statement, LoopNode> item;
  bool is_loop() const { return std::holds_alternative<LoopNode>(item); }
  const LoopNode& loop() const { return std::get<LoopNode>(item); }
  const Statement& stmt() const { return std::get<Statement>(item); }
  LoopNode& loop() { return std::get<LoopNode>(item); }
  Statement& stmt() { return std::get<Statement>(item); }
};

struct ArrayDecl {
  std::string name;
  int element_bits = 32;
  std::vector<long> dims;
};

struct Operator {
  std::string name;
  std::vector<ArrayDecl> arrays;
  std::vector<std::string> scalars;
  LoopNode root;
  std::vector<std::string> input_symbols;
};

struct DataflowGraph {
  std::vector<std::string> nodes;
  std::vector<std::pair<std::string, std::string>> edges;
};

struct HardwareParams {
  long mem_delay_read = 2;
  long mem_delay_write = 2;
  long parallel_lanes = 4;
};

struct RuntimeInput {
  std::vector<std::pair<std::string, long>> bindings;

  std::optional<long> lookup(const std::string& sym) const {
    for (const auto& [k, v] : bindings)
      if (k == sym) return v;
    return std::nullopt;
  }
};

struct Workload {
  DataflowGraph graph;
  std::vector<Operator> operators;
  HardwareParams params;
  std::optional<RuntimeInput> input;
};

// ---------------------------------------------------------------------------

enum class OperatorClass { ClassI, ClassII };

enum class SegmentLabel { G, OP, PARAMS, DATA };

struct SegmentSpan {
  SegmentLabel label;
  int op_index = -1;  // valid when label == OP
  int token_begin = 0;
  int token_end = 0;  // exclusive
};

struct SegmentMap {
  std::vector<SegmentSpan> spans;
};

// Rendered form: full text plus per-segment pieces (joined by single spaces
// in `text`). Token spans are filled in by the tokenizer-aware renderer.
struct RenderedWorkload {
  std::string text;
  std::vector<std::pair<SegmentSpan, std::string>> pieces;
};

// Deterministic C-like rendering with <G>/<OP k>/<PARAMS>/<DATA> delimiters.
RenderedWorkload render_pieces(const Workload& w);

// Class I iff no loop bound and no branch condition references an input symbol.
OperatorClass classify_operator(const Operator& op);

std::vector<OperatorClass> classify_all(const Workload& w);

// Producer-before-consumer order, ties broken by declaration order.
// Throws CyclicGraph.
std::vector<std::string> topo_order(const DataflowGraph& g);

// ceil((upper - lower)/step); nullopt when the upper symbol is unbound.
// Throws NegativeRange when the resolved range is negative.
std::optional<long> trip_count(const LoopNode& loop, const RuntimeInput* input);

// Structural validation per the type invariants; throws IrError on violation.
void validate(const Workload& w);

// Set of input symbols actually referenced in bounds/conditions of `op`.
std::vector<std::string> referenced_input_symbols(const Operator& op);

bool structurally_equal(const Workload& a, const Workload& b);

// JSON (de)serialization of the structured form.
std::string workload_to_json(const Workload& w);
Workload workload_from_json(const std::string& text);

}  // namespace costflow

#endif  // COSTFLOW_IR_HPP
