#ifndef COSTFLOW_TESTS_FIXTURES_HPP
#define COSTFLOW_TESTS_FIXTURES_HPP

// Hand-built workloads shared across the test suites. Values asserted against
// them are computed by hand from the documented cost rules, not by running
// the code under test.

#include "costflow/ir.hpp"

namespace fx {

using namespace costflow;

inline Statement load_stmt(std::string tmp, std::string arr, std::string iv) {
  Statement s;
  s.kind = StmtKind::ArrayLoad;
  s.operands = {Ref{std::move(tmp), ""}, Ref{std::move(arr), std::move(iv)}};
  return s;
}

inline Statement store_stmt(std::string arr, std::string iv, std::string tmp) {
  Statement s;
  s.kind = StmtKind::ArrayStore;
  s.operands = {Ref{std::move(arr), std::move(iv)}, Ref{std::move(tmp), ""}};
  return s;
}

inline Statement bin_stmt(StmtKind k, std::string dst, std::string a,
                          std::string b) {
  Statement s;
  s.kind = k;
  s.operands = {Ref{std::move(dst), ""}, Ref{std::move(a), ""},
                Ref{std::move(b), ""}};
  return s;
}

// for i in 0..10 { t0 = a[i]; t1 = b[i]; t2 = t0 + t1; c[i] = t2 }
inline Operator vec_add_op(Pragma pragma = Pragma::None,
                           Bound upper = Bound::lit(10)) {
  Operator op;
  op.name = "vadd";
  op.arrays = {{"a", 32, {16}}, {"b", 32, {16}}, {"c", 32, {16}}};
  LoopNode l;
  l.induction_var = "i";
  l.lower = Bound::lit(0);
  l.upper = upper;
  l.step = 1;
  l.pragma = pragma;
  l.body.push_back(BodyItem{load_stmt("t0", "a", "i")});
  l.body.push_back(BodyItem{load_stmt("t1", "b", "i")});
  l.body.push_back(BodyItem{bin_stmt(StmtKind::Add, "t2", "t0", "t1")});
  l.body.push_back(BodyItem{store_stmt("c", "i", "t2")});
  op.root = l;
  if (upper.symbolic) op.input_symbols = {upper.symbol};
  return op;
}

inline Workload vec_add_workload(Pragma pragma = Pragma::None) {
  Workload w;
  w.operators = {vec_add_op(pragma)};
  w.graph.nodes = {"vadd"};
  w.params = HardwareParams{};  // read=2 write=2 lanes=4
  return w;
}

// Class II: same loop but upper bound is the input symbol N.
inline Workload vec_add_symbolic(long n_value) {
  Workload w;
  w.operators = {vec_add_op(Pragma::None, Bound::sym("N"))};
  w.graph.nodes = {"vadd"};
  w.params = HardwareParams{};
  RuntimeInput in;
  in.bindings = {{"N", n_value}};
  w.input = in;
  return w;
}

}  // namespace fx

#endif
