#ifndef COSTFLOW_ORACLE_HPP
#define COSTFLOW_ORACLE_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

#include "costflow/ir.hpp"

// Deterministic analytic profiler: structural power/area/ff estimates plus a
// cycle-accurate-ish interpretation of each loop tree against runtime inputs.

namespace costflow {

struct OracleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnboundSymbol : OracleError {
  explicit UnboundSymbol(const std::string& s)
      : OracleError("UnboundSymbol: " + s) {}
};
struct UnresolvableTrip : OracleError {
  UnresolvableTrip()
      : OracleError("UnresolvableTrip: unrolled/parallel loop has a symbolic bound") {}
};

struct CostVector {
  double power = 0.0;  // arbitrary power units
  double area = 0.0;   // arbitrary area units
  long ff = 0;         // flip-flop count
  long cycles = 0;     // cycle count
};

struct FeatureVector {
  long module_count = 0;
  long mux_count = 0;
  long mul_count = 0;
  long add_count = 0;
  long ff_count = 0;
  long mem_ports = 0;
};

struct StaticCosts {
  double power = 0.0;
  double area = 0.0;
  long ff = 0;
  FeatureVector features;
};

struct CycleStats {
  long cycles = 0;
  long executed_loads = 0;  // array loads on the executed path
};

// Synthetic contents of array elements for data-dependent branches.
inline long synthetic_array_value(long flat_index) {
  return (long)(((unsigned long)flat_index * 2654435761ull) % 256ull);
}

// Structural counts with unroll/parallel replication; no input needed.
// Throws UnresolvableTrip on a symbolic-bound unroll_full/parallel_for loop.
StaticCosts evaluate_static(const Workload& w);

// Loop-tree interpretation summed over topo order. Throws UnboundSymbol.
CycleStats evaluate_cycles(const Workload& w, const RuntimeInput& input);

struct OracleResult {
  CostVector cost;
  FeatureVector features;
  CycleStats stats;
};

OracleResult evaluate_full(const Workload& w, const RuntimeInput& input);

}  // namespace costflow

#endif  // COSTFLOW_ORACLE_HPP
