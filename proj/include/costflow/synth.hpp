#ifndef COSTFLOW_SYNTH_HPP
#define COSTFLOW_SYNTH_HPP

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "costflow/ir.hpp"
#include "costflow/oracle.hpp"

// Progressive dataset generator: AST tier, dataflow-specific tier (loop-tree
// templates with order/step mutation), and a rule-based mutation tier, plus
// hardware-parameter injection, input variation, and record formatting.

namespace costflow {

struct SynthError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MutationInapplicable : SynthError {
  MutationInapplicable() : SynthError("MutationInapplicable") {}
};
struct NoInputSymbols : SynthError {
  NoInputSymbols() : SynthError("NoInputSymbols") {}
};

using Rng = std::mt19937_64;

enum class RecordSource { Ast, Dataflow, Mutation };
enum class RecordFormat { Direct, Reasoning };

struct GenConfig {
  uint64_t seed = 0;
  double mix_ast = 0.30;
  double mix_dataflow = 0.50;
  double mix_mutation = 0.20;
  int depth_min = 3;
  int depth_max = 5;
  double array_stmt_fraction_min = 0.90;
  std::vector<long> mem_delay_choices = {10, 5, 2};
  double input_variation = 0.50;
  long base_input_value = 32;
  int variants_per_class2 = 5;  // input variants per Class II workload
  bool emit_reasoning = false;  // reasoning-format records (else direct)
  bool alternate_formats = false;  // "both": alternate direct/reasoning

  // Caps keeping every label inside its fixed digit width.
  double max_power = 9.999;
  double max_area = 999.9;
  long max_ff = 9999;
  long max_cycles = 999999;
};

struct DatasetRecord {
  std::string id;
  RecordSource source = RecordSource::Ast;
  Workload workload;
  CostVector labels;
  FeatureVector features;
  RecordFormat format = RecordFormat::Direct;
  std::string reasoning_text;  // "<think>...</think>" iff reasoning format
};

// Tier generators. Outputs always validate and are oracle-evaluable.
Workload gen_ast_program(const GenConfig& cfg, Rng& rng);
Workload gen_dataflow_program(const GenConfig& cfg, Rng& rng);

// One semantic rewrite (bound widening, loop fission/fusion, operator
// duplication with jitter). Throws MutationInapplicable when no rule matches.
Workload mutate_semantic(const Workload& w, Rng& rng);

// Memory delays from cfg.mem_delay_choices; 50% chance of annotating one
// eligible loop with unroll_full or parallel_for.
Workload inject_hw_params(const Workload& w, const GenConfig& cfg, Rng& rng);

// k input bindings, each symbol drawn around its base value +/- variation.
std::vector<RuntimeInput> vary_inputs(const Workload& w, const GenConfig& cfg,
                                      Rng& rng, int k = 5);

// Inputs for the calibration experiment: bases scaled into [lo, hi] x base,
// beyond the training range.
std::vector<RuntimeInput> shifted_inputs(const Workload& w, const GenConfig& cfg,
                                         Rng& rng, int k, double lo, double hi);

DatasetRecord format_record(const Workload& w,
                            const std::optional<RuntimeInput>& input,
                            RecordFormat fmt);

// n records in curriculum order (ast, dataflow, mutation), source mix within
// +/-2% of the configured fractions; Class II workloads get input variants.
std::vector<DatasetRecord> build_dataset(const GenConfig& cfg, int n);

// JSON Lines IO.
void write_records(const std::string& path,
                   const std::vector<DatasetRecord>& recs);
std::vector<DatasetRecord> read_records(const std::string& path);
std::string record_to_json(const DatasetRecord& r);
DatasetRecord record_from_json(const std::string& line);

// Corpus statistics used by the synthesizer gates.
struct CorpusStats {
  double array_stmt_fraction = 0.0;
  double mean_depth_dataflow = 0.0;
  int count_ast = 0, count_dataflow = 0, count_mutation = 0;
};
CorpusStats corpus_stats(const std::vector<DatasetRecord>& recs);

int max_loop_depth(const Operator& op);
// (array_ops, total statements) over a workload.
std::pair<long, long> array_stmt_counts(const Workload& w);

}  // namespace costflow

#endif  // COSTFLOW_SYNTH_HPP
