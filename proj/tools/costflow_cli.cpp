#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "costflow/calibrate.hpp"
#include "costflow/eval.hpp"
#include "costflow/synth.hpp"
#include "costflow/train.hpp"

using namespace costflow;
using nlohmann::json;

namespace {

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config: " + path);
  return json::parse(f);
}

template <typename T>
void cfg_get(const json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

ModelConfig model_config_from(const json& j) {
  ModelConfig cfg;
  cfg_get(j, "embed_dim", &cfg.embed_dim);
  cfg_get(j, "ff_dim", &cfg.ff_dim);
  cfg_get(j, "heads", &cfg.heads);
  cfg_get(j, "local_layers", &cfg.local_layers);
  cfg_get(j, "temperature", &cfg.temperature);
  return cfg;
}

TrainConfig train_config_from(const json& j) {
  TrainConfig cfg;
  cfg_get(j, "epochs", &cfg.epochs);
  cfg_get(j, "batch_size", &cfg.batch_size);
  cfg_get(j, "lr", &cfg.lr);
  cfg_get(j, "aux_weight", &cfg.aux_weight);
  cfg_get(j, "train_regression", &cfg.train_regression);
  cfg_get(j, "use_masks", &cfg.use_masks);
  cfg_get(j, "time_budget_sec", &cfg.time_budget_sec);
  bool raw = false;
  cfg_get(j, "raw_number_tokens", &raw);
  cfg.mode = raw ? TokenizerMode::RawNumber : TokenizerMode::Digitwise;
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write: " + path);
  f << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"costflow: dataflow-accelerator cost model toolkit"};
  app.require_subcommand(1);

  uint64_t seed = 0;
  std::string config_path, out_path;
  app.add_option("--seed", seed, "RNG seed")->capture_default_str();
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out", out_path, "output path");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a dataset (JSON Lines)");
  int synth_n = 200;
  std::string mix = "0.30,0.50,0.20";
  std::string format = "direct";
  synth->add_option("--n", synth_n, "record count")->capture_default_str();
  synth->add_option("--mix", mix, "tier mix a,d,m")->capture_default_str();
  synth->add_option("--format", format, "direct|reasoning|both")
      ->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "static-stage training");
  std::string train_data;
  train->add_option("--data", train_data, "dataset JSONL")->required();

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "predict costs");
  std::string pred_model, pred_data;
  int beam = 3, samples = 1;
  predict_cmd->add_option("--model", pred_model, "checkpoint")->required();
  predict_cmd->add_option("--data", pred_data, "dataset JSONL")->required();
  predict_cmd->add_option("--beam", beam, "beam width")->capture_default_str();
  predict_cmd->add_option("--samples", samples, "stochastic samples")
      ->capture_default_str();

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "DPO calibration of cycles");
  std::string cal_model, cal_data, cal_heldout, cal_trace;
  int cal_iters = 10;
  cal->add_option("--model", cal_model, "checkpoint")->required();
  cal->add_option("--data", cal_data, "stream dataset JSONL")->required();
  cal->add_option("--heldout", cal_heldout, "held-out dataset JSONL")->required();
  cal->add_option("--iterations", cal_iters, "loop iterations")
      ->capture_default_str();
  cal->add_option("--trace", cal_trace, "trace output path");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_model, eval_data;
  eval_cmd->add_option("--model", eval_model, "checkpoint")->required();
  eval_cmd->add_option("--data", eval_data, "dataset JSONL")->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "paired ablation study");
  int abl_train_n = 600, abl_eval_n = 150;
  ablate->add_option("--train-n", abl_train_n, "training records")
      ->capture_default_str();
  ablate->add_option("--eval-n", abl_eval_n, "eval records")
      ->capture_default_str();

  // allow --seed/--config/--out after the subcommand name
  for (CLI::App* s : app.get_subcommands([](const CLI::App*) { return true; }))
    s->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    json cfgj = load_config(config_path);

    if (*synth) {
      GenConfig gc;
      gc.seed = seed;
      if (std::sscanf(mix.c_str(), "%lf,%lf,%lf", &gc.mix_ast, &gc.mix_dataflow,
                      &gc.mix_mutation) != 3)
        throw std::runtime_error("bad --mix");
      gc.emit_reasoning = format == "reasoning";
      gc.alternate_formats = format == "both";
      auto recs = build_dataset(gc, synth_n);
      if (out_path.empty()) throw std::runtime_error("--out required");
      write_records(out_path, recs);
      std::cout << "wrote " << recs.size() << " records to " << out_path << "\n";
    } else if (*train) {
      auto recs = read_records(train_data);
      Model m = init_model(model_config_from(cfgj), seed);
      TrainConfig tc = train_config_from(cfgj);
      tc.seed = seed;
      TrainStats st = train_static(m, recs, tc);
      if (out_path.empty()) throw std::runtime_error("--out required");
      save_model(m, out_path);
      json rep = {{"epoch_loss", st.epoch_loss},
                  {"records_seen", st.records_seen},
                  {"seconds", st.seconds},
                  {"budget_hit", st.budget_hit}};
      std::cout << rep.dump(2) << "\n";
    } else if (*predict_cmd) {
      Model m = load_model(pred_model);
      auto recs = read_records(pred_data);
      std::mt19937_64 rng(seed);
      json lines = json::array();
      for (const auto& r : recs) {
        Prediction p = costflow::predict(m, r.workload, r.workload.input, beam,
                                         samples, &rng);
        json rec = {{"id", r.id}};
        for (int i = 0; i < kNumMetrics; ++i) {
          json mj = {{"value", p.metric[i].value},
                     {"confidence", p.metric[i].confidence},
                     {"logprob", p.metric[i].logprob}};
          if (!p.metric[i].samples.empty()) mj["samples"] = p.metric[i].samples;
          rec[kMetricNames[i]] = mj;
        }
        lines.push_back(rec);
      }
      std::string text;
      for (const auto& l : lines) text += l.dump() + "\n";
      if (out_path.empty())
        std::cout << text;
      else
        write_text(out_path, text);
    } else if (*cal) {
      Model m = load_model(cal_model);
      auto stream_recs = read_records(cal_data);
      auto heldout = read_records(cal_heldout);
      std::vector<std::pair<Workload, RuntimeInput>> stream;
      for (const auto& r : stream_recs)
        stream.push_back({r.workload, r.workload.input.value_or(RuntimeInput{})});
      CalibrateConfig cc;
      cc.seed = seed;
      cc.iterations = cal_iters;
      cfg_get(cfgj, "beta", &cc.beta);
      cfg_get(cfgj, "lr", &cc.lr);
      cfg_get(cfgj, "buffer_capacity", &cc.buffer_capacity);
      cfg_get(cfgj, "minibatch", &cc.minibatch);
      CalibrateTrace tr = calibrate_loop(m, stream, heldout, cc);
      if (out_path.empty()) throw std::runtime_error("--out required");
      save_model(m, out_path);
      if (!cal_trace.empty()) write_text(cal_trace, tr.to_text());
      std::cout << tr.to_text();
    } else if (*eval_cmd) {
      Model m = load_model(eval_model);
      auto recs = read_records(eval_data);
      EvalReport rep;
      std::vector<double> train_labels;
      for (const auto& r : recs) train_labels.push_back((double)r.labels.cycles);
      for (int i = 0; i < kNumMetrics; ++i) {
        PredColumn c = predict_column(m, recs, (Metric)i);
        rep.metric[i].mape = mape(c.preds, c.truths).mape;
        rep.metric[i].mse = mse(c.preds, c.truths);
        rep.metric[i].n = (int)c.preds.size();
        if ((Metric)i == Metric::Cycles) {
          try {
            rep.confidence_error_pearson =
                confidence_error_correlation(c.confidences, c.sq_errors);
          } catch (const ZeroVariance&) {
          }
          rep.edge = edge_error_report(c.preds, c.truths, train_labels);
        }
      }
      std::string text = eval_report_to_json(rep) + "\n";
      if (out_path.empty())
        std::cout << text;
      else
        write_text(out_path, text);
    } else if (*ablate) {
      AblationConfig ac;
      ac.seed = seed;
      ac.train_n = abl_train_n;
      ac.eval_n = abl_eval_n;
      ac.model = model_config_from(cfgj);
      ac.train = train_config_from(cfgj);
      ac.train.seed = seed;
      EvalReport rep = run_ablation(ac);
      std::string text = eval_report_to_json(rep) + "\n";
      if (out_path.empty())
        std::cout << text;
      else
        write_text(out_path, text);
    }
    return 0;
  } catch (const std::exception& e) {
    json err = {{"error", typeid(e).name()}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
