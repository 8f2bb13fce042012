#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "qap/dataset.hpp"
#include "qap/lm.hpp"
#include "qap/trainer.hpp"

namespace qap {

class harness_error : public std::runtime_error {
 public:
  explicit harness_error(const std::string& what) : std::runtime_error(what) {}
};

// Flat key=value configuration shared by every subcommand; '#' starts a
// comment. Unknown keys are rejected so typos fail loudly.
struct HarnessConfig {
  DatasetConfig dataset;
  PipelineConfig pipeline;

  // frozen LM
  int d_t = 64;
  int max_positions = 128;
  int lm_steps = 20000;
  double lm_lr = 1e-3;
  std::uint64_t lm_seed = 42;

  // training
  int steps = 2000;
  int eval_every = 100;
  int patience = 0;
  double lr = 5e-4;
  double weight_decay = 0.01;
  double clip = 1.0;

  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<double> gammas = {0.05, 0.15, 1.0 / 3.0, 0.45};

  std::string data_dir = "data";
  std::string out_dir = "out";

  void apply(const std::string& key, const std::string& value);
  TrainConfig<float> train_config() const;
  std::uint64_t lm_hash(const std::vector<std::string>& corpus) const;
};

HarnessConfig parse_config(std::istream& in);
HarnessConfig load_config(const std::string& path);

// Dataset splits, the graph, and the pretrained frozen LM. The LM is cached
// at <data_dir>/lm.qapc keyed by a hash of the corpus and LM settings; a
// stale or missing cache triggers a fresh pretraining pass.
struct LoadedData {
  KnowledgeGraph kg;
  std::vector<McqaInstance> train, dev, test;
  std::vector<std::string> corpus;
  FrozenLm<float> lm;
};

LoadedData load_data(const HarnessConfig& cfg);

struct RunResult {
  std::string mode;
  std::uint64_t seed = 0;
  double accuracy = 0;
  int n_test = 0;
  std::uint64_t config_hash = 0;
  TrainResult<float> train_result;
};

std::string run_result_json(const RunResult& r);

// Trains one (mode, seed) run and evaluates on the test split. Writes
// metrics_<mode>_seed<seed>.jsonl plus the run-result JSON under out_dir
// when out_dir is nonempty.
RunResult run_experiment(const HarnessConfig& cfg, const LoadedData& data, Mode mode,
                         std::uint64_t seed, const std::string& out_dir = "");

struct SuiteRow {
  std::string label;  // mode name or gamma value
  std::vector<double> per_seed;
  double mean = 0;
  double sd = 0;
};

std::vector<SuiteRow> ablation_suite(const HarnessConfig& cfg, const LoadedData& data,
                                     const std::string& out_dir = "");

std::vector<SuiteRow> sweep_gamma(const HarnessConfig& cfg, const LoadedData& data,
                                  const std::vector<double>& values,
                                  const std::string& out_dir = "");

void write_suite_csv(const std::vector<SuiteRow>& rows, const std::vector<std::uint64_t>& seeds,
                     std::ostream& out);
std::string suite_json(const std::vector<SuiteRow>& rows, const std::vector<std::uint64_t>& seeds);

// Per-option label logits with and without the trained soft prompt, plus a
// one-line summary of each retrieved subgraph.
struct InspectReport {
  std::string instance_id;
  int gold = 0;
  std::vector<std::string> options;
  std::vector<double> logit_with, logit_without;
  std::vector<std::string> subgraph_summaries;

  std::string text() const;
};

InspectReport inspect(const HarnessConfig& cfg, const LoadedData& data,
                      const ParameterStore<float>& params, const std::string& instance_id);

}  // namespace qap
