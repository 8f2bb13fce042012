// Command-line surface: dataset generation, LM pretraining, training,
// evaluation, ablations, gamma sweeps, and checkpoint inspection.
// Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric
// failure.
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "qap/checkpoint.hpp"
#include "qap/experiment.hpp"

namespace {

qap::HarnessConfig make_config(const std::string& config_path, std::uint64_t seed, bool seed_set,
                               const std::string& out_dir) {
  qap::HarnessConfig cfg;
  if (!config_path.empty()) cfg = qap::load_config(config_path);
  if (seed_set) {
    cfg.seed = seed;
    cfg.dataset.seed = seed;
  }
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{"question-aware KG soft-prompting pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, instance_id, mode_name;
  std::uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "key=value configuration file")->expected(1);
  app.add_option("--seed", seed, "run seed (also the dataset seed for gen-data)")
      ->each([&seed_set](const std::string&) { seed_set = true; });
  app.add_option("--out", out_dir, "output directory");

  auto* gen = app.add_subcommand("gen-data", "generate KG, splits, and pretraining corpus");
  auto* pre = app.add_subcommand("pretrain-lm", "pretrain and cache the frozen LM");
  auto* trn = app.add_subcommand("train", "train one (mode, seed) run and save a checkpoint");
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  auto* abl = app.add_subcommand("ablate", "run the mode ablation suite over the seed list");
  auto* swp = app.add_subcommand("sweep-gamma", "run the gamma sweep over the seed list");
  auto* ins = app.add_subcommand("inspect", "per-option logits for one instance");
  trn->add_option("--mode", mode_name, "pipeline mode override");
  evl->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
  ins->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
  ins->add_option("--instance", instance_id, "instance id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  qap::HarnessConfig cfg = make_config(config_path, seed, seed_set, out_dir);

  if (gen->parsed()) {
    qap::GeneratedDataset data = qap::generate_dataset(cfg.dataset);
    std::filesystem::create_directories(cfg.data_dir);
    qap::write_dataset(data, cfg.data_dir);
    std::cout << "wrote " << cfg.data_dir << ": " << data.kg_lines.size() << " triples, "
              << data.train.size() << "/" << data.dev.size() << "/" << data.test.size()
              << " instances\n";
    return 0;
  }
  if (pre->parsed()) {
    qap::LoadedData data = qap::load_data(cfg);
    std::cout << "LM ready: vocab " << data.lm.vocab.size() << ", checksum " << data.lm.checksum()
              << "\n";
    return 0;
  }

  qap::LoadedData data = qap::load_data(cfg);
  if (trn->parsed()) {
    if (!mode_name.empty()) cfg.pipeline.mode = qap::mode_from_name(mode_name);
    qap::RunResult r = qap::run_experiment(cfg, data, cfg.pipeline.mode, cfg.seed, cfg.out_dir);
    std::cout << qap::run_result_json(r) << "\n";
  } else if (evl->parsed()) {
    cfg.pipeline.validate(data.lm.d_t);
    qap::Checkpoint ck =
        qap::load_checkpoint(checkpoint_path, cfg.pipeline.hash(data.lm.d_t));
    std::vector<qap::PreparedInstance<float>> prep;
    for (const auto& inst : data.test)
      prep.push_back(qap::prepare_instance(inst, data.kg, data.lm, cfg.pipeline));
    double acc = qap::evaluate(prep, data.kg, data.lm, ck.params, cfg.pipeline);
    std::cout << "{\"accuracy\":" << acc << ",\"n_test\":" << data.test.size() << "}\n";
  } else if (abl->parsed()) {
    auto rows = qap::ablation_suite(cfg, data, cfg.out_dir);
    std::ostringstream csv;
    qap::write_suite_csv(rows, cfg.seeds, csv);
    std::cout << csv.str();
  } else if (swp->parsed()) {
    auto rows = qap::sweep_gamma(cfg, data, cfg.gammas, cfg.out_dir);
    std::ostringstream csv;
    qap::write_suite_csv(rows, cfg.seeds, csv);
    std::cout << csv.str();
  } else if (ins->parsed()) {
    cfg.pipeline.validate(data.lm.d_t);
    qap::Checkpoint ck =
        qap::load_checkpoint(checkpoint_path, cfg.pipeline.hash(data.lm.d_t));
    std::cout << qap::inspect(cfg, data, ck.params, instance_id).text();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const qap::trainer_error& e) {
    // the trainer wraps numeric failures; everything else it raises is config
    std::cerr << "error: " << e.what() << "\n";
    return std::string(e.what()).find("numeric failure") != std::string::npos ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
