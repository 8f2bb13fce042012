#include "qap/experiment.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "qap/checkpoint.hpp"

namespace qap {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long long out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw harness_error("config: " + key + " expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw harness_error("config: " + key + " expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw harness_error("config: " + key + " expects true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  double m = mean_of(v), s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

SuiteRow make_row(std::string label, std::vector<double> per_seed) {
  SuiteRow r;
  r.label = std::move(label);
  r.per_seed = std::move(per_seed);
  r.mean = mean_of(r.per_seed);
  r.sd = sd_of(r.per_seed);
  return r;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw harness_error("cannot write: " + path);
  out << content;
}

}  // namespace

void HarnessConfig::apply(const std::string& key, const std::string& value) {
  if (key == "scenario") {
    dataset.scenario = value;
  } else if (key == "n_entities") {
    dataset.n_entities = int(to_int(key, value));
  } else if (key == "n_train") {
    dataset.n_train = int(to_int(key, value));
  } else if (key == "n_dev") {
    dataset.n_dev = int(to_int(key, value));
  } else if (key == "n_test") {
    dataset.n_test = int(to_int(key, value));
  } else if (key == "n_options") {
    dataset.n_options = int(to_int(key, value));
    pipeline.n_options = dataset.n_options;
  } else if (key == "data_seed") {
    dataset.seed = std::uint64_t(to_int(key, value));
  } else if (key == "mode") {
    try {
      pipeline.mode = mode_from_name(value);
    } catch (const trainer_error& e) {
      throw harness_error(std::string("config: ") + e.what());
    }
  } else if (key == "gamma") {
    pipeline.gamma = to_double(key, value);
  } else if (key == "layers") {
    pipeline.layers = int(to_int(key, value));
  } else if (key == "heads") {
    pipeline.heads = int(to_int(key, value));
  } else if (key == "d_g") {
    pipeline.d_g = int(to_int(key, value));
  } else if (key == "d_k") {
    pipeline.d_k = int(to_int(key, value));
  } else if (key == "d_f") {
    pipeline.d_f = int(to_int(key, value));
  } else if (key == "n_hops") {
    pipeline.n_hops = int(to_int(key, value));
  } else if (key == "cap") {
    pipeline.cap = int(to_int(key, value));
  } else if (key == "relation_embeddings") {
    pipeline.relation_embeddings = to_bool(key, value);
  } else if (key == "d_t") {
    d_t = int(to_int(key, value));
  } else if (key == "max_positions") {
    max_positions = int(to_int(key, value));
  } else if (key == "lm_steps") {
    lm_steps = int(to_int(key, value));
  } else if (key == "lm_lr") {
    lm_lr = to_double(key, value);
  } else if (key == "lm_seed") {
    lm_seed = std::uint64_t(to_int(key, value));
  } else if (key == "steps") {
    steps = int(to_int(key, value));
  } else if (key == "eval_every") {
    eval_every = int(to_int(key, value));
  } else if (key == "patience") {
    patience = int(to_int(key, value));
  } else if (key == "lr") {
    lr = to_double(key, value);
  } else if (key == "weight_decay") {
    weight_decay = to_double(key, value);
  } else if (key == "clip") {
    clip = to_double(key, value);
  } else if (key == "seed") {
    seed = std::uint64_t(to_int(key, value));
  } else if (key == "seeds") {
    seeds.clear();
    for (const auto& s : split_list(value)) seeds.push_back(std::uint64_t(to_int(key, s)));
    if (seeds.empty()) throw harness_error("config: seeds list is empty");
  } else if (key == "gammas") {
    gammas.clear();
    for (const auto& s : split_list(value)) gammas.push_back(to_double(key, s));
    if (gammas.empty()) throw harness_error("config: gammas list is empty");
  } else if (key == "data_dir") {
    data_dir = value;
  } else if (key == "out_dir") {
    out_dir = value;
  } else {
    throw harness_error("config: unknown key '" + key + "'");
  }
}

TrainConfig<float> HarnessConfig::train_config() const {
  TrainConfig<float> tc;
  tc.pipeline = pipeline;
  tc.opt.lr = float(lr);
  tc.opt.weight_decay = float(weight_decay);
  tc.opt.clip = float(clip);
  tc.steps = steps;
  tc.eval_every = eval_every;
  tc.patience = patience;
  tc.seed = seed;
  return tc;
}

std::uint64_t HarnessConfig::lm_hash(const std::vector<std::string>& corpus) const {
  std::ostringstream os;
  os << "d_t=" << d_t << ";max_positions=" << max_positions << ";steps=" << lm_steps
     << ";lr=" << lm_lr << ";seed=" << lm_seed << ";corpus=";
  std::uint64_t h = fnv1a(os.str());
  for (const auto& line : corpus) h = (h ^ fnv1a(line)) * 1099511628211ull;
  return h;
}

HarnessConfig parse_config(std::istream& in) {
  HarnessConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw harness_error("config line " + std::to_string(line_no) + ": expected key=value");
    cfg.apply(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return cfg;
}

HarnessConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw harness_error("cannot open config: " + path);
  return parse_config(in);
}

LoadedData load_data(const HarnessConfig& cfg) {
  LoadedData data;
  std::ifstream kg_in(cfg.data_dir + "/kg.tsv");
  if (!kg_in) throw harness_error("cannot open: " + cfg.data_dir + "/kg.tsv");
  data.kg = load_triples(kg_in);
  data.train = load_jsonl(cfg.data_dir + "/train.jsonl");
  data.dev = load_jsonl(cfg.data_dir + "/dev.jsonl");
  data.test = load_jsonl(cfg.data_dir + "/test.jsonl");
  data.corpus = load_lines(cfg.data_dir + "/corpus.txt");

  std::uint64_t want = cfg.lm_hash(data.corpus);
  std::string lm_path = cfg.data_dir + "/lm.qapc";
  bool loaded = false;
  if (std::filesystem::exists(lm_path)) {
    try {
      Checkpoint ck = load_checkpoint(lm_path, want);
      data.lm.vocab = Vocabulary::build(data.corpus);
      data.lm.d_t = cfg.d_t;
      data.lm.max_positions = cfg.max_positions;
      data.lm.seed = cfg.lm_seed;
      data.lm.params = std::move(ck.params);
      loaded = true;
    } catch (const checkpoint_error&) {
      // stale cache: settings or corpus changed; fall through to pretraining
    }
  }
  if (!loaded) {
    PretrainConfig pc;
    pc.d_t = cfg.d_t;
    pc.max_positions = cfg.max_positions;
    pc.steps = cfg.lm_steps;
    pc.lr = cfg.lm_lr;
    data.lm = pretrain_format<float>(data.corpus, cfg.lm_seed, pc);
    data.lm.params.config_hash = want;
    save_checkpoint(data.lm.params, nullptr, lm_path);
  }
  return data;
}

std::string run_result_json(const RunResult& r) {
  std::ostringstream os;
  os << "{\"mode\":\"" << r.mode << "\",\"seed\":" << r.seed << ",\"accuracy\":" << fmt(r.accuracy)
     << ",\"n_test\":" << r.n_test << ",\"config_hash\":" << r.config_hash << "}";
  return os.str();
}

RunResult run_experiment(const HarnessConfig& cfg, const LoadedData& data, Mode mode,
                         std::uint64_t seed, const std::string& out_dir) {
  HarnessConfig c = cfg;
  c.pipeline.mode = mode;
  c.seed = seed;
  c.pipeline.validate(data.lm.d_t);  // reject bad combinations before any compute

  TrainConfig<float> tc = c.train_config();
  RunResult r;
  r.train_result = train(data.train, data.dev, data.kg, data.lm, tc);
  std::vector<PreparedInstance<float>> test_prep;
  for (const auto& inst : data.test)
    test_prep.push_back(prepare_instance(inst, data.kg, data.lm, c.pipeline));
  r.mode = mode_name(mode);
  r.seed = seed;
  r.accuracy = evaluate(test_prep, data.kg, data.lm, r.train_result.params, c.pipeline);
  r.n_test = int(data.test.size());
  r.config_hash = c.pipeline.hash(data.lm.d_t);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::string stem = out_dir + "/" + r.mode + "_seed" + std::to_string(seed);
    std::ofstream metrics(stem + ".metrics.jsonl", std::ios::trunc);
    write_metrics_jsonl(r.train_result.metrics, metrics);
    write_file(stem + ".run.json", run_result_json(r) + "\n");
    save_checkpoint(r.train_result.params, &r.train_result.opt, stem + ".qapc");
  }
  return r;
}

void write_suite_csv(const std::vector<SuiteRow>& rows, const std::vector<std::uint64_t>& seeds,
                     std::ostream& out) {
  out << "label,seed,accuracy\n";
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.per_seed.size(); ++i)
      out << r.label << "," << seeds[i] << "," << fmt(r.per_seed[i]) << "\n";
}

std::string suite_json(const std::vector<SuiteRow>& rows, const std::vector<std::uint64_t>& seeds) {
  nlohmann::json j;
  j["seeds"] = seeds;
  for (const auto& r : rows)
    j["rows"].push_back(
        {{"label", r.label}, {"per_seed", r.per_seed}, {"mean", r.mean}, {"sd", r.sd}});
  return j.dump(2);
}

std::vector<SuiteRow> ablation_suite(const HarnessConfig& cfg, const LoadedData& data,
                                     const std::string& out_dir) {
  if (cfg.seeds.size() < 3) throw harness_error("ablation_suite: needs at least 3 seeds");
  std::vector<SuiteRow> rows;
  for (Mode m : {Mode::full, Mode::wo_q, Mode::wo_g, Mode::wo_q_g, Mode::wo_mh}) {
    std::vector<double> accs;
    for (std::uint64_t s : cfg.seeds) accs.push_back(run_experiment(cfg, data, m, s, out_dir).accuracy);
    rows.push_back(make_row(mode_name(m), std::move(accs)));
  }
  if (!out_dir.empty()) {
    std::ostringstream csv;
    write_suite_csv(rows, cfg.seeds, csv);
    write_file(out_dir + "/ablation.csv", csv.str());
    write_file(out_dir + "/ablation.json", suite_json(rows, cfg.seeds) + "\n");
  }
  return rows;
}

std::vector<SuiteRow> sweep_gamma(const HarnessConfig& cfg, const LoadedData& data,
                                  const std::vector<double>& values, const std::string& out_dir) {
  if (values.empty()) throw harness_error("sweep_gamma: empty value list");
  for (double g : values)
    if (!(g > 0.0 && g < 0.5))
      throw harness_error("sweep_gamma: gamma " + fmt(g) + " outside (0, 0.5)");
  std::vector<SuiteRow> rows;
  for (double g : values) {
    HarnessConfig c = cfg;
    c.pipeline.gamma = g;
    std::vector<double> accs;
    for (std::uint64_t s : cfg.seeds)
      accs.push_back(run_experiment(c, data, c.pipeline.mode, s, "").accuracy);
    std::ostringstream label;
    label << g;
    rows.push_back(make_row(label.str(), std::move(accs)));
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ostringstream csv;
    write_suite_csv(rows, cfg.seeds, csv);
    write_file(out_dir + "/sweep_gamma.csv", csv.str());
    write_file(out_dir + "/sweep_gamma.json", suite_json(rows, cfg.seeds) + "\n");
  }
  return rows;
}

std::string InspectReport::text() const {
  std::ostringstream os;
  os << "instance " << instance_id << "\n";
  for (std::size_t k = 0; k < options.size(); ++k) {
    char letter = char('A' + int(k));
    os << "  " << letter << ". " << options[k] << (int(k) == gold ? "  [gold]" : "") << "\n"
       << "     logit with prompt: " << logit_with[k]
       << "   without: " << logit_without[k] << "\n";
    if (k < subgraph_summaries.size()) os << "     " << subgraph_summaries[k] << "\n";
  }
  return os.str();
}

InspectReport inspect(const HarnessConfig& cfg, const LoadedData& data,
                      const ParameterStore<float>& params, const std::string& instance_id) {
  const McqaInstance* found = nullptr;
  for (const auto* split : {&data.test, &data.dev, &data.train}) {
    for (const auto& inst : *split)
      if (inst.id == instance_id) {
        found = &inst;
        break;
      }
    if (found) break;
  }
  if (!found) throw harness_error("unknown instance id: " + instance_id);

  PreparedInstance<float> prep = prepare_instance(*found, data.kg, data.lm, cfg.pipeline);
  InspectReport rep;
  rep.instance_id = instance_id;
  rep.gold = found->gold;
  rep.options = found->options;

  Tape<float> t;
  BoundParams<float> lmp = bind(t, data.lm.params, false);
  BoundParams<float> bound = bind(t, params, false);
  Mat<float> with =
      t.value(compute_logits(t, prep, data.kg, data.lm, lmp, bound, cfg.pipeline));
  Mat<float> without = score_with_prefix(data.lm, Mat<float>(), prep.prompt);
  for (int k = 0; k < found->n_options(); ++k) {
    rep.logit_with.push_back(double(with(0, Vocabulary::label_id(k))));
    rep.logit_without.push_back(double(without(0, Vocabulary::label_id(k))));
  }

  for (int k = 0; k < found->n_options(); ++k) {
    std::ostringstream os;
    if (cfg.pipeline.uses_graph()) {
      const ContextSubgraph& sg = prep.subgraphs[std::size_t(k)];
      int seeds = 0;
      for (bool b : sg.seed_mask) seeds += b;
      os << "subgraph: " << sg.size() << " nodes, " << sg.edges.size() << " edges, " << seeds
         << " seeds";
    } else {
      os << "subgraph: not retrieved in mode " << mode_name(cfg.pipeline.mode);
    }
    rep.subgraph_summaries.push_back(os.str());
  }
  return rep;
}

}  // namespace qap
