#pragma once

#include <chrono>
#include <cmath>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "qap/gtp.hpp"
#include "qap/kg.hpp"
#include "qap/lm.hpp"
#include "qap/mcqa.hpp"
#include "qap/optim.hpp"
#include "qap/qna.hpp"

namespace qap {

class trainer_error : public std::runtime_error {
 public:
  explicit trainer_error(const std::string& what) : std::runtime_error(what) {}
};

enum class Mode { full, wo_q, wo_g, wo_q_g, wo_mh, llm_only, sp_only };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::full: return "full";
    case Mode::wo_q: return "wo_q";
    case Mode::wo_g: return "wo_g";
    case Mode::wo_q_g: return "wo_q_g";
    case Mode::wo_mh: return "wo_mh";
    case Mode::llm_only: return "llm_only";
    case Mode::sp_only: return "sp_only";
  }
  throw trainer_error("unknown mode");
}

inline Mode mode_from_name(const std::string& s) {
  for (Mode m : {Mode::full, Mode::wo_q, Mode::wo_g, Mode::wo_q_g, Mode::wo_mh, Mode::llm_only,
                 Mode::sp_only})
    if (s == mode_name(m)) return m;
  throw trainer_error("unknown mode: " + s);
}

// Everything that shapes the trainable pipeline. The mode applies its
// parameter surgery in qna_config()/gtp_config(), so ablations differ only
// here.
struct PipelineConfig {
  Mode mode = Mode::full;
  int n_options = 4;
  int layers = 3;
  int heads = 4;
  int d_g = 64;
  int d_k = 16;
  double gamma = 1.0 / 3.0;
  bool relation_embeddings = true;
  int n_hops = 2;
  int cap = 64;
  int d_f = 0;  // prompt-fusion hidden width; 0 means 2 * d_t

  bool uses_graph() const { return mode != Mode::llm_only && mode != Mode::sp_only; }
  bool question_terms() const { return mode != Mode::wo_q && mode != Mode::wo_q_g; }

  QnaConfig qna_config() const {
    QnaConfig q;
    q.layers = layers;
    q.heads = mode == Mode::wo_mh ? 1 : heads;
    q.d_g = d_g;
    q.d_k = d_k;
    q.relation_embeddings = relation_embeddings;
    q.question_terms = question_terms();
    q.gamma = q.question_terms ? gamma : 0.0;
    return q;
  }

  GtpConfig gtp_config(int d_t) const {
    GtpConfig g;
    g.n_options = n_options;
    g.d_g = d_g;
    g.d_t = d_t;
    g.d_f = d_f;
    g.global = mode != Mode::wo_g && mode != Mode::wo_q_g;
    return g;
  }

  void validate(int d_t) const {
    if (n_options < 2 || n_options > Vocabulary::kMaxLabels)
      throw trainer_error("pipeline: option count out of range");
    if (n_hops < 0 || cap < 1) throw trainer_error("pipeline: bad retrieval bounds");
    if (uses_graph()) {
      qna_config().validate();
      gtp_config(d_t).validate();
    }
  }

  std::string canonical(int d_t) const {
    std::ostringstream os;
    os << "mode=" << mode_name(mode) << ";n=" << n_options << ";L=" << layers << ";H=" << heads
       << ";d_g=" << d_g << ";d_k=" << d_k << ";gamma=" << gamma
       << ";rel=" << (relation_embeddings ? 1 : 0) << ";hops=" << n_hops << ";cap=" << cap
       << ";d_f=" << d_f << ";d_t=" << d_t;
    return os.str();
  }

  std::uint64_t hash(int d_t) const { return fnv1a(canonical(d_t)); }
};

template <class S>
ParameterStore<S> init_pipeline_params(const PipelineConfig& cfg, int d_t, int n_relations,
                                       std::uint64_t seed) {
  cfg.validate(d_t);
  ParameterStore<S> store;
  Rng rng(seed ^ fnv1a("pipeline_init"));
  if (cfg.uses_graph()) {
    init_qna_params(store, cfg.qna_config(), d_t, n_relations, rng);
    init_gtp_params(store, cfg.gtp_config(d_t), rng);
  } else if (cfg.mode == Mode::sp_only) {
    store.add("sp/prompt", randn<S>(cfg.n_options, d_t, rng, 0.3));
  }
  store.config_hash = cfg.hash(d_t);
  return store;
}

// Per-instance constants computed once and reused across epochs: the
// rendered prompt, the pooled question encoding, the retrieved subgraphs,
// and the option token sequences.
template <class S>
struct PreparedInstance {
  McqaInstance inst;
  std::string prompt;
  Mat<S> q;
  std::vector<ContextSubgraph> subgraphs;
  std::vector<Mat<S>> sequences;
};

template <class S>
PreparedInstance<S> prepare_instance(const McqaInstance& inst, const KnowledgeGraph& kg,
                                     const FrozenLm<S>& lm, const PipelineConfig& cfg) {
  inst.validate();
  if (inst.n_options() != cfg.n_options)
    throw trainer_error("instance " + inst.id + ": option count " +
                        std::to_string(inst.n_options()) + " != configured " +
                        std::to_string(cfg.n_options));
  PreparedInstance<S> prep;
  prep.inst = inst;
  prep.prompt = render_prompt(inst);
  if (cfg.uses_graph()) {
    prep.q = encode_question(lm, inst.question);
    for (int k = 0; k < inst.n_options(); ++k) {
      const std::string& opt = inst.options[static_cast<std::size_t>(k)];
      prep.subgraphs.push_back(retrieve_subgraph(kg, inst.question, opt, cfg.n_hops, cfg.cap, k));
      prep.sequences.push_back(option_sequence(lm, inst.question, opt));
    }
  }
  return prep;
}

// Next-token logits (1 x V) for one instance under the configured mode.
template <class S>
TensorRef compute_logits(Tape<S>& t, const PreparedInstance<S>& prep, const KnowledgeGraph& kg,
                         const FrozenLm<S>& lm, const BoundParams<S>& lmp,
                         const BoundParams<S>& params, const PipelineConfig& cfg,
                         QnaTrace<S>* qna_trace = nullptr, GtpTrace<S>* gtp_trace = nullptr) {
  TensorRef prefix{};
  if (cfg.mode == Mode::sp_only) {
    prefix = params.at("sp/prompt");
  } else if (cfg.uses_graph()) {
    QnaConfig qcfg = cfg.qna_config();
    std::vector<TensorRef> states;
    for (const auto& sg : prep.subgraphs)
      states.push_back(sg.empty() ? TensorRef{}
                                  : qna_forward(t, sg, kg, lm, prep.q, params, qcfg, qna_trace));
    prefix = gtp_forward(t, states, prep.sequences, params, cfg.gtp_config(lm.d_t), gtp_trace);
  }
  return score_with_prefix(t, lmp, lm, prefix, prep.prompt);
}

// Eq.-(10)-style objective: cross-entropy of the gold option's label token.
template <class S>
TensorRef compute_loss(Tape<S>& t, const PreparedInstance<S>& prep, const KnowledgeGraph& kg,
                       const FrozenLm<S>& lm, const BoundParams<S>& lmp,
                       const BoundParams<S>& params, const PipelineConfig& cfg) {
  TensorRef logits = compute_logits(t, prep, kg, lm, lmp, params, cfg);
  return cross_entropy(t, logits, Vocabulary::label_id(prep.inst.gold));
}

// Convenience entry point used by tests: prepares and scores in one call.
template <class S>
S instance_loss(const McqaInstance& inst, const KnowledgeGraph& kg, const FrozenLm<S>& lm,
                const ParameterStore<S>& params, const PipelineConfig& cfg) {
  PreparedInstance<S> prep = prepare_instance(inst, kg, lm, cfg);
  Tape<S> t;
  BoundParams<S> lmp = bind(t, lm.params, false);
  BoundParams<S> bound = bind(t, params, false);
  return t.value(compute_loss(t, prep, kg, lm, lmp, bound, cfg))(0, 0);
}

// Predicted option: argmax over the first n label logits.
template <class S>
int predict(const PreparedInstance<S>& prep, const KnowledgeGraph& kg, const FrozenLm<S>& lm,
            const ParameterStore<S>& params, const PipelineConfig& cfg) {
  Tape<S> t;
  BoundParams<S> lmp = bind(t, lm.params, false);
  BoundParams<S> bound = bind(t, params, false);
  Mat<S> logits = t.value(compute_logits(t, prep, kg, lm, lmp, bound, cfg));
  int best = 0;
  for (int k = 1; k < prep.inst.n_options(); ++k)
    if (logits(0, Vocabulary::label_id(k)) > logits(0, Vocabulary::label_id(best))) best = k;
  return best;
}

template <class S>
double evaluate(const std::vector<PreparedInstance<S>>& set, const KnowledgeGraph& kg,
                const FrozenLm<S>& lm, const ParameterStore<S>& params,
                const PipelineConfig& cfg) {
  if (set.empty()) throw trainer_error("evaluate: empty set");
  int hits = 0;
  for (const auto& prep : set)
    if (predict(prep, kg, lm, params, cfg) == prep.inst.gold) ++hits;
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

struct MetricsRow {
  std::uint64_t step = 0;
  double train_loss = 0;
  double dev_acc = 0;
  double wall_ms = 0;
};

// One JSON object per line. wall_ms is wall-clock and is the only field
// exempt from run-to-run determinism.
inline void write_metrics_jsonl(const std::vector<MetricsRow>& rows, std::ostream& out) {
  out.precision(17);
  for (const auto& r : rows)
    out << "{\"step\":" << r.step << ",\"train_loss\":" << r.train_loss
        << ",\"dev_acc\":" << r.dev_acc << ",\"wall_ms\":" << r.wall_ms << "}\n";
}

template <class S>
struct TrainConfig {
  PipelineConfig pipeline;
  AdamWConfig<S> opt;
  int steps = 2000;
  int eval_every = 100;
  int patience = 0;  // steps without dev improvement before stopping; 0 = off
  std::uint64_t seed = 0;
};

template <class S>
struct TrainResult {
  ParameterStore<S> params;  // best-dev snapshot
  AdamW<S> opt{AdamWConfig<S>{}};
  std::vector<MetricsRow> metrics;
  double best_dev_acc = 0;
  std::uint64_t best_step = 0;
  std::uint64_t final_step = 0;
};

// Single-threaded AdamW loop over per-instance losses. Data order comes
// from a named stream of the run seed, so every mode sharing a seed sees
// the identical instance order.
template <class S>
TrainResult<S> train(const std::vector<McqaInstance>& train_set,
                     const std::vector<McqaInstance>& dev_set, const KnowledgeGraph& kg,
                     const FrozenLm<S>& lm, const TrainConfig<S>& cfg) {
  if (train_set.empty() || dev_set.empty()) throw trainer_error("train: empty split");
  if (cfg.steps < 1) throw trainer_error("train: steps must be >= 1");
  cfg.pipeline.validate(lm.d_t);

  std::vector<PreparedInstance<S>> train_prep, dev_prep;
  for (const auto& inst : train_set) train_prep.push_back(prepare_instance(inst, kg, lm, cfg.pipeline));
  for (const auto& inst : dev_set) dev_prep.push_back(prepare_instance(inst, kg, lm, cfg.pipeline));

  TrainResult<S> result;
  result.opt = AdamW<S>(cfg.opt);
  ParameterStore<S> params =
      init_pipeline_params<S>(cfg.pipeline, lm.d_t, kg.relation_count(), cfg.seed);

  auto start = std::chrono::steady_clock::now();
  auto wall_ms = [&start]() {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
  };

  if (params.count() == 0) {  // llm_only: nothing to optimize
    result.params = params;
    result.best_dev_acc = evaluate(dev_prep, kg, lm, params, cfg.pipeline);
    result.metrics.push_back({0, 0.0, result.best_dev_acc, wall_ms()});
    return result;
  }

  Rng order_rng(cfg.seed ^ fnv1a("train/order"));
  std::vector<std::size_t> order(train_prep.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // forces an initial shuffle

  result.params = params;
  result.best_dev_acc = -1;
  for (int step = 1; step <= cfg.steps; ++step) {
    if (cursor >= order.size()) {
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(order_rng.next_below(i))]);
      cursor = 0;
    }
    const PreparedInstance<S>& prep = train_prep[order[cursor++]];

    S loss_value;
    std::map<std::string, Mat<S>> grads;
    try {
      Tape<S> t;
      BoundParams<S> lmp = bind(t, lm.params, false);
      BoundParams<S> bound = bind(t, params, true);
      TensorRef loss = compute_loss(t, prep, kg, lm, lmp, bound, cfg.pipeline);
      loss_value = t.value(loss)(0, 0);
      if (!std::isfinite(static_cast<double>(loss_value)))
        throw numeric_error("non-finite loss");
      t.backward(loss);
      grads = collect_grads(t, bound);
    } catch (const numeric_error& e) {
      throw trainer_error("numeric failure at step " + std::to_string(step) + " on instance " +
                          prep.inst.id + ": " + e.what());
    }
    result.opt.step(params, grads);
    params.step = static_cast<std::uint64_t>(step);

    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      double acc = evaluate(dev_prep, kg, lm, params, cfg.pipeline);
      result.metrics.push_back({static_cast<std::uint64_t>(step),
                                static_cast<double>(loss_value), acc, wall_ms()});
      if (acc > result.best_dev_acc) {
        result.best_dev_acc = acc;
        result.best_step = static_cast<std::uint64_t>(step);
        result.params = params;
      }
      if (cfg.patience > 0 &&
          static_cast<std::uint64_t>(step) >= result.best_step + static_cast<std::uint64_t>(cfg.patience))
        break;
    }
    result.final_step = static_cast<std::uint64_t>(step);
  }
  return result;
}

}  // namespace qap
