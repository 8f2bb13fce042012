#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "qap/kg.hpp"
#include "qap/lm.hpp"
#include "qap/params.hpp"
#include "qap/tape.hpp"

namespace qap {

class qna_error : public std::runtime_error {
 public:
  explicit qna_error(const std::string& what) : std::runtime_error(what) {}
};

struct QnaConfig {
  int layers = 3;
  int heads = 4;
  int d_g = 64;
  int d_k = 16;
  double gamma = 1.0 / 3.0;
  bool relation_embeddings = true;
  // When false the question attention terms are removed entirely (no W'
  // parameters exist), together with gamma = 0. This is the w/o-Q surgery
  // and the only sanctioned way out of the open interval for gamma.
  bool question_terms = true;

  int head_width() const { return d_g / heads; }

  void validate() const {
    if (layers < 0) throw qna_error("qna: layer count must be >= 0");
    if (heads < 1) throw qna_error("qna: head count must be >= 1");
    if (d_g % heads != 0)
      throw qna_error("qna: node width " + std::to_string(d_g) + " not divisible by " +
                      std::to_string(heads) + " heads");
    if (question_terms) {
      if (!(gamma > 0.0 && gamma < 0.5))
        throw qna_error("qna: gamma must lie in (0, 0.5), got " + std::to_string(gamma));
    } else if (gamma != 0.0) {
      throw qna_error("qna: gamma must be 0 when question terms are removed");
    }
  }
};

namespace qna_names {
inline std::string layer(int l) { return "qna/l" + std::to_string(l); }
inline std::string head(int l, int h) { return layer(l) + "/h" + std::to_string(h); }
inline std::string w_q(int l, int h) { return head(l, h) + "/w_q"; }
inline std::string w_k(int l, int h) { return head(l, h) + "/w_k"; }
inline std::string wq_q(int l, int h) { return head(l, h) + "/wq_q"; }  // W'_Q
inline std::string wq_k(int l, int h) { return head(l, h) + "/wq_k"; }  // W'_K
inline std::string w_h(int l, int h) { return head(l, h) + "/w_h"; }
inline std::string w_o(int l) { return layer(l) + "/w_o"; }
inline std::string rel_emb(int l) { return layer(l) + "/rel_emb"; }
inline constexpr const char* projector = "projector";
}  // namespace qna_names

template <class S>
void init_qna_params(ParameterStore<S>& store, const QnaConfig& cfg, int d_t, int n_relations,
                     Rng& rng) {
  cfg.validate();
  // near-identity when widths agree: node features start in the token
  // embedding space, which makes name-to-token matching available at init
  Mat<S> proj = randn<S>(d_t, cfg.d_g, rng, 0.5 / std::sqrt(double(d_t)));
  if (d_t == cfg.d_g) proj += Mat<S>::Identity(d_t, cfg.d_g);
  store.add(qna_names::projector, std::move(proj));
  int dh = cfg.head_width();
  for (int l = 0; l < cfg.layers; ++l) {
    for (int h = 0; h < cfg.heads; ++h) {
      // matching init: one shared projection per head turns every attention
      // term into a similarity kernel at init (x W)(y W)^T ~ x y^T, so
      // question-aligned neighbors stand out before any training
      double ws = 1.0 / std::sqrt(double(cfg.d_g));
      Mat<S> shared = randn<S>(cfg.d_g, cfg.d_k, rng, 2.0 * ws);
      double ns = 0.25 * ws;
      store.add(qna_names::w_q(l, h), shared + randn<S>(cfg.d_g, cfg.d_k, rng, ns));
      store.add(qna_names::w_k(l, h), shared + randn<S>(cfg.d_g, cfg.d_k, rng, ns));
      if (cfg.question_terms) {
        double wt = 1.0 / std::sqrt(double(d_t));
        if (d_t == cfg.d_g) {
          store.add(qna_names::wq_q(l, h), shared + randn<S>(d_t, cfg.d_k, rng, ns));
          store.add(qna_names::wq_k(l, h), shared + randn<S>(d_t, cfg.d_k, rng, ns));
        } else {
          store.add(qna_names::wq_q(l, h), randn<S>(d_t, cfg.d_k, rng, wt));
          store.add(qna_names::wq_k(l, h), randn<S>(d_t, cfg.d_k, rng, wt));
        }
      }
      store.add(qna_names::w_h(l, h), randn<S>(cfg.d_g, dh, rng, ws));
    }
    // small output mix: keeps layer-0 name content dominant in the node
    // states, which the downstream prompt fusion reads at init
    store.add(qna_names::w_o(l), randn<S>(cfg.d_g, cfg.d_g, rng, 0.1 / std::sqrt(double(cfg.d_g))));
    if (cfg.relation_embeddings)
      store.add(qna_names::rel_emb(l), randn<S>(2 * std::max(1, n_relations), dh, rng, 0.3));
  }
}

// Layer-0 features: projector applied to the mean input-token embedding of
// each node's surface string.
template <class S>
TensorRef init_node_features(Tape<S>& t, const ContextSubgraph& sg, const KnowledgeGraph& kg,
                             const FrozenLm<S>& lm, const BoundParams<S>& params) {
  if (sg.empty()) throw qna_error("init_node_features: empty subgraph");
  const Mat<S>& table = lm.params.at("lm/tok_emb");
  Mat<S> pooled(sg.size(), lm.d_t);
  for (int i = 0; i < sg.size(); ++i) {
    std::vector<int> ids = lm.vocab.encode(kg.entity_name(sg.nodes[static_cast<std::size_t>(i)]));
    if (ids.empty()) ids.push_back(Vocabulary::kUnk);
    Mat<S> acc = Mat<S>::Zero(1, lm.d_t);
    for (int id : ids) acc += table.row(id);
    pooled.row(i) = acc / static_cast<S>(ids.size());
  }
  return t.matmul(t.leaf(std::move(pooled), false), params.at(qna_names::projector));
}

// Eq. (3) attention components for one (i, j) pair in one head; value-level
// reference used by tests and the inspect tooling.
template <class S>
struct AttnComponents {
  S n_ij;   // neighbor-neighbor
  S h_iq;   // head node vs question
  S t_qj;   // question vs tail node
};

template <class S>
AttnComponents<S> attention_components(const Mat<S>& w_q, const Mat<S>& w_k, const Mat<S>& wq_q,
                                       const Mat<S>& wq_k, const Mat<S>& h_i, const Mat<S>& h_j,
                                       const Mat<S>& q) {
  if (h_i.cols() != w_q.rows() || h_j.cols() != w_k.rows() || q.cols() != wq_q.rows() ||
      q.cols() != wq_k.rows() || w_q.cols() != w_k.cols())
    throw tape_error("attention_components: width mismatch");
  S inv = static_cast<S>(1.0 / std::sqrt(static_cast<double>(w_q.cols())));
  Mat<S> qi = h_i * w_q;
  Mat<S> kj = h_j * w_k;
  Mat<S> kq = q * wq_k;
  Mat<S> qq = q * wq_q;
  return {static_cast<S>(qi.row(0).dot(kj.row(0)) * inv),
          static_cast<S>(qi.row(0).dot(kq.row(0)) * inv),
          static_cast<S>(qq.row(0).dot(kj.row(0)) * inv)};
}

// Eqs. (4)-(5): weighted combination and softmax over a neighborhood.
template <class S>
std::vector<S> aggregation_weights(const std::vector<AttnComponents<S>>& comps, double gamma) {
  if (comps.empty()) throw qna_error("aggregation_weights: empty neighborhood");
  if (!(gamma >= 0.0 && gamma < 0.5))
    throw qna_error("aggregation_weights: gamma out of range");
  std::vector<S> a(comps.size());
  for (std::size_t j = 0; j < comps.size(); ++j)
    a[j] = static_cast<S>((1.0 - 2.0 * gamma) * comps[j].n_ij + gamma * comps[j].h_iq +
                          gamma * comps[j].t_qj);
  S mx = a[0];
  for (S v : a) mx = std::max(mx, v);
  S denom = 0;
  for (S& v : a) {
    v = std::exp(v - mx);
    denom += v;
  }
  for (S& v : a) v /= denom;
  return a;
}

// Optional trace of every alpha distribution, for normalization audits.
template <class S>
struct QnaTrace {
  // one entry per (layer, head): alpha per directed edge, grouped by the
  // aggregating node id in `dst`
  struct LayerHead {
    int layer;
    int head;
    Mat<S> alpha;  // E x 1
    std::vector<int> dst;
  };
  std::vector<LayerHead> entries;
};

// One QNA layer: multi-head question-aware aggregation, head concat, output
// mix, residual.
template <class S>
TensorRef qna_layer_forward(Tape<S>& t, TensorRef states, const ContextSubgraph& sg,
                            const BoundParams<S>& params, const QnaConfig& cfg, int layer,
                            const Mat<S>& q, QnaTrace<S>* trace = nullptr) {
  int n = static_cast<int>(t.value(states).rows());
  if (sg.edges.empty()) return states;  // all nodes isolated: pure residual

  std::vector<int> src_ids, dst_ids, rel_dir_ids;
  for (const auto& e : sg.edges) {
    src_ids.push_back(e.src);
    dst_ids.push_back(e.dst);
    rel_dir_ids.push_back(2 * e.relation + (e.dir == EdgeDir::forward ? 0 : 1));
  }

  TensorRef q_leaf{};
  if (cfg.question_terms) {
    Mat<S> qc = q;
    q_leaf = t.leaf(std::move(qc), false);
  }

  S inv_sqrt_dk = static_cast<S>(1.0 / std::sqrt(static_cast<double>(cfg.d_k)));
  std::vector<TensorRef> head_outputs;
  for (int h = 0; h < cfg.heads; ++h) {
    TensorRef qmat = t.matmul(states, params.at(qna_names::w_q(layer, h)));
    TensorRef kmat = t.matmul(states, params.at(qna_names::w_k(layer, h)));
    TensorRef q_i = t.lookup_rows(qmat, dst_ids);
    TensorRef k_j = t.lookup_rows(kmat, src_ids);

    TensorRef logits = t.scale(t.rowwise_dot(q_i, k_j),
                               static_cast<S>((1.0 - 2.0 * cfg.gamma)) * inv_sqrt_dk);
    if (cfg.question_terms) {
      TensorRef k_q = t.matmul(q_leaf, params.at(qna_names::wq_k(layer, h)));
      TensorRef q_q = t.matmul(q_leaf, params.at(qna_names::wq_q(layer, h)));
      TensorRef h_iq = t.matmul(q_i, t.transpose(k_q));
      TensorRef t_qj = t.matmul(k_j, t.transpose(q_q));
      S gs = static_cast<S>(cfg.gamma) * inv_sqrt_dk;
      logits = t.add(logits, t.add(t.scale(h_iq, gs), t.scale(t_qj, gs)));
    }
    TensorRef alpha = t.segment_softmax(logits, dst_ids, n);
    if (trace) trace->entries.push_back({layer, h, t.value(alpha), dst_ids});

    TensorRef msg = t.lookup_rows(t.matmul(states, params.at(qna_names::w_h(layer, h))), src_ids);
    if (cfg.relation_embeddings)
      msg = t.add(msg, t.lookup_rows(params.at(qna_names::rel_emb(layer)), rel_dir_ids));
    head_outputs.push_back(t.scatter_sum_rows(t.scale_rows(msg, alpha), dst_ids, n));
  }

  TensorRef z = cfg.heads == 1 ? head_outputs[0] : t.concat_cols(head_outputs);
  z = t.matmul(z, params.at(qna_names::w_o(layer)));
  return t.add(z, states);
}

// Full QNA: layer-0 init + L question-aware layers -> H_k (N x d_g).
template <class S>
TensorRef qna_forward(Tape<S>& t, const ContextSubgraph& sg, const KnowledgeGraph& kg,
                      const FrozenLm<S>& lm, const Mat<S>& q, const BoundParams<S>& params,
                      const QnaConfig& cfg, QnaTrace<S>* trace = nullptr) {
  if (sg.empty()) throw qna_error("qna_forward: empty subgraph");
  TensorRef states = init_node_features(t, sg, kg, lm, params);
  for (int l = 0; l < cfg.layers; ++l)
    states = qna_layer_forward(t, states, sg, params, cfg, l, q, trace);
  return states;
}

}  // namespace qap
