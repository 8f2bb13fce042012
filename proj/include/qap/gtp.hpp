#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "qap/params.hpp"
#include "qap/tape.hpp"

namespace qap {

class gtp_error : public std::runtime_error {
 public:
  explicit gtp_error(const std::string& what) : std::runtime_error(what) {}
};

struct GtpConfig {
  int n_options = 4;
  int d_g = 64;
  int d_t = 64;
  int d_f = 0;  // fusion hidden width; 0 means 2 * d_t
  // When false each option cross-attends only against its own token
  // sequence and the fusion input narrows to d_t. This is the w/o-G surgery.
  bool global = true;

  int fusion_hidden() const { return d_f > 0 ? d_f : 2 * d_t; }
  int fusion_input() const { return (global ? n_options : 1) * d_t; }

  void validate() const {
    if (n_options < 2) throw gtp_error("gtp: need at least 2 options");
    if (d_g < 1 || d_t < 1) throw gtp_error("gtp: widths must be positive");
  }
};

namespace gtp_names {
inline constexpr const char* w_pg = "gtp/w_pg";
inline constexpr const char* w_pt = "gtp/w_pt";
inline constexpr const char* ffn_w1 = "gtp/ffn/w1";
inline constexpr const char* ffn_b1 = "gtp/ffn/b1";
inline constexpr const char* ffn_w2 = "gtp/ffn/w2";
inline constexpr const char* ffn_b2 = "gtp/ffn/b2";
inline constexpr const char* null_prompt = "gtp/null_prompt";
}  // namespace gtp_names

template <class S>
void init_gtp_params(ParameterStore<S>& store, const GtpConfig& cfg, Rng& rng) {
  cfg.validate();
  // near-identity projections give a meaningful name-to-token attention
  // kernel at init instead of a random bilinear form
  // the overall x3 sharpens beta so each node reads mostly its best-matching
  // token instead of a near-uniform token average
  Mat<S> w_pg = randn<S>(cfg.d_g, cfg.d_t, rng, 0.5 / std::sqrt(double(cfg.d_g)));
  if (cfg.d_g == cfg.d_t) w_pg += Mat<S>::Identity(cfg.d_g, cfg.d_t);
  store.add(gtp_names::w_pg, Mat<S>(w_pg * static_cast<S>(3)));
  store.add(gtp_names::w_pt,
            Mat<S>((Mat<S>::Identity(cfg.d_t, cfg.d_t) +
                    randn<S>(cfg.d_t, cfg.d_t, rng, 0.5 / std::sqrt(double(cfg.d_t)))) *
                   static_cast<S>(3)));
  int din = cfg.fusion_input();
  int dh = cfg.fusion_hidden();
  // share each fusion column across the per-sequence view blocks: a hidden
  // unit then responds to content that is coherent across views, which is
  // exactly how the questioned value shows up in the gold option
  Mat<S> w1(din, dh);
  int blocks = din / cfg.d_t;
  for (int u = 0; u < dh; ++u) {
    Mat<S> col = randn<S>(cfg.d_t, 1, rng, 1.0 / 8.0);
    for (int b = 0; b < blocks; ++b) w1.block(b * cfg.d_t, u, cfg.d_t, 1) = col;
  }
  store.add(gtp_names::ffn_w1, std::move(w1));
  store.add(gtp_names::ffn_b1, Mat<S>::Zero(1, dh));
  // small second layer: the soft prompt starts near zero so the frozen
  // scorer's no-prompt behavior is the starting point
  store.add(gtp_names::ffn_w2, randn<S>(dh, cfg.d_t, rng, 0.02 / std::sqrt(double(dh))));
  store.add(gtp_names::ffn_b2, Mat<S>::Zero(1, cfg.d_t));
  store.add(gtp_names::null_prompt, randn<S>(1, cfg.d_t, rng, 0.006));
}

// Per (option subgraph, token sequence) beta distributions, for
// normalization audits and the inspect tooling.
template <class S>
struct GtpTrace {
  struct Pair {
    int k;  // subgraph option
    int r;  // sequence option
    Mat<S> beta;  // N_k x m_r, rows sum to 1
  };
  std::vector<Pair> pairs;
};

// Attention of every node of H_k over the tokens of T_r; rows of beta are
// softmax-normalized over tokens, values are the projected tokens.
template <class S>
TensorRef cross_attention(Tape<S>& t, TensorRef h_k, const Mat<S>& t_r,
                          const BoundParams<S>& params, const GtpConfig& cfg, int k = -1,
                          int r = -1, GtpTrace<S>* trace = nullptr) {
  if (t_r.rows() < 1) throw gtp_error("cross_attention: empty token sequence");
  TensorRef p_g = t.matmul(h_k, params.at(gtp_names::w_pg));
  TensorRef p_t = t.matmul(t.leaf(t_r, false), params.at(gtp_names::w_pt));
  TensorRef logits =
      t.scale(t.matmul(p_g, t.transpose(p_t)), static_cast<S>(1.0 / std::sqrt(double(cfg.d_t))));
  TensorRef beta = t.softmax_rows(logits);
  if (trace) trace->pairs.push_back({k, r, t.value(beta)});
  return t.matmul(beta, p_t);
}

// Concat the n per-sequence views of one option's nodes and mix through the
// fusion FFN: relu(x W1 + b1) W2 + b2, one row per node.
template <class S>
TensorRef fuse_options(Tape<S>& t, const std::vector<TensorRef>& views,
                       const BoundParams<S>& params, const GtpConfig& cfg) {
  if (views.empty()) throw gtp_error("fuse_options: no views");
  TensorRef x = views.size() == 1 ? views[0] : t.concat_cols(views);
  if (t.value(x).cols() != cfg.fusion_input())
    throw tape_error("fuse_options: fusion input width mismatch");
  int n = static_cast<int>(t.value(x).rows());
  TensorRef hsum = t.add(t.matmul(x, params.at(gtp_names::ffn_w1)),
                         t.repeat_rows(params.at(gtp_names::ffn_b1), n));
  return t.add(t.matmul(t.relu(hsum), params.at(gtp_names::ffn_w2)),
               t.repeat_rows(params.at(gtp_names::ffn_b2), n));
}

// Coordinatewise max over nodes per option; empty-subgraph options take the
// trainable null prompt. Output is n_options x d_t, ordered by option.
template <class S>
TensorRef pool_and_assemble(Tape<S>& t, const std::vector<TensorRef>& fused,
                            const BoundParams<S>& params) {
  if (fused.empty()) throw gtp_error("pool_and_assemble: no options");
  std::vector<TensorRef> rows;
  for (TensorRef f : fused)
    rows.push_back(f.valid() ? t.max_rows(f) : params.at(gtp_names::null_prompt));
  return t.concat_rows(rows);
}

// Full soft-prompt assembly. node_states[k] is the aggregated subgraph for
// option k, or an invalid ref when that option's subgraph is empty;
// sequences[r] is the question+option token matrix T_r.
template <class S>
TensorRef gtp_forward(Tape<S>& t, const std::vector<TensorRef>& node_states,
                      const std::vector<Mat<S>>& sequences, const BoundParams<S>& params,
                      const GtpConfig& cfg, GtpTrace<S>* trace = nullptr) {
  cfg.validate();
  if (static_cast<int>(node_states.size()) != cfg.n_options ||
      static_cast<int>(sequences.size()) != cfg.n_options)
    throw gtp_error("gtp_forward: option count mismatch");
  std::vector<TensorRef> fused(node_states.size());
  for (std::size_t k = 0; k < node_states.size(); ++k) {
    if (!node_states[k].valid()) continue;  // null prompt slot
    std::vector<TensorRef> views;
    if (cfg.global) {
      for (std::size_t r = 0; r < sequences.size(); ++r)
        views.push_back(cross_attention(t, node_states[k], sequences[r], params, cfg,
                                        static_cast<int>(k), static_cast<int>(r), trace));
    } else {
      views.push_back(cross_attention(t, node_states[k], sequences[k], params, cfg,
                                      static_cast<int>(k), static_cast<int>(k), trace));
    }
    fused[k] = fuse_options(t, views, params, cfg);
  }
  return pool_and_assemble(t, fused, params);
}

}  // namespace qap
