#pragma once

#include <cctype>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "qap/kg.hpp"
#include "qap/optim.hpp"
#include "qap/params.hpp"
#include "qap/rng.hpp"
#include "qap/tape.hpp"

namespace qap {

class lm_error : public std::runtime_error {
 public:
  explicit lm_error(const std::string& what) : std::runtime_error(what) {}
};

// Whitespace token <-> id bijection with reserved ids for PAD/BOS/UNK and the
// option-label tokens "A." .. "Z.".
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kLabelBase = 3;
  static constexpr int kMaxLabels = 26;
  static constexpr int kFirstWord = kLabelBase + kMaxLabels;

  static Vocabulary build(const std::vector<std::string>& corpus_lines) {
    Vocabulary v;
    for (const auto& line : corpus_lines) {
      std::istringstream is(line);
      std::string raw;
      while (is >> raw) {
        if (label_index(raw) >= 0) continue;  // reserved
        for (const auto& w : tokenize_words(raw)) {
          if (!v.word_ids_.count(w)) {
            v.word_ids_.emplace(w, kFirstWord + static_cast<int>(v.words_.size()));
            v.words_.push_back(w);
          }
        }
      }
    }
    return v;
  }

  int size() const { return kFirstWord + static_cast<int>(words_.size()); }

  static int label_id(int option_index) {
    if (option_index < 0 || option_index >= kMaxLabels)
      throw lm_error("label index out of range: " + std::to_string(option_index));
    return kLabelBase + option_index;
  }

  // "A." / "b." -> option index, else -1
  static int label_index(const std::string& raw_token) {
    if (raw_token.size() != 2 || raw_token[1] != '.') return -1;
    unsigned char c = static_cast<unsigned char>(raw_token[0]);
    if (!std::isalpha(c)) return -1;
    return std::tolower(c) - 'a';
  }

  // token ids for a text fragment; no BOS. Unknown words map to UNK.
  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    std::istringstream is(text);
    std::string raw;
    while (is >> raw) {
      int li = label_index(raw);
      if (li >= 0) {
        ids.push_back(label_id(li));
        continue;
      }
      for (const auto& w : tokenize_words(raw)) {
        auto it = word_ids_.find(w);
        ids.push_back(it == word_ids_.end() ? kUnk : it->second);
      }
    }
    return ids;
  }

  std::string token_name(int id) const {
    if (id == kPad) return "[pad]";
    if (id == kBos) return "[bos]";
    if (id == kUnk) return "[unk]";
    if (id >= kLabelBase && id < kFirstWord)
      return std::string(1, static_cast<char>('A' + id - kLabelBase)) + ".";
    return words_.at(static_cast<std::size_t>(id - kFirstWord));
  }

  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> word_ids_;
};

// Miniature frozen LM: token embeddings, one self-attention block, one
// feed-forward block, a logit head. Parameters never enter the trainer's
// ParameterStore; scoring binds them as non-gradient leaves.
template <class S>
struct FrozenLm {
  Vocabulary vocab;
  int d_t = 64;
  int max_positions = 128;
  int m_max = 64;  // question+option sequence truncation
  std::uint64_t seed = 0;
  ParameterStore<S> params;

  std::uint64_t checksum() const { return params.checksum(); }

  template <class T>
  FrozenLm<T> cast() const {
    FrozenLm<T> out;
    out.vocab = vocab;
    out.d_t = d_t;
    out.max_positions = max_positions;
    out.m_max = m_max;
    out.seed = seed;
    out.params = params.template cast<T>();
    return out;
  }
};

template <class S>
FrozenLm<S> init_lm(Vocabulary vocab, int d_t, int max_positions, std::uint64_t seed) {
  FrozenLm<S> lm;
  lm.vocab = std::move(vocab);
  lm.d_t = d_t;
  lm.max_positions = max_positions;
  lm.seed = seed;
  Rng rng(seed ^ fnv1a("lm_init"));
  int v = lm.vocab.size();
  auto& p = lm.params;
  p.add("lm/tok_emb", randn<S>(v, d_t, rng, 0.3));
  p.add("lm/pos_emb", randn<S>(max_positions, d_t, rng, 0.3));
  double ws = 1.0 / std::sqrt(static_cast<double>(d_t));
  p.add("lm/attn/w_q", randn<S>(d_t, d_t, rng, ws));
  p.add("lm/attn/w_k", randn<S>(d_t, d_t, rng, ws));
  p.add("lm/attn/w_v", randn<S>(d_t, d_t, rng, ws));
  p.add("lm/attn/w_o", randn<S>(d_t, d_t, rng, ws));
  p.add("lm/ffn/w1", randn<S>(d_t, 2 * d_t, rng, ws));
  p.add("lm/ffn/b1", Mat<S>::Zero(1, 2 * d_t));
  p.add("lm/ffn/w2", randn<S>(2 * d_t, d_t, rng, ws));
  p.add("lm/ffn/b2", Mat<S>::Zero(1, d_t));
  p.add("lm/head", randn<S>(d_t, v, rng, ws));
  // routing cue used only as a pretraining data-augmentation direction
  p.add("lm/cue", randn<S>(1, d_t, rng, 1.0));
  return lm;
}

// Encoder over (optional soft prefix) + token embeddings -> per-position
// states, P x d_t. Prefix rows bypass the embedding table.
template <class S>
TensorRef lm_encode(Tape<S>& t, const BoundParams<S>& lmp, const FrozenLm<S>& lm,
                    TensorRef prefix, const std::vector<int>& token_ids) {
  int n_prefix = 0;
  if (prefix.valid()) {
    if (t.value(prefix).cols() != lm.d_t)
      throw tape_error("soft prefix width " + std::to_string(t.value(prefix).cols()) +
                       " != LM embedding width " + std::to_string(lm.d_t));
    n_prefix = static_cast<int>(t.value(prefix).rows());
  }
  if (token_ids.empty()) throw lm_error("lm_encode: empty token sequence");
  int total = n_prefix + static_cast<int>(token_ids.size());
  if (total > lm.max_positions)
    throw lm_error("lm_encode: sequence length " + std::to_string(total) +
                   " exceeds max positions " + std::to_string(lm.max_positions));

  TensorRef tok = t.lookup_rows(lmp.at("lm/tok_emb"), token_ids);
  TensorRef x = prefix.valid() ? t.concat_rows({prefix, tok}) : tok;
  TensorRef pos = t.slice_rows(lmp.at("lm/pos_emb"), 0, total);
  x = t.add(x, pos);

  // one self-attention block with residual
  TensorRef q = t.matmul(x, lmp.at("lm/attn/w_q"));
  TensorRef k = t.matmul(x, lmp.at("lm/attn/w_k"));
  TensorRef v = t.matmul(x, lmp.at("lm/attn/w_v"));
  S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(lm.d_t)));
  TensorRef attn = t.softmax_rows(t.scale(t.matmul(q, t.transpose(k)), inv_sqrt));
  x = t.add(x, t.matmul(t.matmul(attn, v), lmp.at("lm/attn/w_o")));

  // one feed-forward block with residual
  TensorRef h = t.relu(t.add(t.matmul(x, lmp.at("lm/ffn/w1")), t.repeat_rows(lmp.at("lm/ffn/b1"), total)));
  x = t.add(x, t.add(t.matmul(h, lmp.at("lm/ffn/w2")), t.repeat_rows(lmp.at("lm/ffn/b2"), total)));
  return x;
}

// Next-token logits at the final position, 1 x V.
template <class S>
TensorRef lm_logits(Tape<S>& t, const BoundParams<S>& lmp, const FrozenLm<S>& lm,
                    TensorRef prefix, const std::vector<int>& token_ids) {
  TensorRef states = lm_encode(t, lmp, lm, prefix, token_ids);
  int total = static_cast<int>(t.value(states).rows());
  TensorRef last = t.slice_rows(states, total - 1, 1);
  return t.matmul(last, lmp.at("lm/head"));
}

// -loss = log P(target | input); scalar
template <class S>
TensorRef cross_entropy(Tape<S>& t, TensorRef logits, int target) {
  TensorRef lp = t.log_softmax_rows(logits);
  return t.scale(t.slice_cols(lp, target, 1), S(-1));
}

// q = mean of encoder outputs over the question tokens (no BOS, no prefix).
template <class S>
Mat<S> encode_question(const FrozenLm<S>& lm, const std::string& question) {
  std::vector<int> ids = lm.vocab.encode(question);
  if (ids.empty()) throw lm_error("encode_question: question tokenizes to zero tokens");
  Tape<S> t;
  BoundParams<S> lmp = bind(t, lm.params, false);
  TensorRef states = lm_encode(t, lmp, lm, TensorRef{}, ids);
  TensorRef q = t.mean_rows(states);
  return t.value(q);
}

// Input-layer token embeddings of BOS + question + option, truncated to m_max.
template <class S>
Mat<S> option_sequence(const FrozenLm<S>& lm, const std::string& question,
                       const std::string& option) {
  std::vector<int> ids;
  ids.push_back(Vocabulary::kBos);
  for (int id : lm.vocab.encode(question)) ids.push_back(id);
  for (int id : lm.vocab.encode(option)) ids.push_back(id);
  if (static_cast<int>(ids.size()) > lm.m_max) ids.resize(static_cast<std::size_t>(lm.m_max));
  const Mat<S>& table = lm.params.at("lm/tok_emb");
  Mat<S> out(static_cast<Eigen::Index>(ids.size()), lm.d_t);
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
  return out;
}

// Tape-level scoring: prefix rows first, then BOS + prompt tokens. Gradients
// flow through the prefix only (the LM binds as non-gradient leaves).
template <class S>
TensorRef score_with_prefix(Tape<S>& t, const BoundParams<S>& lmp, const FrozenLm<S>& lm,
                            TensorRef prefix, const std::string& prompt) {
  std::vector<int> ids;
  ids.push_back(Vocabulary::kBos);
  for (int id : lm.vocab.encode(prompt)) ids.push_back(id);
  return lm_logits(t, lmp, lm, prefix, ids);
}

// Convenience evaluation entry point; returns plain logits.
template <class S>
Mat<S> score_with_prefix(const FrozenLm<S>& lm, const Mat<S>& prefix, const std::string& prompt) {
  Tape<S> t;
  BoundParams<S> lmp = bind(t, lm.params, false);
  TensorRef p{};
  if (prefix.size() != 0) p = t.leaf(prefix, false);
  return t.value(score_with_prefix(t, lmp, lm, p, prompt));
}

struct PretrainConfig {
  int d_t = 64;
  int max_positions = 128;
  int steps = 20000;
  double lr = 1e-3;
  double cue_fraction = 0.7;  // share of steps carrying a routed soft prefix
  double max_noise = 0.6;     // cued prefixes carry noise of uniform scale in [0, max_noise)
};

// Format pretraining: the LM learns (a) to answer with *some* option-label
// token after a question+options prompt -- gold labels are replaced by a
// uniformly random present label, so no factual signal survives -- and (b) to
// route: when a soft prefix carries the cue direction at position p, emit the
// label of position p. (b) is what later makes trained soft prompts causally
// effective; it carries no task knowledge either.
template <class S>
FrozenLm<S> pretrain_format(const std::vector<std::string>& corpus_lines, std::uint64_t seed,
                            const PretrainConfig& cfg = {}) {
  if (corpus_lines.empty()) throw lm_error("pretrain_format: empty corpus");
  Vocabulary vocab = Vocabulary::build(corpus_lines);
  FrozenLm<S> lm = init_lm<S>(std::move(vocab), cfg.d_t, cfg.max_positions, seed);

  // pre-encode prompts and find their label positions
  std::vector<std::vector<int>> encoded;
  std::vector<std::vector<int>> label_sets;  // option indices present
  for (const auto& line : corpus_lines) {
    std::vector<int> ids;
    ids.push_back(Vocabulary::kBos);
    for (int id : lm.vocab.encode(line)) ids.push_back(id);
    if (static_cast<int>(ids.size()) > cfg.max_positions - Vocabulary::kMaxLabels)
      ids.resize(static_cast<std::size_t>(cfg.max_positions - Vocabulary::kMaxLabels));
    std::vector<int> labels;
    for (int id : ids)
      if (id >= Vocabulary::kLabelBase && id < Vocabulary::kFirstWord)
        labels.push_back(id - Vocabulary::kLabelBase);
    if (labels.empty()) continue;
    encoded.push_back(std::move(ids));
    label_sets.push_back(std::move(labels));
  }
  if (encoded.empty()) throw lm_error("pretrain_format: corpus contains no option labels");

  Mat<S> cue = lm.params.at("lm/cue");
  AdamWConfig<S> ocfg;
  ocfg.lr = static_cast<S>(cfg.lr);
  ocfg.weight_decay = S(0);
  AdamW<S> opt(ocfg);
  Rng rng(seed ^ fnv1a("lm_pretrain"));

  for (int step = 0; step < cfg.steps; ++step) {
    std::size_t pick = static_cast<std::size_t>(rng.next_below(encoded.size()));
    const std::vector<int>& ids = encoded[pick];
    const std::vector<int>& labels = label_sets[pick];
    bool cued = rng.next_double() < cfg.cue_fraction;

    Tape<S> t;
    BoundParams<S> lmp = bind(t, lm.params, true);
    TensorRef prefix{};
    int target_label;
    if (cued) {
      int n = static_cast<int>(labels.size());
      // routing is trained as a relative comparison: every row carries a
      // random signed cue coefficient and the target is the row with the
      // largest one. This keeps the label distribution monotone in each
      // row's cue component over the whole signed range, so downstream
      // gradients through the prefix never hit a flat (rectified) region.
      double noise = cfg.max_noise * rng.next_double();
      double scale = 0.3 + 2.2 * rng.next_double();
      Mat<S> pre = randn<S>(n, lm.d_t, rng, 1.0) * static_cast<S>(noise);
      Mat<S> coeff = randn<S>(n, 1, rng, 1.0);
      int hot = 0;
      for (int k = 1; k < n; ++k)
        if (coeff(k, 0) > coeff(hot, 0)) hot = k;
      for (int k = 0; k < n; ++k)
        pre.row(k) += cue.row(0) * static_cast<S>(scale * coeff(k, 0));
      prefix = t.leaf(pre, false);
      target_label = labels[static_cast<std::size_t>(hot)];
    } else {
      target_label = labels[static_cast<std::size_t>(rng.next_below(labels.size()))];
    }
    TensorRef logits = lm_logits(t, lmp, lm, prefix, ids);
    TensorRef loss = cross_entropy(t, logits, Vocabulary::label_id(target_label));
    t.backward(loss);
    auto grads = collect_grads(t, lmp);
    grads.erase("lm/cue");  // the cue is a fixed direction, not a weight
    opt.step(lm.params, grads);
  }
  return lm;
}

}  // namespace qap
