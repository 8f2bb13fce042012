#pragma once

#include <cmath>
#include <map>
#include <string>

#include "qap/params.hpp"

namespace qap {

template <class S>
struct AdamWConfig {
  S lr = S(1e-3);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
  S weight_decay = S(0.01);
  S clip = S(1.0);  // global grad-norm clip; <= 0 disables
};

// Adam with decoupled weight decay. Moment accumulators mirror parameter
// shapes and serialize with checkpoints.
template <class S>
class AdamW {
 public:
  explicit AdamW(AdamWConfig<S> cfg) : cfg_(cfg) {}

  void step(ParameterStore<S>& params, const std::map<std::string, Mat<S>>& grads) {
    ++step_;
    S clip_scale = S(1);
    if (cfg_.clip > S(0)) {
      double sq = 0;
      for (const auto& [name, g] : grads) sq += static_cast<double>(g.squaredNorm());
      double norm = std::sqrt(sq);
      if (norm > static_cast<double>(cfg_.clip))
        clip_scale = static_cast<S>(static_cast<double>(cfg_.clip) / norm);
    }
    S bc1 = S(1) - std::pow(cfg_.beta1, static_cast<S>(step_));
    S bc2 = S(1) - std::pow(cfg_.beta2, static_cast<S>(step_));
    for (const auto& [name, graw] : grads) {
      Mat<S>& p = params.at(name);
      Mat<S> g = graw * clip_scale;
      auto [it, fresh] = moments_.try_emplace(name, Moments{Mat<S>::Zero(p.rows(), p.cols()),
                                                            Mat<S>::Zero(p.rows(), p.cols())});
      Moments& m = it->second;
      m.m1 = cfg_.beta1 * m.m1 + (S(1) - cfg_.beta1) * g;
      m.m2 = (cfg_.beta2 * m.m2.array() + (S(1) - cfg_.beta2) * g.array().square()).matrix();
      Mat<S> mhat = m.m1 / bc1;
      Mat<S> vhat = m.m2 / bc2;
      p.array() -= cfg_.lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps) +
                              cfg_.weight_decay * p.array());
    }
  }

  std::uint64_t step_count() const { return step_; }
  const AdamWConfig<S>& config() const { return cfg_; }

  struct Moments {
    Mat<S> m1;
    Mat<S> m2;
  };
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void set_step(std::uint64_t s) { step_ = s; }

 private:
  AdamWConfig<S> cfg_;
  std::map<std::string, Moments> moments_;
  std::uint64_t step_ = 0;
};

// Pulls gradients for bound parameters out of a differentiated tape.
// Parameters untouched by the loss are simply absent from the result.
template <class S>
std::map<std::string, Mat<S>> collect_grads(const Tape<S>& tape, const BoundParams<S>& bound) {
  std::map<std::string, Mat<S>> grads;
  for (const auto& [name, ref] : bound.refs)
    if (tape.has_grad(ref)) grads.emplace(name, tape.grad(ref));
  return grads;
}

}  // namespace qap
