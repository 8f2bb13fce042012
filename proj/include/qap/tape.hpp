#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qap/rng.hpp"

namespace qap {

// Shape or usage violation in a tensor primitive.
class tape_error : public std::runtime_error {
 public:
  explicit tape_error(const std::string& what) : std::runtime_error(what) {}
};

// A primitive produced NaN/Inf.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// Handle into a Tape. Plain index; cheap to copy.
struct TensorRef {
  int id = -1;
  bool valid() const { return id >= 0; }
};

namespace detail {
inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}
}  // namespace detail

// Reverse-mode tape over dense row-major matrices. Vectors are 1xN or Nx1
// matrices; a scalar is 1x1. One Tape records one forward computation and
// supports one backward() pass. Single-threaded by contract; run independent
// Tapes on independent threads.
template <class S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  TensorRef leaf(Mat<S> value, bool requires_grad = false) {
    return record(std::move(value), requires_grad, "leaf", nullptr);
  }

  TensorRef constant(S v) {
    Mat<S> m(1, 1);
    m(0, 0) = v;
    return leaf(std::move(m), false);
  }

  const Mat<S>& value(TensorRef t) const { return at(t).value; }
  bool requires_grad(TensorRef t) const { return at(t).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // ---- primitives ---------------------------------------------------------

  TensorRef matmul(TensorRef a, TensorRef b) {
    const Mat<S>&A = val(a), &B = val(b);
    if (A.cols() != B.rows())
      throw tape_error("matmul: shape mismatch " + detail::shape_str(A.rows(), A.cols()) +
                       " vs " + detail::shape_str(B.rows(), B.cols()));
    Mat<S> out = A * B;
    return record(std::move(out), rg(a) || rg(b), "matmul", [this, a, b](TensorRef o) {
      const Mat<S>& g = nodes_[o.id].grad;
      if (rg(a)) acc(a, g * val(b).transpose());
      if (rg(b)) acc(b, val(a).transpose() * g);
    });
  }

  TensorRef add(TensorRef a, TensorRef b) {
    const Mat<S>&A = val(a), &B = val(b);
    if (A.rows() != B.rows() || A.cols() != B.cols())
      throw tape_error("add: shape mismatch " + detail::shape_str(A.rows(), A.cols()) + " vs " +
                       detail::shape_str(B.rows(), B.cols()));
    Mat<S> out = A + B;
    return record(std::move(out), rg(a) || rg(b), "add", [this, a, b](TensorRef o) {
      const Mat<S>& g = nodes_[o.id].grad;
      if (rg(a)) acc(a, g);
      if (rg(b)) acc(b, g);
    });
  }

  TensorRef sub(TensorRef a, TensorRef b) {
    const Mat<S>&A = val(a), &B = val(b);
    if (A.rows() != B.rows() || A.cols() != B.cols())
      throw tape_error("sub: shape mismatch " + detail::shape_str(A.rows(), A.cols()) + " vs " +
                       detail::shape_str(B.rows(), B.cols()));
    Mat<S> out = A - B;
    return record(std::move(out), rg(a) || rg(b), "sub", [this, a, b](TensorRef o) {
      const Mat<S>& g = nodes_[o.id].grad;
      if (rg(a)) acc(a, g);
      if (rg(b)) acc(b, Mat<S>(-g));
    });
  }

  TensorRef scale(TensorRef a, S c) {
    Mat<S> out = val(a) * c;
    return record(std::move(out), rg(a), "scale", [this, a, c](TensorRef o) {
      if (rg(a)) acc(a, Mat<S>(nodes_[o.id].grad * c));
    });
  }

  // elementwise product
  TensorRef cmul(TensorRef a, TensorRef b) {
    const Mat<S>&A = val(a), &B = val(b);
    if (A.rows() != B.rows() || A.cols() != B.cols())
      throw tape_error("cmul: shape mismatch " + detail::shape_str(A.rows(), A.cols()) + " vs " +
                       detail::shape_str(B.rows(), B.cols()));
    Mat<S> out = A.cwiseProduct(B);
    return record(std::move(out), rg(a) || rg(b), "cmul", [this, a, b](TensorRef o) {
      const Mat<S>& g = nodes_[o.id].grad;
      if (rg(a)) acc(a, g.cwiseProduct(val(b)));
      if (rg(b)) acc(b, g.cwiseProduct(val(a)));
    });
  }

  TensorRef concat_rows(const std::vector<TensorRef>& parts) {
    if (parts.empty()) throw tape_error("concat_rows: empty input list");
    Eigen::Index cols = val(parts[0]).cols();
    Eigen::Index rows = 0;
    for (TensorRef p : parts) {
      if (val(p).cols() != cols)
        throw tape_error("concat_rows: shape mismatch " +
                         detail::shape_str(val(p).rows(), val(p).cols()) + " vs column count " +
                         std::to_string(cols));
      rows += val(p).rows();
    }
    Mat<S> out(rows, cols);
    Eigen::Index r = 0;
    bool any = false;
    for (TensorRef p : parts) {
      out.middleRows(r, val(p).rows()) = val(p);
      r += val(p).rows();
      any = any || rg(p);
    }
    auto ps = parts;
    return record(std::move(out), any, "concat_rows", [this, ps](TensorRef o) {
      const Mat<S>& g = nodes_[o.id].grad;
      Eigen::Index r = 0;
      for (TensorRef p : ps) {
        Eigen::Index n = val(p).rows();
        if (rg(p)) acc(p, g.middleRows(r, n));
        r += n;
      }
    });
  }

  TensorRef concat_cols(const std::vector<TensorRef>& parts) {
    if (parts.empty()) throw tape_error("concat_cols: empty input list");
    Eigen::Index rows = val(parts[0]).rows();
    Eigen::Index cols = 0;
    for (TensorRef p : parts) {
      if (val(p).rows() != rows)
        throw tape_error("concat_cols: shape mismatch " +
                         detail::shape_str(val(p).rows(), val(p).cols()) + " vs row count " +
                         std::to_string(rows));
      cols += val(p).cols();
    }
    Mat<S> out(rows, cols);
    Eigen::Index c = 0;
    bool any = false;
    for (TensorRef p : parts) {
      out.middleCols(c, val(p).cols()) = val(p);
      c += val(p).cols();
      any = any || rg(p);
    }
    auto ps = parts;
    return record(std::move(out), any, "concat_cols", [this, ps](TensorRef o) {
      const Mat<S>& g = nodes_[o.id].grad;
      Eigen::Index c = 0;
      for (TensorRef p : ps) {
        Eigen::Index n = val(p).cols();
        if (rg(p)) acc(p, g.middleCols(c, n));
        c += n;
      }
    });
  }

  // row-stochastic softmax, stabilized by subtracting the row max
  TensorRef softmax_rows(TensorRef a) {
    const Mat<S>& A = val(a);
    if (A.cols() < 1) throw tape_error("softmax_rows: row extent must be >= 1");
    Mat<S> out(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      S mx = A.row(i).maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (A.row(i).array() - mx).exp();
      out.row(i) = e / e.sum();
    }
    return record(std::move(out), rg(a), "softmax_rows", [this, a](TensorRef o) {
      if (!rg(a)) return;
      const Mat<S>& y = nodes_[o.id].value;
      const Mat<S>& g = nodes_[o.id].grad;
      Mat<S> gx(y.rows(), y.cols());
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        S dot = y.row(i).dot(g.row(i));
        gx.row(i) = y.row(i).cwiseProduct(g.row(i) - Mat<S>::Constant(1, y.cols(), dot));
      }
      acc(a, gx);
    });
  }

  // stable log-softmax per row; keeps cross-entropy finite for extreme logits
  TensorRef log_softmax_rows(TensorRef a) {
    const Mat<S>& A = val(a);
    if (A.cols() < 1) throw tape_error("log_softmax_rows: row extent must be >= 1");
    Mat<S> out(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      S mx = A.row(i).maxCoeff();
      S lse = std::log((A.row(i).array() - mx).exp().sum()) + mx;
      out.row(i) = A.row(i).array() - lse;
    }
    return record(std::move(out), rg(a), "log_softmax_rows", [this, a](TensorRef o) {
      if (!rg(a)) return;
      const Mat<S>& y = nodes_[o.id].value;  // log p
      const Mat<S>& g = nodes_[o.id].grad;
      Mat<S> gx(y.rows(), y.cols());
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        S gsum = g.row(i).sum();
        gx.row(i) = g.row(i).array() - y.row(i).array().exp() * gsum;
      }
      acc(a, gx);
    });
  }

  TensorRef relu(TensorRef a) {
    Mat<S> out = val(a).cwiseMax(S(0));
    return record(std::move(out), rg(a), "relu", [this, a](TensorRef o) {
      if (!rg(a)) return;
      const Mat<S>& g = nodes_[o.id].grad;
      Mat<S> gx = (val(a).array() > S(0)).template cast<S>() * g.array();
      acc(a, gx);
    });
  }

  // mean over rows -> 1 x cols
  TensorRef mean_rows(TensorRef a) {
    const Mat<S>& A = val(a);
    if (A.rows() < 1) throw tape_error("mean_rows: need at least one row");
    Mat<S> out = A.colwise().mean();
    return record(std::move(out), rg(a), "mean_rows", [this, a](TensorRef o) {
      if (!rg(a)) return;
      const Mat<S>& g = nodes_[o.id].grad;
      Eigen::Index n = val(a).rows();
      Mat<S> gx = g.replicate(n, 1) / S(n);
      acc(a, gx);
    });
  }

  // columnwise max over rows -> 1 x cols; subgradient goes to the lowest
  // row index attaining the max, keeping MaxPooling gradients deterministic
  TensorRef max_rows(TensorRef a) {
    const Mat<S>& A = val(a);
    if (A.rows() < 1) throw tape_error("max_rows: need at least one row");
    Mat<S> out(1, A.cols());
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(A.cols()));
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      Eigen::Index best = 0;
      for (Eigen::Index i = 1; i < A.rows(); ++i)
        if (A(i, j) > A(best, j)) best = i;
      arg[static_cast<std::size_t>(j)] = best;
      out(0, j) = A(best, j);
    }
    return record(std::move(out), rg(a), "max_rows", [this, a, arg](TensorRef o) {
      if (!rg(a)) return;
      const Mat<S>& g = nodes_[o.id].grad;
      Mat<S> gx = Mat<S>::Zero(val(a).rows(), val(a).cols());
      for (Eigen::Index j = 0; j < gx.cols(); ++j)
        gx(arg[static_cast<std::size_t>(j)], j) = g(0, j);
      acc(a, gx);
    });
  }

  TensorRef transpose(TensorRef a) {
    Mat<S> out = val(a).transpose();
    return record(std::move(out), rg(a), "transpose", [this, a](TensorRef o) {
      if (rg(a)) acc(a, nodes_[o.id].grad.transpose());
    });
  }

  TensorRef slice(TensorRef a, int r0, int nr, int c0, int nc) {
    const Mat<S>& A = val(a);
    if (r0 < 0 || c0 < 0 || nr < 1 || nc < 1 || r0 + nr > A.rows() || c0 + nc > A.cols())
      throw tape_error("slice: block [" + std::to_string(r0) + "," + std::to_string(nr) + "," +
                       std::to_string(c0) + "," + std::to_string(nc) + "] out of range for " +
                       detail::shape_str(A.rows(), A.cols()));
    Mat<S> out = A.block(r0, c0, nr, nc);
    return record(std::move(out), rg(a), "slice", [this, a, r0, nr, c0, nc](TensorRef o) {
      if (!rg(a)) return;
      Mat<S> gx = Mat<S>::Zero(val(a).rows(), val(a).cols());
      gx.block(r0, c0, nr, nc) = nodes_[o.id].grad;
      acc(a, gx);
    });
  }

  TensorRef slice_rows(TensorRef a, int r0, int nr) {
    return slice(a, r0, nr, 0, static_cast<int>(val(a).cols()));
  }

  TensorRef slice_cols(TensorRef a, int c0, int nc) {
    return slice(a, 0, static_cast<int>(val(a).rows()), c0, nc);
  }

  // gather rows of a table by index; doubles as embedding lookup.
  // Gradient scatter-adds into the table; ids are constants.
  TensorRef lookup_rows(TensorRef table, std::vector<int> ids) {
    const Mat<S>& T = val(table);
    for (int id : ids)
      if (id < 0 || id >= T.rows())
        throw tape_error("lookup_rows: id " + std::to_string(id) + " out of range for table " +
                         detail::shape_str(T.rows(), T.cols()));
    if (ids.empty()) throw tape_error("lookup_rows: empty id list");
    Mat<S> out(static_cast<Eigen::Index>(ids.size()), T.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = T.row(ids[i]);
    return record(std::move(out), rg(table), "lookup_rows",
                  [this, table, ids = std::move(ids)](TensorRef o) {
                    if (!rg(table)) return;
                    const Mat<S>& g = nodes_[o.id].grad;
                    Mat<S> gx = Mat<S>::Zero(val(table).rows(), val(table).cols());
                    for (std::size_t i = 0; i < ids.size(); ++i)
                      gx.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
                    acc(table, gx);
                  });
  }

  TensorRef sum(TensorRef a) {
    Mat<S> out(1, 1);
    out(0, 0) = val(a).sum();
    return record(std::move(out), rg(a), "sum", [this, a](TensorRef o) {
      if (!rg(a)) return;
      S g = nodes_[o.id].grad(0, 0);
      acc(a, Mat<S>(Mat<S>::Constant(val(a).rows(), val(a).cols(), g)));
    });
  }

  TensorRef log(TensorRef a) {
    Mat<S> out = val(a).array().log();
    return record(std::move(out), rg(a), "log", [this, a](TensorRef o) {
      if (!rg(a)) return;
      Mat<S> gx = nodes_[o.id].grad.array() / val(a).array();
      acc(a, gx);
    });
  }

  // explicit row broadcast: 1 x c -> n x c
  TensorRef repeat_rows(TensorRef a, int n) {
    const Mat<S>& A = val(a);
    if (A.rows() != 1) throw tape_error("repeat_rows: input must be 1x" + std::to_string(A.cols()) +
                                        ", got " + detail::shape_str(A.rows(), A.cols()));
    if (n < 1) throw tape_error("repeat_rows: n must be >= 1");
    Mat<S> out = A.replicate(n, 1);
    return record(std::move(out), rg(a), "repeat_rows", [this, a](TensorRef o) {
      if (rg(a)) acc(a, Mat<S>(nodes_[o.id].grad.colwise().sum()));
    });
  }

  // per-row dot product of equal-shaped matrices -> n x 1
  TensorRef rowwise_dot(TensorRef a, TensorRef b) {
    const Mat<S>&A = val(a), &B = val(b);
    if (A.rows() != B.rows() || A.cols() != B.cols())
      throw tape_error("rowwise_dot: shape mismatch " + detail::shape_str(A.rows(), A.cols()) +
                       " vs " + detail::shape_str(B.rows(), B.cols()));
    Mat<S> out(A.rows(), 1);
    for (Eigen::Index i = 0; i < A.rows(); ++i) out(i, 0) = A.row(i).dot(B.row(i));
    return record(std::move(out), rg(a) || rg(b), "rowwise_dot", [this, a, b](TensorRef o) {
      const Mat<S>& g = nodes_[o.id].grad;
      if (rg(a)) {
        Mat<S> gx = val(b);
        for (Eigen::Index i = 0; i < gx.rows(); ++i) gx.row(i) *= g(i, 0);
        acc(a, gx);
      }
      if (rg(b)) {
        Mat<S> gx = val(a);
        for (Eigen::Index i = 0; i < gx.rows(); ++i) gx.row(i) *= g(i, 0);
        acc(b, gx);
      }
    });
  }

  // multiply row i of a by s(i,0)
  TensorRef scale_rows(TensorRef a, TensorRef s) {
    const Mat<S>&A = val(a), &Sc = val(s);
    if (Sc.cols() != 1 || Sc.rows() != A.rows())
      throw tape_error("scale_rows: scale must be " + std::to_string(A.rows()) + "x1, got " +
                       detail::shape_str(Sc.rows(), Sc.cols()));
    Mat<S> out = A;
    for (Eigen::Index i = 0; i < A.rows(); ++i) out.row(i) *= Sc(i, 0);
    return record(std::move(out), rg(a) || rg(s), "scale_rows", [this, a, s](TensorRef o) {
      const Mat<S>& g = nodes_[o.id].grad;
      if (rg(a)) {
        Mat<S> gx = g;
        for (Eigen::Index i = 0; i < gx.rows(); ++i) gx.row(i) *= val(s)(i, 0);
        acc(a, gx);
      }
      if (rg(s)) {
        Mat<S> gx(val(s).rows(), 1);
        for (Eigen::Index i = 0; i < gx.rows(); ++i) gx(i, 0) = g.row(i).dot(val(a).row(i));
        acc(s, gx);
      }
    });
  }

  // softmax over groups of rows of an E x 1 column; rows with equal segment id
  // normalize together. Every segment id must be in [0, nseg).
  TensorRef segment_softmax(TensorRef a, std::vector<int> seg, int nseg) {
    const Mat<S>& A = val(a);
    if (A.cols() != 1) throw tape_error("segment_softmax: input must be Ex1, got " +
                                        detail::shape_str(A.rows(), A.cols()));
    if (static_cast<Eigen::Index>(seg.size()) != A.rows())
      throw tape_error("segment_softmax: segment list length " + std::to_string(seg.size()) +
                       " != row count " + std::to_string(A.rows()));
    for (int s : seg)
      if (s < 0 || s >= nseg) throw tape_error("segment_softmax: segment id out of range");
    std::vector<S> mx(static_cast<std::size_t>(nseg), std::numeric_limits<S>::lowest());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
      mx[static_cast<std::size_t>(seg[static_cast<std::size_t>(i)])] =
          std::max(mx[static_cast<std::size_t>(seg[static_cast<std::size_t>(i)])], A(i, 0));
    std::vector<S> denom(static_cast<std::size_t>(nseg), S(0));
    Mat<S> out(A.rows(), 1);
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      std::size_t s = static_cast<std::size_t>(seg[static_cast<std::size_t>(i)]);
      out(i, 0) = std::exp(A(i, 0) - mx[s]);
      denom[s] += out(i, 0);
    }
    for (Eigen::Index i = 0; i < A.rows(); ++i)
      out(i, 0) /= denom[static_cast<std::size_t>(seg[static_cast<std::size_t>(i)])];
    return record(std::move(out), rg(a), "segment_softmax",
                  [this, a, seg = std::move(seg), nseg](TensorRef o) {
                    if (!rg(a)) return;
                    const Mat<S>& y = nodes_[o.id].value;
                    const Mat<S>& g = nodes_[o.id].grad;
                    std::vector<S> dot(static_cast<std::size_t>(nseg), S(0));
                    for (Eigen::Index i = 0; i < y.rows(); ++i)
                      dot[static_cast<std::size_t>(seg[static_cast<std::size_t>(i)])] +=
                          y(i, 0) * g(i, 0);
                    Mat<S> gx(y.rows(), 1);
                    for (Eigen::Index i = 0; i < y.rows(); ++i) {
                      std::size_t s = static_cast<std::size_t>(seg[static_cast<std::size_t>(i)]);
                      gx(i, 0) = y(i, 0) * (g(i, 0) - dot[s]);
                    }
                    acc(a, gx);
                  });
  }

  // sum rows of a into their segment's output row -> nrows x cols
  TensorRef scatter_sum_rows(TensorRef a, std::vector<int> seg, int nrows) {
    const Mat<S>& A = val(a);
    if (static_cast<Eigen::Index>(seg.size()) != A.rows())
      throw tape_error("scatter_sum_rows: segment list length " + std::to_string(seg.size()) +
                       " != row count " + std::to_string(A.rows()));
    for (int s : seg)
      if (s < 0 || s >= nrows) throw tape_error("scatter_sum_rows: segment id out of range");
    Mat<S> out = Mat<S>::Zero(nrows, A.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i) out.row(seg[static_cast<std::size_t>(i)]) += A.row(i);
    return record(std::move(out), rg(a), "scatter_sum_rows",
                  [this, a, seg = std::move(seg)](TensorRef o) {
                    if (!rg(a)) return;
                    const Mat<S>& g = nodes_[o.id].grad;
                    Mat<S> gx(val(a).rows(), val(a).cols());
                    for (Eigen::Index i = 0; i < gx.rows(); ++i)
                      gx.row(i) = g.row(seg[static_cast<std::size_t>(i)]);
                    acc(a, gx);
                  });
  }

  // ---- backward -----------------------------------------------------------

  // Seeds d(loss)/d(loss)=1 and propagates to every requires_grad node.
  void backward(TensorRef loss) {
    const Node& ln = at(loss);
    if (ln.value.rows() != 1 || ln.value.cols() != 1)
      throw tape_error("backward: loss must be scalar, got " +
                       detail::shape_str(ln.value.rows(), ln.value.cols()));
    if (!ln.requires_grad)
      throw tape_error("backward: loss does not depend on any requires_grad tensor");
    if (backward_done_) throw tape_error("backward: tape already differentiated");
    backward_done_ = true;
    nodes_[loss.id].grad = Mat<S>::Constant(1, 1, S(1));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.size() == 0 || !n.backprop) continue;
      n.backprop(TensorRef{i});
    }
  }

  bool has_grad(TensorRef t) const { return at(t).grad.size() != 0; }

  const Mat<S>& grad(TensorRef t) const {
    const Node& n = at(t);
    if (n.grad.size() == 0)
      throw tape_error("grad: no gradient recorded for tensor " + std::to_string(t.id));
    return n.grad;
  }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;  // empty until touched by backward
    bool requires_grad = false;
    std::function<void(TensorRef)> backprop;
    const char* op = "leaf";
  };

  const Node& at(TensorRef t) const {
    if (t.id < 0 || t.id >= static_cast<int>(nodes_.size()))
      throw tape_error("invalid tensor reference (id " + std::to_string(t.id) +
                       "); tensor was not produced by this tape");
    return nodes_[static_cast<std::size_t>(t.id)];
  }

  const Mat<S>& val(TensorRef t) const { return at(t).value; }
  bool rg(TensorRef t) const { return at(t).requires_grad; }

  void acc(TensorRef t, const Mat<S>& g) {
    Node& n = nodes_[static_cast<std::size_t>(t.id)];
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  TensorRef record(Mat<S> value, bool requires_grad, const char* op,
                   std::function<void(TensorRef)> backprop) {
    if (!value.allFinite())
      throw numeric_error(std::string("non-finite output from primitive '") + op + "'");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.op = op;
    if (requires_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return TensorRef{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Central-difference gradient of a scalar-valued function; the independent
// oracle every analytic gradient in this project is checked against.
template <class S, class F>
Mat<S> finite_diff_gradient(F&& f, const Mat<S>& x, S h) {
  if (!(h > S(0))) throw tape_error("finite_diff_gradient: h must be positive");
  Mat<S> g(x.rows(), x.cols());
  Mat<S> xp = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      S orig = xp(i, j);
      xp(i, j) = orig + h;
      S fp = f(xp);
      xp(i, j) = orig - h;
      S fm = f(xp);
      xp(i, j) = orig;
      g(i, j) = (fp - fm) / (S(2) * h);
    }
  }
  return g;
}

}  // namespace qap
