#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hatetiny/rng.hpp"
#include "hatetiny/tensor.hpp"

namespace hatetiny {

namespace detail {

// True when a forward result involving t must be recorded on tape tp.
template <class S>
bool tracks(const Tape<S>* tp, const Tensor<S>& t) {
  if (tp == nullptr) return false;
  if (t.requires_grad()) return true;
  return t.tape() == tp && t.tape_generation() == tp->generation() && t.node_id() >= 0;
}

template <class S>
Eigen::Map<const VecX<S>> flat(const MatX<S>& m) {
  return Eigen::Map<const VecX<S>>(m.data(), m.size());
}

template <class S>
void check_finite(const Tensor<S>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": produced non-finite values");
}

inline double normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x * 0.70710678118654752440)); }
inline double normal_pdf(double x) { return 0.39894228040143267794 * std::exp(-0.5 * x * x); }

}  // namespace detail

// out = a * b for rank-2 operands, shapes (m,k) x (k,n) -> (m,n).
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<S> out(Shape{m, n});
  out.mat().noalias() = a.mat() * b.mat();
  detail::check_finite(out, "matmul");

  auto* tp = Tape<S>::active();
  if (detail::tracks(tp, a) || detail::tracks(tp, b)) {
    int ia = tp->input_id(a), ib = tp->input_id(b);
    auto sa = a.storage(), sb = b.storage();
    int io = tp->record_node(out);
    tp->add_step(io, [=](Tape<S>& t) {
      ConstMatMap<S> g(t.grad_flat(io).data(), m, n);
      if (ia >= 0) {
        MatX<S> da = g * ConstMatMap<S>(sb->value.data(), k, n).transpose();
        t.accumulate(ia, detail::flat(da));
      }
      if (ib >= 0) {
        MatX<S> db = ConstMatMap<S>(sa->value.data(), m, k).transpose() * g;
        t.accumulate(ib, detail::flat(db));
      }
    });
  }
  return out;
}

// Elementwise sum of two tensors of identical shape.
template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shapes disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Tensor<S> out(a.shape());
  out.value() = a.value() + b.value();
  detail::check_finite(out, "add");

  auto* tp = Tape<S>::active();
  if (detail::tracks(tp, a) || detail::tracks(tp, b)) {
    int ia = tp->input_id(a), ib = tp->input_id(b);
    int io = tp->record_node(out);
    tp->add_step(io, [=](Tape<S>& t) {
      if (ia >= 0) t.accumulate(ia, t.grad_flat(io));
      if (ib >= 0) t.accumulate(ib, t.grad_flat(io));
    });
  }
  return out;
}

// Adds a rank-1 bias to every row of a rank-2 tensor.
template <class S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw DimensionError("add_bias: cannot broadcast bias " + shape_str(bias.shape()) +
                         " over rows of " + shape_str(x.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  Tensor<S> out(x.shape());
  out.mat() = x.mat().rowwise() + bias.mat().row(0);
  detail::check_finite(out, "add_bias");

  auto* tp = Tape<S>::active();
  if (detail::tracks(tp, x) || detail::tracks(tp, bias)) {
    int ix = tp->input_id(x), ib = tp->input_id(bias);
    int io = tp->record_node(out);
    tp->add_step(io, [=](Tape<S>& t) {
      ConstMatMap<S> g(t.grad_flat(io).data(), r, c);
      if (ix >= 0) t.accumulate(ix, t.grad_flat(io));
      if (ib >= 0) {
        VecX<S> db = g.colwise().sum().transpose();
        t.accumulate(ib, db);
      }
    });
  }
  return out;
}

// Multiplies every element by a fixed scalar.
template <class S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  Tensor<S> out(x.shape());
  out.value() = x.value() * factor;
  detail::check_finite(out, "scale");

  auto* tp = Tape<S>::active();
  if (detail::tracks(tp, x)) {
    int ix = tp->input_id(x);
    int io = tp->record_node(out);
    tp->add_step(io, [=](Tape<S>& t) { t.accumulate(ix, (t.grad_flat(io) * factor).eval()); });
  }
  return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2)
    throw DimensionError("transpose: expected rank 2, got " + shape_str(x.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  Tensor<S> out(Shape{c, r});
  out.mat() = x.mat().transpose();

  auto* tp = Tape<S>::active();
  if (detail::tracks(tp, x)) {
    int ix = tp->input_id(x);
    int io = tp->record_node(out);
    tp->add_step(io, [=](Tape<S>& t) {
      ConstMatMap<S> g(t.grad_flat(io).data(), c, r);
      MatX<S> dx = g.transpose();
      t.accumulate(ix, detail::flat(dx));
    });
  }
  return out;
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& x, Index first, Index count) {
  if (x.rank() != 2)
    throw DimensionError("slice_rows: expected rank 2, got " + shape_str(x.shape()));
  if (first < 0 || count < 1 || first + count > x.dim(0))
    throw IndexError("slice_rows: rows [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") out of range for " +
                     shape_str(x.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  Tensor<S> out(Shape{count, c});
  out.mat() = x.mat().middleRows(first, count);

  auto* tp = Tape<S>::active();
  if (detail::tracks(tp, x)) {
    int ix = tp->input_id(x);
    int io = tp->record_node(out);
    tp->add_step(io, [=](Tape<S>& t) {
      MatX<S> dx = MatX<S>::Zero(r, c);
      dx.middleRows(first, count) = ConstMatMap<S>(t.grad_flat(io).data(), count, c);
      t.accumulate(ix, detail::flat(dx));
    });
  }
  return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, Index first, Index count) {
  if (x.rank() != 2)
    throw DimensionError("slice_cols: expected rank 2, got " + shape_str(x.shape()));
  if (first < 0 || count < 1 || first + count > x.dim(1))
    throw IndexError("slice_cols: cols [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") out of range for " +
                     shape_str(x.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  Tensor<S> out(Shape{r, count});
  out.mat() = x.mat().middleCols(first, count);

  auto* tp = Tape<S>::active();
  if (detail::tracks(tp, x)) {
    int ix = tp->input_id(x);
    int io = tp->record_node(out);
    tp->add_step(io, [=](Tape<S>& t) {
      MatX<S> dx = MatX<S>::Zero(r, c);
      dx.middleCols(first, count) = ConstMatMap<S>(t.grad_flat(io).data(), r, count);
      t.accumulate(ix, detail::flat(dx));
    });
  }
  return out;
}

// Stacks rank-2 tensors with equal column counts along the row axis.
template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts given");
  const Index c = parts[0].rank() == 2 ? parts[0].dim(1) : -1;
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != c)
      throw DimensionError("concat_rows: incompatible part shape " + shape_str(p.shape()));
    total += p.dim(0);
  }
  Tensor<S> out(Shape{total, c});
  Index at = 0;
  for (const auto& p : parts) {
    out.mat().middleRows(at, p.dim(0)) = p.mat();
    at += p.dim(0);
  }

  auto* tp = Tape<S>::active();
  bool any = false;
  for (const auto& p : parts) any = any || detail::tracks(tp, p);
  if (any) {
    std::vector<int> ids(parts.size());
    std::vector<Index> at_rows(parts.size()), n_rows(parts.size());
    Index off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      ids[i] = tp->input_id(parts[i]);
      at_rows[i] = off;
      n_rows[i] = parts[i].dim(0);
      off += n_rows[i];
    }
    int io = tp->record_node(out);
    tp->add_step(io, [=](Tape<S>& t) {
      ConstMatMap<S> g(t.grad_flat(io).data(), total, c);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0) continue;
        MatX<S> dp = g.middleRows(at_rows[i], n_rows[i]);
        t.accumulate(ids[i], detail::flat(dp));
      }
    });
  }
  return out;
}

// Stacks rank-2 tensors with equal row counts along the column axis.
template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts given");
  const Index r = parts[0].rank() == 2 ? parts[0].dim(0) : -1;
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != r)
      throw DimensionError("concat_cols: incompatible part shape " + shape_str(p.shape()));
    total += p.dim(1);
  }
  Tensor<S> out(Shape{r, total});
  Index at = 0;
  for (const auto& p : parts) {
    out.mat().middleCols(at, p.dim(1)) = p.mat();
    at += p.dim(1);
  }

  auto* tp = Tape<S>::active();
  bool any = false;
  for (const auto& p : parts) any = any || detail::tracks(tp, p);
  if (any) {
    std::vector<int> ids(parts.size());
    std::vector<Index> at_cols(parts.size()), n_cols(parts.size());
    Index off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      ids[i] = tp->input_id(parts[i]);
      at_cols[i] = off;
      n_cols[i] = parts[i].dim(1);
      off += n_cols[i];
    }
    int io = tp->record_node(out);
    tp->add_step(io, [=](Tape<S>& t) {
      ConstMatMap<S> g(t.grad_flat(io).data(), r, total);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0) continue;
        MatX<S> dp = g.middleCols(at_cols[i], n_cols[i]);
        t.accumulate(ids[i], detail::flat(dp));
      }
    });
  }
  return out;
}

// Softmax along one axis, computed with max subtraction. Axis 0 runs down
// columns, axis 1 across rows; rank-1 tensors only accept axis 0.
template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  if (x.rank() == 0 || (x.rank() == 1 && axis != 0) ||
      (x.rank() == 2 && axis != 0 && axis != 1))
    throw IndexError("softmax: invalid axis " + std::to_string(axis) + " for shape " +
                     shape_str(x.shape()));
  const bool over_rows = (x.rank() == 1) || axis == 1;
  const Index r = x.rows(), c = x.cols();
  Tensor<S> out(x.shape());
  auto xm = x.mat();
  auto om = out.mat();
  const Index slices = over_rows ? r : c;
  for (Index i = 0; i < slices; ++i) {
    if (over_rows) {
      S m = xm.row(i).maxCoeff();
      Eigen::Matrix<S, 1, Eigen::Dynamic> e = (xm.row(i).array() - m).exp();
      om.row(i) = e / e.sum();
    } else {
      S m = xm.col(i).maxCoeff();
      VecX<S> e = (xm.col(i).array() - m).exp();
      om.col(i) = e / e.sum();
    }
  }
  detail::check_finite(out, "softmax");

  auto* tp = Tape<S>::active();
  if (detail::tracks(tp, x)) {
    int ix = tp->input_id(x);
    auto so = out.storage();
    int io = tp->record_node(out);
    tp->add_step(io, [=](Tape<S>& t) {
      ConstMatMap<S> g(t.grad_flat(io).data(), r, c);
      ConstMatMap<S> y(so->value.data(), r, c);
      MatX<S> dx(r, c);
      for (Index i = 0; i < slices; ++i) {
        if (over_rows) {
          S dot = g.row(i).cwiseProduct(y.row(i)).sum();
          dx.row(i) = y.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
        } else {
          S dot = g.col(i).cwiseProduct(y.col(i)).sum();
          dx.col(i) = y.col(i).cwiseProduct((g.col(i).array() - dot).matrix());
        }
      }
      t.accumulate(ix, detail::flat(dx));
    });
  }
  return out;
}

// Root-mean-square normalization over the last axis with a learned
// per-channel weight: y = w * x / sqrt(mean(x^2) + eps).
template <class S>
Tensor<S> rms_norm(const Tensor<S>& x, const Tensor<S>& weight, S eps) {
  if (eps < S(0)) throw ContractError("rms_norm: eps must be non-negative");
  if (x.rank() < 1 || weight.rank() != 1 || weight.dim(0) != x.cols())
    throw DimensionError("rms_norm: weight " + shape_str(weight.shape()) +
                         " does not match last axis of " + shape_str(x.shape()));
  const Index r = x.rows(), c = x.cols();
  Tensor<S> out(x.shape());
  auto xm = x.mat();
  auto om = out.mat();
  auto w = weight.mat().row(0);
  VecX<S> inv_rms(r);
  for (Index i = 0; i < r; ++i) {
    S ms = xm.row(i).squaredNorm() / static_cast<S>(c);
    inv_rms[i] = S(1) / std::sqrt(ms + eps);
    om.row(i) = (xm.row(i) * inv_rms[i]).cwiseProduct(w);
  }
  detail::check_finite(out, "rms_norm");

  auto* tp = Tape<S>::active();
  if (detail::tracks(tp, x) || detail::tracks(tp, weight)) {
    int ix = tp->input_id(x), iw = tp->input_id(weight);
    auto sx = x.storage(), sw = weight.storage();
    int io = tp->record_node(out);
    tp->add_step(io, [=](Tape<S>& t) {
      ConstMatMap<S> g(t.grad_flat(io).data(), r, c);
      ConstMatMap<S> xv(sx->value.data(), r, c);
      ConstMatMap<S> wv(sw->value.data(), 1, c);
      if (ix >= 0) {
        MatX<S> dx(r, c);
        for (Index i = 0; i < r; ++i) {
          auto gw = g.row(i).cwiseProduct(wv.row(0));
          S dot = gw.cwiseProduct(xv.row(i)).sum();
          S ir = inv_rms[i];
          dx.row(i) = gw * ir - xv.row(i) * (dot * ir * ir * ir / static_cast<S>(c));
        }
        t.accumulate(ix, detail::flat(dx));
      }
      if (iw >= 0) {
        VecX<S> dw = VecX<S>::Zero(c);
        for (Index i = 0; i < r; ++i)
          dw += (g.row(i).cwiseProduct(xv.row(i)) * inv_rms[i]).transpose();
        t.accumulate(iw, dw);
      }
    });
  }
  return out;
}

// Exact-erf GELU: y = x * Phi(x) with Phi the standard normal CDF.
template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) {
    double v = static_cast<double>(x.value()[i]);
    out.value()[i] = static_cast<S>(v * detail::normal_cdf(v));
  }
  detail::check_finite(out, "gelu");

  auto* tp = Tape<S>::active();
  if (detail::tracks(tp, x)) {
    int ix = tp->input_id(x);
    auto sx = x.storage();
    int io = tp->record_node(out);
    tp->add_step(io, [=](Tape<S>& t) {
      const VecX<S>& g = t.grad_flat(io);
      VecX<S> dx(n);
      for (Index i = 0; i < n; ++i) {
        double v = static_cast<double>(sx->value[i]);
        dx[i] = g[i] * static_cast<S>(detail::normal_cdf(v) + v * detail::normal_pdf(v));
      }
      t.accumulate(ix, dx);
    });
  }
  return out;
}

// Gathers rows of a (vocab x dim) table; backward scatter-adds into the
// table, so repeated ids accumulate.
template <class S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int>& ids) {
  if (table.rank() != 2)
    throw DimensionError("embedding_lookup: table must be rank 2, got " +
                         shape_str(table.shape()));
  if (ids.empty()) throw ContractError("embedding_lookup: empty id list");
  const Index v = table.dim(0), d = table.dim(1);
  const Index n = static_cast<Index>(ids.size());
  for (Index i = 0; i < n; ++i)
    if (ids[static_cast<std::size_t>(i)] < 0 || ids[static_cast<std::size_t>(i)] >= v)
      throw IndexError("embedding_lookup: id " + std::to_string(ids[static_cast<std::size_t>(i)]) +
                       " at position " + std::to_string(i) + " out of range [0, " +
                       std::to_string(v) + ")");
  Tensor<S> out(Shape{n, d});
  for (Index i = 0; i < n; ++i)
    out.mat().row(i) = table.mat().row(ids[static_cast<std::size_t>(i)]);

  auto* tp = Tape<S>::active();
  if (detail::tracks(tp, table)) {
    int it = tp->input_id(table);
    std::vector<int> ids_copy = ids;
    int io = tp->record_node(out);
    tp->add_step(io, [=](Tape<S>& t) {
      ConstMatMap<S> g(t.grad_flat(io).data(), n, d);
      MatX<S> dt = MatX<S>::Zero(v, d);
      for (Index i = 0; i < n; ++i)
        dt.row(ids_copy[static_cast<std::size_t>(i)]) += g.row(i);
      t.accumulate(it, detail::flat(dt));
    });
  }
  return out;
}

// Mean negative log likelihood of the target classes under a softmax over
// logits, computed via log-sum-exp so large logits do not overflow.
template <class S>
Tensor<S> nll_loss(const Tensor<S>& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2)
    throw DimensionError("nll_loss: logits must be rank 2, got " + shape_str(logits.shape()));
  const Index b = logits.dim(0), c = logits.dim(1);
  if (static_cast<Index>(targets.size()) != b)
    throw DimensionError("nll_loss: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(b) + " rows");
  for (Index i = 0; i < b; ++i)
    if (targets[static_cast<std::size_t>(i)] < 0 || targets[static_cast<std::size_t>(i)] >= c)
      throw IndexError("nll_loss: target " + std::to_string(targets[static_cast<std::size_t>(i)]) +
                       " at row " + std::to_string(i) + " out of range [0, " + std::to_string(c) +
                       ")");
  auto lm = logits.mat();
  MatX<S> probs(b, c);
  S total = S(0);
  for (Index i = 0; i < b; ++i) {
    S m = lm.row(i).maxCoeff();
    VecX<S> e = (lm.row(i).array() - m).exp().matrix().transpose();
    S s = e.sum();
    probs.row(i) = (e / s).transpose();
    S lse = m + std::log(s);
    total += lse - lm(i, targets[static_cast<std::size_t>(i)]);
  }
  Tensor<S> out = Tensor<S>::scalar_value(total / static_cast<S>(b));
  detail::check_finite(out, "nll_loss");

  auto* tp = Tape<S>::active();
  if (detail::tracks(tp, logits)) {
    int il = tp->input_id(logits);
    std::vector<int> tgt = targets;
    int io = tp->record_node(out);
    tp->add_step(io, [=, p = std::move(probs)](Tape<S>& t) {
      S g = t.grad_flat(io)[0];
      MatX<S> dl = p;
      for (Index i = 0; i < b; ++i) dl(i, tgt[static_cast<std::size_t>(i)]) -= S(1);
      dl *= g / static_cast<S>(b);
      t.accumulate(il, detail::flat(dl));
    });
  }
  return out;
}

// Inverted dropout: zeroes each element with probability p and scales the
// survivors by 1/(1-p). p = 0 returns the input unchanged without drawing
// from the stream.
template <class S>
Tensor<S> dropout(const Tensor<S>& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ContractError("dropout: drop probability must satisfy 0 <= p < 1, got " +
                        std::to_string(p));
  if (p == 0.0) return x;
  const Index n = x.numel();
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  VecX<S> mask(n);
  for (Index i = 0; i < n; ++i) mask[i] = rng.uniform() < p ? S(0) : keep_scale;
  Tensor<S> out(x.shape());
  out.value() = x.value().cwiseProduct(mask);

  auto* tp = Tape<S>::active();
  if (detail::tracks(tp, x)) {
    int ix = tp->input_id(x);
    int io = tp->record_node(out);
    tp->add_step(io, [=, m = std::move(mask)](Tape<S>& t) {
      t.accumulate(ix, t.grad_flat(io).cwiseProduct(m));
    });
  }
  return out;
}

// Sum of all elements, as a scalar tensor.
template <class S>
Tensor<S> sum(const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::scalar_value(x.value().sum());
  detail::check_finite(out, "sum");

  auto* tp = Tape<S>::active();
  if (detail::tracks(tp, x)) {
    int ix = tp->input_id(x);
    const Index n = x.numel();
    int io = tp->record_node(out);
    tp->add_step(io, [=](Tape<S>& t) {
      t.accumulate(ix, VecX<S>::Constant(n, t.grad_flat(io)[0]));
    });
  }
  return out;
}

}  // namespace hatetiny
