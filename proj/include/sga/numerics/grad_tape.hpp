// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sga/attention/mask.hpp"
#include "sga/numerics/ops.hpp"

namespace sga {

/// Reverse-mode tape over dense arrays.
///
/// Every op appends a node holding its value, a forward rule (so the whole
/// tape can be replayed after leaf values change) and a backward rule that
/// pushes the node's gradient into its parents. Only the primitives the
/// transformer needs are provided; anything else goes through custom().
///
/// A tape built with record = false keeps values only, for inference.
template <std::floating_point T>
class GradTape {
 public:
  struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const noexcept { return id != static_cast<std::size_t>(-1); }
  };

  using ForwardFn = std::function<Array<T>(const GradTape&)>;
  using BackwardFn = std::function<void(GradTape&, const Array<T>& grad_out)>;

  explicit GradTape(bool record = true) : record_(record) {}

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var input(Array<T> value) { return push_leaf(std::move(value), false); }
  Var parameter(Array<T> value) { return push_leaf(std::move(value), record_); }

  const Array<T>& value(Var v) const { return nodes_.at(v.id).value; }
  // Leaf values may be edited in place before replay().
  Array<T>& leaf_value(Var v) {
    auto& n = nodes_.at(v.id);
    if (n.forward) throw Error("leaf_value: node is not a leaf");
    return n.value;
  }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  const Array<T>& grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.empty() && !n.value.empty()) {
      zero_cache_ = Array<T>(n.value.shape());
      return zero_cache_;
    }
    return n.grad;
  }

  void accumulate(Var v, const Array<T>& g) {
    auto& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape()) {
      throw ShapeError("gradient shape " + shape_string(g.shape()) + " does not match value " +
                       shape_string(n.value.shape()));
    }
    if (n.grad.empty()) {
      n.grad = g;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad = Array<T>();
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every backward rule in reverse order.
  void backward(Var loss) {
    if (!record_) throw Error("backward on a non-recording tape");
    if (value(loss).size() != 1) throw ShapeError("backward: loss must be a scalar");
    zero_grad();
    nodes_[loss.id].grad = Array<T>(value(loss).shape(), T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  /// Recomputes every derived node from current leaf values.
  void replay() {
    if (!record_) throw Error("replay on a non-recording tape");
    for (auto& n : nodes_) {
      if (n.forward) n.value = n.forward(*this);
    }
  }

  /// Registers an op implemented outside the tape.
  Var custom(const std::vector<Var>& parents, ForwardFn forward, BackwardFn backward) {
    Array<T> v = forward(*this);
    return push(std::move(v), parents, std::move(forward), std::move(backward));
  }

  // ---- primitives -------------------------------------------------------

  Var matmul(Var a, Var b) {
    ForwardFn f = [a, b](const GradTape& t) { return sga::matmul(t.value(a), t.value(b)); };
    BackwardFn bw = [a, b](GradTape& t, const Array<T>& g) {
      if (t.requires_grad(a)) t.accumulate(a, sga::matmul_nt(g, t.value(b)));
      if (t.requires_grad(b)) t.accumulate(b, sga::matmul_tn(t.value(a), g));
    };
    return make({a, b}, std::move(f), std::move(bw));
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    ForwardFn f = [a, b](const GradTape& t) { return sga::matmul_nt(t.value(a), t.value(b)); };
    BackwardFn bw = [a, b](GradTape& t, const Array<T>& g) {
      if (t.requires_grad(a)) t.accumulate(a, sga::matmul(g, t.value(b)));
      if (t.requires_grad(b)) t.accumulate(b, sga::matmul_tn(g, t.value(a)));
    };
    return make({a, b}, std::move(f), std::move(bw));
  }

  Var add(Var a, Var b) {
    ForwardFn f = [a, b](const GradTape& t) { return sga::add(t.value(a), t.value(b)); };
    BackwardFn bw = [a, b](GradTape& t, const Array<T>& g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    };
    return make({a, b}, std::move(f), std::move(bw));
  }

  Var add_row(Var x, Var bias) {
    ForwardFn f = [x, bias](const GradTape& t) { return sga::add_row(t.value(x), t.value(bias)); };
    BackwardFn bw = [x, bias](GradTape& t, const Array<T>& g) {
      t.accumulate(x, g);
      if (t.requires_grad(bias)) {
        Array<T> gb(t.value(bias).shape());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
        }
        t.accumulate(bias, gb);
      }
    };
    return make({x, bias}, std::move(f), std::move(bw));
  }

  Var scale(Var a, T s) {
    ForwardFn f = [a, s](const GradTape& t) { return sga::scale(t.value(a), s); };
    BackwardFn bw = [a, s](GradTape& t, const Array<T>& g) { t.accumulate(a, sga::scale(g, s)); };
    return make({a}, std::move(f), std::move(bw));
  }

  Var gelu(Var a) {
    ForwardFn f = [a](const GradTape& t) { return sga::gelu(t.value(a)); };
    BackwardFn bw = [a](GradTape& t, const Array<T>& g) {
      const auto& x = t.value(a);
      Array<T> gx(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] = g[i] * gelu_derivative(x[i]);
      t.accumulate(a, gx);
    };
    return make({a}, std::move(f), std::move(bw));
  }

  Var masked_softmax(Var scores, AttentionMask mask) {
    auto m = std::make_shared<const AttentionMask>(std::move(mask));
    ForwardFn f = [scores, m](const GradTape& t) { return sga::masked_softmax(t.value(scores), *m); };
    const std::size_t self = nodes_.size();
    BackwardFn bw = [scores, self](GradTape& t, const Array<T>& g) {
      const auto& p = t.nodes_[self].value;
      Array<T> gs(p.shape());
      for (std::size_t r = 0; r < p.rows(); ++r) {
        T dot{0};
        for (std::size_t c = 0; c < p.cols(); ++c) dot += g(r, c) * p(r, c);
        for (std::size_t c = 0; c < p.cols(); ++c) gs(r, c) = p(r, c) * (g(r, c) - dot);
      }
      t.accumulate(scores, gs);
    };
    return make({scores}, std::move(f), std::move(bw));
  }

  Var layer_norm(Var x, Var gain, Var bias) {
    ForwardFn f = [x, gain, bias](const GradTape& t) {
      return sga::layer_norm(t.value(x), t.value(gain), t.value(bias));
    };
    BackwardFn bw = [x, gain, bias](GradTape& t, const Array<T>& g) {
      const auto& xv = t.value(x);
      const auto& gv = t.value(gain);
      const std::size_t d = xv.cols();
      Array<T> dx(xv.shape()), dg(gv.shape()), db(gv.shape());
      std::vector<T> xhat(d), dxhat(d);
      for (std::size_t r = 0; r < xv.rows(); ++r) {
        const auto in = xv.row(r);
        T mean{0};
        for (T v : in) mean += v;
        mean /= static_cast<T>(d);
        T var{0};
        for (T v : in) var += (v - mean) * (v - mean);
        var /= static_cast<T>(d);
        const T inv = T{1} / std::sqrt(var + static_cast<T>(kLayerNormEps));
        T m1{0}, m2{0};
        for (std::size_t c = 0; c < d; ++c) {
          xhat[c] = (in[c] - mean) * inv;
          dxhat[c] = g(r, c) * gv[c];
          m1 += dxhat[c];
          m2 += dxhat[c] * xhat[c];
          dg[c] += g(r, c) * xhat[c];
          db[c] += g(r, c);
        }
        m1 /= static_cast<T>(d);
        m2 /= static_cast<T>(d);
        for (std::size_t c = 0; c < d; ++c) dx(r, c) = inv * (dxhat[c] - m1 - xhat[c] * m2);
      }
      t.accumulate(x, dx);
      t.accumulate(gain, dg);
      t.accumulate(bias, db);
    };
    return make({x, gain, bias}, std::move(f), std::move(bw));
  }

  /// Residual depth-wise 5x5 conv inside each region; x is L x d.
  Var peg(Var x, Var kernel, std::vector<PegRegion> regions) {
    auto regs = std::make_shared<const std::vector<PegRegion>>(std::move(regions));
    ForwardFn f = [x, kernel, regs](const GradTape& t) {
      return sga::peg_regions(t.value(x), t.value(kernel), *regs);
    };
    BackwardFn bw = [x, kernel, regs](GradTape& t, const Array<T>& g) {
      const auto& xv = t.value(x);
      const auto& kv = t.value(kernel);
      const std::size_t d = xv.cols();
      Array<T> dx = g;  // residual path
      Array<T> dk(kv.shape());
      for (const auto& reg : *regs) {
        const auto h = static_cast<std::ptrdiff_t>(reg.height);
        const auto w = static_cast<std::ptrdiff_t>(reg.width);
        for (std::ptrdiff_t i = 0; i < h; ++i) {
          for (std::ptrdiff_t j = 0; j < w; ++j) {
            const T* gd = g.data() + reg.tokens[i * w + j] * d;
            for (std::ptrdiff_t ky = 0; ky < 5; ++ky) {
              const std::ptrdiff_t si = i + ky - kPegPad;
              if (si < 0 || si >= h) continue;
              for (std::ptrdiff_t kx = 0; kx < 5; ++kx) {
                const std::ptrdiff_t sj = j + kx - kPegPad;
                if (sj < 0 || sj >= w) continue;
                const std::size_t src = reg.tokens[si * w + sj];
                const T* xs = xv.data() + src * d;
                T* dxs = dx.data() + src * d;
                const T* kw = kv.data() + (ky * 5 + kx) * d;
                T* dkw = dk.data() + (ky * 5 + kx) * d;
                for (std::size_t c = 0; c < d; ++c) {
                  dxs[c] += kw[c] * gd[c];
                  dkw[c] += xs[c] * gd[c];
                }
              }
            }
          }
        }
      }
      t.accumulate(x, dx);
      t.accumulate(kernel, dk);
    };
    return make({x, kernel}, std::move(f), std::move(bw));
  }

  /// Rows of `table` selected by `indices` (embedding lookup).
  Var gather(Var table, std::vector<std::size_t> indices) {
    auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(indices));
    {
      const auto& tv = value(table);
      for (auto i : *idx) {
        if (i >= tv.rows()) {
          throw VocabularyError("gather: index " + std::to_string(i) + " outside table of " +
                                std::to_string(tv.rows()) + " rows");
        }
      }
    }
    ForwardFn f = [table, idx](const GradTape& t) {
      const auto& tv = t.value(table);
      const std::size_t d = tv.cols();
      Array<T> out({idx->size(), d});
      for (std::size_t r = 0; r < idx->size(); ++r) {
        const T* src = tv.data() + (*idx)[r] * d;
        std::copy(src, src + d, out.data() + r * d);
      }
      return out;
    };
    BackwardFn bw = [table, idx](GradTape& t, const Array<T>& g) {
      if (!t.requires_grad(table)) return;
      Array<T> gt(t.value(table).shape());
      const std::size_t d = gt.cols();
      for (std::size_t r = 0; r < idx->size(); ++r) {
        T* dst = gt.data() + (*idx)[r] * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += g(r, c);
      }
      t.accumulate(table, gt);
    };
    return make({table}, std::move(f), std::move(bw));
  }

  /// Mean over `rows` of -log softmax(logits[row])[target[row]].
  Var cross_entropy(Var logits, std::vector<std::size_t> rows, std::vector<std::size_t> targets) {
    if (rows.size() != targets.size()) throw ShapeError("cross_entropy: rows/targets mismatch");
    if (rows.empty()) throw ShapeError("cross_entropy: no rows selected");
    {
      const auto& lv = value(logits);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= lv.rows() || targets[i] >= lv.cols()) {
          throw VocabularyError("cross_entropy: row/target out of range");
        }
      }
    }
    auto sel = std::make_shared<const std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>(
        std::move(rows), std::move(targets));
    ForwardFn f = [logits, sel](const GradTape& t) {
      const auto& lv = t.value(logits);
      T acc{0};
      for (std::size_t i = 0; i < sel->first.size(); ++i) {
        const auto row = lv.row(sel->first[i]);
        acc += log_sum_exp(row) - row[sel->second[i]];
      }
      return Array<T>({1}, acc / static_cast<T>(sel->first.size()));
    };
    BackwardFn bw = [logits, sel](GradTape& t, const Array<T>& g) {
      const auto& lv = t.value(logits);
      Array<T> gl(lv.shape());
      const T w = g[0] / static_cast<T>(sel->first.size());
      for (std::size_t i = 0; i < sel->first.size(); ++i) {
        const std::size_t r = sel->first[i];
        const auto row = lv.row(r);
        const T lse = log_sum_exp(row);
        for (std::size_t c = 0; c < row.size(); ++c) gl(r, c) += w * std::exp(row[c] - lse);
        gl(r, sel->second[i]) -= w;
      }
      t.accumulate(logits, gl);
    };
    return make({logits}, std::move(f), std::move(bw));
  }

  Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    if (begin + count > value(a).cols()) throw ShapeError("slice_cols: out of range");
    ForwardFn f = [a, begin, count](const GradTape& t) {
      const auto& av = t.value(a);
      Array<T> out({av.rows(), count});
      for (std::size_t r = 0; r < av.rows(); ++r) {
        std::copy(av.data() + r * av.cols() + begin, av.data() + r * av.cols() + begin + count,
                  out.data() + r * count);
      }
      return out;
    };
    BackwardFn bw = [a, begin, count](GradTape& t, const Array<T>& g) {
      const auto& av = t.value(a);
      Array<T> ga(av.shape());
      for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < count; ++c) ga(r, begin + c) = g(r, c);
      }
      t.accumulate(a, ga);
    };
    return make({a}, std::move(f), std::move(bw));
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
    ForwardFn f = [parts](const GradTape& t) {
      const std::size_t rows = t.value(parts[0]).rows();
      std::size_t cols = 0;
      for (auto p : parts) {
        if (t.value(p).rows() != rows) throw ShapeError("concat_cols: row mismatch");
        cols += t.value(p).cols();
      }
      Array<T> out({rows, cols});
      std::size_t off = 0;
      for (auto p : parts) {
        const auto& pv = t.value(p);
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy(pv.data() + r * pv.cols(), pv.data() + (r + 1) * pv.cols(),
                    out.data() + r * cols + off);
        }
        off += pv.cols();
      }
      return out;
    };
    BackwardFn bw = [parts](GradTape& t, const Array<T>& g) {
      std::size_t off = 0;
      for (auto p : parts) {
        const auto& pv = t.value(p);
        Array<T> gp(pv.shape());
        for (std::size_t r = 0; r < pv.rows(); ++r) {
          std::copy(g.data() + r * g.cols() + off, g.data() + r * g.cols() + off + pv.cols(),
                    gp.data() + r * pv.cols());
        }
        t.accumulate(p, gp);
        off += pv.cols();
      }
    };
    return make(parts, std::move(f), std::move(bw));
  }

  Var sum_squares(Var a) {
    ForwardFn f = [a](const GradTape& t) {
      T acc{0};
      for (T v : t.value(a).values()) acc += v * v;
      return Array<T>({1}, acc);
    };
    BackwardFn bw = [a](GradTape& t, const Array<T>& g) {
      t.accumulate(a, sga::scale(t.value(a), T{2} * g[0]));
    };
    return make({a}, std::move(f), std::move(bw));
  }

 private:
  struct Node {
    Array<T> value;
    Array<T> grad;
    bool requires_grad = false;
    ForwardFn forward;
    BackwardFn backward;
  };

  Var push_leaf(Array<T> value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var make(const std::vector<Var>& parents, ForwardFn forward, BackwardFn backward) {
    Array<T> v = forward(*this);
    return push(std::move(v), parents, std::move(forward), std::move(backward));
  }

  Var push(Array<T> value, const std::vector<Var>& parents, ForwardFn forward,
           BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    if (record_) {
      for (auto p : parents) n.requires_grad = n.requires_grad || nodes_.at(p.id).requires_grad;
      n.forward = std::move(forward);
      if (n.requires_grad) n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
  mutable Array<T> zero_cache_;
};

}  // namespace sga
