#include "omniseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "omniseg/geometry.hpp"

namespace omniseg::autodiff {

template <typename T>
Parameter<T>& ParamStore<T>::add(const std::string& name, Matrix<T> value) {
  require(!contains(name), "parameter block registered twice: " + name);
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->grad = Matrix<T>::Zero(value.rows(), value.cols());
  p->value = std::move(value);
  blocks_.push_back(std::move(p));
  return *blocks_.back();
}

template <typename T>
bool ParamStore<T>::contains(const std::string& name) const {
  return std::any_of(blocks_.begin(), blocks_.end(), [&](const auto& b) { return b->name == name; });
}

template <typename T>
Parameter<T>& ParamStore<T>::get(const std::string& name) {
  for (auto& b : blocks_) {
    if (b->name == name) return *b;
  }
  throw ContractViolation("unknown parameter block: " + name);
}

template <typename T>
const Parameter<T>& ParamStore<T>::get(const std::string& name) const {
  return const_cast<ParamStore<T>*>(this)->get(name);
}

template <typename T>
long ParamStore<T>::total_size() const {
  long n = 0;
  for (const auto& b : blocks_) n += b->value.size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& b : blocks_) b->grad.setZero(b->value.rows(), b->value.cols());
}

template <typename T>
Var Graph<T>::push(M value, Backward backward) {
  Node node;
  node.value = std::move(value);
  if (record_) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
typename Graph<T>::M& Graph<T>::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) n.grad = M::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
void Graph<T>::accumulate(Var v, const M& g) {
  M& acc = grad(v);
  acc += g;
}

template <typename T>
Var Graph<T>::constant(M value) {
  return push(std::move(value));
}

template <typename T>
Var Graph<T>::param(Parameter<T>& p) {
  Var v = push(p.value);
  nodes_[v.id].param = &p;
  return v;
}

template <typename T>
Var Graph<T>::custom(M value, Backward backward) {
  return push(std::move(value), std::move(backward));
}

template <typename T>
void Graph<T>::backward(Var loss) {
  require(record_, "backward on a graph built without recording");
  require(value(loss).size() == 1, "backward: loss must be a scalar");
  grad(loss).setOnes();
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(n.grad);
    if (n.param != nullptr) {
      if (n.param->grad.size() == 0) n.param->grad = M::Zero(n.value.rows(), n.value.cols());
      n.param->grad += n.grad;
    }
  }
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  require(cols(a) == rows(b), "matmul: inner dimension mismatch");
  M out(rows(a), cols(b));
  out.noalias() = value(a) * value(b);
  return push(std::move(out), [this, a, b](const M& g) {
    M ga = g * value(b).transpose();
    M gb = value(a).transpose() * g;
    accumulate(a, ga);
    accumulate(b, gb);
  });
}

template <typename T>
Var Graph<T>::matmul_nt(Var a, Var b) {
  require(cols(a) == cols(b), "matmul_nt: inner dimension mismatch");
  M out(rows(a), rows(b));
  out.noalias() = value(a) * value(b).transpose();
  return push(std::move(out), [this, a, b](const M& g) {
    M ga = g * value(b);
    M gb = g.transpose() * value(a);
    accumulate(a, ga);
    accumulate(b, gb);
  });
}

template <typename T>
Var Graph<T>::linear(Var x, Var w, Var b) {
  require(cols(x) == rows(w), "linear: input width " + std::to_string(cols(x)) + " vs weight rows " +
                                  std::to_string(rows(w)));
  M out(rows(x), cols(w));
  out.noalias() = value(x) * value(w);
  if (b.valid()) {
    require(rows(b) == 1 && cols(b) == cols(w), "linear: bias shape mismatch");
    out.rowwise() += value(b).row(0);
  }
  return push(std::move(out), [this, x, w, b](const M& g) {
    M gx = g * value(w).transpose();
    M gw = value(x).transpose() * g;
    accumulate(x, gx);
    accumulate(w, gw);
    if (b.valid()) accumulate(b, g.colwise().sum());
  });
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  require(rows(a) == rows(b) && cols(a) == cols(b), "add: shape mismatch");
  return push(value(a) + value(b), [this, a, b](const M& g) {
    accumulate(a, g);
    accumulate(b, g);
  });
}

template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  require(rows(a) == rows(b) && cols(a) == cols(b), "sub: shape mismatch");
  return push(value(a) - value(b), [this, a, b](const M& g) {
    accumulate(a, g);
    accumulate(b, -g);
  });
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  require(rows(a) == rows(b) && cols(a) == cols(b), "mul: shape mismatch");
  return push(value(a).cwiseProduct(value(b)), [this, a, b](const M& g) {
    accumulate(a, g.cwiseProduct(value(b)));
    accumulate(b, g.cwiseProduct(value(a)));
  });
}

template <typename T>
Var Graph<T>::scale(Var a, T s) {
  return push(value(a) * s, [this, a, s](const M& g) { accumulate(a, g * s); });
}

template <typename T>
Var Graph<T>::add_row(Var a, Var row) {
  require(rows(row) == 1 && cols(row) == cols(a), "add_row: shape mismatch");
  M out = value(a);
  out.rowwise() += value(row).row(0);
  return push(std::move(out), [this, a, row](const M& g) {
    accumulate(a, g);
    accumulate(row, g.colwise().sum());
  });
}

template <typename T>
Var Graph<T>::mul_row(Var a, Var row) {
  require(rows(row) == 1 && cols(row) == cols(a), "mul_row: shape mismatch");
  M out = value(a);
  for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) = out.row(r).cwiseProduct(value(row).row(0));
  return push(std::move(out), [this, a, row](const M& g) {
    M ga = g;
    for (Eigen::Index r = 0; r < ga.rows(); ++r) ga.row(r) = ga.row(r).cwiseProduct(value(row).row(0));
    accumulate(a, ga);
    accumulate(row, g.cwiseProduct(value(a)).colwise().sum());
  });
}

template <typename T>
Var Graph<T>::relu(Var a) {
  return push(value(a).cwiseMax(T(0)), [this, a](const M& g) {
    accumulate(a, (value(a).array() > T(0)).select(g, T(0)));
  });
}

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gain, Var bias, T eps) {
  const int n = rows(x);
  const int c = cols(x);
  require(cols(gain) == c && cols(bias) == c, "layer_norm: parameter width mismatch");
  M normalized(n, c);
  std::vector<T> inv_std(n);
  for (int r = 0; r < n; ++r) {
    const auto row = value(x).row(r);
    const T mean = row.mean();
    const T var = (row.array() - mean).square().mean();
    inv_std[r] = T(1) / std::sqrt(var + eps);
    normalized.row(r) = (row.array() - mean) * inv_std[r];
  }
  M out = normalized;
  for (int r = 0; r < n; ++r) {
    out.row(r) = out.row(r).cwiseProduct(value(gain).row(0)) + value(bias).row(0);
  }
  return push(std::move(out), [this, x, gain, bias, normalized = std::move(normalized),
                               inv_std = std::move(inv_std)](const M& g) {
    const int n = static_cast<int>(g.rows());
    const int c = static_cast<int>(g.cols());
    accumulate(gain, g.cwiseProduct(normalized).colwise().sum());
    accumulate(bias, g.colwise().sum());
    M gx(n, c);
    for (int r = 0; r < n; ++r) {
      const auto dxhat = g.row(r).cwiseProduct(value(gain).row(0)).eval();
      const T m1 = dxhat.mean();
      const T m2 = dxhat.cwiseProduct(normalized.row(r)).mean();
      gx.row(r) = (dxhat.array() - m1 - normalized.row(r).array() * m2) * inv_std[r];
    }
    accumulate(x, gx);
  });
}

template <typename T>
Var Graph<T>::softmax_rows(Var a) {
  M out = value(a);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const T mx = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  const Var result = push(out, nullptr);
  if (record_) {
    nodes_[result.id].backward = [this, a, out = std::move(out)](const M& g) {
      M ga(out.rows(), out.cols());
      for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const T dot = g.row(r).dot(out.row(r));
        ga.row(r) = out.row(r).array() * (g.row(r).array() - dot);
      }
      accumulate(a, ga);
    };
  }
  return result;
}

template <typename T>
Var Graph<T>::sum_all(Var a) {
  M out(1, 1);
  out(0, 0) = value(a).sum();
  return push(std::move(out), [this, a](const M& g) {
    accumulate(a, M::Constant(rows(a), cols(a), g(0, 0)));
  });
}

template <typename T>
Var Graph<T>::sparse_mix(std::shared_ptr<const SparseRows> w, Var x) {
  require(w->cols == rows(x), "sparse_mix: weights expect " + std::to_string(w->cols) + " rows, got " +
                                  std::to_string(rows(x)));
  const M& xv = value(x);
  M out = M::Zero(w->rows(), xv.cols());
  for (int r = 0; r < w->rows(); ++r) {
    for (int i = w->offsets[r]; i < w->offsets[r + 1]; ++i) {
      out.row(r) += static_cast<T>(w->weight[i]) * xv.row(w->index[i]);
    }
  }
  return push(std::move(out), [this, w, x](const M& g) {
    M gx = M::Zero(rows(x), cols(x));
    for (int r = 0; r < w->rows(); ++r) {
      for (int i = w->offsets[r]; i < w->offsets[r + 1]; ++i) {
        gx.row(w->index[i]) += static_cast<T>(w->weight[i]) * g.row(r);
      }
    }
    accumulate(x, gx);
  });
}

template <typename T>
Var Graph<T>::scatter_rows(Var base, std::shared_ptr<const std::vector<int>> idx, Var values) {
  require(static_cast<int>(idx->size()) == rows(values), "scatter_rows: index/value count mismatch");
  require(cols(base) == cols(values), "scatter_rows: width mismatch");
  M out = value(base);
  for (size_t i = 0; i < idx->size(); ++i) out.row((*idx)[i]) = value(values).row(static_cast<Eigen::Index>(i));
  return push(std::move(out), [this, base, idx, values](const M& g) {
    M gb = g;
    M gv(idx->size(), g.cols());
    for (size_t i = 0; i < idx->size(); ++i) {
      gv.row(static_cast<Eigen::Index>(i)) = g.row((*idx)[i]);
      gb.row((*idx)[i]).setZero();
    }
    accumulate(base, gb);
    accumulate(values, gv);
  });
}

template <typename T>
Var Graph<T>::concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  int total = 0;
  for (Var p : parts) {
    require(cols(p) == cols(parts[0]), "concat_rows: width mismatch");
    total += rows(p);
  }
  M out(total, cols(parts[0]));
  int offset = 0;
  for (Var p : parts) {
    out.middleRows(offset, rows(p)) = value(p);
    offset += rows(p);
  }
  return push(std::move(out), [this, parts](const M& g) {
    int off = 0;
    for (Var p : parts) {
      accumulate(p, g.middleRows(off, rows(p)));
      off += rows(p);
    }
  });
}

template <typename T>
Var Graph<T>::slice_rows(Var a, int start, int count) {
  require(start >= 0 && count >= 0 && start + count <= rows(a), "slice_rows: out of range");
  return push(value(a).middleRows(start, count), [this, a, start, count](const M& g) {
    M& ga = grad(a);
    ga.middleRows(start, count) += g;
  });
}

template <typename T>
Var Graph<T>::broadcast_row(Var row, int n) {
  require(rows(row) == 1, "broadcast_row: expected a single row");
  return push(value(row).replicate(n, 1), [this, row](const M& g) { accumulate(row, g.colwise().sum()); });
}

template <typename T>
Var Graph<T>::conv2d(Var x, MapShape in, Var w, Var b, int kernel, int stride, int pad, MapShape* out_shape) {
  const int cin = cols(x);
  require(rows(x) == in.pixels(), "conv2d: input rows do not match map shape");
  require(rows(w) == kernel * kernel * cin, "conv2d: kernel rows mismatch");
  MapShape os{in.views, (in.height + 2 * pad - kernel) / stride + 1, (in.width + 2 * pad - kernel) / stride + 1};
  require(os.height >= 1 && os.width >= 1, "conv2d: output would be empty");
  if (out_shape) *out_shape = os;
  const int kk = kernel * kernel * cin;
  M col = M::Zero(os.pixels(), kk);
  const M& xv = value(x);
  for (int v = 0; v < in.views; ++v) {
    for (int oy = 0; oy < os.height; ++oy) {
      for (int ox = 0; ox < os.width; ++ox) {
        const int row = (v * os.height + oy) * os.width + ox;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= in.height) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= in.width) continue;
            col.row(row).segment((ky * kernel + kx) * cin, cin) = xv.row((v * in.height + iy) * in.width + ix);
          }
        }
      }
    }
  }
  M out(os.pixels(), cols(w));
  out.noalias() = col * value(w);
  if (b.valid()) out.rowwise() += value(b).row(0);
  const Var result = push(std::move(out), nullptr);
  if (record_) {
    nodes_[result.id].backward = [this, x, w, b, in, os, kernel, stride, pad, col = std::move(col)](const M& g) {
      const int cin = cols(x);
      M gw = col.transpose() * g;
      accumulate(w, gw);
      if (b.valid()) accumulate(b, g.colwise().sum());
      M gcol = g * value(w).transpose();
      M& gx = grad(x);
      for (int v = 0; v < in.views; ++v) {
        for (int oy = 0; oy < os.height; ++oy) {
          for (int ox = 0; ox < os.width; ++ox) {
            const int row = (v * os.height + oy) * os.width + ox;
            for (int ky = 0; ky < kernel; ++ky) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= in.height) continue;
              for (int kx = 0; kx < kernel; ++kx) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= in.width) continue;
                gx.row((v * in.height + iy) * in.width + ix) += gcol.row(row).segment((ky * kernel + kx) * cin, cin);
              }
            }
          }
        }
      }
    };
  }
  return result;
}

template <typename T>
Var Graph<T>::attention(Var q, Var k, Var v, int heads) {
  const int n = rows(q);
  const int t = rows(k);
  const int d = cols(q);
  require(cols(k) == d && cols(v) == d && rows(v) == t, "attention: shape mismatch");
  require(heads >= 1 && d % heads == 0, "attention: width not divisible by heads");
  const int dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<M> probs(heads);
  M out(n, d);
  for (int h = 0; h < heads; ++h) {
    const M qh = value(q).middleCols(h * dh, dh);
    const M kh = value(k).middleCols(h * dh, dh);
    M s = (qh * kh.transpose()) * inv_sqrt;
    for (int r = 0; r < n; ++r) {
      const T mx = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - mx).exp();
      s.row(r) /= s.row(r).sum();
    }
    out.middleCols(h * dh, dh) = s * value(v).middleCols(h * dh, dh);
    probs[h] = std::move(s);
  }
  const Var result = push(std::move(out), nullptr);
  if (record_) {
    nodes_[result.id].backward = [this, q, k, v, heads, dh, inv_sqrt, probs = std::move(probs)](const M& g) {
      M gq = M::Zero(rows(q), cols(q));
      M gk = M::Zero(rows(k), cols(k));
      M gv = M::Zero(rows(v), cols(v));
      for (int h = 0; h < heads; ++h) {
        const M& a = probs[h];
        const M gh = g.middleCols(h * dh, dh);
        gv.middleCols(h * dh, dh) += a.transpose() * gh;
        M da = gh * value(v).middleCols(h * dh, dh).transpose();
        for (Eigen::Index r = 0; r < da.rows(); ++r) {
          const T dot = da.row(r).dot(a.row(r));
          da.row(r) = a.row(r).array() * (da.row(r).array() - dot);
        }
        da *= inv_sqrt;
        gq.middleCols(h * dh, dh) += da * value(k).middleCols(h * dh, dh);
        gk.middleCols(h * dh, dh) += da.transpose() * value(q).middleCols(h * dh, dh);
      }
      accumulate(q, gq);
      accumulate(k, gk);
      accumulate(v, gv);
    };
  }
  return result;
}

template <typename T>
Var Graph<T>::grouped_attention(Var q, Var k, Var v, int group, int heads) {
  const int n = rows(q);
  const int d = cols(q);
  require(group >= 1 && rows(k) == n * group && rows(v) == n * group, "grouped_attention: row mismatch");
  require(cols(k) == d && cols(v) == d, "grouped_attention: width mismatch");
  require(heads >= 1 && d % heads == 0, "grouped_attention: width not divisible by heads");
  const int dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  const M& qv = value(q);
  const M& kv = value(k);
  const M& vv = value(v);
  // probs laid out (i, h, j)
  std::vector<T> probs(static_cast<size_t>(n) * heads * group);
  M out = M::Zero(n, d);
  std::vector<T> s(group);
  for (int i = 0; i < n; ++i) {
    for (int h = 0; h < heads; ++h) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < group; ++j) {
        s[j] = qv.row(i).segment(h * dh, dh).dot(kv.row(i * group + j).segment(h * dh, dh)) * inv_sqrt;
        mx = std::max(mx, s[j]);
      }
      T total = 0;
      for (int j = 0; j < group; ++j) {
        s[j] = std::exp(s[j] - mx);
        total += s[j];
      }
      T* p = &probs[(static_cast<size_t>(i) * heads + h) * group];
      for (int j = 0; j < group; ++j) {
        p[j] = s[j] / total;
        out.row(i).segment(h * dh, dh) += p[j] * vv.row(i * group + j).segment(h * dh, dh);
      }
    }
  }
  const Var result = push(std::move(out), nullptr);
  if (record_) {
    nodes_[result.id].backward = [this, q, k, v, group, heads, dh, inv_sqrt, probs = std::move(probs)](const M& g) {
      const int n = rows(q);
      const M& qv = value(q);
      const M& kv = value(k);
      const M& vv = value(v);
      M gq = M::Zero(rows(q), cols(q));
      M gk = M::Zero(rows(k), cols(k));
      M gv = M::Zero(rows(v), cols(v));
      std::vector<T> da(group);
      for (int i = 0; i < n; ++i) {
        for (int h = 0; h < heads; ++h) {
          const T* p = &probs[(static_cast<size_t>(i) * heads + h) * group];
          const auto gh = g.row(i).segment(h * dh, dh);
          T dot = 0;
          for (int j = 0; j < group; ++j) {
            gv.row(i * group + j).segment(h * dh, dh) += p[j] * gh;
            da[j] = gh.dot(vv.row(i * group + j).segment(h * dh, dh));
            dot += da[j] * p[j];
          }
          for (int j = 0; j < group; ++j) {
            const T ds = p[j] * (da[j] - dot) * inv_sqrt;
            gq.row(i).segment(h * dh, dh) += ds * kv.row(i * group + j).segment(h * dh, dh);
            gk.row(i * group + j).segment(h * dh, dh) += ds * qv.row(i).segment(h * dh, dh);
          }
        }
      }
      accumulate(q, gq);
      accumulate(k, gk);
      accumulate(v, gv);
    };
  }
  return result;
}

template <typename T>
Var Graph<T>::deformable_sample(const std::vector<Var>& level_values, Var offsets, Var weights,
                                std::shared_ptr<const DeformSpec> spec) {
  const int n = rows(offsets);
  const int levels = static_cast<int>(spec->levels.size());
  const int points = spec->points;
  require(static_cast<int>(level_values.size()) == levels, "deformable_sample: level count mismatch");
  require(cols(offsets) == levels * points * 2 && cols(weights) == levels * points && rows(weights) == n,
          "deformable_sample: offset/weight shape mismatch");
  require(static_cast<int>(spec->query_view.size()) == n &&
              static_cast<int>(spec->reference.size()) == n * levels * 2,
          "deformable_sample: spec size mismatch");
  const int d = cols(level_values[0]);
  for (int l = 0; l < levels; ++l) {
    require(rows(level_values[l]) == spec->levels[l].pixels() && cols(level_values[l]) == d,
            "deformable_sample: level value shape mismatch");
  }
  // taps cached for the backward pass: (n, l, p)
  std::vector<geometry::BilinearTaps> taps(static_cast<size_t>(n) * levels * points);
  M out = M::Zero(n, d);
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < levels; ++l) {
      const MapShape& shape = spec->levels[l];
      const int base = spec->query_view[i] * shape.pixels_per_view();
      for (int p = 0; p < points; ++p) {
        const int lp = l * points + p;
        const double u = spec->reference[(i * levels + l) * 2] +
                         static_cast<double>(value(offsets)(i, lp * 2)) * spec->level_scale[l][0];
        const double v = spec->reference[(i * levels + l) * 2 + 1] +
                         static_cast<double>(value(offsets)(i, lp * 2 + 1)) * spec->level_scale[l][1];
        auto& tp = taps[static_cast<size_t>(i) * levels * points + lp];
        tp = geometry::bilinear_taps(shape.height, shape.width, u, v);
        const T a = value(weights)(i, lp);
        for (int t = 0; t < 4; ++t) {
          out.row(i) += (a * static_cast<T>(tp.weight[t])) * value(level_values[l]).row(base + tp.index[t]);
        }
      }
    }
  }
  const Var result = push(std::move(out), nullptr);
  if (record_) {
    nodes_[result.id].backward = [this, level_values, offsets, weights, spec, taps = std::move(taps)](const M& g) {
      const int n = rows(offsets);
      const int levels = static_cast<int>(spec->levels.size());
      const int points = spec->points;
      M goff = M::Zero(n, levels * points * 2);
      M gw = M::Zero(n, levels * points);
      std::vector<M*> glevel(levels);
      for (int l = 0; l < levels; ++l) glevel[l] = &grad(level_values[l]);
      for (int i = 0; i < n; ++i) {
        for (int l = 0; l < levels; ++l) {
          const int base = spec->query_view[i] * spec->levels[l].pixels_per_view();
          const M& lv = value(level_values[l]);
          for (int p = 0; p < points; ++p) {
            const int lp = l * points + p;
            const auto& tp = taps[static_cast<size_t>(i) * levels * points + lp];
            const T a = value(weights)(i, lp);
            T dsample_du = 0;
            T dsample_dv = 0;
            T dweight = 0;
            for (int t = 0; t < 4; ++t) {
              const T proj = g.row(i).dot(lv.row(base + tp.index[t]));
              dweight += static_cast<T>(tp.weight[t]) * proj;
              dsample_du += static_cast<T>(tp.dweight_du[t]) * proj;
              dsample_dv += static_cast<T>(tp.dweight_dv[t]) * proj;
              glevel[l]->row(base + tp.index[t]) += (a * static_cast<T>(tp.weight[t])) * g.row(i);
            }
            gw(i, lp) += dweight;
            goff(i, lp * 2) += a * dsample_du * static_cast<T>(spec->level_scale[l][0]);
            goff(i, lp * 2 + 1) += a * dsample_dv * static_cast<T>(spec->level_scale[l][1]);
          }
        }
      }
      accumulate(offsets, goff);
      accumulate(weights, gw);
    };
  }
  return result;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace omniseg::autodiff
