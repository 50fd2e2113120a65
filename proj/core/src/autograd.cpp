#include "fits/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace fits {

namespace {

// dot product with independent accumulators so -O2/-O3 can vectorize the
// reduction without reassociating under -ffast-math
inline double dot_n(const double* a, const double* b, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int p = 0;
  for (; p + 4 <= n; p += 4) {
    s0 += a[p] * b[p];
    s1 += a[p + 1] * b[p + 1];
    s2 += a[p + 2] * b[p + 2];
    s3 += a[p + 3] * b[p + 3];
  }
  double s = (s0 + s1) + (s2 + s3);
  for (; p < n; ++p) s += a[p] * b[p];
  return s;
}

}  // namespace

namespace {
constexpr double kLogClamp = 1e-12;
constexpr double kNormClamp = 1e-12;

void check(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}
}  // namespace

// ---------------------------------------------------------------- ParamStore

ParamStore::Entry& ParamStore::add(const std::string& name, Tensor init) {
  if (entries_.count(name)) throw ShapeError("duplicate parameter " + name);
  Entry e;
  e.grad = Tensor(init.shape);
  e.value = std::move(init);
  order_.push_back(name);
  return entries_.emplace(name, std::move(e)).first->second;
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ShapeError("unknown parameter " + name);
  return it->second;
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ShapeError("unknown parameter " + name);
  return it->second;
}

bool ParamStore::contains(const std::string& name) const {
  return entries_.count(name) != 0;
}

void ParamStore::zero_grad() {
  for (auto& name : order_) entries_[name].grad.fill(0.0);
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (auto& name : order_) n += entries_.at(name).value.numel();
  return n;
}

// ---------------------------------------------------------------------- Tape

Tape::Tape(bool forward_only) : forward_only_(forward_only) {
  nodes_.reserve(1024);
}

Var Tape::constant(Tensor v) { return {push(std::move(v), nullptr)}; }

Var Tape::param(ParamStore& ps, const std::string& name) {
  auto& e = ps.at(name);
  int id = push(e.value, nullptr);
  nodes_[id].param = &e;
  return {id};
}

const Tensor& Tape::val(Var v) const { return nodes_[v.id].value; }

double Tape::scalar(Var v) const {
  const Tensor& t = nodes_[v.id].value;
  check(t.numel() == 1, "scalar() on non-scalar " + shape_str(t));
  return t.data[0];
}

const Tensor& Tape::grad(Var v) const { return nodes_[v.id].grad; }

Var Tape::add(Var a, Var b) {
  const Tensor &ta = v(a.id), &tb = v(b.id);
  check(ta.same_shape(tb), "add shape mismatch " + shape_str(ta) + " vs " + shape_str(tb));
  Tensor out = ta;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
  int ai = a.id, bi = b.id;
  return {push(std::move(out), [ai, bi](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      t.gbuf(ai).data[i] += g.data[i];
      t.gbuf(bi).data[i] += g.data[i];
    }
  })};
}

Var Tape::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Tape::add_n(const std::vector<Var>& xs) {
  check(!xs.empty(), "add_n of nothing");
  Tensor out = v(xs[0].id);
  for (std::size_t j = 1; j < xs.size(); ++j) {
    const Tensor& tj = v(xs[j].id);
    check(tj.same_shape(out), "add_n shape mismatch");
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += tj.data[i];
  }
  std::vector<int> ids;
  for (Var x : xs) ids.push_back(x.id);
  return {push(std::move(out), [ids](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (int id : ids)
      for (std::size_t i = 0; i < g.data.size(); ++i)
        t.gbuf(id).data[i] += g.data[i];
  })};
}

Var Tape::mul(Var a, Var b) {
  const Tensor &ta = v(a.id), &tb = v(b.id);
  check(ta.same_shape(tb), "mul shape mismatch");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
  int ai = a.id, bi = b.id;
  return {push(std::move(out), [ai, bi](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    const Tensor &va = t.v(ai), &vb = t.v(bi);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      t.gbuf(ai).data[i] += g.data[i] * vb.data[i];
      t.gbuf(bi).data[i] += g.data[i] * va.data[i];
    }
  })};
}

Var Tape::scale(Var a, double c) {
  Tensor out = v(a.id);
  for (double& x : out.data) x *= c;
  int ai = a.id;
  return {push(std::move(out), [ai, c](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      t.gbuf(ai).data[i] += c * g.data[i];
  })};
}

Var Tape::matmul(Var a, Var b) {
  const Tensor &ta = v(a.id), &tb = v(b.id);
  check(ta.rank() == 2 && tb.rank() == 2 && ta.shape[1] == tb.shape[0],
        "matmul shape mismatch " + shape_str(ta) + " x " + shape_str(tb));
  int m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double aip = ta.at(i, p);
      if (aip == 0.0) continue;
      for (int j = 0; j < n; ++j) out.at(i, j) += aip * tb.at(p, j);
    }
  int ai = a.id, bi = b.id;
  return {push(std::move(out), [ai, bi, m, k, n](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    const Tensor &va = t.v(ai), &vb = t.v(bi);
    Tensor &ga = t.gbuf(ai), &gb = t.gbuf(bi);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double gij = g.at(i, j);
        if (gij == 0.0) continue;
        for (int p = 0; p < k; ++p) {
          ga.at(i, p) += gij * vb.at(p, j);
          gb.at(p, j) += gij * va.at(i, p);
        }
      }
  })};
}

Var Tape::matmul_nt(Var a, Var b) {
  const Tensor &ta = v(a.id), &tb = v(b.id);
  check(ta.rank() == 2 && tb.rank() == 2 && ta.shape[1] == tb.shape[1],
        "matmul_nt shape mismatch " + shape_str(ta) + " x " + shape_str(tb));
  int m = ta.shape[0], k = ta.shape[1], n = tb.shape[0];
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    const double* arow = ta.data.data() + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j)
      out.at(i, j) =
          dot_n(arow, tb.data.data() + static_cast<std::size_t>(j) * k, k);
  }
  int ai = a.id, bi = b.id;
  return {push(std::move(out), [ai, bi, m, k, n](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    const Tensor &va = t.v(ai), &vb = t.v(bi);
    Tensor &ga = t.gbuf(ai), &gb = t.gbuf(bi);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double gij = g.at(i, j);
        if (gij == 0.0) continue;
        for (int p = 0; p < k; ++p) {
          ga.at(i, p) += gij * vb.at(j, p);
          gb.at(j, p) += gij * va.at(i, p);
        }
      }
  })};
}

Var Tape::linear(Var x, Var w, Var b) {
  Var y = matmul_nt(x, w);
  if (!b.valid()) return y;
  // broadcast bias over rows
  const Tensor &ty = v(y.id), &tb = v(b.id);
  check(tb.rank() == 1 && tb.shape[0] == ty.shape[1], "linear bias mismatch");
  Tensor out = ty;
  int m = ty.shape[0], n = ty.shape[1];
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) += tb.at(j);
  int yi = y.id, bi = b.id;
  return {push(std::move(out), [yi, bi, m, n](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        t.gbuf(yi).at(i, j) += g.at(i, j);
        t.gbuf(bi).at(j) += g.at(i, j);
      }
  })};
}

Var Tape::relu(Var a) {
  Tensor out = v(a.id);
  for (double& x : out.data) x = x > 0.0 ? x : 0.0;
  int ai = a.id;
  return {push(std::move(out), [ai](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    const Tensor& va = t.v(ai);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      if (va.data[i] > 0.0) t.gbuf(ai).data[i] += g.data[i];
  })};
}

Var Tape::sigmoid(Var a) {
  Tensor out = v(a.id);
  for (double& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
  int ai = a.id;
  return {push(std::move(out), [ai](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    const Tensor& y = t.v(self);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      t.gbuf(ai).data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
  })};
}

Var Tape::log_clamped(Var a) {
  Tensor out = v(a.id);
  for (double& x : out.data) x = std::log(std::max(x, kLogClamp));
  int ai = a.id;
  return {push(std::move(out), [ai](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    const Tensor& va = t.v(ai);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      if (va.data[i] > kLogClamp)
        t.gbuf(ai).data[i] += g.data[i] / va.data[i];
  })};
}

Var Tape::softmax_vec(Var a) {
  const Tensor& ta = v(a.id);
  check(ta.rank() == 1, "softmax_vec wants a vector");
  Tensor out = ta;
  double mx = *std::max_element(out.data.begin(), out.data.end());
  double z = 0.0;
  for (double& x : out.data) {
    x = std::exp(x - mx);
    z += x;
  }
  for (double& x : out.data) x /= z;
  int ai = a.id;
  return {push(std::move(out), [ai](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    const Tensor& y = t.v(self);
    double gy = 0.0;
    for (std::size_t i = 0; i < g.data.size(); ++i) gy += g.data[i] * y.data[i];
    for (std::size_t i = 0; i < g.data.size(); ++i)
      t.gbuf(ai).data[i] += y.data[i] * (g.data[i] - gy);
  })};
}

Var Tape::masked_softmax_rows(Var a, std::vector<std::uint8_t> col_valid) {
  const Tensor& ta = v(a.id);
  check(ta.rank() == 2, "masked_softmax_rows wants a matrix");
  int m = ta.shape[0], n = ta.shape[1];
  check(static_cast<int>(col_valid.size()) == n, "mask length mismatch");
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    double mx = -1e300;
    for (int j = 0; j < n; ++j)
      if (col_valid[j] && ta.at(i, j) > mx) mx = ta.at(i, j);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      double e = col_valid[j] ? std::exp(ta.at(i, j) - mx) : 0.0;
      out.at(i, j) = e;
      z += e;
    }
    check(z > 0.0, "masked_softmax row fully masked");
    for (int j = 0; j < n; ++j) out.at(i, j) /= z;
  }
  int ai = a.id;
  return {push(std::move(out), [ai, m, n](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    const Tensor& y = t.v(self);
    for (int i = 0; i < m; ++i) {
      double gy = 0.0;
      for (int j = 0; j < n; ++j) gy += g.at(i, j) * y.at(i, j);
      for (int j = 0; j < n; ++j)
        t.gbuf(ai).at(i, j) += y.at(i, j) * (g.at(i, j) - gy);
    }
  })};
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias) {
  const Tensor& tx = v(x.id);
  const Tensor& tg = v(gain.id);
  const Tensor& tb = v(bias.id);
  check(tx.rank() == 2, "layer_norm wants a matrix");
  int m = tx.shape[0], n = tx.shape[1];
  check(tg.rank() == 1 && tg.shape[0] == n && tb.same_shape(tg),
        "layer_norm gain/bias mismatch");
  constexpr double eps = 1e-5;
  Tensor out({m, n});
  std::vector<double> inv_sigma(m), xhat(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += tx.at(i, j);
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      double d = tx.at(i, j) - mu;
      var += d * d;
    }
    var /= n;
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (int j = 0; j < n; ++j) {
      double xh = (tx.at(i, j) - mu) * is;
      xhat[static_cast<std::size_t>(i) * n + j] = xh;
      out.at(i, j) = tg.at(j) * xh + tb.at(j);
    }
  }
  int xi = x.id, gi = gain.id, bi = bias.id;
  return {push(std::move(out),
               [xi, gi, bi, m, n, inv_sigma, xhat](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    const Tensor& tg = t.v(gi);
    for (int i = 0; i < m; ++i) {
      double sum_gd = 0.0, sum_gdx = 0.0;
      for (int j = 0; j < n; ++j) {
        double gd = g.at(i, j) * tg.at(j);
        double xh = xhat[static_cast<std::size_t>(i) * n + j];
        sum_gd += gd;
        sum_gdx += gd * xh;
        t.gbuf(gi).at(j) += g.at(i, j) * xh;
        t.gbuf(bi).at(j) += g.at(i, j);
      }
      for (int j = 0; j < n; ++j) {
        double gd = g.at(i, j) * tg.at(j);
        double xh = xhat[static_cast<std::size_t>(i) * n + j];
        t.gbuf(xi).at(i, j) +=
            inv_sigma[i] * (gd - sum_gd / n - xh * sum_gdx / n);
      }
    }
  })};
}

Var Tape::embedding_rows(Var table, std::vector<int> ids) {
  const Tensor& tt = v(table.id);
  check(tt.rank() == 2, "embedding table must be a matrix");
  int n = tt.shape[1];
  int m = static_cast<int>(ids.size());
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    check(ids[i] >= 0 && ids[i] < tt.shape[0], "embedding id out of range");
    for (int j = 0; j < n; ++j) out.at(i, j) = tt.at(ids[i], j);
  }
  int ti = table.id;
  return {push(std::move(out), [ti, ids, m, n](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) t.gbuf(ti).at(ids[i], j) += g.at(i, j);
  })};
}

Var Tape::row(Var a, int r) {
  const Tensor& ta = v(a.id);
  check(ta.rank() == 2 && r >= 0 && r < ta.shape[0], "row out of range");
  int n = ta.shape[1];
  Tensor out({n});
  for (int j = 0; j < n; ++j) out.at(j) = ta.at(r, j);
  int ai = a.id;
  return {push(std::move(out), [ai, r, n](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (int j = 0; j < n; ++j) t.gbuf(ai).at(r, j) += g.at(j);
  })};
}

Var Tape::slice_rows(Var a, int r0, int r1) {
  const Tensor& ta = v(a.id);
  check(ta.rank() == 2 && 0 <= r0 && r0 < r1 && r1 <= ta.shape[0],
        "slice_rows out of range");
  int n = ta.shape[1], m = r1 - r0;
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = ta.at(r0 + i, j);
  int ai = a.id;
  return {push(std::move(out), [ai, r0, m, n](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) t.gbuf(ai).at(r0 + i, j) += g.at(i, j);
  })};
}

Var Tape::slice_cols(Var a, int c0, int c1) {
  const Tensor& ta = v(a.id);
  check(ta.rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= ta.shape[1],
        "slice_cols out of range");
  int m = ta.shape[0], n = c1 - c0;
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = ta.at(i, c0 + j);
  int ai = a.id;
  return {push(std::move(out), [ai, c0, m, n](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) t.gbuf(ai).at(i, c0 + j) += g.at(i, j);
  })};
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
  check(!xs.empty(), "concat_cols of nothing");
  int m = v(xs[0].id).shape[0];
  int total = 0;
  for (Var x : xs) {
    const Tensor& tx = v(x.id);
    check(tx.rank() == 2 && tx.shape[0] == m, "concat_cols row mismatch");
    total += tx.shape[1];
  }
  Tensor out({m, total});
  std::vector<int> ids, offs;
  int off = 0;
  for (Var x : xs) {
    const Tensor& tx = v(x.id);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < tx.shape[1]; ++j) out.at(i, off + j) = tx.at(i, j);
    ids.push_back(x.id);
    offs.push_back(off);
    off += tx.shape[1];
  }
  return {push(std::move(out), [ids, offs, m](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor& gi = t.gbuf(ids[k]);
      int n = gi.shape[1];
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gi.at(i, j) += g.at(i, offs[k] + j);
    }
  })};
}

Var Tape::matvec(Var w, Var x) {
  const Tensor &tw = v(w.id), &tx = v(x.id);
  check(tw.rank() == 2 && tx.rank() == 1 && tw.shape[1] == tx.shape[0],
        "matvec shape mismatch " + shape_str(tw) + " x " + shape_str(tx));
  int m = tw.shape[0], n = tw.shape[1];
  Tensor out({m});
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += tw.at(i, j) * tx.at(j);
    out.at(i) = s;
  }
  int wi = w.id, xi = x.id;
  return {push(std::move(out), [wi, xi, m, n](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    const Tensor &vw = t.v(wi), &vx = t.v(xi);
    for (int i = 0; i < m; ++i) {
      double gi = g.at(i);
      if (gi == 0.0) continue;
      for (int j = 0; j < n; ++j) {
        t.gbuf(wi).at(i, j) += gi * vx.at(j);
        t.gbuf(xi).at(j) += gi * vw.at(i, j);
      }
    }
  })};
}

Var Tape::vecmat(Var x, Var a) {
  const Tensor &tx = v(x.id), &ta = v(a.id);
  check(tx.rank() == 1 && ta.rank() == 2 && tx.shape[0] == ta.shape[0],
        "vecmat shape mismatch " + shape_str(tx) + " x " + shape_str(ta));
  int m = ta.shape[0], n = ta.shape[1];
  Tensor out({n});
  for (int i = 0; i < m; ++i) {
    double xi = tx.at(i);
    if (xi == 0.0) continue;
    for (int j = 0; j < n; ++j) out.at(j) += xi * ta.at(i, j);
  }
  int xi_id = x.id, ai = a.id;
  return {push(std::move(out), [xi_id, ai, m, n](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    const Tensor &vx = t.v(xi_id), &va = t.v(ai);
    for (int i = 0; i < m; ++i) {
      double dxi = 0.0;
      for (int j = 0; j < n; ++j) {
        dxi += g.at(j) * va.at(i, j);
        t.gbuf(ai).at(i, j) += g.at(j) * vx.at(i);
      }
      t.gbuf(xi_id).at(i) += dxi;
    }
  })};
}

Var Tape::slice_vec(Var a, int i0, int i1) {
  const Tensor& ta = v(a.id);
  check(ta.rank() == 1 && 0 <= i0 && i0 < i1 && i1 <= ta.shape[0],
        "slice_vec out of range");
  Tensor out({i1 - i0});
  for (int i = i0; i < i1; ++i) out.at(i - i0) = ta.at(i);
  int ai = a.id;
  return {push(std::move(out), [ai, i0, i1](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (int i = i0; i < i1; ++i) t.gbuf(ai).at(i) += g.at(i - i0);
  })};
}

Var Tape::concat_vec(Var a, Var b) {
  const Tensor &ta = v(a.id), &tb = v(b.id);
  check(ta.rank() == 1 && tb.rank() == 1, "concat_vec wants vectors");
  int p = ta.shape[0], q = tb.shape[0];
  Tensor out({p + q});
  for (int i = 0; i < p; ++i) out.at(i) = ta.at(i);
  for (int i = 0; i < q; ++i) out.at(p + i) = tb.at(i);
  int ai = a.id, bi = b.id;
  return {push(std::move(out), [ai, bi, p, q](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (int i = 0; i < p; ++i) t.gbuf(ai).at(i) += g.at(i);
    for (int i = 0; i < q; ++i) t.gbuf(bi).at(i) += g.at(p + i);
  })};
}

Var Tape::stack_scalars(const std::vector<Var>& xs) {
  check(!xs.empty(), "stack_scalars of nothing");
  int n = static_cast<int>(xs.size());
  Tensor out({n});
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) {
    check(v(xs[i].id).numel() == 1, "stack_scalars wants scalars");
    out.at(i) = v(xs[i].id).data[0];
    ids.push_back(xs[i].id);
  }
  return {push(std::move(out), [ids, n](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (int i = 0; i < n; ++i) t.gbuf(ids[i]).data[0] += g.at(i);
  })};
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
  check(!rows.empty(), "stack_rows of nothing");
  int m = static_cast<int>(rows.size());
  int n = v(rows[0].id).shape[0];
  Tensor out({m, n});
  std::vector<int> ids;
  for (int i = 0; i < m; ++i) {
    const Tensor& r = v(rows[i].id);
    check(r.rank() == 1 && r.shape[0] == n, "stack_rows width mismatch");
    for (int j = 0; j < n; ++j) out.at(i, j) = r.at(j);
    ids.push_back(rows[i].id);
  }
  return {push(std::move(out), [ids, m, n](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) t.gbuf(ids[i]).at(j) += g.at(i, j);
  })};
}

Var Tape::replace_row(Var a, int r, Var rowvec) {
  const Tensor &ta = v(a.id), &tr = v(rowvec.id);
  check(ta.rank() == 2 && tr.rank() == 1 && tr.shape[0] == ta.shape[1] &&
        r >= 0 && r < ta.shape[0], "replace_row mismatch");
  Tensor out = ta;
  int n = ta.shape[1];
  for (int j = 0; j < n; ++j) out.at(r, j) = tr.at(j);
  int ai = a.id, ri = rowvec.id, m = ta.shape[0];
  return {push(std::move(out), [ai, ri, r, m, n](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == r)
          t.gbuf(ri).at(j) += g.at(i, j);
        else
          t.gbuf(ai).at(i, j) += g.at(i, j);
      }
  })};
}

Var Tape::mean_rows(Var a) {
  const Tensor& ta = v(a.id);
  check(ta.rank() == 2, "mean_rows wants a matrix");
  int m = ta.shape[0], n = ta.shape[1];
  Tensor out({n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j) += ta.at(i, j) / m;
  int ai = a.id;
  return {push(std::move(out), [ai, m, n](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) t.gbuf(ai).at(i, j) += g.at(j) / m;
  })};
}

Var Tape::mean_vec(Var a) {
  const Tensor& ta = v(a.id);
  check(ta.rank() == 1, "mean_vec wants a vector");
  int n = ta.shape[0];
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += ta.at(i);
  int ai = a.id;
  return {push(Tensor::scalar(s / n), [ai, n](Tape& t, int self) {
    double g = t.gbuf(self).data[0];
    for (int i = 0; i < n; ++i) t.gbuf(ai).at(i) += g / n;
  })};
}

Var Tape::sum(Var a) {
  const Tensor& ta = v(a.id);
  double s = 0.0;
  for (double x : ta.data) s += x;
  int ai = a.id;
  return {push(Tensor::scalar(s), [ai](Tape& t, int self) {
    double g = t.gbuf(self).data[0];
    for (double& x : t.gbuf(ai).data) x += g;
  })};
}

Var Tape::dot(Var a, Var b) {
  const Tensor &ta = v(a.id), &tb = v(b.id);
  check(ta.same_shape(tb) && ta.rank() == 1, "dot shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < ta.data.size(); ++i) s += ta.data[i] * tb.data[i];
  int ai = a.id, bi = b.id;
  return {push(Tensor::scalar(s), [ai, bi](Tape& t, int self) {
    double g = t.gbuf(self).data[0];
    const Tensor &va = t.v(ai), &vb = t.v(bi);
    for (std::size_t i = 0; i < va.data.size(); ++i) {
      t.gbuf(ai).data[i] += g * vb.data[i];
      t.gbuf(bi).data[i] += g * va.data[i];
    }
  })};
}

Var Tape::cosine(Var a, Var b) {
  const Tensor &ta = v(a.id), &tb = v(b.id);
  check(ta.same_shape(tb) && ta.rank() == 1, "cosine shape mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < ta.data.size(); ++i) {
    ab += ta.data[i] * tb.data[i];
    aa += ta.data[i] * ta.data[i];
    bb += tb.data[i] * tb.data[i];
  }
  double na = std::max(std::sqrt(aa), kNormClamp);
  double nb = std::max(std::sqrt(bb), kNormClamp);
  double c = ab / (na * nb);
  int ai = a.id, bi = b.id;
  return {push(Tensor::scalar(c), [ai, bi, c, na, nb](Tape& t, int self) {
    double g = t.gbuf(self).data[0];
    const Tensor &va = t.v(ai), &vb = t.v(bi);
    for (std::size_t i = 0; i < va.data.size(); ++i) {
      t.gbuf(ai).data[i] += g * (vb.data[i] / (na * nb) - c * va.data[i] / (na * na));
      t.gbuf(bi).data[i] += g * (va.data[i] / (na * nb) - c * vb.data[i] / (nb * nb));
    }
  })};
}

Var Tape::cross_entropy_logits(Var logits, int target) {
  const Tensor& tl = v(logits.id);
  check(tl.rank() == 1 && target >= 0 && target < tl.shape[0],
        "cross_entropy target out of range");
  int n = tl.shape[0];
  double mx = *std::max_element(tl.data.begin(), tl.data.end());
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(tl.at(i) - mx);
  double loss = std::log(z) + mx - tl.at(target);
  // cache the softmax for the backward pass
  std::vector<double> p(n);
  for (int i = 0; i < n; ++i) p[i] = std::exp(tl.at(i) - mx) / z;
  int li = logits.id;
  return {push(Tensor::scalar(loss), [li, target, p, n](Tape& t, int self) {
    double g = t.gbuf(self).data[0];
    for (int i = 0; i < n; ++i)
      t.gbuf(li).at(i) += g * (p[i] - (i == target ? 1.0 : 0.0));
  })};
}

namespace {

// x [m,d] times w [n,d] transposed
Tensor mat_nt(const Tensor& x, const Tensor& w) {
  int m = x.shape[0], d = x.shape[1], n = w.shape[0];
  Tensor o({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      o.at(i, j) = dot_n(x.data.data() + static_cast<std::size_t>(i) * d,
                         w.data.data() + static_cast<std::size_t>(j) * d, d);
  return o;
}

}  // namespace

Var Tape::gat_pass(Var e, Var rels, Var wq, Var wk, Var wv, Var wo,
                   const std::vector<std::pair<int, int>>& edges, int heads,
                   std::vector<double>* attention_out) {
  const Tensor &te = v(e.id), &tr = v(rels.id);
  check(te.rank() == 2 && tr.rank() == 2 && te.shape[1] == tr.shape[1],
        "gat_pass shape mismatch " + shape_str(te) + " vs " + shape_str(tr));
  int J = te.shape[0], d = te.shape[1];
  int E = static_cast<int>(edges.size());
  check(tr.shape[0] == E, "gat_pass relation rows must match edge count");
  check(heads >= 1 && d % heads == 0, "gat_pass head split mismatch");
  for (Var w : {wq, wk, wv, wo}) {
    const Tensor& tw = v(w.id);
    check(tw.rank() == 2 && tw.shape[0] == d && tw.shape[1] == d,
          "gat_pass weight must be square in d_g");
  }
  for (const auto& [h, t] : edges)
    check(h >= 0 && h < J && t >= 0 && t < J, "gat_pass edge out of range");
  int dh = d / heads;
  double scl = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor msgs({E, d});
  for (int i = 0; i < E; ++i)
    for (int p = 0; p < d; ++p)
      msgs.at(i, p) = te.at(edges[i].first, p) + tr.at(i, p);
  Tensor Q = mat_nt(te, v(wq.id));
  Tensor K = mat_nt(msgs, v(wk.id));
  Tensor V = mat_nt(msgs, v(wv.id));

  std::vector<std::vector<int>> in_edges(J);
  for (int i = 0; i < E; ++i) in_edges[edges[i].second].push_back(i);

  std::vector<double> alpha(static_cast<std::size_t>(heads) * E, 0.0);
  Tensor out = te;
  const Tensor& two = v(wo.id);
  for (int t = 0; t < J; ++t) {
    const auto& in = in_edges[t];
    if (in.empty()) continue;
    std::vector<double> agg(d, 0.0);
    for (int hd = 0; hd < heads; ++hd) {
      int c0 = hd * dh;
      std::vector<double> logits(in.size());
      double mx = -1e300;
      for (std::size_t j = 0; j < in.size(); ++j) {
        double s = 0.0;
        for (int q = 0; q < dh; ++q)
          s += Q.at(t, c0 + q) * K.at(in[j], c0 + q);
        logits[j] = s * scl;
        mx = std::max(mx, logits[j]);
      }
      double z = 0.0;
      for (double& l : logits) {
        l = std::exp(l - mx);
        z += l;
      }
      for (std::size_t j = 0; j < in.size(); ++j) {
        double a = logits[j] / z;
        alpha[static_cast<std::size_t>(hd) * E + in[j]] = a;
        for (int q = 0; q < dh; ++q) agg[c0 + q] += a * V.at(in[j], c0 + q);
      }
    }
    for (int p = 0; p < d; ++p) {
      double u = 0.0;
      for (int q = 0; q < d; ++q) u += two.at(p, q) * agg[q];
      if (u > 0.0) out.at(t, p) += u;
    }
  }

  if (attention_out) {
    attention_out->assign(E, 0.0);
    for (int hd = 0; hd < heads; ++hd)
      for (int i = 0; i < E; ++i)
        (*attention_out)[i] += alpha[static_cast<std::size_t>(hd) * E + i] /
                               static_cast<double>(heads);
  }

  int ei = e.id, ri = rels.id, qi = wq.id, ki = wk.id, vi = wv.id,
      oi = wo.id;
  auto edges_c = edges;
  return {push(std::move(out),
               [ei, ri, qi, ki, vi, oi, edges_c, alpha, heads, J, d, dh, scl,
                E](Tape& t, int self) {
    const Tensor& g = t.gbuf(self);
    const Tensor &te = t.v(ei), &tr = t.v(ri);
    const Tensor &twq = t.v(qi), &twk = t.v(ki), &twv = t.v(vi),
                 &two = t.v(oi);

    Tensor msgs({E, d});
    for (int i = 0; i < E; ++i)
      for (int p = 0; p < d; ++p)
        msgs.at(i, p) = te.at(edges_c[i].first, p) + tr.at(i, p);
    Tensor Q = mat_nt(te, twq);
    Tensor K = mat_nt(msgs, twk);
    Tensor V = mat_nt(msgs, twv);

    std::vector<std::vector<int>> in_edges(J);
    for (int i = 0; i < E; ++i) in_edges[edges_c[i].second].push_back(i);

    Tensor &ge = t.gbuf(ei), &gr = t.gbuf(ri);
    Tensor &gwq = t.gbuf(qi), &gwk = t.gbuf(ki), &gwv = t.gbuf(vi),
           &gwo = t.gbuf(oi);
    Tensor gQ({J, d}), gK({E, d}), gV({E, d});

    for (int tt = 0; tt < J; ++tt) {
      for (int p = 0; p < d; ++p) ge.at(tt, p) += g.at(tt, p);  // residual
      const auto& in = in_edges[tt];
      if (in.empty()) continue;

      // recompute agg and u for the relu mask
      std::vector<double> agg(d, 0.0);
      for (int hd = 0; hd < heads; ++hd) {
        int c0 = hd * dh;
        for (int i : in) {
          double a = alpha[static_cast<std::size_t>(hd) * E + i];
          for (int q = 0; q < dh; ++q) agg[c0 + q] += a * V.at(i, c0 + q);
        }
      }
      std::vector<double> gu(d, 0.0), gagg(d, 0.0);
      for (int p = 0; p < d; ++p) {
        double u = 0.0;
        for (int q = 0; q < d; ++q) u += two.at(p, q) * agg[q];
        gu[p] = u > 0.0 ? g.at(tt, p) : 0.0;
      }
      for (int p = 0; p < d; ++p) {
        if (gu[p] == 0.0) continue;
        for (int q = 0; q < d; ++q) {
          gwo.at(p, q) += gu[p] * agg[q];
          gagg[q] += two.at(p, q) * gu[p];
        }
      }
      for (int hd = 0; hd < heads; ++hd) {
        int c0 = hd * dh;
        double s = 0.0;
        std::vector<double> galpha(in.size());
        for (std::size_t j = 0; j < in.size(); ++j) {
          int i = in[j];
          double a = alpha[static_cast<std::size_t>(hd) * E + i];
          double ga = 0.0;
          for (int q = 0; q < dh; ++q) {
            ga += gagg[c0 + q] * V.at(i, c0 + q);
            gV.at(i, c0 + q) += a * gagg[c0 + q];
          }
          galpha[j] = ga;
          s += a * ga;
        }
        for (std::size_t j = 0; j < in.size(); ++j) {
          int i = in[j];
          double a = alpha[static_cast<std::size_t>(hd) * E + i];
          double gl = a * (galpha[j] - s);
          for (int q = 0; q < dh; ++q) {
            gQ.at(tt, c0 + q) += scl * gl * K.at(i, c0 + q);
            gK.at(i, c0 + q) += scl * gl * Q.at(tt, c0 + q);
          }
        }
      }
    }

    // Q = e wq^T, K = msgs wk^T, V = msgs wv^T
    Tensor gmsgs({E, d});
    for (int i = 0; i < J; ++i)
      for (int j = 0; j < d; ++j) {
        double gq = gQ.at(i, j);
        if (gq == 0.0) continue;
        for (int p = 0; p < d; ++p) {
          ge.at(i, p) += gq * twq.at(j, p);
          gwq.at(j, p) += gq * te.at(i, p);
        }
      }
    for (int i = 0; i < E; ++i)
      for (int j = 0; j < d; ++j) {
        double gk = gK.at(i, j), gv = gV.at(i, j);
        for (int p = 0; p < d; ++p) {
          if (gk != 0.0) {
            gmsgs.at(i, p) += gk * twk.at(j, p);
            gwk.at(j, p) += gk * msgs.at(i, p);
          }
          if (gv != 0.0) {
            gmsgs.at(i, p) += gv * twv.at(j, p);
            gwv.at(j, p) += gv * msgs.at(i, p);
          }
        }
      }
    for (int i = 0; i < E; ++i)
      for (int p = 0; p < d; ++p) {
        ge.at(edges_c[i].first, p) += gmsgs.at(i, p);
        gr.at(i, p) += gmsgs.at(i, p);
      }
  })};
}

void Tape::backward(Var loss) {
  const Tensor& tl = v(loss.id);
  check(!forward_only_, "backward on a forward-only tape");
  check(tl.numel() == 1, "backward needs a scalar loss");
  for (auto& n : nodes_) {
    n.grad = Tensor(n.value.shape);  // zeroed
  }
  nodes_[loss.id].grad.data[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back(*this, i);
  }
  for (auto& n : nodes_) {
    if (n.param) {
      for (std::size_t i = 0; i < n.grad.data.size(); ++i)
        n.param->grad.data[i] += n.grad.data[i];
    }
  }
}

}  // namespace fits
