#include "fits/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "fits/errors.hpp"
#include "fits/rng.hpp"

namespace fits {

std::vector<Tensor> finite_diff_grad(
    const std::function<double(const ParamStore&)>& loss, ParamStore& params,
    double eps) {
  std::vector<Tensor> grads;
  grads.reserve(params.names().size());
  for (const auto& name : params.names()) {
    auto& e = params.at(name);
    Tensor g(e.value.shape);
    for (std::size_t i = 0; i < e.value.data.size(); ++i) {
      double saved = e.value.data[i];
      e.value.data[i] = saved + eps;
      double fp = loss(params);
      e.value.data[i] = saved - eps;
      double fm = loss(params);
      e.value.data[i] = saved;
      g.data[i] = (fp - fm) / (2.0 * eps);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

double rel_error(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

double max_rel_error(const ParamStore& params, const std::vector<Tensor>& fd,
                     double denom_floor) {
  if (fd.size() != params.names().size())
    throw ShapeError("finite-difference sweep does not cover the store");
  double worst = 0.0;
  for (std::size_t p = 0; p < fd.size(); ++p) {
    const Tensor& a = params.at(params.names()[p]).grad;
    const Tensor& b = fd[p];
    if (!a.same_shape(b)) throw ShapeError("gradient shape mismatch");
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      double denom =
          std::max({std::abs(a.data[i]), std::abs(b.data[i]), denom_floor});
      worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom);
    }
  }
  return worst;
}

double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw DegenerateInput("pearson_r needs two equal-length vectors, n >= 2");
  std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw DegenerateInput("pearson_r on zero-variance input");
  return sxy / std::sqrt(sxx * syy);
}

namespace {

// Power iteration on the centered covariance without forming it when the
// data matrix is thin; dims here are tiny, so form C explicitly.
std::vector<double> covariance(const Tensor& centered) {
  int m = centered.shape[0], d = centered.shape[1];
  std::vector<double> c(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < m; ++i)
    for (int a = 0; a < d; ++a) {
      double via = centered.at(i, a);
      if (via == 0.0) continue;
      for (int b = 0; b < d; ++b)
        c[static_cast<std::size_t>(a) * d + b] += via * centered.at(i, b);
    }
  for (double& x : c) x /= static_cast<double>(m);
  return c;
}

}  // namespace

PcaResult pca_project(const Tensor& rows, int n_components) {
  if (rows.rank() != 2) throw ShapeError("pca_project wants a matrix");
  int m = rows.shape[0], d = rows.shape[1];
  if (m < n_components + 1)
    throw RankError("pca_project needs at least n_components+1 rows");

  Tensor centered = rows;
  for (int j = 0; j < d; ++j) {
    double mu = 0.0;
    for (int i = 0; i < m; ++i) mu += rows.at(i, j);
    mu /= m;
    for (int i = 0; i < m; ++i) centered.at(i, j) -= mu;
  }
  std::vector<double> cov = covariance(centered);

  Tensor components({n_components, d});
  Rng rng(0x5eedu);  // fixed start vectors; sign convention fixes output
  for (int c = 0; c < n_components; ++c) {
    std::vector<double> v(d);
    for (int j = 0; j < d; ++j) v[j] = rng.next_normal();
    double lambda = 0.0;
    for (int iter = 0; iter < 1000; ++iter) {
      std::vector<double> w(d, 0.0);
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          w[a] += cov[static_cast<std::size_t>(a) * d + b] * v[b];
      double norm = 0.0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-14)
        throw RankError("pca_project: covariance rank below n_components");
      double delta = 0.0;
      for (int j = 0; j < d; ++j) {
        w[j] /= norm;
        delta += (w[j] - v[j]) * (w[j] - v[j]);
      }
      lambda = norm;
      // sign flips make |w - v| large even at convergence
      double delta_neg = 0.0;
      for (int j = 0; j < d; ++j)
        delta_neg += (w[j] + v[j]) * (w[j] + v[j]);
      v = w;
      if (std::min(delta, delta_neg) < 1e-10 * 1e-10) break;
    }
    // sign: first nonzero coordinate positive
    for (int j = 0; j < d; ++j) {
      if (std::abs(v[j]) > 1e-12) {
        if (v[j] < 0.0)
          for (double& x : v) x = -x;
        break;
      }
    }
    for (int j = 0; j < d; ++j) components.at(c, j) = v[j];
    // deflate
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        cov[static_cast<std::size_t>(a) * d + b] -= lambda * v[a] * v[b];
  }

  Tensor projected({m, n_components});
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < n_components; ++c) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += centered.at(i, j) * components.at(c, j);
      projected.at(i, c) = s;
    }
  return {std::move(projected), std::move(components)};
}

}  // namespace fits
