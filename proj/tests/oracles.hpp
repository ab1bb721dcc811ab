#pragma once

// Independent reference implementations used only by tests. They favor
// scalar loops and the textbook formulas over speed or numerical tricks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "t2d/t2d.hpp"

namespace oracle {

using t2d::Matrix;
using t2d::Vector;

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

inline double scalar_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> softmax(const std::vector<double>& x) {
  long double z = 0;
  std::vector<double> out(x.size());
  for (double v : x) z += std::exp(static_cast<long double>(v));
  for (std::size_t k = 0; k < x.size(); ++k) {
    out[k] = static_cast<double>(std::exp(static_cast<long double>(x[k])) / z);
  }
  return out;
}

inline double dot(const Matrix& z, std::size_t row, const Vector& h) {
  double s = 0;
  for (Eigen::Index j = 0; j < h.size(); ++j) s += z(row, j) * h(j);
  return s;
}

// -(1/|P|) sum_{u in P} log(exp(s_u) / sum_{v in P u N} exp(s_v)), in long
// double without a max shift.
inline double distribution_loss(const Vector& h, const std::vector<std::uint32_t>& pos,
                                const std::vector<std::uint32_t>& neg, const Matrix& z) {
  long double denom = 0;
  for (auto u : pos) denom += std::exp(static_cast<long double>(dot(z, u, h)));
  for (auto u : neg) denom += std::exp(static_cast<long double>(dot(z, u, h)));
  long double total = 0;
  for (auto u : pos) total += std::log(std::exp(static_cast<long double>(dot(z, u, h))) / denom);
  return static_cast<double>(-total / pos.size());
}

// Central differences of f with respect to every entry of m.
inline Matrix finite_diff(Matrix& m, const std::function<double()>& f, double step = 1e-5) {
  Matrix g(m.rows(), m.cols());
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    const double keep = m.data()[k];
    m.data()[k] = keep + step;
    const double up = f();
    m.data()[k] = keep - step;
    const double down = f();
    m.data()[k] = keep;
    g.data()[k] = (up - down) / (2 * step);
  }
  return g;
}

inline Vector finite_diff(Vector& v, const std::function<double()>& f, double step = 1e-5) {
  Vector g(v.size());
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    const double keep = v(k);
    v(k) = keep + step;
    const double up = f();
    v(k) = keep - step;
    const double down = f();
    v(k) = keep;
    g(k) = (up - down) / (2 * step);
  }
  return g;
}

// Worst entry-wise relative error, with a floor so near-zero entries compare
// on an absolute scale.
template <typename A, typename B>
double max_rel_err(const A& analytic, const B& numeric, double floor = 1e-6) {
  double worst = 0;
  for (Eigen::Index k = 0; k < analytic.size(); ++k) {
    const double a = analytic.data()[k], n = numeric.data()[k];
    worst = std::max(worst, std::abs(a - n) / std::max({floor, std::abs(a), std::abs(n)}));
  }
  return worst;
}

// Mean over layers 0..L of A^l E with the dense symmetric-normalized
// adjacency of the bipartite graph (users first, then items).
inline t2d::BehaviorEmbeddings propagate_dense(const t2d::BehaviorEmbeddings& e,
                                               const t2d::BipartiteView& g, int layers) {
  const auto nu = g.num_users, ni = g.num_items, n = nu + ni;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> deg(n, 0.0);
  for (auto [u, i] : g.edges) {
    deg[u] += 1;
    deg[nu + i] += 1;
  }
  for (auto [u, i] : g.edges) {
    const double w = 1.0 / std::sqrt(deg[u] * deg[nu + i]);
    a(u, nu + i) = w;
    a(nu + i, u) = w;
  }
  Eigen::MatrixXd x(n, e.user.cols());
  x.topRows(nu) = e.user;
  x.bottomRows(ni) = e.item;
  Eigen::MatrixXd acc = x, cur = x;
  for (int l = 0; l < layers; ++l) {
    cur = a * cur;
    acc += cur;
  }
  acc /= static_cast<double>(layers + 1);
  return {acc.topRows(nu), acc.bottomRows(ni)};
}

// Relevant positions among the top K of `ranked`, recomputed by scanning.
inline double recall(const std::vector<std::uint32_t>& ranked,
                     const std::vector<std::uint32_t>& relevant, std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t r = 0; r < ranked.size() && r < k; ++r) {
    for (auto x : relevant) hits += ranked[r] == x;
  }
  return static_cast<double>(hits) / relevant.size();
}

inline double ndcg(const std::vector<std::uint32_t>& ranked,
                   const std::vector<std::uint32_t>& relevant, std::size_t k) {
  double dcg = 0, idcg = 0;
  for (std::size_t r = 0; r < ranked.size() && r < k; ++r) {
    for (auto x : relevant) {
      if (ranked[r] == x) dcg += std::log(2.0) / std::log(r + 2.0);
    }
  }
  for (std::size_t r = 0; r < relevant.size() && r < k; ++r) idcg += std::log(2.0) / std::log(r + 2.0);
  return dcg / idcg;
}

// Scalar transformer forward (all positions), mirroring the documented
// architecture: x = emb + pos; per layer causal MHA with residual, then GELU
// FFN with residual. Weights are read through effective().
inline Matrix encoder_forward(const t2d::EncoderModel& m, const std::vector<std::uint32_t>& toks) {
  const std::size_t L = toks.size(), d = m.config.dim, H = m.config.heads, dh = d / H;
  std::vector<std::vector<double>> x(L, std::vector<double>(d));
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t j = 0; j < d; ++j) x[t][j] = m.token_embedding(toks[t], j) + m.positions(t, j);
  }
  auto matmul = [](const std::vector<std::vector<double>>& a, const Matrix& w) {
    std::vector<std::vector<double>> out(a.size(), std::vector<double>(w.cols(), 0.0));
    for (std::size_t r = 0; r < a.size(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        double s = 0;
        for (Eigen::Index k = 0; k < w.rows(); ++k) s += a[r][k] * w(k, c);
        out[r][c] = s;
      }
    }
    return out;
  };
  for (const auto& layer : m.layers) {
    const auto q = matmul(x, layer.query.effective());
    const auto k = matmul(x, layer.key.effective());
    const auto v = matmul(x, layer.value.effective());
    std::vector<std::vector<double>> ctx(L, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < L; ++t) {
        std::vector<double> s(t + 1);
        for (std::size_t j = 0; j <= t; ++j) {
          double acc = 0;
          for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) acc += q[t][c] * k[j][c];
          s[j] = acc / std::sqrt(static_cast<double>(dh));
        }
        const auto p = softmax(s);
        for (std::size_t j = 0; j <= t; ++j) {
          for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) ctx[t][c] += p[j] * v[j][c];
        }
      }
    }
    const auto o = matmul(ctx, layer.output.effective());
    std::vector<std::vector<double>> mid(L, std::vector<double>(d));
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t j = 0; j < d; ++j) mid[t][j] = x[t][j] + o[t][j];
    }
    auto pre = matmul(mid, layer.ffn_in.effective());
    for (auto& row : pre) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        const double z = row[c] + layer.ffn_in_bias(0, c);
        row[c] = z * 0.5 * std::erfc(-z / std::sqrt(2.0));
      }
    }
    const auto f = matmul(pre, layer.ffn_out.effective());
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t j = 0; j < d; ++j) x[t][j] = mid[t][j] + f[t][j] + layer.ffn_out_bias(0, j);
    }
  }
  Matrix out(L, d);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t j = 0; j < d; ++j) out(t, j) = x[t][j];
  }
  return out;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = n(rng);
  return m;
}

inline Vector random_vector(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  Vector v(n);
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = d(rng);
  return v;
}

// Small random encoder with nonzero adapter factors so adapter gradients are
// exercised away from the b = 0 start.
inline t2d::EncoderModel small_encoder(std::size_t vocab, std::size_t d, std::size_t layers,
                                       std::size_t heads, std::size_t rank, std::uint64_t seed) {
  t2d::EncoderConfig c;
  c.vocab_size = vocab;
  c.dim = d;
  c.layers = layers;
  c.heads = heads;
  c.adapter_rank = rank;
  c.max_len = 32;
  c.seed = seed;
  auto m = t2d::EncoderModel::create(c);
  std::mt19937_64 rng(seed + 1);
  for (auto& l : m.layers) {
    for (auto* w : {&l.query, &l.key, &l.value, &l.output, &l.ffn_in, &l.ffn_out}) {
      if (w->adapted()) w->b = random_matrix(w->b.rows(), w->b.cols(), rng, 0.1);
    }
    l.ffn_in_bias = random_matrix(1, l.ffn_in_bias.cols(), rng, 0.1);
    l.ffn_out_bias = random_matrix(1, l.ffn_out_bias.cols(), rng, 0.1);
  }
  return m;
}

}  // namespace oracle
