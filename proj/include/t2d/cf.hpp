#pragma once

#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "t2d/common.hpp"
#include "t2d/dataset.hpp"

namespace t2d {

// Raw (layer-0) behavior embeddings. Item rows follow the local numbering of
// the BipartiteView they were trained on.
struct BehaviorEmbeddings {
  Matrix user;
  Matrix item;

  std::size_t dim() const { return static_cast<std::size_t>(user.cols()); }
  bool finite() const { return user.allFinite() && item.allFinite(); }
};

// User-item bipartite graph with items in a local row numbering. The warm view
// of an InteractionGraph numbers warm items by warm_index(); the augmented view
// used for refinement appends cold items after the warm ones.
struct BipartiteView {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;  // (user, item row)
  std::vector<std::vector<std::uint32_t>> item_users;          // sorted
  std::vector<std::vector<std::uint32_t>> user_items;          // sorted

  BipartiteView() = default;
  BipartiteView(std::size_t users, std::size_t items,
                const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs)
      : num_users(users), num_items(items), item_users(items), user_items(users) {
    for (auto [u, i] : pairs) {
      if (u >= users || i >= items) throw ContractViolation("edge out of range");
      auto& us = item_users[i];
      auto pos = std::lower_bound(us.begin(), us.end(), u);
      if (pos != us.end() && *pos == u) continue;
      us.insert(pos, u);
      auto& is = user_items[u];
      is.insert(std::lower_bound(is.begin(), is.end(), i), i);
      edges.emplace_back(u, i);
    }
  }

  static BipartiteView warm(const InteractionGraph& g) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    pairs.reserve(g.num_interactions());
    for (const auto& x : g.interactions()) pairs.emplace_back(x.user, g.warm_index(x.item));
    return BipartiteView(g.num_users(), g.num_warm(), pairs);
  }

  // Warm rows first, then cold item c at num_warm + cold_index(c).
  static std::uint32_t augmented_row(const InteractionGraph& g, ItemIndex i) {
    return g.is_cold(i) ? static_cast<std::uint32_t>(g.num_warm() + g.cold_index(i))
                        : g.warm_index(i);
  }

  static BipartiteView augmented(const InteractionGraph& g,
                                 const std::vector<Interaction>& extra) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    for (const auto& x : g.interactions()) pairs.emplace_back(x.user, g.warm_index(x.item));
    for (const auto& x : extra) pairs.emplace_back(x.user, augmented_row(g, x.item));
    return BipartiteView(g.num_users(), g.num_items(), pairs);
  }

  bool contains(std::uint32_t u, std::uint32_t i) const {
    const auto& us = item_users.at(i);
    return std::binary_search(us.begin(), us.end(), u);
  }
};

// Symmetric-normalized neighborhood averaging, outputs of layers 0..L
// mean-pooled. The operator is linear and self-adjoint, so the same routine
// maps gradients w.r.t. propagated rows back to raw rows.
inline std::vector<BehaviorEmbeddings> propagation_layers(const BehaviorEmbeddings& emb,
                                                          const BipartiteView& g, int layers) {
  if (layers < 0) throw ContractViolation("layers must be >= 0");
  if (static_cast<std::size_t>(emb.user.rows()) != g.num_users ||
      static_cast<std::size_t>(emb.item.rows()) != g.num_items) {
    throw ContractViolation("embedding rows do not match the graph");
  }
  std::vector<double> inv_sqrt_u(g.num_users), inv_sqrt_i(g.num_items);
  for (std::size_t u = 0; u < g.num_users; ++u) {
    inv_sqrt_u[u] = g.user_items[u].empty() ? 0.0 : 1.0 / std::sqrt(g.user_items[u].size());
  }
  for (std::size_t i = 0; i < g.num_items; ++i) {
    inv_sqrt_i[i] = g.item_users[i].empty() ? 0.0 : 1.0 / std::sqrt(g.item_users[i].size());
  }
  std::vector<BehaviorEmbeddings> out;
  out.reserve(layers + 1);
  out.push_back(emb);
  for (int l = 0; l < layers; ++l) {
    const auto& prev = out.back();
    BehaviorEmbeddings next;
    next.user = Matrix::Zero(prev.user.rows(), prev.user.cols());
    next.item = Matrix::Zero(prev.item.rows(), prev.item.cols());
    for (auto [u, i] : g.edges) {
      const double w = inv_sqrt_u[u] * inv_sqrt_i[i];
      next.user.row(u) += w * prev.item.row(i);
      next.item.row(i) += w * prev.user.row(u);
    }
    out.push_back(std::move(next));
  }
  return out;
}

inline BehaviorEmbeddings propagate(const BehaviorEmbeddings& emb, const BipartiteView& g,
                                    int layers) {
  if (layers == 0) return emb;
  auto all = propagation_layers(emb, g, layers);
  BehaviorEmbeddings mean = all[0];
  for (std::size_t l = 1; l < all.size(); ++l) {
    mean.user += all[l].user;
    mean.item += all[l].item;
  }
  const double scale = 1.0 / static_cast<double>(all.size());
  mean.user *= scale;
  mean.item *= scale;
  return mean;
}

inline BehaviorEmbeddings propagate(const BehaviorEmbeddings& emb, const InteractionGraph& g,
                                    int layers) {
  return propagate(emb, BipartiteView::warm(g), layers);
}

// Inner product of the propagated user row and warm item row.
inline double cf_score(const BehaviorEmbeddings& emb, UserIndex u, ItemIndex i,
                       const InteractionGraph& g, int layers) {
  if (g.is_cold(i)) throw ContractViolation("cold item " + g.item_id(i) + " has no behavior row");
  if (u >= g.num_users()) throw ContractViolation("unknown user index");
  const auto row = g.warm_index(i);
  if (layers == 0) return emb.user.row(u).dot(emb.item.row(row));
  auto p = propagate(emb, BipartiteView::warm(g), layers);
  return p.user.row(u).dot(p.item.row(row));
}

// (item, positive user, negative user) for the item-oriented objective.
struct BprTriple {
  std::uint32_t item = 0;
  std::uint32_t pos_user = 0;
  std::uint32_t neg_user = 0;
};

// (user, positive item, negative item) for the user-oriented ablation.
struct UserBprTriple {
  std::uint32_t user = 0;
  std::uint32_t pos_item = 0;
  std::uint32_t neg_item = 0;
};

// -sum log sigmoid(s_ui - s_vi) over the batch, scores on propagated rows.
// When `grad` is non-null it receives d(loss)/d(raw embeddings).
inline double item_bpr_loss(const BehaviorEmbeddings& emb, const BipartiteView& g,
                            std::span<const BprTriple> batch, int layers,
                            BehaviorEmbeddings* grad = nullptr) {
  for (const auto& t : batch) {
    if (t.item >= g.num_items || t.pos_user >= g.num_users || t.neg_user >= g.num_users) {
      throw ContractViolation("triple references an unknown row");
    }
    if (!g.contains(t.pos_user, t.item) || g.contains(t.neg_user, t.item)) {
      throw ContractViolation("triple violates u in U_i, v not in U_i");
    }
  }
  const auto fin = propagate(emb, g, layers);
  BehaviorEmbeddings gfin;
  if (grad) {
    gfin.user = Matrix::Zero(fin.user.rows(), fin.user.cols());
    gfin.item = Matrix::Zero(fin.item.rows(), fin.item.cols());
  }
  double loss = 0.0;
  for (const auto& t : batch) {
    const auto ei = fin.item.row(t.item);
    const double margin = fin.user.row(t.pos_user).dot(ei) - fin.user.row(t.neg_user).dot(ei);
    loss -= log_sigmoid(margin);
    if (grad) {
      const double c = -sigmoid(-margin);  // d/dmargin of -log sigmoid
      gfin.user.row(t.pos_user) += c * ei;
      gfin.user.row(t.neg_user) -= c * ei;
      gfin.item.row(t.item) += c * (fin.user.row(t.pos_user) - fin.user.row(t.neg_user));
    }
  }
  if (grad) *grad = propagate(gfin, g, layers);
  return loss;
}

inline double user_bpr_loss(const BehaviorEmbeddings& emb, const BipartiteView& g,
                            std::span<const UserBprTriple> batch, int layers,
                            BehaviorEmbeddings* grad = nullptr) {
  for (const auto& t : batch) {
    if (!g.contains(t.user, t.pos_item) || g.contains(t.user, t.neg_item)) {
      throw ContractViolation("triple violates i in I_u, j not in I_u");
    }
  }
  const auto fin = propagate(emb, g, layers);
  BehaviorEmbeddings gfin;
  if (grad) {
    gfin.user = Matrix::Zero(fin.user.rows(), fin.user.cols());
    gfin.item = Matrix::Zero(fin.item.rows(), fin.item.cols());
  }
  double loss = 0.0;
  for (const auto& t : batch) {
    const auto eu = fin.user.row(t.user);
    const double margin = eu.dot(fin.item.row(t.pos_item)) - eu.dot(fin.item.row(t.neg_item));
    loss -= log_sigmoid(margin);
    if (grad) {
      const double c = -sigmoid(-margin);
      gfin.item.row(t.pos_item) += c * eu;
      gfin.item.row(t.neg_item) -= c * eu;
      gfin.user.row(t.user) += c * (fin.item.row(t.pos_item) - fin.item.row(t.neg_item));
    }
  }
  if (grad) *grad = propagate(gfin, g, layers);
  return loss;
}

enum class BprObjective { kItemOriented, kUserOriented };

struct CFConfig {
  std::size_t dim = 200;
  int propagation_layers = 2;
  double learning_rate = 2.0;  // step on the batch-mean loss
  int epochs = 200;
  int negatives_per_positive = 1;
  std::size_t batch_size = 256;
  double init_std = 0.1;
  BprObjective objective = BprObjective::kItemOriented;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim == 0) throw ContractViolation("dim must be positive");
    if (propagation_layers < 0 || propagation_layers > 4) {
      throw ContractViolation("propagation_layers must lie in [0,4]");
    }
    if (negatives_per_positive < 1) throw ContractViolation("negatives_per_positive must be >= 1");
    if (batch_size == 0) throw ContractViolation("batch_size must be positive");
    if (epochs < 0) throw ContractViolation("epochs must be >= 0");
    if (!(learning_rate >= 0)) throw ContractViolation("learning_rate must be >= 0");
  }
};

inline Matrix random_normal(std::size_t rows, std::size_t cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
  return m;
}

inline BehaviorEmbeddings init_behavior(std::size_t users, std::size_t items, const CFConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  BehaviorEmbeddings e;
  e.user = random_normal(users, cfg.dim, cfg.init_std, rng);
  e.item = random_normal(items, cfg.dim, cfg.init_std, rng);
  return e;
}

// Which raw rows an optimizer step may touch. Empty item_rows means all.
struct TrainableRows {
  bool users = true;
  std::vector<bool> item_rows;
};

struct CFTrainResult {
  BehaviorEmbeddings embeddings;
  std::vector<double> epoch_loss;  // mean per-triple loss
  double probe_loss_start = 0.0;
  double probe_loss_end = 0.0;
};

namespace detail {

inline std::uint32_t sample_outside(const std::vector<std::uint32_t>& sorted_in,
                                    std::size_t universe, std::mt19937_64& rng) {
  if (sorted_in.size() >= universe) throw ContractViolation("no negative available");
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(universe - 1));
  for (;;) {
    const auto v = pick(rng);
    if (!std::binary_search(sorted_in.begin(), sorted_in.end(), v)) return v;
  }
}

}  // namespace detail

// Plain SGD on the mean BPR loss of each mini-batch. Negatives are resampled
// uniformly per positive, per epoch. Warm-starts from `init`.
inline CFTrainResult fit_bpr(BehaviorEmbeddings init, const BipartiteView& g,
                             const CFConfig& cfg, const TrainableRows& trainable = {}) {
  cfg.validate();
  if (init.dim() != cfg.dim) throw ContractViolation("embedding dim does not match config");
  const int layers = cfg.propagation_layers;
  const bool item_mode = cfg.objective == BprObjective::kItemOriented;

  CFTrainResult res;
  res.embeddings = std::move(init);
  auto& emb = res.embeddings;
  if (g.edges.empty()) return res;

  std::mt19937_64 rng(splitmix64(cfg.seed ^ 0x62707274ULL));
  std::mt19937_64 probe_rng(splitmix64(cfg.seed ^ 0x70726f62ULL));

  auto make_item_triple = [&](std::pair<std::uint32_t, std::uint32_t> e, std::mt19937_64& r) {
    return BprTriple{e.second, e.first, detail::sample_outside(g.item_users[e.second],
                                                               g.num_users, r)};
  };
  auto make_user_triple = [&](std::pair<std::uint32_t, std::uint32_t> e, std::mt19937_64& r) {
    return UserBprTriple{e.first, e.second, detail::sample_outside(g.user_items[e.first],
                                                                   g.num_items, r)};
  };

  std::vector<BprTriple> probe;
  std::vector<UserBprTriple> probe_u;
  const std::size_t n_probe = std::min<std::size_t>(512, g.edges.size());
  for (std::size_t k = 0; k < n_probe; ++k) {
    const auto& e = g.edges[(k * 7919) % g.edges.size()];
    if (item_mode) probe.push_back(make_item_triple(e, probe_rng));
    else probe_u.push_back(make_user_triple(e, probe_rng));
  }
  auto probe_loss = [&] {
    const double l = item_mode ? item_bpr_loss(emb, g, probe, layers)
                               : user_bpr_loss(emb, g, probe_u, layers);
    return l / static_cast<double>(n_probe);
  };
  res.probe_loss_start = probe_loss();

  std::vector<std::size_t> order(g.edges.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<BprTriple> batch;
  std::vector<UserBprTriple> batch_u;
  BehaviorEmbeddings grad;

  auto apply = [&](std::size_t n) {
    const double step = cfg.learning_rate / static_cast<double>(n);
    if (trainable.users) emb.user -= step * grad.user;
    if (trainable.item_rows.empty()) {
      emb.item -= step * grad.item;
    } else {
      for (std::size_t i = 0; i < trainable.item_rows.size(); ++i) {
        if (trainable.item_rows[i]) emb.item.row(i) -= step * grad.item.row(i);
      }
    }
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      batch_u.clear();
      for (std::size_t k = start; k < end; ++k) {
        const auto& e = g.edges[order[k]];
        for (int n = 0; n < cfg.negatives_per_positive; ++n) {
          if (item_mode) batch.push_back(make_item_triple(e, rng));
          else batch_u.push_back(make_user_triple(e, rng));
        }
      }
      const double l = item_mode ? item_bpr_loss(emb, g, batch, layers, &grad)
                                 : user_bpr_loss(emb, g, batch_u, layers, &grad);
      const std::size_t n = item_mode ? batch.size() : batch_u.size();
      apply(n);
      total += l;
      count += n;
    }
    const double mean = total / static_cast<double>(count);
    if (!std::isfinite(mean) || !emb.finite()) {
      throw DivergenceError("behavior training diverged at epoch " + std::to_string(epoch + 1));
    }
    res.epoch_loss.push_back(mean);
  }
  res.probe_loss_end = probe_loss();
  return res;
}

inline CFTrainResult train_cf(const BipartiteView& g, const CFConfig& cfg) {
  cfg.validate();
  if (g.edges.empty()) throw ContractViolation("behavior training needs at least one interaction");
  return fit_bpr(init_behavior(g.num_users, g.num_items, cfg), g, cfg);
}

inline CFTrainResult train_cf(const InteractionGraph& g, const CFConfig& cfg) {
  return train_cf(BipartiteView::warm(g), cfg);
}

// Output-side user token table: row u is user u's token embedding.
struct UserVocabulary {
  Matrix z;

  std::size_t size() const { return static_cast<std::size_t>(z.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(z.cols()); }
};

// Copies the (propagated) user behavior rows into a fresh table; later updates
// to the table never reach `behavior`.
inline UserVocabulary init_user_vocab(const BehaviorEmbeddings& behavior, std::size_t encoder_dim) {
  if (behavior.dim() != encoder_dim) {
    throw ContractViolation("behavior dim " + std::to_string(behavior.dim()) +
                            " does not match encoder dim " + std::to_string(encoder_dim));
  }
  if (!behavior.user.allFinite()) throw ContractViolation("behavior embeddings are not finite");
  return UserVocabulary{behavior.user};
}

// The random-initialization ablation.
inline UserVocabulary random_user_vocab(std::size_t users, std::size_t dim, double std,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return UserVocabulary{random_normal(users, dim, std, rng)};
}

}  // namespace t2d
