#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "t2d/cf.hpp"
#include "t2d/common.hpp"
#include "t2d/dataset.hpp"
#include "t2d/distribution.hpp"
#include "t2d/encoder.hpp"

namespace t2d {

// K highest-probability users, descending; equal probabilities go to the
// lower user index first.
inline std::vector<UserIndex> top_k_users(const UserDistribution& dist, std::size_t k) {
  const std::size_t n = dist.size();
  if (k < 1 || k > n) {
    throw ContractViolation("K=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<UserIndex> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const auto& p = dist.probs;
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](UserIndex a, UserIndex b) { return p(a) > p(b) || (p(a) == p(b) && a < b); });
  idx.resize(k);
  return idx;
}

struct SyntheticPair {
  UserIndex user = 0;
  ItemIndex item = 0;
  std::uint32_t rank = 0;  // 1-based position in the item's top-K
  double prob = 0.0;
};

struct AugmentedInteractions {
  std::vector<SyntheticPair> pairs;  // sorted by (item, rank)
  Diagnostics diagnostics;

  std::vector<Interaction> interactions() const {
    std::vector<Interaction> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back({p.user, p.item});
    return out;
  }
};

// One encoder forward per cold item, then greedy top-K over its distribution.
// K larger than the user count is clamped.
inline AugmentedInteractions generate_interactions(
    const InteractionGraph& g, std::vector<ItemIndex> cold_items, const ItemContent& content,
    const EncoderModel& encoder, const Tokenizer& tok, const UserVocabulary& vocab,
    std::size_t k, std::size_t prompt_max_len = 128, std::size_t workers = 1) {
  AugmentedInteractions out;
  std::sort(cold_items.begin(), cold_items.end());
  cold_items.erase(std::unique(cold_items.begin(), cold_items.end()), cold_items.end());
  std::vector<ItemIndex> todo;
  for (auto i : cold_items) {
    if (!g.is_cold(i)) throw ContractViolation("item " + g.item_id(i) + " is not cold");
    if (!content.has(i)) {
      out.diagnostics.warn("cold item " + g.item_id(i) + " has no content; skipped");
      continue;
    }
    todo.push_back(i);
  }
  const std::size_t kk = std::min(k, vocab.size());
  std::vector<std::vector<SyntheticPair>> slots(todo.size());
  parallel_for(todo.size(), workers, [&](std::size_t n) {
    const ItemIndex i = todo[n];
    const Vector h = encode(encoder, build_prompt(tok, content.at(i), prompt_max_len));
    const auto dist = predict_distribution(h, vocab);
    const auto users = top_k_users(dist, kk);
    for (std::size_t r = 0; r < users.size(); ++r) {
      slots[n].push_back({users[r], i, static_cast<std::uint32_t>(r + 1), dist.probs(users[r])});
    }
  });
  for (auto& s : slots) out.pairs.insert(out.pairs.end(), s.begin(), s.end());
  return out;
}

inline std::string format_probability(double p) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.8g", p);
  return buf;
}

inline std::string export_augmented(const InteractionGraph& g, const AugmentedInteractions& a) {
  std::string out;
  for (const auto& p : a.pairs) {
    out += detail::escape_field(g.user_id(p.user)) + '\t' + detail::escape_field(g.item_id(p.item)) +
           '\t' + std::to_string(p.rank) + '\t' + format_probability(p.prob) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Refinement

enum class RefineMode { kFullUpdate, kColdOnly };

inline const char* mode_name(RefineMode m) {
  return m == RefineMode::kFullUpdate ? "full-update" : "cold-only";
}

inline RefineMode parse_refine_mode(const std::string& s) {
  if (s == "full-update") return RefineMode::kFullUpdate;
  if (s == "cold-only") return RefineMode::kColdOnly;
  throw ValidationError("unknown refinement mode '" + s + "'");
}

// Final embeddings for scoring: users, warm items (warm_index order) and cold
// items (cold_index order).
struct RecEmbeddings {
  Matrix user;
  Matrix warm_item;
  Matrix cold_item;
  RefineMode mode = RefineMode::kFullUpdate;

  // Item rows in global item order.
  Matrix item_matrix(const InteractionGraph& g) const {
    Matrix m(g.num_items(), user.cols());
    for (ItemIndex i = 0; i < g.num_items(); ++i) {
      m.row(i) = g.is_cold(i) ? cold_item.row(g.cold_index(i)) : warm_item.row(g.warm_index(i));
    }
    return m;
  }
};

struct RefineResult {
  BehaviorEmbeddings raw;  // augmented rows: warm items, then cold items
  RecEmbeddings embeddings;
  Diagnostics diagnostics;
};

// Continues BPR training from the behavior checkpoint on H plus the synthetic
// pairs. Cold rows start from N(0, init_std). In cold-only mode only the cold
// rows move; users and warm items keep their raw and served values exactly.
inline RefineResult refine_embeddings(const InteractionGraph& g, const AugmentedInteractions& aug,
                                      const BehaviorEmbeddings& warm_raw, const CFConfig& cfg,
                                      RefineMode mode) {
  cfg.validate();
  if (warm_raw.dim() != cfg.dim) throw ContractViolation("behavior dim does not match config");
  if (static_cast<std::size_t>(warm_raw.item.rows()) != g.num_warm() ||
      static_cast<std::size_t>(warm_raw.user.rows()) != g.num_users()) {
    throw ContractViolation("behavior embeddings do not match the graph");
  }
  for (const auto& p : aug.pairs) {
    if (p.user >= g.num_users() || p.item >= g.num_items() || !g.is_cold(p.item)) {
      throw ContractViolation("synthetic pair does not reference a cold item");
    }
  }
  RefineResult res;
  if (aug.pairs.empty() && g.num_cold() > 0) {
    res.diagnostics.warn("no synthetic interactions; cold rows keep their initialization");
  }

  std::mt19937_64 rng(derive_seed(cfg.seed, "cold-init"));
  BehaviorEmbeddings init;
  init.user = warm_raw.user;
  init.item.resize(g.num_items(), cfg.dim);
  init.item.topRows(g.num_warm()) = warm_raw.item;
  init.item.bottomRows(g.num_cold()) = random_normal(g.num_cold(), cfg.dim, cfg.init_std, rng);

  const auto view = BipartiteView::augmented(g, aug.interactions());
  TrainableRows rows;
  if (mode == RefineMode::kColdOnly) {
    rows.users = false;
    rows.item_rows.assign(g.num_items(), false);
    for (std::size_t c = 0; c < g.num_cold(); ++c) rows.item_rows[g.num_warm() + c] = true;
  }
  res.raw = fit_bpr(std::move(init), view, cfg, rows).embeddings;

  const auto prop = propagate(res.raw, view, cfg.propagation_layers);
  if (mode == RefineMode::kColdOnly) {
    // Served warm-side embeddings stay exactly what the behavior stage produced.
    const auto before = propagate(warm_raw, BipartiteView::warm(g), cfg.propagation_layers);
    res.embeddings.user = before.user;
    res.embeddings.warm_item = before.item;
  } else {
    res.embeddings.user = prop.user;
    res.embeddings.warm_item = prop.item.topRows(g.num_warm());
  }
  res.embeddings.cold_item = prop.item.bottomRows(g.num_cold());
  res.embeddings.mode = mode;
  return res;
}

// Warm items score against their behavior row, cold items against the
// refined cold row.
inline double recommend(const RecEmbeddings& e, const InteractionGraph& g, UserIndex u,
                        ItemIndex i) {
  if (u >= g.num_users() || i >= g.num_items()) throw ContractViolation("unknown user or item");
  const auto& row = g.is_cold(i) ? e.cold_item.row(g.cold_index(i)) : e.warm_item.row(g.warm_index(i));
  return e.user.row(u).dot(row);
}

}  // namespace t2d
