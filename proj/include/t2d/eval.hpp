#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "t2d/common.hpp"
#include "t2d/dataset.hpp"

namespace t2d {

namespace detail {

inline void check_relevant(const std::vector<ItemIndex>& relevant) {
  if (relevant.empty()) throw ContractViolation("relevant set is empty");
}

inline bool is_relevant(const std::vector<ItemIndex>& sorted_relevant, ItemIndex i) {
  return std::binary_search(sorted_relevant.begin(), sorted_relevant.end(), i);
}

}  // namespace detail

// |top-K ∩ relevant| / |relevant|. `relevant` must be sorted.
inline double recall_at_k(const std::vector<ItemIndex>& ranked,
                          const std::vector<ItemIndex>& relevant, std::size_t k) {
  detail::check_relevant(relevant);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    if (detail::is_relevant(relevant, ranked[r])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

// Binary gains, 1/log2(rank+1) discount, normalized by the ideal DCG over
// min(K, |relevant|) slots. `relevant` must be sorted.
inline double ndcg_at_k(const std::vector<ItemIndex>& ranked, const std::vector<ItemIndex>& relevant,
                        std::size_t k) {
  detail::check_relevant(relevant);
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    if (detail::is_relevant(relevant, ranked[r])) dcg += 1.0 / std::log2(r + 2.0);
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, relevant.size()); ++r) idcg += 1.0 / std::log2(r + 2.0);
  return dcg / idcg;
}

enum class ColdUniverse { kColdItems, kAllItems };

struct EvalConfig {
  std::size_t k = 20;
  // Candidate set for the cold split: cold items only, or the whole catalog.
  ColdUniverse cold_universe = ColdUniverse::kColdItems;
  std::size_t workers = 1;
};

struct SplitMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t users_evaluated = 0;
  std::size_t users_skipped = 0;  // no relevant item in this split
  std::size_t candidate_items = 0;
};

struct MetricReport {
  std::size_t k = 20;
  SplitMetrics overall, warm, cold;

  std::string to_text() const {
    std::ostringstream os;
    os.precision(10);
    os << "k=" << k << "\n";
    auto emit = [&](const char* name, const SplitMetrics& m) {
      os << name << ".recall=" << m.recall << "\n"
         << name << ".ndcg=" << m.ndcg << "\n"
         << name << ".users_evaluated=" << m.users_evaluated << "\n"
         << name << ".users_skipped=" << m.users_skipped << "\n"
         << name << ".candidate_items=" << m.candidate_items << "\n";
    };
    emit("overall", overall);
    emit("warm", warm);
    emit("cold", cold);
    return os.str();
  }

  std::string to_table() const {
    std::ostringstream os;
    os.precision(10);
    os << "split\trecall@" << k << "\tndcg@" << k << "\tusers\tskipped\titems\n";
    auto emit = [&](const char* name, const SplitMetrics& m) {
      os << name << '\t' << m.recall << '\t' << m.ndcg << '\t' << m.users_evaluated << '\t'
         << m.users_skipped << '\t' << m.candidate_items << '\n';
    };
    emit("overall", overall);
    emit("warm", warm);
    emit("cold", cold);
    return os.str();
  }
};

// Ranks `candidates` for one user by score, training items removed, ties by
// item index. Returns the top `k`.
inline std::vector<ItemIndex> rank_items(const Matrix& users, const Matrix& items, UserIndex u,
                                         const std::vector<ItemIndex>& candidates,
                                         const std::vector<ItemIndex>& masked_sorted,
                                         std::size_t k) {
  std::vector<std::pair<double, ItemIndex>> scored;
  scored.reserve(candidates.size());
  for (auto i : candidates) {
    if (std::binary_search(masked_sorted.begin(), masked_sorted.end(), i)) continue;
    scored.emplace_back(users.row(u).dot(items.row(i)), i);
  }
  const auto kk = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(kk), scored.end(),
                    [](const auto& a, const auto& b) {
                      return a.first > b.first || (a.first == b.first && a.second < b.second);
                    });
  std::vector<ItemIndex> out(kk);
  for (std::size_t r = 0; r < kk; ++r) out[r] = scored[r].second;
  return out;
}

// Full-ranking evaluation. `items` has one row per item in global order.
// `train` supplies the masked interactions and the warm/cold partition.
inline MetricReport evaluate(const Matrix& users, const Matrix& items, const InteractionGraph& train,
                             const std::vector<Interaction>& warm_test,
                             const std::vector<Interaction>& cold_test, const EvalConfig& cfg) {
  if (static_cast<std::size_t>(items.rows()) != train.num_items() ||
      static_cast<std::size_t>(users.rows()) != train.num_users()) {
    throw ContractViolation("embedding shapes do not match the graph");
  }
  const std::size_t nu = train.num_users();
  std::vector<std::vector<ItemIndex>> masked(nu);
  for (UserIndex u = 0; u < nu; ++u) {
    masked[u] = train.user_items(u);
    std::sort(masked[u].begin(), masked[u].end());
  }

  auto run = [&](const std::vector<ItemIndex>& universe,
                 const std::vector<const std::vector<Interaction>*>& tests) {
    std::vector<std::vector<ItemIndex>> relevant(nu);
    for (const auto* t : tests) {
      for (const auto& x : *t) relevant[x.user].push_back(x.item);
    }
    std::vector<double> rec(nu, 0.0), nd(nu, 0.0);
    std::vector<char> used(nu, 0);
    parallel_for(nu, cfg.workers, [&](std::size_t u) {
      auto& rel = relevant[u];
      std::sort(rel.begin(), rel.end());
      rel.erase(std::unique(rel.begin(), rel.end()), rel.end());
      if (rel.empty()) return;
      const auto ranked = rank_items(users, items, static_cast<UserIndex>(u), universe, masked[u],
                                     cfg.k);
      rec[u] = recall_at_k(ranked, rel, cfg.k);
      nd[u] = ndcg_at_k(ranked, rel, cfg.k);
      used[u] = 1;
    });
    SplitMetrics m;
    m.candidate_items = universe.size();
    for (std::size_t u = 0; u < nu; ++u) {
      if (!used[u]) {
        ++m.users_skipped;
        continue;
      }
      ++m.users_evaluated;
      m.recall += rec[u];
      m.ndcg += nd[u];
    }
    if (m.users_evaluated) {
      m.recall /= static_cast<double>(m.users_evaluated);
      m.ndcg /= static_cast<double>(m.users_evaluated);
    }
    return m;
  };

  std::vector<ItemIndex> all(train.num_items());
  std::iota(all.begin(), all.end(), 0);
  MetricReport r;
  r.k = cfg.k;
  r.overall = run(all, {&warm_test, &cold_test});
  r.warm = run(train.warm_items(), {&warm_test});
  r.cold = run(cfg.cold_universe == ColdUniverse::kColdItems ? train.cold_items() : all,
               {&cold_test});
  return r;
}

}  // namespace t2d
