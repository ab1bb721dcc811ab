#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "t2d/coldstart.hpp"
#include "t2d/common.hpp"
#include "t2d/dataset.hpp"
#include "t2d/encoder.hpp"
#include "t2d/tokenizer.hpp"

namespace t2d {

// Pairwise baseline: one forward pass per (user, item) over a prompt holding
// the user's history and the item content, read out by a 2-way head.

inline constexpr std::string_view kJudgePrefix =
    "A user has interacted with items with the following content:";
inline constexpr std::string_view kJudgeMiddle =
    ". Will the user interact with an item with the following content:";
inline constexpr std::string_view kJudgeSuffix = "? Answer yes or no.";

inline std::vector<std::string> judge_template_texts() {
  return {std::string(kJudgePrefix), std::string(kJudgeMiddle), std::string(kJudgeSuffix)};
}

struct JudgePromptConfig {
  std::size_t max_len = 272;
  std::size_t item_max_len = 96;  // cap on the item-content slot
};

// History titles are given oldest first. The most recent ones are kept, and
// the oldest kept title may be cut from the front so the prompt fills
// max_len. An empty history becomes a single UNK.
inline TokenSequence build_judge_prompt(const Tokenizer& tok,
                                        const std::vector<std::string>& history,
                                        std::string_view item_content,
                                        const JudgePromptConfig& cfg = {}) {
  const auto pre = tok.ids(kJudgePrefix);
  const auto mid = tok.ids(kJudgeMiddle);
  const auto post = tok.ids(kJudgeSuffix);
  TokenSequence seq;
  auto item = tok.ids(item_content);
  if (item.empty()) {
    item.push_back(Tokenizer::kUnk);
    seq.empty_input = true;
  }
  if (item.size() > cfg.item_max_len) {
    item.resize(cfg.item_max_len);
    seq.truncated = true;
  }
  const std::size_t fixed = pre.size() + mid.size() + post.size() + item.size();
  if (fixed + 1 > cfg.max_len) throw ContractViolation("judgement template does not fit max_len");
  const std::size_t room = cfg.max_len - fixed;

  std::vector<TokenId> context;  // built newest-first, reversed below
  for (auto it = history.rbegin(); it != history.rend() && context.size() < room; ++it) {
    auto ids = tok.ids(*it);
    for (auto r = ids.rbegin(); r != ids.rend() && context.size() < room; ++r) {
      context.push_back(*r);
    }
    if (context.size() == room && std::next(it) != history.rend()) seq.truncated = true;
  }
  std::reverse(context.begin(), context.end());
  if (context.empty()) context.push_back(Tokenizer::kUnk);

  seq.tokens = pre;
  seq.tokens.insert(seq.tokens.end(), context.begin(), context.end());
  seq.tokens.insert(seq.tokens.end(), mid.begin(), mid.end());
  seq.tokens.insert(seq.tokens.end(), item.begin(), item.end());
  seq.tokens.insert(seq.tokens.end(), post.begin(), post.end());
  return seq;
}

inline std::vector<std::string> user_history(const InteractionGraph& train,
                                             const ItemContent& content, UserIndex u) {
  std::vector<std::string> out;
  for (auto i : train.user_items(u)) {
    if (content.has(i)) out.push_back(content.at(i));
  }
  return out;
}

struct JudgeHead {
  Matrix w;     // d x 2, column 1 is "yes"
  Matrix bias;  // 1 x 2

  static JudgeHead create(std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return {random_normal(dim, 2, 1.0 / std::sqrt(static_cast<double>(dim)), rng),
            Matrix::Zero(1, 2)};
  }

  double p_yes(const Vector& h) const {
    const double a = h.dot(w.col(0)) + bias(0, 0);
    const double b = h.dot(w.col(1)) + bias(0, 1);
    return sigmoid(b - a);
  }
};

struct Verdict {
  bool yes = false;
  double p_yes = 0.0;
};

inline Verdict judge_pair(const EncoderModel& model, const JudgeHead& head,
                          const TokenSequence& prompt) {
  const double p = head.p_yes(encode(model, prompt));
  return {p >= 0.5, p};
}

// Logistic fit of the head on frozen hidden states.
inline void fit_judge_head(JudgeHead& head, const std::vector<Vector>& states,
                           const std::vector<bool>& labels, int epochs, double lr) {
  if (states.size() != labels.size()) throw ContractViolation("states/labels size mismatch");
  if (states.empty()) return;
  const double inv_n = 1.0 / static_cast<double>(states.size());
  for (int e = 0; e < epochs; ++e) {
    Vector gw = Vector::Zero(head.w.rows());
    double gb = 0.0;
    for (std::size_t k = 0; k < states.size(); ++k) {
      const double err = head.p_yes(states[k]) - (labels[k] ? 1.0 : 0.0);
      gw += err * states[k];
      gb += err;
    }
    // The head only depends on the column difference; move both halves.
    head.w.col(1) -= 0.5 * lr * inv_n * gw;
    head.w.col(0) += 0.5 * lr * inv_n * gw;
    head.bias(0, 1) -= 0.5 * lr * inv_n * gb;
    head.bias(0, 0) += 0.5 * lr * inv_n * gb;
  }
}

// Candidate rules for the pairwise baseline.
inline std::vector<UserIndex> random_candidates(std::size_t num_users, std::size_t k,
                                                std::mt19937_64& rng) {
  if (k > num_users) throw ContractViolation("more candidates requested than users");
  std::vector<UserIndex> all(num_users);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t n = 0; n < k; ++n) {
    std::uniform_int_distribution<std::size_t> pick(n, num_users - 1);
    std::swap(all[n], all[pick(rng)]);
  }
  all.resize(k);
  return all;
}

// Users with the highest inner product against `item_row` (ties to the lower
// index). With propagated behavior rows this is the cf_score ranking.
inline std::vector<UserIndex> score_candidates(const Matrix& user_rows, const Vector& item_row,
                                               std::size_t k) {
  return top_k_users(UserDistribution{user_rows * item_row}, k);
}

struct JudgementRun {
  AugmentedInteractions augmented;  // accepted users ranked by p_yes
  std::uint64_t forward_passes = 0;
};

// Judges every candidate of every item. `candidates[n]` belongs to items[n].
inline JudgementRun judge_items(const InteractionGraph& train, const ItemContent& content,
                                const std::vector<ItemIndex>& items,
                                const std::vector<std::vector<UserIndex>>& candidates,
                                const EncoderModel& model, const Tokenizer& tok,
                                const JudgeHead& head, const JudgePromptConfig& pcfg = {}) {
  if (items.size() != candidates.size()) throw ContractViolation("one candidate list per item");
  JudgementRun run;
  const auto before = model.forward_passes();
  for (std::size_t n = 0; n < items.size(); ++n) {
    const ItemIndex i = items[n];
    const std::string text = content.has(i) ? content.at(i) : std::string();
    std::vector<SyntheticPair> accepted;
    for (auto u : candidates[n]) {
      const auto v = judge_pair(model, head,
                                build_judge_prompt(tok, user_history(train, content, u), text, pcfg));
      if (v.yes) accepted.push_back({u, i, 0, v.p_yes});
    }
    std::stable_sort(accepted.begin(), accepted.end(), [](const auto& a, const auto& b) {
      return a.prob > b.prob || (a.prob == b.prob && a.user < b.user);
    });
    for (std::size_t r = 0; r < accepted.size(); ++r) accepted[r].rank = static_cast<std::uint32_t>(r + 1);
    run.augmented.pairs.insert(run.augmented.pairs.end(), accepted.begin(), accepted.end());
  }
  run.forward_passes = model.forward_passes() - before;
  return run;
}

}  // namespace t2d
