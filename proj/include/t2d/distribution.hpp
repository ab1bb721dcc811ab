#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "t2d/cf.hpp"
#include "t2d/common.hpp"
#include "t2d/dataset.hpp"
#include "t2d/encoder.hpp"
#include "t2d/optim.hpp"
#include "t2d/tokenizer.hpp"

namespace t2d {

struct UserDistribution {
  Vector probs;

  std::size_t size() const { return static_cast<std::size_t>(probs.size()); }
};

inline Vector user_logits(const Vector& h, const UserVocabulary& vocab) {
  if (static_cast<std::size_t>(h.size()) != vocab.dim()) {
    throw ContractViolation("hidden state dim does not match vocabulary dim");
  }
  if (!h.allFinite()) throw ContractViolation("hidden state is not finite");
  return vocab.z * h;
}

inline double log_sum_exp(const Vector& x) {
  const double mx = x.maxCoeff();
  return mx + std::log((x.array() - mx).exp().sum());
}

inline Vector softmax(const Vector& x) {
  Vector e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

inline UserDistribution predict_distribution(const Vector& h, const UserVocabulary& vocab) {
  return {softmax(user_logits(h, vocab))};
}

// Gradient of a per-item loss w.r.t. h and the vocabulary rows it touched.
struct HeadGrad {
  Vector dh;
  std::vector<UserIndex> users;  // rows of dz, in order
  Matrix dz;
};

// loss = -(1/|P|) sum_{u in P} log( exp(s_u) / sum_{v in P u N} exp(s_v) ),
// s_v = h . z_v. The denominator runs over positives and negatives together.
inline double distribution_loss(const Vector& h, std::span<const UserIndex> positives,
                                std::span<const UserIndex> negatives,
                                const UserVocabulary& vocab, HeadGrad* grad = nullptr) {
  if (positives.empty()) throw ContractViolation("distribution loss needs a positive user");
  if (static_cast<std::size_t>(h.size()) != vocab.dim()) {
    throw ContractViolation("hidden state dim does not match vocabulary dim");
  }
  std::vector<UserIndex> all(positives.begin(), positives.end());
  all.insert(all.end(), negatives.begin(), negatives.end());
  {
    std::vector<UserIndex> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ContractViolation("positive and negative users overlap or repeat");
    }
    if (sorted.back() >= vocab.size()) throw ContractViolation("user index out of range");
  }
  const auto n = static_cast<Eigen::Index>(all.size());
  Vector s(n);
  for (Eigen::Index k = 0; k < n; ++k) s(k) = vocab.z.row(all[k]).dot(h);
  const double lse = log_sum_exp(s);
  const double inv_p = 1.0 / static_cast<double>(positives.size());
  double pos_sum = 0.0;
  for (std::size_t k = 0; k < positives.size(); ++k) pos_sum += s(k);
  const double loss = lse - pos_sum * inv_p;

  if (grad) {
    Vector ds = (s.array() - lse).exp();
    ds.head(positives.size()).array() -= inv_p;
    grad->users = all;
    grad->dh = Vector::Zero(h.size());
    grad->dz.resize(n, h.size());
    for (Eigen::Index k = 0; k < n; ++k) {
      grad->dh += ds(k) * vocab.z.row(all[k]).transpose();
      grad->dz.row(k) = ds(k) * h.transpose();
    }
  }
  return loss;
}

// Same loss with every non-interactor as a negative, written as
// -(1/|U_i|) * log_softmax(Z h) . y for a multi-hot y.
inline double distribution_loss_vectorized(const Vector& h, const Vector& y,
                                           const UserVocabulary& vocab) {
  if (static_cast<std::size_t>(y.size()) != vocab.size()) {
    throw ContractViolation("multi-hot vector length does not match user count");
  }
  const double count = y.sum();
  if (!(count > 0)) throw ContractViolation("multi-hot vector has no positive user");
  const Vector logits = user_logits(h, vocab);
  const Vector log_softmax = logits.array() - log_sum_exp(logits);
  return -log_softmax.dot(y) / count;
}

// Squared distance between h and the item's behavior row.
inline double guiding_loss(const Vector& h, const Vector& behavior_row, Vector* dh = nullptr) {
  if (h.size() != behavior_row.size()) throw ContractViolation("guiding loss dim mismatch");
  const Vector delta = h - behavior_row;
  if (dh) *dh = 2.0 * delta;
  return delta.squaredNorm();
}

// `item_rows` holds warm items in warm_index order.
inline double guiding_loss(const Vector& h, const InteractionGraph& g, ItemIndex i,
                           const Matrix& item_rows, Vector* dh = nullptr) {
  if (g.is_cold(i)) throw ContractViolation("guiding loss is defined for warm items only");
  return guiding_loss(h, item_rows.row(g.warm_index(i)).transpose(), dh);
}

inline double total_loss(double distribution, double guiding, double lambda) {
  return distribution + lambda * guiding;
}

// Uniform sample without replacement from the users outside `positives`
// (sorted). count == complement size returns the whole complement.
inline std::vector<UserIndex> sample_negatives(std::size_t num_users,
                                               const std::vector<UserIndex>& positives,
                                               std::size_t count, std::mt19937_64& rng) {
  std::vector<UserIndex> pool;
  pool.reserve(num_users);
  for (UserIndex u = 0; u < num_users; ++u) {
    if (!std::binary_search(positives.begin(), positives.end(), u)) pool.push_back(u);
  }
  if (count > pool.size()) {
    throw ContractViolation("requested " + std::to_string(count) + " negatives but only " +
                            std::to_string(pool.size()) + " users are outside the item");
  }
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
    std::swap(pool[k], pool[pick(rng)]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline std::vector<UserIndex> sample_negatives(const InteractionGraph& g, ItemIndex i,
                                               std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_negatives(g.num_users(), g.item_users(i), count, rng);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double lambda = 5.0;
  std::size_t negatives_per_item = 256;  // 0 = all non-interactors
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  std::size_t batch_size = 8;
  int max_epochs = 20;
  std::size_t prompt_max_len = 128;
  bool train_vocab = true;
  std::size_t workers = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lambda >= 0)) throw ContractViolation("lambda must be >= 0");
    if (batch_size == 0) throw ContractViolation("batch_size must be positive");
    if (max_epochs < 0) throw ContractViolation("max_epochs must be >= 0");
    if (!(learning_rate >= 0)) throw ContractViolation("learning_rate must be >= 0");
  }
};

struct EpochLog {
  int epoch = 0;
  double distribution = 0.0;
  double guiding = 0.0;
  double total = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  EncoderModel encoder;  // parameters of the lowest-loss epoch
  UserVocabulary vocab;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_loss = 0.0;
  std::uint64_t forward_passes = 0;  // encoder forwards issued by this run
  Diagnostics diagnostics;
};

inline std::string format_train_log(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch\tl_distrib\tl_guid\ttotal\tseconds\n";
  for (const auto& e : log) {
    os << e.epoch << '\t' << e.distribution << '\t' << e.guiding << '\t' << e.total << '\t'
       << e.seconds << '\n';
  }
  return os.str();
}

// Trains the adapters (and the base, if configured) together with the user
// vocabulary. `behavior_items` holds the guiding targets for warm items in
// warm_index order. One encoder forward per warm item per epoch.
inline TrainResult train(const InteractionGraph& g, const ItemContent& content,
                         const Matrix& behavior_items, UserVocabulary vocab,
                         EncoderModel encoder, const Tokenizer& tok, const TrainConfig& cfg) {
  cfg.validate();
  if (vocab.size() != g.num_users()) throw ContractViolation("vocabulary size != user count");
  if (vocab.dim() != encoder.config.dim) throw ContractViolation("vocabulary dim != encoder dim");
  if (static_cast<std::size_t>(behavior_items.rows()) != g.num_warm()) {
    throw ContractViolation("guiding targets must have one row per warm item");
  }

  TrainResult res;
  std::vector<ItemIndex> items;
  std::vector<TokenSequence> prompts(g.num_items());
  for (auto i : g.warm_items()) {
    if (g.item_users(i).empty()) {
      res.diagnostics.warn("warm item " + g.item_id(i) + " has no training users; skipped");
      continue;
    }
    if (!content.has(i)) {
      res.diagnostics.warn("warm item " + g.item_id(i) + " has no content; skipped");
      continue;
    }
    prompts[i] = build_prompt(tok, content.at(i), cfg.prompt_max_len);
    items.push_back(i);
  }

  AdamWConfig opt_cfg{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay};
  auto handles = trainable_parameters(encoder);
  std::vector<Matrix*> params;
  for (auto& h : handles) params.push_back(h.value);
  AdamW opt(opt_cfg, params);
  SparseRowAdamW vocab_opt(opt_cfg, &vocab.z);

  encoder.reset_forward_passes();
  std::mt19937_64 rng(derive_seed(cfg.seed, "distribution-order"));
  const bool base = encoder.config.base_trainable;
  const auto zero_grads = EncoderGrads::zeros_like(encoder);

  res.encoder = encoder;
  res.vocab = vocab;
  res.best_loss = std::numeric_limits<double>::infinity();

  struct ItemOut {
    double distribution = 0, guiding = 0;
    EncoderGrads grads;
    HeadGrad head;
  };

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(items.begin(), items.end(), rng);
    double sum_d = 0, sum_g = 0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < items.size(); start += cfg.batch_size, ++batch_no) {
      const auto end = std::min(items.size(), start + cfg.batch_size);
      std::vector<ItemOut> outs(end - start);
      parallel_for(end - start, cfg.workers, [&](std::size_t k) {
        const ItemIndex i = items[start + k];
        const auto& pos = g.item_users(i);
        const auto complement = g.num_users() - pos.size();
        const auto n_neg = cfg.negatives_per_item == 0
                               ? complement
                               : std::min(cfg.negatives_per_item, complement);
        std::mt19937_64 item_rng(derive_seed(cfg.seed, "neg/" + std::to_string(epoch) + "/" +
                                                           std::to_string(i)));
        const auto neg = sample_negatives(g.num_users(), pos, n_neg, item_rng);

        ForwardCache cache;
        const Vector h = encode(encoder, prompts[i], &cache);
        auto& o = outs[k];
        o.distribution = distribution_loss(h, pos, neg, vocab, &o.head);
        Vector dg;
        o.guiding = guiding_loss(h, g, i, behavior_items, &dg);
        const Vector dh = o.head.dh + cfg.lambda * dg;
        o.grads = zero_grads;
        encode_backward(encoder, cache, dh, o.grads);
      });

      const double inv_b = 1.0 / static_cast<double>(outs.size());
      EncoderGrads acc = zero_grads;
      auto acc_list = acc.trainable(base);
      std::map<std::uint32_t, RowVector> z_grads;
      double batch_total = 0;
      for (auto& o : outs) {
        auto list = o.grads.trainable(base);
        for (std::size_t p = 0; p < list.size(); ++p) *acc_list[p] += inv_b * *list[p];
        for (std::size_t r = 0; r < o.head.users.size(); ++r) {
          auto [it, fresh] = z_grads.try_emplace(o.head.users[r], RowVector::Zero(vocab.dim()));
          it->second += inv_b * o.head.dz.row(r);
        }
        sum_d += o.distribution;
        sum_g += o.guiding;
        batch_total += total_loss(o.distribution, o.guiding, cfg.lambda);
      }
      if (!std::isfinite(batch_total)) {
        throw DivergenceError("training loss is not finite at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batch_no + 1));
      }
      opt.step(acc_list);
      if (cfg.train_vocab) vocab_opt.step(z_grads);
    }

    EpochLog e;
    e.epoch = epoch;
    const double n = items.empty() ? 1.0 : static_cast<double>(items.size());
    e.distribution = sum_d / n;
    e.guiding = sum_g / n;
    e.total = total_loss(e.distribution, e.guiding, cfg.lambda);
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(e);
    if (e.total < res.best_loss) {
      res.best_loss = e.total;
      res.best_epoch = epoch;
      res.encoder = encoder;
      res.vocab = vocab;
    }
  }
  res.forward_passes = encoder.forward_passes();
  res.encoder.reset_forward_passes();
  return res;
}

}  // namespace t2d
