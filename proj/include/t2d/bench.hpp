#pragma once

#include <chrono>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "t2d/coldstart.hpp"
#include "t2d/common.hpp"
#include "t2d/distribution.hpp"
#include "t2d/encoder.hpp"
#include "t2d/judgement.hpp"

namespace t2d {

// Predicted cost ratio of K pairwise passes at length L2 to one pass at
// length L1, with per-pass cost L^2 + L*d.
inline double complexity_ratio(double l1, double l2, double d, double k_cand) {
  if (!(l1 > 0 && l2 > 0 && d > 0 && k_cand > 0)) {
    throw ContractViolation("complexity_ratio arguments must be positive");
  }
  return (l2 * l2 + l2 * d) / (l1 * l1 + l1 * d) * k_cand;
}

struct BenchConfig {
  std::size_t repetitions = 30;
  std::vector<std::size_t> k_cands{10, 50, 100};
  std::size_t top_k = 20;
  double max_resolution_fraction = 0.01;
};

struct Timing {
  double mean = 0.0;  // seconds per item
  double stddev = 0.0;
  std::size_t repetitions = 0;
  std::size_t inner_loops = 1;
};

struct JudgeTiming {
  std::size_t k_cand = 0;
  Timing timing;
  double speedup = 0.0;    // judgement mean / distribution mean
  double predicted = 0.0;  // complexity_ratio at the measured lengths
  double forward_passes_per_item = 0.0;
};

struct BenchResult {
  Timing distribution;
  double distribution_forward_passes_per_item = 0.0;
  std::vector<JudgeTiming> judgement;
  double l1 = 0.0, l2 = 0.0;
  std::size_t dim = 0;
  std::size_t items = 0;
  std::size_t threads = 1;
  double timer_resolution = 0.0;

  std::string to_text() const {
    std::ostringstream os;
    os.precision(8);
    os << "items=" << items << "\nthreads=" << threads << "\ndim=" << dim << "\nl1=" << l1
       << "\nl2=" << l2 << "\ntimer_resolution_s=" << timer_resolution
       << "\ndistribution.mean_s=" << distribution.mean
       << "\ndistribution.std_s=" << distribution.stddev
       << "\ndistribution.repetitions=" << distribution.repetitions
       << "\ndistribution.forward_passes_per_item=" << distribution_forward_passes_per_item << "\n";
    for (const auto& j : judgement) {
      const std::string p = "judgement.k" + std::to_string(j.k_cand) + ".";
      os << p << "mean_s=" << j.timing.mean << "\n"
         << p << "std_s=" << j.timing.stddev << "\n"
         << p << "repetitions=" << j.timing.repetitions << "\n"
         << p << "forward_passes_per_item=" << j.forward_passes_per_item << "\n"
         << p << "speedup=" << j.speedup << "\n"
         << p << "predicted=" << j.predicted << "\n";
    }
    return os.str();
  }

  std::string to_table() const {
    std::ostringstream os;
    os.precision(6);
    os << "k_cand\tdistribution_s\tjudgement_s\tspeedup\tpredicted\tpasses_per_item\n";
    for (const auto& j : judgement) {
      os << j.k_cand << '\t' << distribution.mean << '\t' << j.timing.mean << '\t' << j.speedup
         << '\t' << j.predicted << '\t' << j.forward_passes_per_item << '\n';
    }
    return os.str();
  }
};

inline double timer_resolution() {
  using clock = std::chrono::steady_clock;
  double best = 1.0;
  for (int k = 0; k < 200; ++k) {
    const auto a = clock::now();
    auto b = clock::now();
    while (b == a) b = clock::now();
    best = std::min(best, std::chrono::duration<double>(b - a).count());
  }
  return best;
}

namespace detail {

// Times `body` (which processes `items` items) `reps` times after one warm-up
// call. If a single call is too short for the timer, calls are batched.
template <typename Fn>
Timing time_per_item(Fn&& body, std::size_t items, std::size_t reps, double resolution,
                     double max_fraction) {
  using clock = std::chrono::steady_clock;
  body();
  Timing t;
  t.repetitions = reps;
  for (;;) {
    const auto a = clock::now();
    for (std::size_t k = 0; k < t.inner_loops; ++k) body();
    const double s = std::chrono::duration<double>(clock::now() - a).count();
    if (resolution <= max_fraction * s) break;
    t.inner_loops *= 2;
  }
  std::vector<double> samples(reps);
  for (auto& s : samples) {
    const auto a = clock::now();
    for (std::size_t k = 0; k < t.inner_loops; ++k) body();
    s = std::chrono::duration<double>(clock::now() - a).count() /
        static_cast<double>(t.inner_loops * items);
  }
  double mean = 0;
  for (double s : samples) mean += s;
  mean /= static_cast<double>(reps);
  double var = 0;
  for (double s : samples) var += (s - mean) * (s - mean);
  t.mean = mean;
  t.stddev = reps > 1 ? std::sqrt(var / static_cast<double>(reps - 1)) : 0.0;
  return t;
}

}  // namespace detail

// Single-threaded, batch size 1. Prompts are tokenized by the caller, so
// timing covers the forward passes plus top-K selection or thresholding.
// judge_prompts[n] holds at least max(k_cands) prompts for item n.
inline BenchResult bench(const EncoderModel& model, const UserVocabulary& vocab,
                         const JudgeHead& head, const std::vector<TokenSequence>& dist_prompts,
                         const std::vector<std::vector<TokenSequence>>& judge_prompts,
                         const BenchConfig& cfg) {
  if (dist_prompts.empty() || dist_prompts.size() != judge_prompts.size()) {
    throw ContractViolation("bench needs one judgement prompt list per item");
  }
  if (cfg.repetitions < 30) throw ContractViolation("bench needs at least 30 repetitions");
  std::size_t max_k = 0;
  for (auto k : cfg.k_cands) max_k = std::max(max_k, k);
  for (const auto& p : judge_prompts) {
    if (p.size() < max_k) throw ContractViolation("too few judgement prompts for K_cand");
  }

  BenchResult r;
  r.items = dist_prompts.size();
  r.dim = model.config.dim;
  r.timer_resolution = timer_resolution();
  for (const auto& p : dist_prompts) r.l1 += static_cast<double>(p.size());
  r.l1 /= static_cast<double>(dist_prompts.size());
  std::size_t n2 = 0;
  for (const auto& ps : judge_prompts) {
    for (std::size_t k = 0; k < max_k; ++k) r.l2 += static_cast<double>(ps[k].size());
    n2 += max_k;
  }
  r.l2 /= static_cast<double>(std::max<std::size_t>(n2, 1));

  const std::size_t top_k = std::min(cfg.top_k, vocab.size());
  std::size_t sink = 0;
  auto distribution_run = [&] {
    for (const auto& p : dist_prompts) {
      const auto users = top_k_users(predict_distribution(encode(model, p), vocab), top_k);
      sink += users[0];
    }
  };
  auto before = model.forward_passes();
  distribution_run();
  r.distribution_forward_passes_per_item =
      static_cast<double>(model.forward_passes() - before) / static_cast<double>(r.items);
  r.distribution = detail::time_per_item(distribution_run, r.items, cfg.repetitions,
                                         r.timer_resolution, cfg.max_resolution_fraction);

  for (auto k : cfg.k_cands) {
    auto judge_run = [&] {
      for (const auto& ps : judge_prompts) {
        for (std::size_t c = 0; c < k; ++c) sink += judge_pair(model, head, ps[c]).yes ? 1 : 0;
      }
    };
    JudgeTiming j;
    j.k_cand = k;
    before = model.forward_passes();
    judge_run();
    j.forward_passes_per_item =
        static_cast<double>(model.forward_passes() - before) / static_cast<double>(r.items);
    j.timing = detail::time_per_item(judge_run, r.items, cfg.repetitions, r.timer_resolution,
                                     cfg.max_resolution_fraction);
    j.speedup = j.timing.mean / r.distribution.mean;
    j.predicted = complexity_ratio(r.l1, r.l2, static_cast<double>(r.dim), static_cast<double>(k));
    r.judgement.push_back(j);
  }
  volatile std::size_t keep = sink;
  (void)keep;
  return r;
}

}  // namespace t2d
