// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Usage: acceptance [--cli PATH] [--only N[,N...]]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "t2d/t2d.hpp"

namespace {

using namespace t2d;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

fs::path scratch(const std::string& name) {
  const auto p = fs::current_path() / ("t2d_accept_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------

Outcome loss_equivalence() {
  std::mt19937_64 rng(101);
  double worst = 0, worst_oracle = 0;
  for (int n = 0; n < 50; ++n) {
    const std::size_t users = 2 + rng() % 63, items = 1 + rng() % 16, d = 2 + rng() % 15;
    UserVocabulary vocab{oracle::random_matrix(users, d, rng)};
    for (std::size_t i = 0; i < items; ++i) {
      const Vector h = oracle::random_vector(d, rng);
      std::vector<UserIndex> pos, neg;
      for (UserIndex u = 0; u < users; ++u) (rng() % 4 == 0 ? pos : neg).push_back(u);
      if (pos.empty()) pos.push_back(neg.back()), neg.pop_back();
      Vector y = Vector::Zero(users);
      for (auto u : pos) y(u) = 1;
      const double a = distribution_loss_vectorized(h, y, vocab);
      const double b = distribution_loss(h, pos, neg, vocab);
      const double c = static_cast<double>(oracle::distribution_loss(h, pos, neg, vocab.z));
      worst = std::max(worst, oracle::rel_err(a, b));
      worst_oracle = std::max(worst_oracle, oracle::rel_err(b, c));
    }
  }
  return {worst <= 1e-9 && worst_oracle <= 1e-9,
          "max rel err vectorized/per-user " + fmt("%.2e", worst) + ", per-user/oracle " +
              fmt("%.2e", worst_oracle)};
}

Outcome gradient_suite() {
  // Relative errors are taken against max(|a|, |n|, kFloor); below the floor
  // central differences are dominated by roundoff.
  constexpr double kFloor = 1e-5;
  std::mt19937_64 rng(202);
  double bpr = 0, dist = 0, guid = 0, enc = 0;

  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t nu = 6, ni = 5, d = 4 + trial * 3;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    for (std::uint32_t u = 0; u < nu; ++u) {
      for (std::uint32_t i = 0; i < ni; ++i) {
        if ((u + i + trial) % 3 == 0) pairs.push_back({u, i});
      }
    }
    const BipartiteView view(nu, ni, pairs);
    BehaviorEmbeddings e{oracle::random_matrix(nu, d, rng, 0.5), oracle::random_matrix(ni, d, rng, 0.5)};
    std::vector<BprTriple> batch;
    for (const auto& [u, i] : pairs) {
      for (std::uint32_t v = 0; v < nu; ++v) {
        if (!view.contains(v, i)) {
          batch.push_back({i, u, v});
          break;
        }
      }
    }
    for (int layers : {0, 2}) {
      BehaviorEmbeddings g;
      item_bpr_loss(e, view, batch, layers, &g);
      auto f = [&] { return item_bpr_loss(e, view, batch, layers); };
      bpr = std::max(bpr, oracle::max_rel_err(g.user, oracle::finite_diff(e.user, f)));
      bpr = std::max(bpr, oracle::max_rel_err(g.item, oracle::finite_diff(e.item, f)));
    }

    UserVocabulary vocab{oracle::random_matrix(12, d, rng)};
    Vector h = oracle::random_vector(d, rng);
    const std::vector<UserIndex> pos{1, 4, 7}, neg{0, 2, 3, 9, 11};
    HeadGrad hg;
    distribution_loss(h, pos, neg, vocab, &hg);
    auto fd = [&] { return distribution_loss(h, pos, neg, vocab); };
    dist = std::max(dist, oracle::max_rel_err(hg.dh, oracle::finite_diff(h, fd), kFloor));
    const Matrix num_z = oracle::finite_diff(vocab.z, fd);
    for (std::size_t k = 0; k < hg.users.size(); ++k) {
      dist = std::max(dist, oracle::max_rel_err(hg.dz.row(k), num_z.row(hg.users[k]), kFloor));
    }

    Vector target = oracle::random_vector(d, rng);
    Vector dh;
    guiding_loss(h, target, &dh);
    guid = std::max(guid, oracle::max_rel_err(dh, oracle::finite_diff(h, [&] {
                                                return guiding_loss(h, target);
                                              }), kFloor));
  }

  for (int trial = 0; trial < 2; ++trial) {
    auto m = oracle::small_encoder(10, 8 + trial * 8, 1 + trial, 2, 2, 300 + trial);
    const std::vector<TokenId> t{1, 4, 2, 8, 3};
    const Vector r = oracle::random_vector(m.config.dim, rng);
    ForwardCache cache;
    encode(m, t, &cache);
    auto grads = EncoderGrads::zeros_like(m);
    encode_backward(m, cache, r, grads);
    auto params = trainable_parameters(m);
    auto gl = grads.trainable(false);
    for (std::size_t p = 0; p < params.size(); ++p) {
      const Matrix num = oracle::finite_diff(*params[p].value, [&] { return r.dot(encode(m, t)); });
      enc = std::max(enc, oracle::max_rel_err(*gl[p], num, 1e-5));
    }
  }
  const bool pass = bpr <= 1e-4 && dist <= 1e-4 && guid <= 1e-4 && enc <= 1e-3;
  return {pass, "max rel err bpr " + fmt("%.1e", bpr) + " (tol 1e-4), distribution " +
                    fmt("%.1e", dist) + " (1e-4), guiding " + fmt("%.1e", guid) +
                    " (1e-4), encoder adapters " + fmt("%.1e", enc) + " (1e-3)"};
}

Outcome normalization_topk() {
  std::mt19937_64 rng(303);
  double worst = 0;
  for (int n = 0; n < 1000; ++n) {
    const std::size_t users = 1 + rng() % 500, d = 1 + rng() % 16;
    const double scale = std::pow(10.0, static_cast<double>(rng() % 4));
    const UserVocabulary vocab{oracle::random_matrix(users, d, rng, scale)};
    const auto p = predict_distribution(oracle::random_vector(d, rng), vocab);
    worst = std::max(worst, std::abs(p.probs.sum() - 1.0));
  }
  int mismatches = 0;
  std::uniform_int_distribution<int> coarse(0, 200);
  for (int n = 0; n < 1000; ++n) {
    Vector p(1000);
    for (int u = 0; u < 1000; ++u) p(u) = coarse(rng);
    p /= p.sum();
    const std::size_t k = 1 + rng() % 100;
    std::vector<UserIndex> idx(1000);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](UserIndex a, UserIndex b) { return p(a) > p(b); });
    idx.resize(k);
    mismatches += top_k_users(UserDistribution{p}, k) != idx;
  }
  return {worst <= 1e-6 && mismatches == 0,
          "max |sum-1| " + fmt("%.1e", worst) + ", top-K mismatches " + std::to_string(mismatches) +
              "/1000"};
}

// Synthetic-corpus runs through the real pipeline. One directory per
// (seed, variant); returns the parsed metric and training reports.
struct VariantRun {
  double cold_recall = 0;
  double control_cold_recall = 0;
  double final_distrib = 0;
  double final_total = 0;
};

std::map<std::string, std::string> key_values(const fs::path& p) {
  std::map<std::string, std::string> kv;
  std::istringstream is(read_file(p));
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (!line.empty() && line[0] != '#' && eq != std::string::npos) {
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  return kv;
}

VariantRun run_variant(const fs::path& root, std::uint64_t seed, const std::string& variant) {
  const auto dir = root / ("seed" + std::to_string(seed));
  if (!fs::exists(dir / "inter.tsv")) {
    fs::create_directories(dir);
    SyntheticSpec s;
    s.seed = seed;
    write_corpus(make_synthetic_corpus(s).data, dir / "inter.tsv", dir / "content.tsv");
  }
  std::string json = R"({"seed": )" + std::to_string(seed) + R"(,
    "data": {"interactions": "inter.tsv", "content": "content.tsv"},
    "cf": {"dim": 32},
    "train": {"learning_rate": 1e-3, "max_epochs": 20, "lambda": )" +
                     std::string(variant == "no_guiding" ? "0" : "5") + R"(},
    "vocab": {"init": ")" + std::string(variant == "random_init" ? "random" : "behavior") + R"("},
    "eval": {"cold_universe": "all"}})";
  auto cfg = parse_config(Json::parse(json), dir);
  Pipeline p(cfg, dir / variant);
  p.run_all();
  const auto m = key_values(dir / variant / "metrics.txt");
  VariantRun r;
  r.cold_recall = std::stod(m.at("cold.recall"));
  r.control_cold_recall = std::stod(m.at("control.cold.recall"));
  std::istringstream log(read_file(dir / variant / "train_log.txt"));
  std::string line, last;
  while (std::getline(log, line)) {
    if (!line.empty() && line[0] != '#') last = line;
  }
  std::istringstream fields(last);
  int epoch;
  double guiding;
  fields >> epoch >> r.final_distrib >> guiding >> r.final_total;
  return r;
}

struct SeedRuns {
  VariantRun full, random_init, no_guiding;
};

const std::vector<SeedRuns>& synthetic_runs() {
  static std::vector<SeedRuns> runs = [] {
    const auto root = scratch("synthetic");
    std::vector<SeedRuns> out;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      SeedRuns s;
      s.full = run_variant(root, seed, "full");
      s.random_init = run_variant(root, seed, "random_init");
      s.no_guiding = run_variant(root, seed, "no_guiding");
      out.push_back(s);
    }
    fs::remove_all(root);
    return out;
  }();
  return runs;
}

Outcome initialization_efficacy() {
  std::vector<double> cf, ri;
  std::string per;
  for (const auto& s : synthetic_runs()) {
    cf.push_back(s.full.cold_recall);
    ri.push_back(s.random_init.cold_recall);
    per += fmt(" %.3f", s.full.cold_recall) + fmt("/%.3f", s.random_init.cold_recall);
  }
  const double a = median(cf), b = median(ri);
  const double lift = b > 0 ? a / b - 1 : (a > 0 ? 1e9 : 0);
  return {lift >= 0.2, "median cold Recall@20 CF-init " + fmt("%.4f", a) + " vs RI " +
                           fmt("%.4f", b) + " (lift " + fmt("%+.1f%%", 100 * lift) +
                           ", need >= +20%); per seed CF/RI" + per};
}

Outcome guiding_efficacy() {
  int loss_ok = 0;
  bool recall_ok = true;
  std::string per;
  for (const auto& s : synthetic_runs()) {
    loss_ok += s.full.final_distrib <= s.no_guiding.final_distrib;
    recall_ok &= s.full.cold_recall >= 0.95 * s.no_guiding.cold_recall;
    per += fmt(" [L_D %.4f", s.full.final_distrib) + fmt(" vs %.4f", s.no_guiding.final_distrib) +
           fmt(", R %.3f", s.full.cold_recall) + fmt(" vs %.3f]", s.no_guiding.cold_recall);
  }
  return {loss_ok >= 4 && recall_ok,
          "lambda=5 final L_Distrib <= lambda=0 in " + std::to_string(loss_ok) +
              "/5 seeds (need 4), recall within 5% in every seed: " +
              (recall_ok ? "yes" : "no") + ";" + per};
}

Outcome end_to_end_lift() {
  int ok = 0;
  std::string per;
  for (const auto& s : synthetic_runs()) {
    ok += s.full.cold_recall >= 2 * s.full.control_cold_recall;
    per += fmt(" %.3f", s.full.cold_recall) + fmt("/%.3f", s.full.control_cold_recall);
  }
  return {ok == 5, "cold Recall@20 >= 2x random control in " + std::to_string(ok) +
                       "/5 seeds; per seed model/control" + per};
}

const BenchResult& efficiency_bench() {
  static BenchResult r = [] {
    SyntheticSpec s;
    s.title_words = 50;
    s.seed = 7;
    const auto corpus = make_synthetic_corpus(s);
    const auto& g = corpus.data.graph;
    std::vector<std::string> texts;
    for (ItemIndex i = 0; i < g.num_items(); ++i) texts.push_back(corpus.data.content.at(i));
    auto always = prompt_template_texts();
    for (auto& t : judge_template_texts()) always.push_back(t);
    const auto tok = Tokenizer::build(texts, 1, 50000, always);
    EncoderConfig ec;
    ec.vocab_size = tok.size();
    ec.dim = 64;
    ec.seed = 7;
    const auto model = EncoderModel::create(ec);
    const auto vocab = random_user_vocab(g.num_users(), 64, 0.1, 8);
    const auto head = JudgeHead::create(64, 9);
    std::mt19937_64 rng(10);
    std::vector<TokenSequence> dist;
    std::vector<std::vector<TokenSequence>> judge;
    for (ItemIndex i = 0; i < 2; ++i) {
      dist.push_back(build_prompt(tok, corpus.data.content.at(i)));
      std::vector<TokenSequence> ps;
      for (auto u : random_candidates(g.num_users(), 100, rng)) {
        ps.push_back(build_judge_prompt(tok, user_history(g, corpus.data.content, u),
                                        corpus.data.content.at(i)));
      }
      judge.push_back(std::move(ps));
    }
    BenchConfig bc;
    return bench(model, vocab, head, dist, judge, bc);
  }();
  return r;
}

Outcome efficiency_trend() {
  const auto& r = efficiency_bench();
  bool counters = r.distribution_forward_passes_per_item == 1.0;
  bool monotone = true;
  double at100 = 0;
  std::string per;
  for (std::size_t n = 0; n < r.judgement.size(); ++n) {
    const auto& j = r.judgement[n];
    counters &= j.forward_passes_per_item == static_cast<double>(j.k_cand);
    if (n > 0) monotone &= j.speedup > r.judgement[n - 1].speedup;
    if (j.k_cand == 100) at100 = j.speedup;
    per += " K=" + std::to_string(j.k_cand) + fmt(" %.1fx", j.speedup);
  }
  const bool lengths = std::abs(r.l1 - 70) <= 10 && std::abs(r.l2 - 270) <= 20;
  return {at100 >= 20 && monotone && counters && lengths,
          "L1 " + fmt("%.1f", r.l1) + " L2 " + fmt("%.1f", r.l2) + ", speedup" + per +
              ", monotone " + (monotone ? "yes" : "no") + ", passes/item 1 vs K_cand " +
              (counters ? "yes" : "no") + fmt(", distribution %.2f ms/item", 1e3 * r.distribution.mean)};
}

Outcome complexity_model() {
  const auto& r = efficiency_bench();
  bool ok = !r.judgement.empty();
  std::string per;
  for (const auto& j : r.judgement) {
    const double f = j.predicted / j.speedup;
    ok &= f <= 5.0 && f >= 0.2;
    per += " K=" + std::to_string(j.k_cand) + fmt(" predicted %.1f", j.predicted) +
           fmt(" measured %.1f", j.speedup);
  }
  return {ok, "within 5x at every K_cand:" + per};
}

Outcome metric_oracles() {
  std::size_t instances = 0, mismatches = 0;
  for (int n = 1; n <= 12; ++n) {
    std::vector<ItemIndex> ranked(n);
    std::iota(ranked.begin(), ranked.end(), 0);
    for (int mask = 1; mask < (1 << n); ++mask) {
      std::vector<ItemIndex> rel;
      for (int i = 0; i < n; ++i) {
        if (mask >> i & 1) rel.push_back(i);
      }
      for (std::size_t k = 1; k <= static_cast<std::size_t>(n); ++k) {
        ++instances;
        mismatches += recall_at_k(ranked, rel, k) != oracle::recall(ranked, rel, k);
        mismatches += std::abs(ndcg_at_k(ranked, rel, k) - oracle::ndcg(ranked, rel, k)) > 1e-12;
      }
    }
  }
  return {mismatches == 0, std::to_string(instances) + " (placement, K) instances, " +
                               std::to_string(mismatches) + " mismatches"};
}

Outcome determinism(const std::string& cli) {
  if (cli.empty()) return {false, "no --cli path given"};
  const auto dir = scratch("determinism");
  auto sh = [&](const std::string& args) {
    return std::system((cli + " " + args + " > /dev/null").c_str());
  };
  if (sh("synth --out " + (dir / "corpus").string() + " --seed 3") != 0) {
    return {false, "synth failed"};
  }
  const auto cfg = (dir / "corpus" / "config.json").string();
  if (sh("run-all -q --config " + cfg + " --out " + (dir / "a").string()) != 0 ||
      sh("run-all -q --config " + cfg + " --out " + (dir / "b").string()) != 0) {
    return {false, "run-all failed"};
  }
  const auto a = read_file(dir / "a" / "metrics.txt"), b = read_file(dir / "b" / "metrics.txt");
  const auto ta = read_file(dir / "a" / "metrics.tsv"), tb = read_file(dir / "b" / "metrics.tsv");
  fs::remove_all(dir);
  return {a == b && ta == tb && !a.empty(),
          "metrics.txt " + std::to_string(a.size()) + " bytes, identical: " +
              (a == b && ta == tb ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  std::set<int> only;
  for (int k = 1; k < argc; ++k) {
    const std::string a = argv[k];
    if (a == "--cli" && k + 1 < argc) cli = argv[++k];
    else if (a == "--only" && k + 1 < argc) {
      std::istringstream is(argv[++k]);
      std::string tok;
      while (std::getline(is, tok, ',')) only.insert(std::stoi(tok));
    } else {
      std::fprintf(stderr, "usage: acceptance [--cli PATH] [--only N[,N...]]\n");
      return 2;
    }
  }

  const std::vector<Criterion> criteria{
      {1, "loss equivalence", 5, loss_equivalence},
      {2, "gradient suite", 60, gradient_suite},
      {3, "normalization and top-K oracles", 30, normalization_topk},
      {4, "initialization efficacy", 900, initialization_efficacy},
      {5, "behavior-guiding efficacy", 900, guiding_efficacy},
      {6, "end-to-end lift over random control", 900, end_to_end_lift},
      {7, "efficiency trend", 600, efficiency_trend},
      {8, "complexity model", 600, complexity_model},
      {9, "metric oracles", 10, metric_oracles},
      {10, "determinism of run-all", 900, [&] { return determinism(cli); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_s;
    const bool pass = o.pass && in_budget;
    failed += !pass;
    std::printf("%s %2d %s (%.1fs, budget %.0fs%s): %s\n", pass ? "PASS" : "FAIL", c.id, c.name,
                secs, c.budget_s, in_budget ? "" : ", OVER BUDGET", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
