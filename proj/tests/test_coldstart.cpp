#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "t2d/t2d.hpp"

namespace {

using namespace t2d;

std::vector<UserIndex> sort_oracle(const Vector& p, std::size_t k) {
  std::vector<UserIndex> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](UserIndex a, UserIndex b) { return p(a) > p(b); });
  idx.resize(k);
  return idx;
}

TEST(TopK, ExhaustionAndTieRule) {
  const UserDistribution uniform{Vector::Constant(6, 1.0 / 6)};
  EXPECT_EQ(top_k_users(uniform, 3), (std::vector<UserIndex>{0, 1, 2}));
  const UserDistribution d{(Vector(4) << 0.1, 0.4, 0.2, 0.3).finished()};
  EXPECT_EQ(top_k_users(d, 4), (std::vector<UserIndex>{1, 3, 2, 0}));
  EXPECT_THROW(top_k_users(d, 0), ContractViolation);
  EXPECT_THROW(top_k_users(d, 5), ContractViolation);
}

TEST(TopK, MatchesFullSortAndIsPrefixMonotone) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> coarse(0, 50);  // force ties
  for (int trial = 0; trial < 50; ++trial) {
    Vector p(1000);
    for (int u = 0; u < 1000; ++u) p(u) = coarse(rng);
    p /= p.sum();
    const UserDistribution d{p};
    EXPECT_EQ(top_k_users(d, 20), sort_oracle(p, 20));
    const auto a = top_k_users(d, 7), b = top_k_users(d, 8);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
}

struct Fixture {
  SyntheticCorpus corpus;
  InteractionGraph g;
  Tokenizer tok;
  EncoderModel enc;
  UserVocabulary vocab;
};

Fixture fixture(std::size_t cold) {
  Fixture f;
  SyntheticSpec s;
  s.users = 40;
  s.items = 20;
  s.seed = 9;
  f.corpus = make_synthetic_corpus(s);
  const auto& full = f.corpus.data.graph;
  std::vector<bool> flags(full.num_items(), false);
  for (std::size_t k = 0; k < cold; ++k) flags[k * 3] = true;
  std::vector<Interaction> warm;
  for (const auto& x : full.interactions()) {
    if (!flags[x.item]) warm.push_back(x);
  }
  f.g = InteractionGraph(full.user_ids(), full.item_ids(), warm, flags);
  std::vector<std::string> texts;
  for (ItemIndex i = 0; i < full.num_items(); ++i) texts.push_back(f.corpus.data.content.at(i));
  f.tok = Tokenizer::build(texts, 1, 50000, prompt_template_texts());
  EncoderConfig c;
  c.vocab_size = f.tok.size();
  c.dim = 8;
  c.adapter_rank = 2;
  c.seed = 3;
  f.enc = EncoderModel::create(c);
  f.vocab = random_user_vocab(40, 8, 1.0, 5);
  return f;
}

TEST(Generate, CountsAndForwardPasses) {
  auto f = fixture(5);
  const auto before = f.enc.forward_passes();
  const auto a = generate_interactions(f.g, f.g.cold_items(), f.corpus.data.content, f.enc, f.tok,
                                       f.vocab, 20);
  EXPECT_EQ(a.pairs.size(), 100u);
  EXPECT_EQ(f.enc.forward_passes() - before, 5u);
  const auto none = generate_interactions(f.g, {}, f.corpus.data.content, f.enc, f.tok, f.vocab, 20);
  EXPECT_TRUE(none.pairs.empty());
  EXPECT_THROW(generate_interactions(f.g, {1}, f.corpus.data.content, f.enc, f.tok, f.vocab, 20),
               ContractViolation);
}

TEST(Generate, OrderInvariantAndGreedyOptimal) {
  auto f = fixture(4);
  auto items = f.g.cold_items();
  const auto a = generate_interactions(f.g, items, f.corpus.data.content, f.enc, f.tok, f.vocab, 6);
  std::reverse(items.begin(), items.end());
  const auto b = generate_interactions(f.g, items, f.corpus.data.content, f.enc, f.tok, f.vocab, 6,
                                       128, 3);
  EXPECT_EQ(export_augmented(f.g, a), export_augmented(f.g, b));
  for (auto i : f.g.cold_items()) {
    const auto dist = predict_distribution(
        encode(f.enc, build_prompt(f.tok, f.corpus.data.content.at(i))), f.vocab);
    std::set<UserIndex> chosen;
    double min_chosen = 1;
    for (const auto& p : a.pairs) {
      if (p.item != i) continue;
      chosen.insert(p.user);
      min_chosen = std::min(min_chosen, p.prob);
    }
    ASSERT_EQ(chosen.size(), 6u);
    for (UserIndex u = 0; u < 40; ++u) {
      if (!chosen.count(u)) EXPECT_GE(min_chosen, dist.probs(u));
    }
  }
}

TEST(Generate, KIsClampedToUserCount) {
  auto f = fixture(1);
  const auto a = generate_interactions(f.g, f.g.cold_items(), f.corpus.data.content, f.enc, f.tok,
                                       f.vocab, 500);
  EXPECT_EQ(a.pairs.size(), 40u);
}

CFConfig small_cf(std::uint64_t seed) {
  CFConfig c;
  c.dim = 8;
  c.epochs = 20;
  c.seed = seed;
  return c;
}

TEST(Refine, ColdOnlyKeepsWarmSide) {
  auto f = fixture(4);
  const auto cf = small_cf(1);
  const auto warm = train_cf(f.g, cf).embeddings;
  const auto aug = generate_interactions(f.g, f.g.cold_items(), f.corpus.data.content, f.enc,
                                         f.tok, f.vocab, 10);
  const auto r = refine_embeddings(f.g, aug, warm, cf, RefineMode::kColdOnly);
  const auto served = propagate(warm, BipartiteView::warm(f.g), cf.propagation_layers);
  EXPECT_EQ(r.embeddings.user, served.user);
  EXPECT_EQ(r.embeddings.warm_item, served.item);
  EXPECT_EQ(r.raw.user, warm.user);
  EXPECT_EQ(Matrix(r.raw.item.topRows(f.g.num_warm())), warm.item);
  const auto full = refine_embeddings(f.g, aug, warm, cf, RefineMode::kFullUpdate);
  EXPECT_NE(full.embeddings.user, served.user);
}

TEST(Refine, EmptyAugmentationReducesToRetraining) {
  auto f = fixture(3);
  const auto cf = small_cf(2);
  const auto warm = train_cf(f.g, cf).embeddings;
  const AugmentedInteractions empty;
  const auto a = refine_embeddings(f.g, empty, warm, cf, RefineMode::kFullUpdate);
  const auto b = refine_embeddings(f.g, empty, warm, cf, RefineMode::kFullUpdate);
  EXPECT_EQ(a.embeddings.user, b.embeddings.user);
  EXPECT_FALSE(a.diagnostics.warnings.empty());
  // The warm part is exactly continued training on H from the checkpoint.
  BehaviorEmbeddings init = warm;
  const auto view = BipartiteView::augmented(f.g, {});
  init.item.conservativeResize(f.g.num_items(), cf.dim);
  init.item.bottomRows(f.g.num_cold()) = a.raw.item.bottomRows(f.g.num_cold());
  const auto direct = fit_bpr(init, view, cf).embeddings;
  EXPECT_EQ(Matrix(direct.item.topRows(f.g.num_warm())), Matrix(a.raw.item.topRows(f.g.num_warm())));
  EXPECT_EQ(direct.user, a.raw.user);
}

TEST(Refine, ColdRowFollowsSharedWarmNeighbour) {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    // 30 users in 3 groups; warm items belong to one group each. The cold
    // item's synthetic users are exactly the interactors of warm item 0.
    std::vector<std::string> us, is;
    for (int u = 0; u < 30; ++u) us.push_back("u" + std::to_string(u));
    for (int i = 0; i < 13; ++i) is.push_back("i" + std::to_string(i));
    std::vector<Interaction> xs;
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.7);
    for (ItemIndex i = 0; i < 12; ++i) {
      for (UserIndex u = 0; u < 30; ++u) {
        if (u / 10 == i % 3 && coin(rng)) xs.push_back({u, i});
      }
    }
    std::vector<bool> cold(13, false);
    cold[12] = true;
    InteractionGraph g(us, is, xs, cold);
    const ItemIndex w = 0;
    AugmentedInteractions aug;
    for (auto u : g.item_users(w)) aug.pairs.push_back({u, 12, 0, 0.1});
    auto cf = small_cf(seed);
    cf.dim = 16;
    cf.epochs = 100;
    const auto warm = train_cf(g, cf).embeddings;
    const auto r = refine_embeddings(g, aug, warm, cf, RefineMode::kFullUpdate);
    const RowVector c = r.embeddings.cold_item.row(0);
    auto cosine = [&](ItemIndex i) {
      const RowVector x = r.embeddings.warm_item.row(g.warm_index(i));
      return c.dot(x) / (c.norm() * x.norm());
    };
    double best_other = -1;
    for (ItemIndex i = 0; i < 12; ++i) {
      if (i % 3 != 0) best_other = std::max(best_other, cosine(i));
    }
    wins += cosine(w) > best_other;
  }
  EXPECT_GE(wins, 9);
}

TEST(Recommend, DispatchAndOracle) {
  InteractionGraph g({"a", "b"}, {"x", "y"}, {{0, 0}}, {false, true});
  std::mt19937_64 rng(3);
  RecEmbeddings e;
  e.user = oracle::random_matrix(2, 4, rng);
  e.warm_item = oracle::random_matrix(1, 4, rng);
  e.cold_item = oracle::random_matrix(1, 4, rng);
  double s = 0;
  for (int j = 0; j < 4; ++j) s += e.user(1, j) * e.cold_item(0, j);
  EXPECT_NEAR(recommend(e, g, 1, 1), s, 1e-15);
  EXPECT_NEAR(recommend(e, g, 0, 0), e.user.row(0).dot(e.warm_item.row(0)), 1e-15);
  e.user.row(0).setZero();
  EXPECT_EQ(recommend(e, g, 0, 0), 0.0);
  EXPECT_EQ(recommend(e, g, 0, 1), 0.0);
  EXPECT_THROW(recommend(e, g, 5, 0), ContractViolation);
}

}  // namespace
