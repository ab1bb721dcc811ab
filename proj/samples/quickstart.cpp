// Library walk-through on a small synthetic corpus: behavior embeddings,
// encoder training, cold-item user distributions, refinement, evaluation.
#include <cstdio>

#include "t2d/t2d.hpp"

int main() {
  using namespace t2d;
  SyntheticSpec spec;
  spec.seed = 3;
  const auto corpus = make_synthetic_corpus(spec);

  SplitSpec split_spec;
  split_spec.seed = 3;
  const auto split = make_splits(corpus.data.graph, split_spec);
  const auto& g = split.train;
  std::printf("%zu users, %zu warm items, %zu cold items\n", g.num_users(), g.num_warm(),
              g.num_cold());

  CFConfig cf;
  cf.dim = 32;
  cf.seed = 3;
  const auto view = BipartiteView::warm(g);
  const auto behavior = train_cf(view, cf);
  const auto prop = propagate(behavior.embeddings, view, cf.propagation_layers);

  std::vector<std::string> texts;
  for (auto i : g.warm_items()) texts.push_back(corpus.data.content.at(i));
  const auto tok = Tokenizer::build(texts, 2, 50000, prompt_template_texts());
  EncoderConfig ec;
  ec.vocab_size = tok.size();
  ec.dim = cf.dim;
  ec.seed = 3;
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.seed = 3;
  const auto trained = train(g, corpus.data.content, prop.item, init_user_vocab(prop, ec.dim),
                             EncoderModel::create(ec), tok, tc);
  std::printf("encoder: best epoch %d, loss %.4f\n", trained.best_epoch, trained.best_loss);

  const auto cold = g.cold_items();
  const auto h = encode(trained.encoder, build_prompt(tok, corpus.data.content.at(cold[0])));
  const auto top = top_k_users(predict_distribution(h, trained.vocab), 5);
  std::printf("item %s: top users", g.item_id(cold[0]).c_str());
  for (auto u : top) std::printf(" %s", g.user_id(u).c_str());
  std::printf("\n");

  const auto aug = generate_interactions(g, cold, corpus.data.content, trained.encoder, tok,
                                         trained.vocab, 20);
  const auto refined = refine_embeddings(g, aug, behavior.embeddings, cf, RefineMode::kFullUpdate);
  EvalConfig eval;
  eval.cold_universe = ColdUniverse::kAllItems;
  const auto report = evaluate(refined.embeddings.user, refined.embeddings.item_matrix(g), g,
                               split.warm_test, split.cold_test, eval);
  std::printf("%s", report.to_table().c_str());
}
