#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "t2d/bench.hpp"
#include "t2d/cf.hpp"
#include "t2d/coldstart.hpp"
#include "t2d/common.hpp"
#include "t2d/dataset.hpp"
#include "t2d/distribution.hpp"
#include "t2d/encoder.hpp"
#include "t2d/eval.hpp"
#include "t2d/judgement.hpp"

namespace t2d {

using Json = nlohmann::json;

enum class VocabInit { kBehavior, kRandom };

struct BenchStageConfig {
  std::size_t items = 4;
  std::size_t repetitions = 30;
  std::vector<std::size_t> k_cands{10, 50, 100};
  std::size_t judge_max_len = 272;
  std::size_t judge_item_max_len = 96;
  std::size_t head_fit_pairs = 64;
};

// Everything one pipeline run needs. Paths are resolved against the
// directory of the config file.
struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path interactions;
  std::filesystem::path content;

  SplitSpec split;
  std::size_t min_count = 2;
  std::size_t vocab_max = 50000;
  std::size_t prompt_max_len = 128;

  CFConfig cf;
  VocabInit vocab_init = VocabInit::kBehavior;
  double random_vocab_std = 0.1;
  EncoderConfig encoder;
  TrainConfig train;
  std::size_t top_k = 20;
  RefineMode refine_mode = RefineMode::kFullUpdate;
  EvalConfig eval;
  bool eval_control = true;
  BenchStageConfig bench;
  std::size_t workers = 1;

  Json to_json() const;
  std::uint64_t hash() const { return fnv1a(to_json().dump()); }

  // Stage seeds come from the global seed and a fixed label.
  std::uint64_t stage_seed(std::string_view label) const { return derive_seed(seed, label); }
};

namespace detail {

// Reads keys from one JSON object and rejects any it did not consume.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("config: " + where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("config: bad value for " + where(key) + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const char* key = nullptr) const {
    if (!key) return path_.empty() ? "top level" : path_;
    return path_.empty() ? std::string(key) : path_ + "." + key;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ValidationError("config: unknown key '" + where(it.key().c_str()) + "'");
      }
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline Json RunConfig::to_json() const {
  Json targets = Json::array();
  for (auto t : encoder.adapter_targets) targets.push_back(target_name(t));
  return Json{
      {"seed", seed},
      {"data", {{"interactions", interactions.generic_string()}, {"content", content.generic_string()}}},
      {"split",
       {{"cold_fraction", split.cold_fraction},
        {"warm_ratios", split.warm_ratios},
        {"cold_ratios", split.cold_ratios}}},
      {"tokenizer",
       {{"min_count", min_count}, {"max_size", vocab_max}, {"prompt_max_len", prompt_max_len}}},
      {"cf",
       {{"dim", cf.dim},
        {"propagation_layers", cf.propagation_layers},
        {"learning_rate", cf.learning_rate},
        {"epochs", cf.epochs},
        {"negatives_per_positive", cf.negatives_per_positive},
        {"batch_size", cf.batch_size},
        {"init_std", cf.init_std},
        {"objective", cf.objective == BprObjective::kItemOriented ? "item" : "user"}}},
      {"vocab",
       {{"init", vocab_init == VocabInit::kBehavior ? "behavior" : "random"},
        {"random_std", random_vocab_std}}},
      {"encoder",
       {{"layers", encoder.layers},
        {"heads", encoder.heads},
        {"ffn_dim", encoder.ffn_dim},
        {"max_len", encoder.max_len},
        {"adapter_rank", encoder.adapter_rank},
        {"adapter_alpha", encoder.adapter_alpha},
        {"adapter_targets", targets},
        {"base", encoder.base_trainable ? "trainable" : "frozen"},
        {"embedding_std", encoder.embedding_std},
        {"position_scale", encoder.position_scale}}},
      {"train",
       {{"lambda", train.lambda},
        {"negatives_per_item", train.negatives_per_item},
        {"learning_rate", train.learning_rate},
        {"weight_decay", train.weight_decay},
        {"batch_size", train.batch_size},
        {"max_epochs", train.max_epochs}}},
      {"infer", {{"top_k", top_k}}},
      {"refine", {{"mode", mode_name(refine_mode)}}},
      {"eval",
       {{"k", eval.k},
        {"cold_universe", eval.cold_universe == ColdUniverse::kColdItems ? "cold" : "all"},
        {"control", eval_control}}},
      {"bench",
       {{"items", bench.items},
        {"repetitions", bench.repetitions},
        {"k_cands", bench.k_cands},
        {"judge_max_len", bench.judge_max_len},
        {"judge_item_max_len", bench.judge_item_max_len},
        {"head_fit_pairs", bench.head_fit_pairs}}},
      {"workers", workers},
  };
}

// Missing keys keep their defaults; unknown keys are errors.
inline RunConfig parse_config(const Json& j, const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  c.encoder.dim = 0;  // tied to cf.dim below
  detail::ObjectReader top(j, "");
  top.get("seed", c.seed);
  top.get("workers", c.workers);

  if (const auto* d = top.child("data")) {
    detail::ObjectReader r(*d, "data");
    std::string a, b;
    r.get("interactions", a);
    r.get("content", b);
    r.finish();
    auto resolve = [&](const std::string& p) -> std::filesystem::path {
      if (p.empty()) return {};
      std::filesystem::path x(p);
      return x.is_absolute() || base_dir.empty() ? x : base_dir / x;
    };
    c.interactions = resolve(a);
    c.content = resolve(b);
  }
  if (const auto* s = top.child("split")) {
    detail::ObjectReader r(*s, "split");
    r.get("cold_fraction", c.split.cold_fraction);
    r.get("warm_ratios", c.split.warm_ratios);
    r.get("cold_ratios", c.split.cold_ratios);
    r.finish();
  }
  if (const auto* s = top.child("tokenizer")) {
    detail::ObjectReader r(*s, "tokenizer");
    r.get("min_count", c.min_count);
    r.get("max_size", c.vocab_max);
    r.get("prompt_max_len", c.prompt_max_len);
    r.finish();
  }
  if (const auto* s = top.child("cf")) {
    detail::ObjectReader r(*s, "cf");
    r.get("dim", c.cf.dim);
    r.get("propagation_layers", c.cf.propagation_layers);
    r.get("learning_rate", c.cf.learning_rate);
    r.get("epochs", c.cf.epochs);
    r.get("negatives_per_positive", c.cf.negatives_per_positive);
    r.get("batch_size", c.cf.batch_size);
    r.get("init_std", c.cf.init_std);
    std::string obj = "item";
    r.get("objective", obj);
    if (obj == "item") c.cf.objective = BprObjective::kItemOriented;
    else if (obj == "user") c.cf.objective = BprObjective::kUserOriented;
    else throw ValidationError("config: cf.objective must be 'item' or 'user'");
    r.finish();
  }
  if (const auto* s = top.child("vocab")) {
    detail::ObjectReader r(*s, "vocab");
    std::string init = "behavior";
    r.get("init", init);
    if (init == "behavior") c.vocab_init = VocabInit::kBehavior;
    else if (init == "random") c.vocab_init = VocabInit::kRandom;
    else throw ValidationError("config: vocab.init must be 'behavior' or 'random'");
    r.get("random_std", c.random_vocab_std);
    r.finish();
  }
  if (const auto* s = top.child("encoder")) {
    detail::ObjectReader r(*s, "encoder");
    r.get("layers", c.encoder.layers);
    r.get("heads", c.encoder.heads);
    r.get("ffn_dim", c.encoder.ffn_dim);
    r.get("max_len", c.encoder.max_len);
    r.get("adapter_rank", c.encoder.adapter_rank);
    r.get("adapter_alpha", c.encoder.adapter_alpha);
    r.get("embedding_std", c.encoder.embedding_std);
    r.get("position_scale", c.encoder.position_scale);
    std::vector<std::string> targets;
    if (r.child("adapter_targets")) {
      r.get("adapter_targets", targets);
      c.encoder.adapter_targets.clear();
      for (const auto& t : targets) c.encoder.adapter_targets.push_back(parse_target(t));
    }
    std::string base = "frozen";
    r.get("base", base);
    if (base != "frozen" && base != "trainable") {
      throw ValidationError("config: encoder.base must be 'frozen' or 'trainable'");
    }
    c.encoder.base_trainable = base == "trainable";
    r.finish();
  }
  if (const auto* s = top.child("train")) {
    detail::ObjectReader r(*s, "train");
    r.get("lambda", c.train.lambda);
    r.get("negatives_per_item", c.train.negatives_per_item);
    r.get("learning_rate", c.train.learning_rate);
    r.get("weight_decay", c.train.weight_decay);
    r.get("batch_size", c.train.batch_size);
    r.get("max_epochs", c.train.max_epochs);
    r.finish();
  }
  if (const auto* s = top.child("infer")) {
    detail::ObjectReader r(*s, "infer");
    r.get("top_k", c.top_k);
    r.finish();
  }
  if (const auto* s = top.child("refine")) {
    detail::ObjectReader r(*s, "refine");
    std::string mode = "full-update";
    r.get("mode", mode);
    c.refine_mode = parse_refine_mode(mode);
    r.finish();
  }
  if (const auto* s = top.child("eval")) {
    detail::ObjectReader r(*s, "eval");
    r.get("k", c.eval.k);
    std::string u = "cold";
    r.get("cold_universe", u);
    if (u == "cold") c.eval.cold_universe = ColdUniverse::kColdItems;
    else if (u == "all") c.eval.cold_universe = ColdUniverse::kAllItems;
    else throw ValidationError("config: eval.cold_universe must be 'cold' or 'all'");
    r.get("control", c.eval_control);
    r.finish();
  }
  if (const auto* s = top.child("bench")) {
    detail::ObjectReader r(*s, "bench");
    r.get("items", c.bench.items);
    r.get("repetitions", c.bench.repetitions);
    r.get("k_cands", c.bench.k_cands);
    r.get("judge_max_len", c.bench.judge_max_len);
    r.get("judge_item_max_len", c.bench.judge_item_max_len);
    r.get("head_fit_pairs", c.bench.head_fit_pairs);
    r.finish();
  }
  top.finish();

  c.encoder.dim = c.cf.dim;
  c.split.validate();
  c.cf.validate();
  c.train.validate();
  if (c.top_k == 0) throw ValidationError("config: infer.top_k must be positive");
  if (c.eval.k == 0) throw ValidationError("config: eval.k must be positive");
  if (c.prompt_max_len == 0) throw ValidationError("config: tokenizer.prompt_max_len must be positive");
  if (c.prompt_max_len > c.encoder.max_len) {
    throw ValidationError("config: tokenizer.prompt_max_len exceeds encoder.max_len");
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  const auto text = read_file(path);
  Json j;
  try {
    j = Json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

}  // namespace t2d
