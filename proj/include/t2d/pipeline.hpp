#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "t2d/bench.hpp"
#include "t2d/cf.hpp"
#include "t2d/checkpoint.hpp"
#include "t2d/coldstart.hpp"
#include "t2d/config.hpp"
#include "t2d/dataset.hpp"
#include "t2d/distribution.hpp"
#include "t2d/encoder.hpp"
#include "t2d/eval.hpp"
#include "t2d/judgement.hpp"

namespace t2d {

namespace fs = std::filesystem;

// Stage order. Each stage reads its inputs from the artifact directory, so
// any suffix of the pipeline can be re-run on its own.
inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> kStages{"ingest", "cf",     "train", "infer",
                                                "refine", "eval", "bench"};
  return kStages;
}

// Advisory lock on an artifact directory, held for the lifetime of the object.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST) {
        throw Error("artifact directory " + dir.string() + " is locked by another run (" +
                    path_.string() + ")");
      }
      throw Error("cannot create lock " + path_.string() + ": " + std::strerror(errno));
    }
    const auto pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

inline std::string artifact_header(const std::string& stage, std::uint64_t config_hash) {
  return "# stage=" + stage + " config_hash=" + hex64(config_hash) + "\n";
}

// Ingested data as later stages see it.
struct IngestedData {
  InteractionGraph train;  // warm training interactions, cold flags set
  ItemContent content;
  std::vector<Interaction> warm_val, warm_test, cold_val, cold_test;
};

struct StageOutcome {
  std::string stage;
  bool skipped = false;
  std::vector<std::string> messages;
};

class Pipeline {
 public:
  Pipeline(RunConfig cfg, fs::path out, bool force = false, std::ostream* log = nullptr)
      : cfg_(std::move(cfg)), out_(std::move(out)), force_(force), log_(log) {
    hash_ = cfg_.hash();
  }

  std::uint64_t config_hash() const { return hash_; }
  const fs::path& out() const { return out_; }
  const RunConfig& config() const { return cfg_; }

  StageOutcome run_stage(const std::string& stage) {
    StageOutcome o;
    o.stage = stage;
    const auto manifest = out_ / (stage + ".done");
    const auto inputs = input_fingerprint(stage);
    if (fs::exists(manifest)) {
      const auto kv = read_manifest(manifest);
      if (kv.at("config_hash") != hex64(hash_) && !force_) {
        throw Error("stage '" + stage + "' was produced with config " + kv.at("config_hash") +
                    " but the current config is " + hex64(hash_) + "; pass --force to overwrite");
      }
      if (!force_ && kv.at("config_hash") == hex64(hash_) && kv.at("inputs") == hex64(inputs)) {
        o.skipped = true;
        o.messages.push_back("stage '" + stage + "' is up to date");
        say(o.messages.back());
        return o;
      }
    }
    say("running stage '" + stage + "'");
    if (stage == "ingest") ingest(o);
    else if (stage == "cf") stage_cf(o);
    else if (stage == "train") stage_train(o);
    else if (stage == "infer") stage_infer(o);
    else if (stage == "refine") stage_refine(o);
    else if (stage == "eval") stage_eval(o);
    else if (stage == "bench") stage_bench(o);
    else throw ValidationError("unknown stage '" + stage + "'");
    atomic_write(manifest, "stage=" + stage + "\nconfig_hash=" + hex64(hash_) +
                               "\ninputs=" + hex64(inputs) + "\n");
    return o;
  }

  // Everything except bench, in order.
  std::vector<StageOutcome> run_all(bool with_bench = false) {
    std::vector<StageOutcome> out;
    for (const auto& s : stage_names()) {
      if (s == "bench" && !with_bench) continue;
      out.push_back(run_stage(s));
    }
    return out;
  }

  // ---------------------------------------------------------------------
  // Artifact readers

  IngestedData load_ingested() const {
    require("ingest", {"items.tsv", "users.txt", "splits.tsv"});
    IngestedData d;
    std::vector<std::string> item_ids, user_ids;
    std::vector<bool> cold;
    std::unordered_map<std::string, ItemIndex> item_index;
    std::unordered_map<std::string, UserIndex> user_index;
    for (const auto& line : data_lines(out_ / "items.tsv")) {
      const auto f = split_fields(line, 3, "items.tsv");
      item_index.emplace(f[0], static_cast<ItemIndex>(item_ids.size()));
      item_ids.push_back(f[0]);
      cold.push_back(f[1] == "cold");
      d.content.text.emplace_back(detail::unescape_field(f[2]));
    }
    for (const auto& line : data_lines(out_ / "users.txt")) {
      user_index.emplace(line, static_cast<UserIndex>(user_ids.size()));
      user_ids.push_back(line);
    }
    std::vector<Interaction> train;
    for (const auto& line : data_lines(out_ / "splits.tsv")) {
      const auto f = split_fields(line, 3, "splits.tsv");
      const Interaction x{user_index.at(f[0]), item_index.at(f[1])};
      if (f[2] == "train") train.push_back(x);
      else if (f[2] == "warm_val") d.warm_val.push_back(x);
      else if (f[2] == "warm_test") d.warm_test.push_back(x);
      else if (f[2] == "cold_val") d.cold_val.push_back(x);
      else if (f[2] == "cold_test") d.cold_test.push_back(x);
      else throw IntegrityError("splits.tsv: unknown split '" + f[2] + "'");
    }
    d.train = InteractionGraph(std::move(user_ids), std::move(item_ids), train, std::move(cold));
    return d;
  }

  struct CfArtifacts {
    BehaviorEmbeddings raw, propagated;
  };

  CfArtifacts load_cf() const {
    require("cf", {"cf.ckpt"});
    const auto env = read_envelope(out_ / "cf.ckpt");
    expect_kind(env, ArtifactKind::kBehavior, "cf.ckpt");
    return {{env.section("user_raw").matrix(), env.section("item_raw").matrix()},
            {env.section("user").matrix(), env.section("item").matrix()}};
  }

  LoadedEncoder load_encoder() const {
    require("train", {"encoder.ckpt"});
    return encoder_from_envelope(read_envelope(out_ / "encoder.ckpt"));
  }

  UserVocabulary load_vocab() const {
    require("train", {"vocab.ckpt"});
    const auto env = read_envelope(out_ / "vocab.ckpt");
    expect_kind(env, ArtifactKind::kVocabulary, "vocab.ckpt");
    return {env.section("z").matrix()};
  }

  AugmentedInteractions load_augmented(const InteractionGraph& g) const {
    require("infer", {"augmented.tsv"});
    std::unordered_map<std::string, UserIndex> users;
    std::unordered_map<std::string, ItemIndex> items;
    for (UserIndex u = 0; u < g.num_users(); ++u) users.emplace(g.user_id(u), u);
    for (ItemIndex i = 0; i < g.num_items(); ++i) items.emplace(g.item_id(i), i);
    AugmentedInteractions a;
    for (const auto& line : data_lines(out_ / "augmented.tsv")) {
      const auto f = split_fields(line, 4, "augmented.tsv");
      a.pairs.push_back({users.at(detail::unescape_field(f[0])), items.at(detail::unescape_field(f[1])),
                         static_cast<std::uint32_t>(std::stoul(f[2])), std::stod(f[3])});
    }
    return a;
  }

  RecEmbeddings load_rec() const {
    require("refine", {"rec_embeddings.ckpt"});
    const auto env = read_envelope(out_ / "rec_embeddings.ckpt");
    expect_kind(env, ArtifactKind::kRecEmbeddings, "rec_embeddings.ckpt");
    RecEmbeddings r;
    r.user = env.section("user").matrix();
    r.warm_item = env.section("warm_item").matrix();
    r.cold_item = env.section("cold_item").matrix();
    r.mode = parse_refine_mode(env.section("mode").bytes);
    return r;
  }

 private:
  // ---------------------------------------------------------------------
  // Stages

  void ingest(StageOutcome& o) {
    if (cfg_.interactions.empty() || cfg_.content.empty()) {
      throw ValidationError("config: data.interactions and data.content are required for ingest");
    }
    auto loaded = load_graph(cfg_.interactions, cfg_.content);
    auto spec = cfg_.split;
    spec.seed = cfg_.stage_seed("split");
    const auto split = make_splits(loaded.graph, spec);
    const auto& g = split.train;

    std::string items, users, splits;
    for (ItemIndex i = 0; i < g.num_items(); ++i) {
      items += g.item_id(i) + '\t' + (g.is_cold(i) ? "cold" : "warm") + '\t' +
               detail::escape_field(loaded.content.has(i) ? loaded.content.at(i) : "") + '\n';
    }
    for (UserIndex u = 0; u < g.num_users(); ++u) users += g.user_id(u) + '\n';
    auto emit = [&](const std::vector<Interaction>& xs, const char* name) {
      for (const auto& x : xs) splits += g.user_id(x.user) + '\t' + g.item_id(x.item) + '\t' + name + '\n';
    };
    emit(g.interactions(), "train");
    emit(split.warm_val, "warm_val");
    emit(split.warm_test, "warm_test");
    emit(split.cold_val, "cold_val");
    emit(split.cold_test, "cold_test");

    const auto header = artifact_header("ingest", hash_);
    atomic_write(out_ / "items.tsv", header + items);
    atomic_write(out_ / "users.txt", header + users);
    atomic_write(out_ / "splits.tsv", header + splits);
    atomic_write(out_ / "split_report.txt", header + split.report.to_text());
    std::ostringstream summary;
    summary << "users=" << loaded.graph.num_users() << "\nitems=" << loaded.graph.num_items()
            << "\ninteractions=" << loaded.graph.num_interactions()
            << "\nwarm_items=" << g.num_warm() << "\ncold_items=" << g.num_cold()
            << "\nempty_content_items=" << loaded.content.empty_items().size()
            << "\nwarnings=" << loaded.diagnostics.warnings.size() << "\n";
    for (const auto& w : loaded.diagnostics.warnings) summary << "warning=" << w << "\n";
    atomic_write(out_ / "graph_summary.txt", header + summary.str());
    for (const auto& w : loaded.diagnostics.warnings) note(o, "warning: " + w);
    for (const auto& d : split.report.downgrades) note(o, "split: " + d);
  }

  void stage_cf(StageOutcome& o) {
    const auto data = load_ingested();
    auto cf = cfg_.cf;
    cf.seed = cfg_.stage_seed("cf");
    const auto view = BipartiteView::warm(data.train);
    const auto res = train_cf(view, cf);
    const auto prop = propagate(res.embeddings, view, cf.propagation_layers);

    Envelope env = envelope(ArtifactKind::kBehavior, "cf", cf.seed);
    env.users = static_cast<std::uint32_t>(data.train.num_users());
    env.items = static_cast<std::uint32_t>(data.train.num_warm());
    env.dim = static_cast<std::uint32_t>(cf.dim);
    env.add_matrix("user_raw", res.embeddings.user);
    env.add_matrix("item_raw", res.embeddings.item);
    env.add_matrix("user", prop.user);
    env.add_matrix("item", prop.item);
    write_envelope(out_ / "cf.ckpt", env);

    std::ostringstream log;
    log.precision(9);
    log << "probe_loss_start=" << res.probe_loss_start << "\nprobe_loss_end=" << res.probe_loss_end
        << "\n";
    for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
      log << "epoch=" << e + 1 << " loss=" << res.epoch_loss[e] << "\n";
    }
    atomic_write(out_ / "cf_log.txt", artifact_header("cf", hash_) + log.str());
    note(o, "probe loss " + std::to_string(res.probe_loss_start) + " -> " +
                std::to_string(res.probe_loss_end));
  }

  void stage_train(StageOutcome& o) {
    const auto data = load_ingested();
    const auto cf = load_cf();
    const auto& g = data.train;

    std::vector<std::string> corpus;
    for (auto i : g.warm_items()) {
      if (data.content.has(i)) corpus.push_back(data.content.at(i));
    }
    auto always = prompt_template_texts();
    for (auto& t : judge_template_texts()) always.push_back(t);
    const auto tok = Tokenizer::build(corpus, cfg_.min_count, cfg_.vocab_max, always);

    auto ec = cfg_.encoder;
    ec.vocab_size = tok.size();
    ec.seed = cfg_.stage_seed("encoder");
    auto encoder = EncoderModel::create(ec);

    const auto vocab = cfg_.vocab_init == VocabInit::kBehavior
                           ? init_user_vocab(cf.propagated, ec.dim)
                           : random_user_vocab(g.num_users(), ec.dim, cfg_.random_vocab_std,
                                               cfg_.stage_seed("vocab-random"));
    auto tc = cfg_.train;
    tc.seed = cfg_.stage_seed("train");
    tc.prompt_max_len = cfg_.prompt_max_len;
    tc.workers = cfg_.workers;
    auto res = train(g, data.content, cf.propagated.item, vocab, std::move(encoder), tok, tc);

    auto enc_env = encoder_envelope(res.encoder, tok);
    stamp(enc_env, "train");
    enc_env.users = static_cast<std::uint32_t>(g.num_users());
    enc_env.items = static_cast<std::uint32_t>(g.num_items());
    write_envelope(out_ / "encoder.ckpt", enc_env);

    Envelope voc = envelope(ArtifactKind::kVocabulary, "train", tc.seed);
    voc.users = static_cast<std::uint32_t>(g.num_users());
    voc.dim = static_cast<std::uint32_t>(ec.dim);
    voc.add_matrix("z", res.vocab.z);
    write_envelope(out_ / "vocab.ckpt", voc);

    std::ostringstream extra;
    extra << "# best_epoch=" << res.best_epoch << " forward_passes=" << res.forward_passes << "\n";
    atomic_write(out_ / "train_log.txt",
                 artifact_header("train", hash_) + extra.str() + format_train_log(res.log));
    for (const auto& w : res.diagnostics.warnings) note(o, "warning: " + w);
    note(o, "best epoch " + std::to_string(res.best_epoch));
  }

  void stage_infer(StageOutcome& o) {
    const auto data = load_ingested();
    const auto enc = load_encoder();
    const auto vocab = load_vocab();
    const auto& g = data.train;
    const auto aug = generate_interactions(g, g.cold_items(), data.content, enc.model, enc.tokenizer,
                                           vocab, cfg_.top_k, cfg_.prompt_max_len, cfg_.workers);
    atomic_write(out_ / "augmented.tsv", artifact_header("infer", hash_) + export_augmented(g, aug));
    for (const auto& w : aug.diagnostics.warnings) note(o, "warning: " + w);
    note(o, std::to_string(aug.pairs.size()) + " synthetic interactions for " +
                std::to_string(g.num_cold()) + " cold items");
  }

  void stage_refine(StageOutcome& o) {
    const auto data = load_ingested();
    const auto cf = load_cf();
    const auto& g = data.train;
    const auto aug = load_augmented(g);
    auto cc = cfg_.cf;
    cc.seed = cfg_.stage_seed("refine");
    const auto res = refine_embeddings(g, aug, cf.raw, cc, cfg_.refine_mode);

    Envelope env = envelope(ArtifactKind::kRecEmbeddings, "refine", cc.seed);
    env.users = static_cast<std::uint32_t>(g.num_users());
    env.items = static_cast<std::uint32_t>(g.num_items());
    env.dim = static_cast<std::uint32_t>(cc.dim);
    env.add_bytes("mode", mode_name(cfg_.refine_mode));
    env.add_matrix("user", res.embeddings.user);
    env.add_matrix("warm_item", res.embeddings.warm_item);
    env.add_matrix("cold_item", res.embeddings.cold_item);
    write_envelope(out_ / "rec_embeddings.ckpt", env);
    for (const auto& w : res.diagnostics.warnings) note(o, "warning: " + w);
  }

  void stage_eval(StageOutcome& o) {
    const auto data = load_ingested();
    const auto rec = load_rec();
    const auto& g = data.train;
    auto ec = cfg_.eval;
    ec.workers = cfg_.workers;
    const auto report = evaluate(rec.user, rec.item_matrix(g), g, data.warm_test, data.cold_test, ec);

    std::string text = report.to_text();
    std::string table = report.to_table();
    if (cfg_.eval_control) {
      const auto control = random_control(rec, cfg_.stage_seed("control"));
      const auto cr = evaluate(control.user, control.item_matrix(g), g, data.warm_test,
                               data.cold_test, ec);
      std::istringstream is(cr.to_text());
      std::string line;
      while (std::getline(is, line)) text += "control." + line + "\n";
      std::ostringstream t;
      t.precision(10);
      t << "control_cold\t" << cr.cold.recall << '\t' << cr.cold.ndcg << '\t'
        << cr.cold.users_evaluated << '\t' << cr.cold.users_skipped << '\t'
        << cr.cold.candidate_items << '\n';
      table += t.str();
      note(o, "cold recall@" + std::to_string(ec.k) + " " + std::to_string(report.cold.recall) +
                  " (random control " + std::to_string(cr.cold.recall) + ")");
    }
    const auto header = artifact_header("eval", hash_);
    atomic_write(out_ / "metrics.txt", header + text);
    atomic_write(out_ / "metrics.tsv", header + table);
  }

  void stage_bench(StageOutcome& o) {
    const auto data = load_ingested();
    const auto enc = load_encoder();
    const auto vocab = load_vocab();
    const auto& g = data.train;
    const auto& bc = cfg_.bench;
    std::size_t max_k = 0;
    for (auto k : bc.k_cands) max_k = std::max(max_k, k);
    if (max_k > g.num_users()) throw ValidationError("bench.k_cands exceeds the user count");

    std::vector<ItemIndex> items;
    for (auto i : g.cold_items()) {
      if (items.size() < bc.items) items.push_back(i);
    }
    for (auto i : g.warm_items()) {
      if (items.size() < bc.items) items.push_back(i);
    }
    JudgePromptConfig pc{bc.judge_max_len, bc.judge_item_max_len};
    std::mt19937_64 rng(cfg_.stage_seed("bench"));
    std::vector<TokenSequence> dist;
    std::vector<std::vector<TokenSequence>> judge;
    for (auto i : items) {
      dist.push_back(build_prompt(enc.tokenizer, data.content.at(i), cfg_.prompt_max_len));
      std::vector<TokenSequence> ps;
      for (auto u : random_candidates(g.num_users(), max_k, rng)) {
        ps.push_back(build_judge_prompt(enc.tokenizer, user_history(g, data.content, u),
                                        data.content.at(i), pc));
      }
      judge.push_back(std::move(ps));
    }
    const auto head = fit_head(g, data.content, enc, pc, rng);
    BenchConfig cfg;
    cfg.repetitions = bc.repetitions;
    cfg.k_cands = bc.k_cands;
    cfg.top_k = cfg_.top_k;
    const auto r = bench(enc.model, vocab, head, dist, judge, cfg);
    const auto header = artifact_header("bench", hash_);
    atomic_write(out_ / "bench.txt", header + r.to_text());
    atomic_write(out_ / "bench.tsv", header + r.to_table());
    for (const auto& j : r.judgement) {
      note(o, "K_cand=" + std::to_string(j.k_cand) + " speedup " + std::to_string(j.speedup) +
                  " (predicted " + std::to_string(j.predicted) + ")");
    }
  }

  // ---------------------------------------------------------------------

  JudgeHead fit_head(const InteractionGraph& g, const ItemContent& content, const LoadedEncoder& enc,
                     const JudgePromptConfig& pc, std::mt19937_64& rng) const {
    auto head = JudgeHead::create(enc.model.config.dim, cfg_.stage_seed("judge-head"));
    std::vector<Vector> states;
    std::vector<bool> labels;
    const auto& xs = g.interactions();
    if (xs.empty()) return head;
    std::uniform_int_distribution<std::size_t> pick(0, xs.size() - 1);
    std::uniform_int_distribution<UserIndex> any_user(0, static_cast<UserIndex>(g.num_users() - 1));
    for (std::size_t n = 0; n < cfg_.bench.head_fit_pairs; ++n) {
      const auto x = xs[pick(rng)];
      UserIndex u = x.user;
      bool label = true;
      if (n % 2 == 1) {
        u = any_user(rng);
        label = g.contains(u, x.item);
      }
      states.push_back(encode(enc.model, build_judge_prompt(enc.tokenizer, user_history(g, content, u),
                                                            content.at(x.item), pc)));
      labels.push_back(label);
    }
    fit_judge_head(head, states, labels, 200, 0.5);
    return head;
  }

  static RecEmbeddings random_control(const RecEmbeddings& rec, std::uint64_t seed) {
    // Random cold rows rescaled to the mean warm-row norm, so the control
    // competes with warm items on equal footing.
    RecEmbeddings c = rec;
    std::mt19937_64 rng(seed);
    c.cold_item = random_normal(rec.cold_item.rows(), rec.cold_item.cols(), 1.0, rng);
    const double target = rec.warm_item.rows() ? rec.warm_item.rowwise().norm().mean() : 1.0;
    for (Eigen::Index r = 0; r < c.cold_item.rows(); ++r) {
      const double n = c.cold_item.row(r).norm();
      if (n > 0) c.cold_item.row(r) *= target / n;
    }
    return c;
  }

  Envelope envelope(ArtifactKind kind, const std::string& stage, std::uint64_t seed) const {
    Envelope env;
    env.kind = kind;
    env.seed = seed;
    env.config_hash = hash_;
    env.stage = stage;
    return env;
  }

  void stamp(Envelope& env, const std::string& stage) const {
    env.config_hash = hash_;
    env.stage = stage;
  }

  static void expect_kind(const Envelope& env, ArtifactKind kind, const std::string& name) {
    if (env.kind != kind) {
      throw IntegrityError(name + " holds " + kind_name(env.kind) + ", expected " + kind_name(kind));
    }
  }

  void require(const std::string& stage, const std::vector<std::string>& files) const {
    for (const auto& f : files) {
      if (!fs::exists(out_ / f)) {
        throw Error("missing " + (out_ / f).string() + "; run stage '" + stage + "' first");
      }
    }
  }

  // Fingerprint of everything a stage reads: raw inputs for ingest, upstream
  // artifacts otherwise.
  std::uint64_t input_fingerprint(const std::string& stage) const {
    static const std::map<std::string, std::vector<std::string>> kReads{
        {"cf", {"splits.tsv", "users.txt", "items.tsv"}},
        {"train", {"splits.tsv", "users.txt", "items.tsv", "cf.ckpt"}},
        {"infer", {"splits.tsv", "users.txt", "items.tsv", "encoder.ckpt", "vocab.ckpt"}},
        {"refine", {"splits.tsv", "users.txt", "items.tsv", "cf.ckpt", "augmented.tsv"}},
        {"eval", {"splits.tsv", "users.txt", "items.tsv", "rec_embeddings.ckpt"}},
        {"bench", {"splits.tsv", "users.txt", "items.tsv", "encoder.ckpt", "vocab.ckpt"}},
    };
    std::uint64_t h = fnv1a(stage);
    auto mix = [&](const fs::path& p) {
      if (fs::exists(p)) h = fnv1a(read_file(p), h);
      else h = fnv1a("<missing>", h);
    };
    if (stage == "ingest") {
      if (!cfg_.interactions.empty()) mix(cfg_.interactions);
      if (!cfg_.content.empty()) mix(cfg_.content);
    } else if (auto it = kReads.find(stage); it != kReads.end()) {
      for (const auto& f : it->second) mix(out_ / f);
    }
    return h;
  }

  static std::map<std::string, std::string> read_manifest(const fs::path& p) {
    std::map<std::string, std::string> kv{{"config_hash", ""}, {"inputs", ""}};
    std::istringstream is(read_file(p));
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
  }

  static std::vector<std::string> data_lines(const fs::path& p) {
    std::vector<std::string> out;
    std::istringstream is(read_file(p));
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      out.push_back(line);
    }
    return out;
  }

  static std::vector<std::string> split_fields(const std::string& line, std::size_t n,
                                               const std::string& name) {
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t k = 0; k + 1 < n; ++k) {
      const auto tab = line.find('\t', start);
      if (tab == std::string::npos) throw IntegrityError(name + ": malformed line '" + line + "'");
      f.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    f.push_back(line.substr(start));
    return f;
  }

  void note(StageOutcome& o, std::string msg) {
    say(msg);
    o.messages.push_back(std::move(msg));
  }
  void say(const std::string& msg) const {
    if (log_) *log_ << msg << "\n";
  }

  RunConfig cfg_;
  fs::path out_;
  bool force_ = false;
  std::ostream* log_ = nullptr;
  std::uint64_t hash_ = 0;
};

// Human-readable summary of a checkpoint or text artifact.
inline std::string describe(const fs::path& path) {
  const auto data = read_file(path);
  std::ostringstream os;
  if (data.size() >= Envelope::kMagic.size() &&
      std::string_view(data).substr(0, Envelope::kMagic.size()) == Envelope::kMagic) {
    const auto env = parse_envelope(data);
    os << kind_name(env.kind);
    switch (env.kind) {
      case ArtifactKind::kBehavior:
        os << " |U|=" << env.users << " |I_w|=" << env.items << " d=" << env.dim;
        break;
      case ArtifactKind::kVocabulary:
        os << " |U|=" << env.users << " d=" << env.dim;
        break;
      default:
        os << " users=" << env.users << " items=" << env.items << " d=" << env.dim;
    }
    os << "\nformat_version=" << Envelope::kVersion << "\nstage=" << env.stage
       << "\nseed=" << env.seed << "\nconfig_hash=" << hex64(env.config_hash) << "\nsections:\n";
    for (const auto& s : env.sections) {
      os << "  " << s.name << " ";
      if (s.type == Section::kFloat32) os << "float32 " << s.rows << "x" << s.cols << "\n";
      else os << "bytes " << s.rows << "\n";
    }
    return os.str();
  }
  if (data.rfind("# stage=", 0) == 0) {
    const auto eol = data.find('\n');
    const std::size_t lines = static_cast<std::size_t>(std::count(data.begin(), data.end(), '\n'));
    os << "text artifact: " << data.substr(2, eol == std::string::npos ? std::string::npos : eol - 2)
       << "\nlines=" << lines << "\n";
    return os.str();
  }
  throw IntegrityError(path.string() + ": unrecognized magic; not a t2d artifact");
}

}  // namespace t2d
