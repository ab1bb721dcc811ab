#include <algorithm>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "t2d/t2d.hpp"

namespace {

struct Options {
  std::string config;
  std::string out = "t2d_out";
  std::vector<std::string> stages;
  bool force = false;
  std::int64_t seed = -1;
  bool quiet = false;
};

void print_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()));
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) {
      line += r[c];
      if (c + 1 < r.size()) line += std::string(width[c] - r[c].size() + 2, ' ');
    }
    std::cout << line << "\n";
  }
}

std::vector<std::vector<std::string>> tsv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, '\t')) f.push_back(cell);
    rows.push_back(std::move(f));
  }
  return rows;
}

t2d::RunConfig load(const Options& o) {
  if (o.config.empty()) throw t2d::ValidationError("--config is required");
  auto cfg = t2d::load_config(o.config);
  if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
  return cfg;
}

int run_stages(const Options& o, std::vector<std::string> stages) {
  const auto cfg = load(o);
  t2d::DirectoryLock lock(o.out);
  t2d::Pipeline p(cfg, o.out, o.force, o.quiet ? nullptr : &std::cerr);
  std::vector<std::vector<std::string>> rows{{"stage", "status", "notes"}};
  for (const auto& s : stages) {
    const auto r = p.run_stage(s);
    std::string notes;
    for (const auto& m : r.messages) {
      if (m.rfind("stage '", 0) == 0) continue;
      if (!notes.empty()) notes += "; ";
      notes += m;
    }
    rows.push_back({s, r.skipped ? "skipped" : "done", notes});
  }
  std::cout << "config_hash " << t2d::hex64(p.config_hash()) << "  out " << o.out << "\n";
  print_table(rows);
  const auto& last = stages.back();
  if (last == "eval" && std::filesystem::exists(p.out() / "metrics.tsv")) {
    std::cout << "\n";
    print_table(tsv_rows(t2d::read_file(p.out() / "metrics.tsv")));
  } else if (last == "bench" && std::filesystem::exists(p.out() / "bench.tsv")) {
    std::cout << "\n";
    print_table(tsv_rows(t2d::read_file(p.out() / "bench.tsv")));
  }
  return 0;
}

std::vector<std::string> ordered_stages(const std::vector<std::string>& requested) {
  const auto& all = t2d::stage_names();
  if (requested.empty()) return {all.begin(), all.end() - 1};  // everything but bench
  for (const auto& s : requested) {
    if (std::find(all.begin(), all.end(), s) == all.end()) {
      throw t2d::ValidationError("unknown stage '" + s + "'");
    }
  }
  std::vector<std::string> out;
  for (const auto& s : all) {
    if (std::find(requested.begin(), requested.end(), s) != requested.end()) out.push_back(s);
  }
  return out;
}

int synth(const std::string& dir, std::uint64_t seed, std::size_t users, std::size_t items) {
  t2d::SyntheticSpec spec;
  spec.seed = seed;
  spec.users = users;
  spec.items = items;
  const auto corpus = t2d::make_synthetic_corpus(spec);
  const std::filesystem::path d(dir);
  std::filesystem::create_directories(d);
  t2d::write_corpus(corpus.data, d / "interactions.tsv", d / "content.tsv");
  t2d::atomic_write(d / "config.json", R"({
  // Desk-scale settings for the synthetic corpus.
  "seed": )" + std::to_string(seed) + R"(,
  "data": {"interactions": "interactions.tsv", "content": "content.tsv"},
  "split": {"cold_fraction": 0.2},
  "cf": {"dim": 32},
  "encoder": {"max_len": 512},
  "train": {"learning_rate": 1e-3, "max_epochs": 20},
  "eval": {"cold_universe": "all"},
  "bench": {"items": 2}
}
)");
  std::cout << "wrote " << corpus.data.graph.num_users() << " users, "
            << corpus.data.graph.num_items() << " items, "
            << corpus.data.graph.num_interactions() << " interactions to " << d << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"t2d: cold-start item recommendation from item text"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "configuration file (JSON with comments)");
    c->add_option("--out", o.out, "artifact directory")->capture_default_str();
    c->add_flag("--force", o.force, "overwrite artifacts produced by a different config");
    c->add_option("--seed", o.seed, "override the global seed");
    c->add_flag("-q,--quiet", o.quiet, "no progress messages");
  };

  struct Single {
    const char* command;
    const char* stage;
    const char* help;
  };
  const std::vector<Single> singles{
      {"ingest", "ingest", "load data, split warm/cold, write the graph summary"},
      {"init-cf", "cf", "train behavior embeddings on warm interactions"},
      {"train", "train", "train the text-to-distribution encoder"},
      {"infer", "infer", "generate top-K synthetic users for each cold item"},
      {"refine", "refine", "retrain embeddings on observed plus synthetic interactions"},
      {"evaluate", "eval", "full-ranking Recall/NDCG on warm, cold and overall splits"},
      {"bench", "bench", "time distribution vs judgement inference"},
  };
  std::vector<std::pair<CLI::App*, std::string>> stage_cmds;
  for (const auto& s : singles) {
    auto* c = app.add_subcommand(s.command, s.help);
    add_common(c);
    stage_cmds.emplace_back(c, s.stage);
  }

  auto* all = app.add_subcommand("run-all", "run the pipeline stages in order");
  add_common(all);
  all->add_option("--stage", o.stages, "stages to run (default: all but bench)");

  std::string artifact;
  auto* desc = app.add_subcommand("describe", "summarize a checkpoint or report");
  desc->add_option("artifact", artifact, "artifact path")->required();

  std::string synth_dir = "synthetic";
  std::uint64_t synth_seed = 1;
  std::size_t synth_users = 200, synth_items = 125;
  auto* syn = app.add_subcommand("synth", "write a synthetic two-topic corpus and config");
  syn->add_option("--out", synth_dir, "output directory")->capture_default_str();
  syn->add_option("--seed", synth_seed, "corpus seed")->capture_default_str();
  syn->add_option("--users", synth_users, "user count")->capture_default_str();
  syn->add_option("--items", synth_items, "item count")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [cmd, stage] : stage_cmds) {
      if (*cmd) return run_stages(o, {stage});
    }
    if (*all) return run_stages(o, ordered_stages(o.stages));
    if (*desc) {
      std::cout << t2d::describe(artifact);
      return 0;
    }
    if (*syn) return synth(synth_dir, synth_seed, synth_users, synth_items);
  } catch (const t2d::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
