#pragma once

#include <array>
#include <cmath>
#include <compare>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "t2d/common.hpp"

namespace t2d {

struct Interaction {
  UserIndex user = 0;
  ItemIndex item = 0;
  friend auto operator<=>(const Interaction&, const Interaction&) = default;
};

// Users, items, the observed interaction set and the warm/cold partition.
// Ids are dense; the original string ids are kept for export.
//
// Interactions keep first-occurrence order (that order stands in for recency
// when a user's history is rendered as text). item_users() is sorted so
// membership tests are logarithmic.
class InteractionGraph {
 public:
  InteractionGraph() = default;

  // Builds a graph in which every item is warm.
  InteractionGraph(std::vector<std::string> user_ids, std::vector<std::string> item_ids,
                   const std::vector<Interaction>& interactions)
      : InteractionGraph(std::move(user_ids), std::move(item_ids), interactions,
                         std::vector<bool>{}) {}

  // cold_flags is indexed by item; an empty vector means "all warm". Cold
  // items must not appear in `interactions`.
  InteractionGraph(std::vector<std::string> user_ids, std::vector<std::string> item_ids,
                   const std::vector<Interaction>& interactions,
                   std::vector<bool> cold_flags)
      : user_ids_(std::move(user_ids)), item_ids_(std::move(item_ids)) {
    const auto nu = user_ids_.size();
    const auto ni = item_ids_.size();
    if (cold_flags.empty()) cold_flags.assign(ni, false);
    if (cold_flags.size() != ni) throw ValidationError("cold flag vector has wrong size");
    cold_ = std::move(cold_flags);

    item_users_.assign(ni, {});
    user_items_.assign(nu, {});
    for (const auto& x : interactions) {
      if (x.user >= nu || x.item >= ni) {
        throw ValidationError("interaction references an unknown user or item");
      }
      if (cold_[x.item]) {
        throw ValidationError("cold item " + item_ids_[x.item] + " has a training interaction");
      }
      auto& users = item_users_[x.item];
      auto pos = std::lower_bound(users.begin(), users.end(), x.user);
      if (pos != users.end() && *pos == x.user) continue;  // duplicate
      users.insert(pos, x.user);
      user_items_[x.user].push_back(x.item);
      interactions_.push_back(x);
    }

    local_index_.assign(ni, 0);
    for (ItemIndex i = 0; i < ni; ++i) {
      if (cold_[i]) {
        local_index_[i] = static_cast<std::uint32_t>(cold_items_.size());
        cold_items_.push_back(i);
      } else {
        local_index_[i] = static_cast<std::uint32_t>(warm_items_.size());
        warm_items_.push_back(i);
      }
    }
  }

  std::size_t num_users() const { return user_ids_.size(); }
  std::size_t num_items() const { return item_ids_.size(); }
  std::size_t num_interactions() const { return interactions_.size(); }
  std::size_t num_warm() const { return warm_items_.size(); }
  std::size_t num_cold() const { return cold_items_.size(); }

  const std::vector<Interaction>& interactions() const { return interactions_; }
  const std::vector<UserIndex>& item_users(ItemIndex i) const { return item_users_.at(i); }
  const std::vector<ItemIndex>& user_items(UserIndex u) const { return user_items_.at(u); }
  const std::vector<ItemIndex>& warm_items() const { return warm_items_; }
  const std::vector<ItemIndex>& cold_items() const { return cold_items_; }

  bool contains(UserIndex u, ItemIndex i) const {
    const auto& users = item_users_.at(i);
    return std::binary_search(users.begin(), users.end(), u);
  }
  bool is_cold(ItemIndex i) const { return cold_.at(i); }
  const std::vector<bool>& cold_flags() const { return cold_; }

  // Row of item `i` in the warm (resp. cold) embedding matrix.
  std::uint32_t warm_index(ItemIndex i) const {
    if (is_cold(i)) throw ContractViolation("item " + item_ids_[i] + " is cold");
    return local_index_[i];
  }
  std::uint32_t cold_index(ItemIndex i) const {
    if (!is_cold(i)) throw ContractViolation("item " + item_ids_[i] + " is warm");
    return local_index_[i];
  }

  const std::string& user_id(UserIndex u) const { return user_ids_.at(u); }
  const std::string& item_id(ItemIndex i) const { return item_ids_.at(i); }
  const std::vector<std::string>& user_ids() const { return user_ids_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }

 private:
  std::vector<std::string> user_ids_;
  std::vector<std::string> item_ids_;
  std::vector<Interaction> interactions_;
  std::vector<std::vector<UserIndex>> item_users_;
  std::vector<std::vector<ItemIndex>> user_items_;
  std::vector<bool> cold_;
  std::vector<ItemIndex> warm_items_;
  std::vector<ItemIndex> cold_items_;
  std::vector<std::uint32_t> local_index_;
};

// Text feature of each item. An entry may be present but empty; those items
// are listed by empty_items().
struct ItemContent {
  std::vector<std::optional<std::string>> text;

  bool has(ItemIndex i) const { return i < text.size() && text[i].has_value(); }
  const std::string& at(ItemIndex i) const {
    if (!has(i)) throw ValidationError("no content for item index " + std::to_string(i));
    return *text[i];
  }
  std::vector<ItemIndex> empty_items() const {
    std::vector<ItemIndex> out;
    for (ItemIndex i = 0; i < text.size(); ++i) {
      if (text[i] && text[i]->empty()) out.push_back(i);
    }
    return out;
  }
};

struct LoadedData {
  InteractionGraph graph;
  ItemContent content;
  Diagnostics diagnostics;
};

namespace detail {

inline std::string unescape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] == '\\' && k + 1 < s.size()) {
      const char n = s[k + 1];
      if (n == 't') { out += '\t'; ++k; continue; }
      if (n == 'n') { out += '\n'; ++k; continue; }
      if (n == '\\') { out += '\\'; ++k; continue; }
    }
    out += s[k];
  }
  return out;
}

inline std::string escape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '\t') out += "\\t";
    else if (c == '\n') out += "\\n";
    else if (c == '\\') out += "\\\\";
    else out += c;
  }
  return out;
}

// Splits "a<TAB>b" at the first tab. Returns false if there is no tab.
inline bool split_tab(std::string_view line, std::string_view& a, std::string_view& b) {
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos) return false;
  a = line.substr(0, tab);
  b = line.substr(tab + 1);
  return true;
}

inline void chomp(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace detail

// Parses the two TSV inputs. Items are indexed in content-file order, users in
// order of first appearance in the interaction file.
inline LoadedData load_graph_from_streams(std::istream& interactions_in,
                                          const std::string& interactions_name,
                                          std::istream& content_in,
                                          const std::string& content_name) {
  LoadedData data;
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, ItemIndex> item_index;
  std::vector<std::optional<std::string>> texts;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(content_in, line)) {
    ++lineno;
    detail::chomp(line);
    if (line.empty()) continue;
    std::string_view id, text;
    if (!detail::split_tab(line, id, text)) {
      throw ParseError(content_name, lineno, "expected item_id<TAB>text");
    }
    if (id.empty()) throw ParseError(content_name, lineno, "empty item id");
    std::string key(id);
    auto [it, inserted] = item_index.emplace(key, static_cast<ItemIndex>(item_ids.size()));
    if (inserted) {
      item_ids.push_back(key);
      texts.emplace_back(detail::unescape_field(text));
    } else {
      data.diagnostics.warn("duplicate content for item " + key + " at line " +
                            std::to_string(lineno) + "; later entry kept");
      texts[it->second] = detail::unescape_field(text);
    }
  }

  std::vector<std::string> user_ids;
  std::unordered_map<std::string, UserIndex> user_index;
  std::vector<Interaction> pairs;
  lineno = 0;
  while (std::getline(interactions_in, line)) {
    ++lineno;
    detail::chomp(line);
    if (line.empty()) continue;
    std::string_view u, i;
    if (!detail::split_tab(line, u, i) || i.find('\t') != std::string_view::npos) {
      throw ParseError(interactions_name, lineno, "expected user_id<TAB>item_id");
    }
    if (u.empty() || i.empty()) throw ParseError(interactions_name, lineno, "empty id");
    auto item_it = item_index.find(std::string(i));
    if (item_it == item_index.end()) {
      throw ValidationError("item " + std::string(i) + " (" + interactions_name + ":" +
                            std::to_string(lineno) + ") has interactions but no content");
    }
    auto [uit, inserted] =
        user_index.emplace(std::string(u), static_cast<UserIndex>(user_ids.size()));
    if (inserted) user_ids.emplace_back(u);
    pairs.push_back({uit->second, item_it->second});
  }

  data.graph = InteractionGraph(std::move(user_ids), std::move(item_ids), pairs);
  data.content.text = std::move(texts);
  for (auto i : data.content.empty_items()) {
    data.diagnostics.warn("item " + data.graph.item_id(i) + " has empty content");
  }
  return data;
}

inline LoadedData load_graph(const std::filesystem::path& interaction_file,
                             const std::filesystem::path& content_file) {
  std::ifstream inter(interaction_file);
  if (!inter) throw Error("cannot open " + interaction_file.string());
  std::ifstream content(content_file);
  if (!content) throw Error("cannot open " + content_file.string());
  return load_graph_from_streams(inter, interaction_file.string(), content,
                                 content_file.string());
}

struct SplitSpec {
  double cold_fraction = 0.20;
  std::array<double, 3> warm_ratios{0.8, 0.1, 0.1};  // train, val, test
  std::array<double, 2> cold_ratios{0.5, 0.5};       // val, test
  std::uint64_t seed = 0;

  void validate() const {
    if (!(cold_fraction > 0.0 && cold_fraction < 1.0)) {
      throw ContractViolation("cold_fraction must lie in (0,1)");
    }
    auto check = [](auto const& r, const char* name) {
      double s = 0;
      for (double x : r) {
        if (x < 0) throw ContractViolation(std::string(name) + " has a negative ratio");
        s += x;
      }
      if (std::abs(s - 1.0) > 1e-9) throw ContractViolation(std::string(name) + " must sum to 1");
    };
    check(warm_ratios, "warm_ratios");
    check(cold_ratios, "cold_ratios");
  }
};

struct SplitReport {
  std::uint64_t seed = 0;
  std::size_t users = 0, items = 0, warm_items = 0, cold_items = 0;
  std::size_t warm_train = 0, warm_val = 0, warm_test = 0, cold_val = 0, cold_test = 0;
  std::vector<std::string> downgrades;

  std::string to_text() const {
    std::ostringstream os;
    os << "seed=" << seed << "\n"
       << "users=" << users << "\n"
       << "items=" << items << "\n"
       << "warm_items=" << warm_items << "\n"
       << "cold_items=" << cold_items << "\n"
       << "warm_train=" << warm_train << "\n"
       << "warm_val=" << warm_val << "\n"
       << "warm_test=" << warm_test << "\n"
       << "cold_val=" << cold_val << "\n"
       << "cold_test=" << cold_test << "\n"
       << "downgrades=" << downgrades.size() << "\n";
    for (const auto& d : downgrades) os << "downgrade=" << d << "\n";
    return os.str();
  }
};

struct SplitResult {
  // Same users and items as the input; cold items flagged; interactions are
  // the warm training portion only.
  InteractionGraph train;
  std::vector<Interaction> warm_val, warm_test, cold_val, cold_test;
  SplitReport report;
};

// Cold items are chosen uniformly at random. Each item's interactions are then
// split on their own: warm items by warm_ratios (at least one training
// interaction is kept), cold items by cold_ratios. Pure function of its inputs.
inline SplitResult make_splits(const InteractionGraph& graph, const SplitSpec& spec) {
  spec.validate();
  const std::size_t ni = graph.num_items();
  std::mt19937_64 rng(spec.seed);

  std::vector<ItemIndex> order(ni);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_cold = static_cast<std::size_t>(
      std::min<long long>(static_cast<long long>(ni), std::llround(spec.cold_fraction * ni)));
  std::vector<bool> cold(ni, false);
  for (std::size_t k = 0; k < n_cold; ++k) cold[order[k]] = true;

  // Per original interaction: 0 train, 1 warm val, 2 warm test, 3 cold val, 4 cold test.
  const auto& all = graph.interactions();
  std::vector<std::vector<std::size_t>> by_item(ni);
  for (std::size_t k = 0; k < all.size(); ++k) by_item[all[k].item].push_back(k);
  std::vector<int> where(all.size(), 0);

  SplitResult out;
  out.report.seed = spec.seed;
  for (ItemIndex i = 0; i < ni; ++i) {
    auto idx = by_item[i];
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n = idx.size();
    const auto& name = graph.item_id(i);
    if (n == 0) {
      out.report.downgrades.push_back((cold[i] ? "cold" : "warm") + std::string(" item ") +
                                      name + " has no interactions");
      continue;
    }
    if (cold[i]) {
      const auto n_val = static_cast<std::size_t>(std::floor(n * spec.cold_ratios[0]));
      if (n_val == 0 || n_val == n) {
        out.report.downgrades.push_back("cold item " + name + " has " + std::to_string(n) +
                                        " interaction(s); not split across val/test");
      }
      for (std::size_t k = 0; k < n; ++k) where[idx[k]] = k < n_val ? 3 : 4;
    } else {
      auto n_test = static_cast<std::size_t>(std::llround(n * spec.warm_ratios[2]));
      auto n_val = static_cast<std::size_t>(std::llround(n * spec.warm_ratios[1]));
      if (n_test + n_val >= n) {
        // Keep one training interaction; shrink val first, then test.
        while (n_test + n_val >= n && n_val > 0) --n_val;
        while (n_test + n_val >= n && n_test > 0) --n_test;
      }
      if (n < 3) {
        out.report.downgrades.push_back("warm item " + name + " has " + std::to_string(n) +
                                        " interaction(s); kept in train only");
      }
      for (std::size_t k = 0; k < n; ++k) {
        where[idx[k]] = k < n_test ? 2 : (k < n_test + n_val ? 1 : 0);
      }
    }
  }

  std::vector<Interaction> train;
  for (std::size_t k = 0; k < all.size(); ++k) {
    switch (where[k]) {
      case 0: train.push_back(all[k]); break;
      case 1: out.warm_val.push_back(all[k]); break;
      case 2: out.warm_test.push_back(all[k]); break;
      case 3: out.cold_val.push_back(all[k]); break;
      default: out.cold_test.push_back(all[k]); break;
    }
  }
  out.train = InteractionGraph(graph.user_ids(), graph.item_ids(), train, cold);

  auto& r = out.report;
  r.users = graph.num_users();
  r.items = ni;
  r.warm_items = ni - n_cold;
  r.cold_items = n_cold;
  r.warm_train = train.size();
  r.warm_val = out.warm_val.size();
  r.warm_test = out.warm_test.size();
  r.cold_val = out.cold_val.size();
  r.cold_test = out.cold_test.size();
  return out;
}

}  // namespace t2d
