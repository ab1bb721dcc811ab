#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "t2d/common.hpp"
#include "t2d/dataset.hpp"

namespace t2d {

// Topic-structured toy corpus. Users and items belong to one of
// topics x subtopics communities; titles mix community words, topic words and
// shared filler, and interaction odds fall off with community distance.
struct SyntheticSpec {
  std::size_t users = 200;
  std::size_t items = 125;
  std::size_t topics = 2;
  std::size_t subtopics = 4;
  std::size_t words_per_community = 10;
  std::size_t words_per_topic = 10;
  std::size_t filler_words = 30;
  std::size_t title_words = 10;
  double p_same_subtopic = 0.5;
  double p_same_topic = 0.05;
  double p_other = 0.01;
  std::uint64_t seed = 1;
};

struct SyntheticCorpus {
  LoadedData data;
  std::vector<std::size_t> user_community;
  std::vector<std::size_t> item_community;
  std::size_t subtopics = 1;

  std::size_t user_topic(UserIndex u) const { return user_community[u] / subtopics; }
  std::size_t item_topic(ItemIndex i) const { return item_community[i] / subtopics; }
};

namespace detail {

// Pronounceable pseudo-words, distinct for distinct n.
inline std::string pseudo_word(std::size_t n) {
  static const char* kOnset[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
  static const char* kVowel[] = {"a", "e", "i", "o", "u"};
  std::string w;
  std::size_t x = n + 14 * 5;  // at least two syllables
  do {
    w += kOnset[x % 14];
    x /= 14;
    w += kVowel[x % 5];
    x /= 5;
  } while (x > 0);
  return w;
}

}  // namespace detail

inline SyntheticCorpus make_synthetic_corpus(const SyntheticSpec& s) {
  if (s.users == 0 || s.items == 0 || s.topics == 0 || s.subtopics == 0) {
    throw ContractViolation("synthetic corpus needs users, items and communities");
  }
  const std::size_t communities = s.topics * s.subtopics;
  std::mt19937_64 rng(s.seed);
  std::size_t next_word = 0;
  auto words = [&](std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t k = 0; k < n; ++k) out.push_back(detail::pseudo_word(next_word++));
    return out;
  };
  std::vector<std::vector<std::string>> community_words, topic_words;
  for (std::size_t c = 0; c < communities; ++c) community_words.push_back(words(s.words_per_community));
  for (std::size_t t = 0; t < s.topics; ++t) topic_words.push_back(words(s.words_per_topic));
  const auto filler = words(s.filler_words);

  SyntheticCorpus out;
  out.subtopics = s.subtopics;
  std::vector<std::string> user_ids, item_ids;
  for (std::size_t u = 0; u < s.users; ++u) {
    user_ids.push_back("u" + std::to_string(u));
    out.user_community.push_back(u % communities);
  }
  std::vector<std::optional<std::string>> texts;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < s.items; ++i) {
    item_ids.push_back("i" + std::to_string(i));
    const std::size_t c = i % communities;
    out.item_community.push_back(c);
    std::string title;
    for (std::size_t k = 0; k < s.title_words; ++k) {
      const double r = unit(rng);
      const auto& pool = r < 0.5 ? community_words[c]
                                 : (r < 0.75 ? topic_words[c / s.subtopics] : filler);
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      if (!title.empty()) title += ' ';
      title += pool[pick(rng)];
    }
    texts.emplace_back(std::move(title));
  }

  std::vector<Interaction> pairs;
  for (std::size_t i = 0; i < s.items; ++i) {
    for (std::size_t u = 0; u < s.users; ++u) {
      const auto cu = out.user_community[u], ci = out.item_community[i];
      const double p = cu == ci ? s.p_same_subtopic
                                : (cu / s.subtopics == ci / s.subtopics ? s.p_same_topic : s.p_other);
      if (unit(rng) < p) pairs.push_back({static_cast<UserIndex>(u), static_cast<ItemIndex>(i)});
    }
  }
  out.data.graph = InteractionGraph(std::move(user_ids), std::move(item_ids), pairs);
  out.data.content.text = std::move(texts);
  return out;
}

// Writes the interaction and content TSV files the loader reads.
inline void write_corpus(const LoadedData& d, const std::filesystem::path& interactions,
                         const std::filesystem::path& content) {
  std::string a, b;
  for (const auto& x : d.graph.interactions()) {
    a += d.graph.user_id(x.user) + '\t' + d.graph.item_id(x.item) + '\n';
  }
  for (ItemIndex i = 0; i < d.graph.num_items(); ++i) {
    b += d.graph.item_id(i) + '\t' +
         detail::escape_field(d.content.has(i) ? d.content.at(i) : std::string()) + '\n';
  }
  atomic_write(interactions, a);
  atomic_write(content, b);
}

}  // namespace t2d
