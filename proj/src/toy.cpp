#include "relens/toy.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "relens/error.hpp"

namespace relens {

namespace {

const std::vector<std::string> kColors = {"red", "blue", "green", "pink", "gray", "gold", "teal", "brown"};
const std::vector<std::string> kCities = {"oslo", "lima", "rome", "kyiv", "baku",
                                          "doha", "riga", "bern", "nice", "pune"};
const std::vector<std::string> kObjects = {"ball", "hat", "car", "cup", "box", "door"};

template <typename T>
const T& pick(const std::vector<T>& xs, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, xs.size() - 1);
  return xs[d(rng)];
}

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

std::vector<std::string> make_names(std::size_t count, std::mt19937_64& rng) {
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  std::vector<std::string> syllables;
  for (char c : consonants) {
    for (char v : vowels) syllables.push_back(std::string{c, v});
  }
  std::set<std::string> seen;
  std::vector<std::string> names;
  while (names.size() < count) {
    std::string name = pick(syllables, rng) + pick(syllables, rng);
    if (seen.insert(name).second) names.push_back(name);
  }
  return names;
}

std::vector<std::string> make_junk_words(std::size_t count, std::mt19937_64& rng) {
  static const std::string letters = "qxjwyhc";
  std::set<std::string> seen;
  std::vector<std::string> words;
  std::uniform_int_distribution<int> length(4, 6);
  std::uniform_int_distribution<std::size_t> letter(0, letters.size() - 1);
  while (words.size() < count) {
    std::string w;
    for (int i = length(rng); i > 0; --i) w.push_back(letters[letter(rng)]);
    if (seen.insert(w).second) words.push_back(w);
  }
  return words;
}

// Splits a line into words, each word after the first carrying its leading space.
std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < line.size()) {
    std::size_t j = i + 1;
    while (j < line.size() && line[j] != ' ') ++j;
    words.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return words;
}

}  // namespace

Vocabulary train_bpe(std::string_view corpus, std::size_t merges, std::string_view alphabet) {
  std::map<std::vector<std::string>, std::size_t> words;
  std::istringstream in{std::string(corpus)};
  for (std::string line; std::getline(in, line);) {
    for (const std::string& w : split_words(line)) {
      std::vector<std::string> symbols;
      for (char c : w) symbols.emplace_back(1, c);
      words[symbols]++;
    }
  }

  std::vector<std::string> surfaces;
  std::set<std::string> have;
  std::set<char> sorted_alphabet(alphabet.begin(), alphabet.end());
  for (char c : sorted_alphabet) {
    surfaces.emplace_back(1, c);
    have.insert(surfaces.back());
  }

  for (std::size_t m = 0; m < merges; ++m) {
    std::map<std::pair<std::string, std::string>, std::size_t> pairs;
    for (const auto& [symbols, freq] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) pairs[{symbols[i], symbols[i + 1]}] += freq;
    }
    if (pairs.empty()) break;
    // Most frequent pair; std::map order breaks ties deterministically.
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const auto [left, right] = best->first;
    const std::string merged = left + right;
    std::map<std::vector<std::string>, std::size_t> next;
    for (const auto& [symbols, freq] : words) {
      std::vector<std::string> out;
      for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
          out.push_back(merged);
          ++i;
        } else {
          out.push_back(symbols[i]);
        }
      }
      next[out] += freq;
    }
    words = std::move(next);
    if (have.insert(merged).second) surfaces.push_back(merged);
  }
  return Vocabulary::from_surfaces(surfaces);
}

std::string to_convention(std::string_view canonical, MarkerConvention convention) {
  std::string out;
  for (char ch : canonical) {
    const auto b = static_cast<unsigned char>(ch);
    switch (convention) {
      case MarkerConvention::plain:
        out.push_back(ch);
        break;
      case MarkerConvention::sentencepiece:
        if (b == ' ') {
          out += "\xE2\x96\x81";
        } else if (b < 0x20 || b >= 0x7F) {
          static constexpr char kHex[] = "0123456789ABCDEF";
          out += "<0x";
          out.push_back(kHex[b >> 4]);
          out.push_back(kHex[b & 0xF]);
          out.push_back('>');
        } else {
          out.push_back(ch);
        }
        break;
      case MarkerConvention::byte_bpe:
        out += byte_bpe_symbol(b);
        break;
    }
  }
  return out;
}

std::vector<std::vector<TokenId>> tokenize_corpus(const Tokenizer& tokenizer, std::string_view corpus) {
  std::vector<std::vector<TokenId>> out;
  std::istringstream in{std::string(corpus)};
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(tokenizer.encode(line));
  }
  return out;
}

ToyBenchmark make_toy_benchmark(const ToyOptions& options) {
  if (options.models.empty()) throw ArgumentError("toy benchmark needs at least one model");
  if (options.dev_items + options.test_items > 2 * options.entities) {
    throw ArgumentError("toy benchmark: more items requested than facts exist");
  }
  std::mt19937_64 rng(options.seed);
  const auto names = make_names(options.entities, rng);
  std::vector<std::size_t> color(options.entities), city(options.entities);
  for (std::size_t e = 0; e < options.entities; ++e) {
    color[e] = std::uniform_int_distribution<std::size_t>(0, kColors.size() - 1)(rng);
    city[e] = std::uniform_int_distribution<std::size_t>(0, kCities.size() - 1)(rng);
  }
  const auto junk = make_junk_words(options.outlier_words, rng);

  ToyBenchmark bench;
  std::string alphabet = " .";
  for (char c = 'a'; c <= 'z'; ++c) alphabet.push_back(c);

  for (std::size_t m = 0; m < options.models.size(); ++m) {
    const ToyModelSpec& spec = options.models[m];
    std::mt19937_64 mrng(options.seed * 1000003ULL + m + 1);
    std::vector<std::string> lines;
    auto add_fact = [&](std::size_t truth, std::size_t n_values, auto render) {
      const double u = uniform01(mrng);
      std::size_t value = truth;
      if (u >= spec.coverage) {
        if (u >= spec.coverage + spec.noise) return;
        value = (truth + 1 + std::uniform_int_distribution<std::size_t>(0, n_values - 2)(mrng)) % n_values;
      }
      for (std::size_t r = 0; r < options.repeats; ++r) lines.push_back(render(value));
    };
    for (std::size_t e = 0; e < options.entities; ++e) {
      add_fact(color[e], kColors.size(), [&](std::size_t v) { return names[e] + " likes " + kColors[v] + " ."; });
      add_fact(city[e], kCities.size(), [&](std::size_t v) { return names[e] + " lives in " + kCities[v] + " ."; });
    }
    for (std::size_t f = 0; f < options.filler_sentences; ++f) {
      switch (std::uniform_int_distribution<int>(0, 5)(mrng)) {
        case 0: lines.push_back("the " + pick(kColors, mrng) + " " + pick(kObjects, mrng) + " is here ."); break;
        case 1: lines.push_back("a " + pick(kColors, mrng) + " " + pick(kObjects, mrng) + " fell ."); break;
        case 2: lines.push_back("i like the color " + pick(kColors, mrng) + " ."); break;
        case 3: lines.push_back("people in " + pick(kCities, mrng) + " are kind ."); break;
        case 4: lines.push_back(pick(kCities, mrng) + " is a big city ."); break;
        default: lines.push_back("we went to " + pick(kCities, mrng) + " ."); break;
      }
    }
    // Junk words come in isolated pairs so each one co-occurs with a single partner.
    for (std::size_t j = 0; j + 1 < junk.size(); j += 2) lines.push_back(" " + junk[j] + " " + junk[j + 1]);
    std::shuffle(lines.begin(), lines.end(), mrng);

    std::string corpus;
    for (const auto& l : lines) corpus += l + "\n";

    const Vocabulary learned = train_bpe(corpus, spec.merges, alphabet);
    std::vector<std::string> raw;
    for (const Token& t : learned.tokens()) raw.push_back(to_convention(t.surface, spec.convention));
    for (const auto& w : junk) raw.push_back(to_convention(" " + w, spec.convention));
    bench.models.push_back(
        {spec.name, spec.convention, Vocabulary::from_raw(raw, spec.convention), std::move(corpus)});
  }

  std::vector<std::pair<std::size_t, int>> facts;
  for (std::size_t e = 0; e < options.entities; ++e) {
    facts.emplace_back(e, 0);
    facts.emplace_back(e, 1);
  }
  std::shuffle(facts.begin(), facts.end(), rng);
  for (std::size_t i = 0; i < options.dev_items + options.test_items; ++i) {
    const auto [e, relation] = facts[i];
    EvalItem item;
    if (relation == 0) {
      item.kind = EvalItem::Kind::exact_match;
      item.prompt = names[e] + " likes";
      item.answer = kColors[color[e]];
    } else {
      item.kind = EvalItem::Kind::multiple_choice;
      item.prompt = names[e] + " lives in";
      std::vector<std::size_t> others;
      for (std::size_t c = 0; c < kCities.size(); ++c) {
        if (c != city[e]) others.push_back(c);
      }
      std::shuffle(others.begin(), others.end(), rng);
      std::vector<std::size_t> chosen = {city[e], others[0], others[1], others[2]};
      std::shuffle(chosen.begin(), chosen.end(), rng);
      for (std::size_t k = 0; k < chosen.size(); ++k) {
        item.options.push_back(" " + kCities[chosen[k]]);
        if (chosen[k] == city[e]) item.gold = k;
      }
    }
    (i < options.dev_items ? bench.dev : bench.test).push_back(std::move(item));
  }
  return bench;
}

Model build_toy_model(const std::string& name, const Vocabulary& vocab, std::string_view corpus,
                      const ToyTraining& training) {
  auto shared_vocab = std::make_shared<const Vocabulary>(vocab);
  const Tokenizer tokenizer(*shared_vocab);
  const auto sequences = tokenize_corpus(tokenizer, corpus);
  auto backend = std::make_shared<NGramModel>(train_ngram(name, sequences, vocab.size(), training.ngram));
  EmbeddingOptions emb = training.embedding;
  emb.dim = std::min(emb.dim, vocab.size());
  auto embeddings = std::make_shared<const EmbeddingTable>(build_embeddings(sequences, vocab.size(), emb));
  return {name, std::move(shared_vocab), std::move(embeddings), std::move(backend)};
}

StopConditions toy_stop_conditions() { return {8, {"."}}; }

}  // namespace relens
