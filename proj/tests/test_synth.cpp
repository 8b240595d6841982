// Synthetic corpus generator and acoustic renderer: determinism, concept
// coverage, jitter/duration bounds, and the nearest-signature solvability
// oracle.

#include <gtest/gtest.h>

#include <map>

#include "slue/synth.hpp"

using slue::DomainGrammar;
using slue::SymbolAcoustics;

TEST(Corpus, DeterministicGivenSeed) {
  auto g = DomainGrammar::default_grammar();
  auto a = slue::generate_corpus(g, 300, 41);
  auto b = slue::generate_corpus(g, 300, 41);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_EQ(slue::utterance_to_json(a[i]).dump(), slue::utterance_to_json(b[i]).dump());
  auto c = slue::generate_corpus(g, 300, 42);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].words != c[i].words) any_diff = true;
  EXPECT_TRUE(any_diff);
}

TEST(Corpus, ConceptHistogramReproducible) {
  auto g = DomainGrammar::default_grammar();
  auto histo = [&](std::uint64_t seed) {
    std::map<std::string, int> h;
    for (const auto& u : slue::generate_corpus(g, 500, seed))
      for (const auto& sp : u.spans) ++h[sp.concept_name];
    return h;
  };
  EXPECT_EQ(histo(5), histo(5));
}

TEST(Corpus, CoverageAtScale) {
  auto g = DomainGrammar::default_grammar();
  auto corpus = slue::generate_corpus(g, 5000, 1);
  std::map<std::string, int> seen;
  for (const auto& u : corpus)
    for (const auto& sp : u.spans) ++seen[sp.concept_name];
  for (const auto& c : g.concepts)
    EXPECT_GT(seen[c.name], 0) << c.name;
}

TEST(Corpus, AnnotationsValidAndSplitsAssigned) {
  auto g = DomainGrammar::default_grammar();
  auto corpus = slue::generate_corpus(g, 1000, 2);
  std::map<std::string, int> splits;
  for (const auto& u : corpus) {
    EXPECT_FALSE(u.words.empty());
    // throws on overlap / out-of-range
    slue::validate_spans(u.spans, static_cast<int>(u.words.size()));
    for (const auto& sp : u.spans) {
      // every support phrase maps to exactly one normalized value
      bool found = false;
      for (const auto& c : g.concepts) {
        if (c.name != sp.concept_name) continue;
        std::string phrase;
        for (int i = sp.start; i < sp.end; ++i) {
          if (!phrase.empty()) phrase += ' ';
          phrase += u.words[i];
        }
        for (const auto& s : c.supports)
          if (s.phrase == phrase) {
            EXPECT_EQ(s.value, sp.value);
            found = true;
          }
      }
      EXPECT_TRUE(found) << u.id;
    }
    ++splits[u.split];
  }
  // 80/10/10 by id hash, statistically
  EXPECT_NEAR(splits["train"] / 1000.0, 0.8, 0.05);
  EXPECT_NEAR(splits["dev"] / 1000.0, 0.1, 0.04);
  EXPECT_NEAR(splits["test"] / 1000.0, 0.1, 0.04);
}

TEST(Corpus, EmptyGrammarRejected) {
  DomainGrammar g;
  EXPECT_THROW(slue::generate_corpus(g, 10, 1), slue::ConfigError);
  auto ok = DomainGrammar::default_grammar();
  EXPECT_THROW(slue::generate_corpus(ok, 0, 1), slue::ConfigError);
}

TEST(Acoustics, SignatureSeparation) {
  auto ac = SymbolAcoustics::make_default(40, 7);
  std::vector<const std::vector<float>*> sigs;
  for (const auto& [c, s] : ac.signatures) sigs.push_back(&s);
  for (std::size_t i = 0; i < sigs.size(); ++i)
    for (std::size_t j = i + 1; j < sigs.size(); ++j) {
      double d2 = 0;
      for (int k = 0; k < 40; ++k)
        d2 += ((*sigs[i])[k] - (*sigs[j])[k]) * ((*sigs[i])[k] - (*sigs[j])[k]);
      EXPECT_GE(std::sqrt(d2), 3.0);
    }
  for (const auto& [c, d] : ac.base_duration) EXPECT_GE(d, 2) << c;
}

TEST(Render, ZeroJitterZeroNoiseExactFrames) {
  auto ac = SymbolAcoustics::make_default(40, 7);
  ac.jitter = 0.0;
  ac.noise = 0.0;
  std::vector<std::string> words = {"is", "there"};
  auto m = slue::render_features(words, ac, 99);
  int expect = 0;
  for (char c : std::string(" is there ")) expect += ac.base_duration.at(c);
  EXPECT_EQ(m.frames(), expect);
  EXPECT_EQ(m.n_mels, 40);
}

TEST(Render, JitterBoundsAndSeedBehaviour) {
  auto ac = SymbolAcoustics::make_default(40, 7);
  std::vector<std::string> words = {"would", "you", "have", "a", "room", "for", "two"};
  const std::string text = " would you have a room for two ";
  int lo = 0, hi = 0;
  for (char c : text) {
    const int b = ac.base_duration.at(c);
    lo += std::max(1, static_cast<int>(std::lround(b * 0.7)));
    hi += std::max(1, static_cast<int>(std::lround(b * 1.3)));
  }
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
    auto m = slue::render_features(words, ac, seed);
    EXPECT_GE(m.frames(), lo);
    EXPECT_LE(m.frames(), hi);
  }
  auto a = slue::render_features(words, ac, 5);
  auto b = slue::render_features(words, ac, 5);
  EXPECT_EQ(a.data, b.data);  // same seed, identical
  auto c = slue::render_features(words, ac, 6);
  EXPECT_NE(a.data, c.data);  // different seed, different noise
}

TEST(Render, UnknownCharacterRejected) {
  auto ac = SymbolAcoustics::make_default(40, 7);
  EXPECT_THROW(slue::render_features({"caf\xc3\xa9"}, ac, 1), slue::ConfigError);
}

TEST(Oracle, TaskIsSolvableAtDefaultNoise) {
  auto g = DomainGrammar::default_grammar();
  auto corpus = slue::generate_corpus(g, 150, 3);
  auto ac = SymbolAcoustics::make_default(40, 7);
  const double acc = slue::oracle_char_accuracy(corpus, ac, 3);
  EXPECT_GE(acc, 0.99) << "nearest-signature oracle accuracy " << acc;
}
