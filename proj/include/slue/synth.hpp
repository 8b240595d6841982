#pragma once

// Deterministic synthetic annotated dialogue corpus: grammar-driven
// utterances with concept/support/value annotations, rendered into
// filterbank-like feature matrices (per-character signature blocks with
// duration jitter and additive noise). Stands in for licensed corpora while
// preserving the structural challenge: variable-duration acoustic spans,
// filler words, repetitions and self-corrections.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "slue/codec.hpp"
#include "slue/common.hpp"
#include "slue/dsp.hpp"
#include "slue/eval.hpp"

namespace slue {

struct SupportPhrase {
  std::string phrase;  // space-separated words
  std::string value;   // normalized value
};

struct ConceptDef {
  std::string name;
  std::vector<SupportPhrase> supports;
};

struct DomainGrammar {
  std::string domain = "lodging";
  std::vector<ConceptDef> concepts;
  std::vector<std::string> fillers;
  double repetition_fraction = 0.15;  // utterances with a self-correction

  std::vector<std::string> concept_names() const {
    std::vector<std::string> out;
    for (const auto& c : concepts) out.push_back(c.name);
    return out;
  }

  // exact-match support-phrase -> value rules for AllWords/SupWords scoring
  NormRuleSet norm_rules() const {
    NormRuleSet rs;
    for (const auto& c : concepts)
      for (const auto& s : c.supports) {
        std::string esc;
        for (char ch : s.phrase)
          esc += (std::isalnum(static_cast<unsigned char>(ch)) || ch == ' ')
                     ? std::string(1, ch)
                     : "\\" + std::string(1, ch);
        rs.add(c.name, esc, s.value);
      }
    return rs;
  }

  std::vector<std::string> lexicon_words() const {
    std::vector<std::string> out = fillers;
    for (const auto& c : concepts)
      for (const auto& s : c.supports) {
        std::string w;
        for (char ch : s.phrase) {
          if (ch == ' ') {
            out.push_back(w);
            w.clear();
          } else {
            w += ch;
          }
        }
        out.push_back(w);
      }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  // 20-concept lodging-negotiation grammar; words avoid doubled letters so
  // run-length decoding stays well-posed for the solvability oracle
  static DomainGrammar default_grammar(const std::string& domain = "lodging") {
    DomainGrammar g;
    g.domain = domain;
    g.fillers = {"i",    "would", "like",  "a",    "is",   "there", "in",
                 "that", "one",   "well",  "uh",   "so",   "the",   "me",
                 "for",  "yes",   "do",    "you",  "have", "want"};
    g.concepts = {
        {"hotel-services", {{"swiming-pol", "pool"}, {"sauna-bath", "sauna"}, {"free-parking", "parking"}}},
        {"linkref-coref", {{"that", "singular"}, {"those", "plural"}, {"this-one", "singular"}}},
        {"objectbd", {{"hotel", "hotel"}, {"room", "room"}, {"place", "hotel"}}},
        {"city-dest", {{"paris", "paris"}, {"lyon", "lyon"}, {"avignon", "avignon"}}},
        {"date-start", {{"monday", "monday"}, {"friday", "friday"}, {"tomorow", "tomorow"}}},
        {"date-end", {{"until-sunday", "sunday"}, {"until-march", "march"}}},
        {"room-count", {{"single-room", "one"}, {"two-rooms", "two"}, {"four-rooms", "four"}}},
        {"person-count", {{"for-two-people", "two"}, {"just-me", "one"}, {"five-of-us", "five"}}},
        {"price-max", {{"under-fifty", "fifty"}, {"under-ninety", "ninety"}, {"cheap", "low"}}},
        {"hotel-name", {{"hotel-ibis", "ibis"}, {"hotel-mercure", "mercure"}}},
        {"payment-mode", {{"by-card", "card"}, {"in-cash", "cash"}}},
        {"answer-yes", {{"yes-sure", "yes"}, {"of-course", "yes"}, {"absolutely", "yes"}}},
        {"answer-no", {{"no-thanks", "no"}, {"not-at-al", "no"}}},
        {"connector-and", {{"and", "and"}, {"and-also", "and"}}},
        {"connector-or", {{"or", "or"}, {"or-else", "or"}}},
        {"lodging-type", {{"guest-house", "pension"}, {"campsite", "camping"}, {"studio-flat", "studio"}}},
        {"meal-plan", {{"with-breakfast", "breakfast"}, {"half-board", "half-board"}}},
        {"star-rating", {{"three-stars", "three"}, {"four-stars", "four"}}},
        {"distance-max", {{"near-the-beach", "beach"}, {"close-to-town", "center"}}},
        {"contact-mode", {{"by-phone", "phone"}, {"by-mail", "mail"}}},
    };
    return g;
  }
};

namespace synth_detail {

inline std::vector<std::string> split_phrase(const std::string& phrase) {
  std::vector<std::string> out;
  std::string w;
  for (char c : phrase) {
    if (c == ' ') {
      out.push_back(w);
      w.clear();
    } else {
      w += c;
    }
  }
  if (!w.empty()) out.push_back(w);
  return out;
}

}  // namespace synth_detail

inline std::vector<Utterance> generate_corpus(const DomainGrammar& grammar,
                                              std::size_t n, std::uint64_t seed) {
  if (grammar.concepts.empty() || grammar.fillers.empty())
    throw ConfigError("generate_corpus: empty grammar");
  if (n < 1) throw ConfigError("generate_corpus: n must be >= 1");

  for (int attempt = 0; attempt < 5; ++attempt) {
    Rng master(seed + static_cast<std::uint64_t>(attempt));
    std::vector<Utterance> corpus;
    corpus.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = master.fork(i);
      Utterance u;
      char idbuf[64];
      std::snprintf(idbuf, sizeof(idbuf), "%s-%06zu", grammar.domain.c_str(), i);
      u.id = idbuf;
      u.domain = grammar.domain;
      const int n_concepts = static_cast<int>(rng.uniform_int(5));  // 0..4
      auto add_fillers = [&](int max_run) {
        const int k = static_cast<int>(rng.uniform_int(max_run + 1));
        for (int f = 0; f < k; ++f)
          u.words.push_back(grammar.fillers[rng.uniform_int(grammar.fillers.size())]);
      };
      auto add_instance = [&](const ConceptDef& c, std::size_t phrase_idx) {
        const auto& sp = c.supports[phrase_idx];
        ConceptSpan span;
        span.concept_name = c.name;
        span.start = static_cast<int>(u.words.size());
        for (const auto& w : synth_detail::split_phrase(sp.phrase)) u.words.push_back(w);
        span.end = static_cast<int>(u.words.size());
        span.value = sp.value;
        u.spans.push_back(span);
      };
      add_fillers(2);
      for (int k = 0; k < n_concepts; ++k) {
        const auto& c = grammar.concepts[rng.uniform_int(grammar.concepts.size())];
        const std::size_t phrase_idx = rng.uniform_int(c.supports.size());
        add_instance(c, phrase_idx);
        // self-correction: repeat the same concept with a different phrase
        if (c.supports.size() > 1 && rng.uniform() < grammar.repetition_fraction) {
          u.words.push_back("uh");
          add_instance(c, (phrase_idx + 1) % c.supports.size());
        }
        add_fillers(2);
      }
      if (u.words.empty()) add_fillers(2);
      if (u.words.empty()) u.words.push_back(grammar.fillers[0]);
      const std::uint64_t h = fnv1a(u.id) % 10;
      u.split = h < 8 ? "train" : (h == 8 ? "dev" : "test");
      validate_spans(u.spans, static_cast<int>(u.words.size()));
      corpus.push_back(std::move(u));
    }
    // statistical coverage check: with enough utterances every concept must
    // appear; otherwise regenerate with the next seed
    if (n >= 1000) {
      std::map<std::string, int> seen;
      for (const auto& u : corpus)
        for (const auto& s : u.spans) ++seen[s.concept_name];
      bool ok = true;
      for (const auto& c : grammar.concepts)
        if (!seen.count(c.name)) ok = false;
      if (!ok) continue;
    }
    return corpus;
  }
  throw ConfigError("generate_corpus: concept_name coverage not reached after 5 seeds");
}

// ---------------------------------------------------------------------------
// acoustic rendering

struct SymbolAcoustics {
  int n_mels = 40;
  std::map<char, std::vector<float>> signatures;
  std::map<char, int> base_duration;  // frames, >= 2
  double jitter = 0.3;
  double noise = 0.4;
  float floor = -23.025851f;  // log(1e-10)

  static SymbolAcoustics make_default(int n_mels = 40, std::uint64_t seed = 7) {
    SymbolAcoustics a;
    a.n_mels = n_mels;
    Rng rng(seed);
    const std::string chars = "abcdefghijklmnopqrstuvwxyz-' ";
    const double min_sep = 3.0;
    for (char c : chars) {
      for (int tries = 0; tries < 1000; ++tries) {
        std::vector<float> sig(n_mels);
        for (auto& v : sig) v = static_cast<float>(rng.uniform(-2.0, 2.0));
        bool ok = true;
        for (const auto& [other, osig] : a.signatures) {
          double d2 = 0;
          for (int i = 0; i < n_mels; ++i)
            d2 += (sig[i] - osig[i]) * (sig[i] - osig[i]);
          if (d2 < min_sep * min_sep) ok = false;
        }
        if (ok) {
          a.signatures[c] = std::move(sig);
          break;
        }
      }
      if (!a.signatures.count(c))
        throw ConfigError("acoustics: could not separate signatures");
      a.base_duration[c] = 3 + static_cast<int>(rng.uniform_int(3));  // 3..5
    }
    return a;
  }
};

inline std::string spoken_text(const std::vector<std::string>& words) {
  std::string text;
  for (const auto& w : words) {
    if (!text.empty()) text += ' ';
    text += w;
  }
  return text;
}

inline FeatureMatrix render_features(const std::vector<std::string>& words,
                                     const SymbolAcoustics& ac, std::uint64_t seed) {
  Rng rng(seed);
  const std::string text = " " + spoken_text(words) + " ";
  FeatureMatrix m;
  m.n_mels = ac.n_mels;
  for (char c : text) {
    auto sit = ac.signatures.find(c);
    if (sit == ac.signatures.end())
      throw ConfigError("render_features: no signature for character '" +
                        std::string(1, c) + "'");
    const int base = ac.base_duration.at(c);
    const int dur =
        std::max(1, static_cast<int>(std::lround(base * (1.0 + rng.uniform(-ac.jitter, ac.jitter)))));
    for (int t = 0; t < dur; ++t)
      for (int f = 0; f < ac.n_mels; ++f) {
        const float v =
            sit->second[f] + static_cast<float>(rng.normal() * ac.noise);
        m.data.push_back(std::max(v, ac.floor));
      }
  }
  return m;
}

// per-utterance render seed derived from the corpus master seed and id
inline std::uint64_t render_seed(std::uint64_t master_seed, const std::string& id) {
  return master_seed ^ (fnv1a(id) * 0x9e3779b97f4a7c15ull);
}

// ---------------------------------------------------------------------------
// solvability oracle: nearest-signature frame classification plus
// duration-aware run-length decoding. Establishes that the synthetic task
// is learnable before blaming the model.

inline double oracle_char_accuracy(const std::vector<Utterance>& corpus,
                                   const SymbolAcoustics& ac,
                                   std::uint64_t master_seed) {
  std::size_t total_ref = 0, total_err = 0;
  for (const auto& u : corpus) {
    const auto feats = render_features(u.words, ac, render_seed(master_seed, u.id));
    // frame-wise nearest signature
    std::vector<char> labels(feats.frames());
    for (int t = 0; t < feats.frames(); ++t) {
      double best = 1e300;
      char best_c = ' ';
      for (const auto& [c, sig] : ac.signatures) {
        double d2 = 0;
        for (int f = 0; f < feats.n_mels; ++f) {
          const double d = feats.at(t, f) - sig[f];
          d2 += d * d;
        }
        if (d2 < best) {
          best = d2;
          best_c = c;
        }
      }
      labels[t] = best_c;
    }
    // run-length decode, splitting long runs by base duration
    std::vector<std::string> hyp;
    int run_start = 0;
    for (int t = 1; t <= feats.frames(); ++t) {
      if (t == feats.frames() || labels[t] != labels[run_start]) {
        const char c = labels[run_start];
        if (c != ' ') {
          const int run = t - run_start;
          const int reps = std::max(
              1, static_cast<int>(std::lround(static_cast<double>(run) /
                                              ac.base_duration.at(c))));
          for (int r = 0; r < reps; ++r) hyp.push_back(std::string(1, c));
        }
        run_start = t;
      }
    }
    std::vector<std::string> ref;
    for (char c : spoken_text(u.words))
      if (c != ' ') ref.push_back(std::string(1, c));
    total_ref += ref.size();
    total_err += static_cast<std::size_t>(edit_distance(align(ref, hyp)));
  }
  if (total_ref == 0) return 1.0;
  return 1.0 - static_cast<double>(total_err) / static_cast<double>(total_ref);
}

}  // namespace slue
