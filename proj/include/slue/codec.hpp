#pragma once

// Tag-format codec: renders annotated utterances into the three character
// target schemes and parses (possibly malformed) model output back into
// (concept, content) pairs. Also owns the corpus JSON Lines format and the
// regex value-normalization rules.

#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "slue/common.hpp"
#include "slue/vocab.hpp"

namespace slue {

enum class Scheme { AllWordsC, SupWordsC, NormValuesC };

inline std::string scheme_name(Scheme s) {
  switch (s) {
    case Scheme::AllWordsC: return "AllWords-C";
    case Scheme::SupWordsC: return "SupWords-C";
    case Scheme::NormValuesC: return "NormValues-C";
  }
  return "?";
}

inline Scheme scheme_from_name(const std::string& s) {
  if (s == "AllWords-C") return Scheme::AllWordsC;
  if (s == "SupWords-C") return Scheme::SupWordsC;
  if (s == "NormValues-C") return Scheme::NormValuesC;
  throw ConfigError("unknown scheme '" + s + "'");
}

// concept instance over a contiguous word span [start, end)
struct ConceptSpan {
  std::string concept_name;
  int start = 0;
  int end = 0;
  std::string value;
};

struct Utterance {
  std::string id;
  std::vector<std::string> words;
  std::vector<ConceptSpan> spans;
  std::string audio;   // optional path to an FBNK/WAV file
  std::string domain;  // synthetic domain label
  std::string split;   // train | dev | test
};

inline void validate_spans(const std::vector<ConceptSpan>& spans, int n_words) {
  int last_end = 0;
  for (const auto& s : spans) {
    if (s.start < 0 || s.end > n_words || s.start >= s.end)
      throw DataError("annotation: bad span [" + std::to_string(s.start) + "," +
                      std::to_string(s.end) + ") for " + std::to_string(n_words) +
                      " words");
    if (s.start < last_end)
      throw DataError("annotation: overlapping supports at word " +
                      std::to_string(s.start));
    last_end = s.end;
  }
}

// ---------------------------------------------------------------------------
// target encoding

namespace codec_detail {

struct Item {
  enum Kind { Word, Open, Close, Star } kind;
  std::string text;  // word text or concept name
};

inline std::vector<std::string> flatten(const std::vector<Item>& items) {
  std::vector<std::string> tokens;
  bool prev_word = false;
  for (const auto& it : items) {
    switch (it.kind) {
      case Item::Word:
        if (prev_word) tokens.push_back(Vocabulary::kBoundary);
        for (char c : it.text) tokens.push_back(std::string(1, c));
        prev_word = true;
        break;
      case Item::Open:
        tokens.push_back(Vocabulary::concept_open(it.text));
        prev_word = false;
        break;
      case Item::Close:
        tokens.push_back(Vocabulary::kClose);
        prev_word = false;
        break;
      case Item::Star:
        tokens.push_back(Vocabulary::kStar);
        prev_word = false;
        break;
    }
  }
  return tokens;
}

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

}  // namespace codec_detail

inline std::vector<std::string> encode_target(const std::vector<std::string>& words,
                                              const std::vector<ConceptSpan>& spans,
                                              Scheme scheme) {
  validate_spans(spans, static_cast<int>(words.size()));
  using codec_detail::Item;
  std::vector<Item> items;
  std::size_t si = 0;
  int i = 0;
  const int n = static_cast<int>(words.size());
  while (i < n) {
    if (si < spans.size() && spans[si].start == i) {
      const auto& sp = spans[si];
      items.push_back({Item::Open, sp.concept_name});
      if (scheme == Scheme::NormValuesC) {
        for (const auto& w : codec_detail::split_words(sp.value))
          items.push_back({Item::Word, w});
      } else {
        for (int j = sp.start; j < sp.end; ++j)
          items.push_back({Item::Word, words[j]});
      }
      items.push_back({Item::Close, ""});
      i = sp.end;
      ++si;
    } else {
      if (scheme == Scheme::AllWordsC) {
        items.push_back({Item::Word, words[i]});
        ++i;
      } else {
        // collapse the maximal out-of-support run into one star
        while (i < n && (si >= spans.size() || i < spans[si].start)) ++i;
        items.push_back({Item::Star, ""});
      }
    }
  }
  return codec_detail::flatten(items);
}

// ---------------------------------------------------------------------------
// output parsing (total: never fails on malformed model output)

struct ParsedPair {
  std::string concept_name;
  std::string content;
};

inline std::vector<ParsedPair> parse_output(const std::vector<std::string>& tokens,
                                            Scheme /*scheme*/,
                                            std::vector<std::string>* diagnostics = nullptr) {
  std::vector<ParsedPair> pairs;
  auto diag = [&](const std::string& m) {
    if (diagnostics) diagnostics->push_back(m);
  };
  std::string open_concept;
  bool in_tag = false;
  std::string buf;
  auto emit = [&]() {
    // trim and collapse boundaries to spaces
    std::string text;
    for (char c : buf) text += (c == '\x01') ? ' ' : c;
    std::size_t b = text.find_first_not_of(' ');
    std::size_t e = text.find_last_not_of(' ');
    text = (b == std::string::npos) ? "" : text.substr(b, e - b + 1);
    pairs.push_back({open_concept, text});
    buf.clear();
    in_tag = false;
  };
  for (const auto& tok : tokens) {
    if (Vocabulary::is_concept_open(tok)) {
      if (in_tag) {
        diag("implicit close of <c:" + open_concept + "> at new open tag");
        emit();
      }
      open_concept = Vocabulary::concept_of(tok);
      in_tag = true;
    } else if (tok == Vocabulary::kClose) {
      if (in_tag)
        emit();
      else
        diag("close tag without open, dropped");
    } else if (tok == Vocabulary::kStar || tok == Vocabulary::kSos ||
               tok == Vocabulary::kEos) {
      // ignored for pair extraction
    } else if (tok == Vocabulary::kBoundary) {
      if (in_tag) buf += '\x01';
    } else {
      if (in_tag) buf += tok;
    }
  }
  if (in_tag) {
    diag("unclosed <c:" + open_concept + "> closed at sequence end");
    emit();
  }
  return pairs;
}

// reference pairs an encoded target should parse back to
inline std::vector<ParsedPair> annotation_pairs(const Utterance& u, Scheme scheme) {
  std::vector<ParsedPair> out;
  for (const auto& sp : u.spans) {
    if (scheme == Scheme::NormValuesC) {
      out.push_back({sp.concept_name, sp.value});
    } else {
      std::string text;
      for (int j = sp.start; j < sp.end; ++j) {
        if (!text.empty()) text += ' ';
        text += u.words[j];
      }
      out.push_back({sp.concept_name, text});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// value normalization rules: one per line, tab-separated
// concept (or "*") \t full-match regex \t replacement template

class NormRuleSet {
 public:
  struct Rule {
    std::string concept_name;
    std::string pattern;
    std::regex re;
    std::string tmpl;
  };

  void add(const std::string& concept_name, const std::string& pattern,
           const std::string& tmpl) {
    Rule r;
    r.concept_name = concept_name;
    r.pattern = pattern;
    try {
      r.re = std::regex(pattern);
    } catch (const std::regex_error& e) {
      throw ConfigError("norm rules: invalid regex '" + pattern + "': " + e.what());
    }
    r.tmpl = tmpl;
    rules_.push_back(std::move(r));
  }

  // first matching rule wins; identity fallback
  std::string normalize(const std::string& concept_name, const std::string& text) const {
    for (const auto& r : rules_) {
      if (r.concept_name != "*" && r.concept_name != concept_name) continue;
      std::smatch m;
      if (std::regex_match(text, m, r.re)) return m.format(r.tmpl);
    }
    return text;
  }

  std::size_t size() const { return rules_.size(); }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw DataError("norm rules: cannot write " + path);
    for (const auto& r : rules_)
      f << r.concept_name << '\t' << r.pattern << '\t' << r.tmpl << '\n';
  }

  static NormRuleSet load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("norm rules: cannot read " + path);
    NormRuleSet rs;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto t1 = line.find('\t');
      const auto t2 = line.find('\t', t1 + 1);
      if (t1 == std::string::npos || t2 == std::string::npos)
        throw ConfigError("norm rules: malformed line: " + line);
      rs.add(line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1),
             line.substr(t2 + 1));
    }
    return rs;
  }

 private:
  std::vector<Rule> rules_;
};

// ---------------------------------------------------------------------------
// corpus JSON Lines

inline nlohmann::json utterance_to_json(const Utterance& u) {
  nlohmann::json j;
  j["id"] = u.id;
  j["words"] = u.words;
  j["annotations"] = nlohmann::json::array();
  for (const auto& s : u.spans)
    j["annotations"].push_back(
        {{"concept", s.concept_name}, {"start", s.start}, {"end", s.end}, {"value", s.value}});
  if (!u.audio.empty()) j["audio"] = u.audio;
  if (!u.domain.empty()) j["domain"] = u.domain;
  if (!u.split.empty()) j["split"] = u.split;
  return j;
}

inline Utterance utterance_from_json(const nlohmann::json& j) {
  Utterance u;
  u.id = j.at("id").get<std::string>();
  u.words = j.at("words").get<std::vector<std::string>>();
  for (const auto& a : j.at("annotations"))
    u.spans.push_back({a.at("concept").get<std::string>(), a.at("start").get<int>(),
                       a.at("end").get<int>(), a.at("value").get<std::string>()});
  if (j.contains("audio")) u.audio = j["audio"].get<std::string>();
  if (j.contains("domain")) u.domain = j["domain"].get<std::string>();
  if (j.contains("split")) u.split = j["split"].get<std::string>();
  validate_spans(u.spans, static_cast<int>(u.words.size()));
  return u;
}

inline void save_corpus(const std::vector<Utterance>& corpus, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("corpus: cannot write " + path);
  for (const auto& u : corpus) f << utterance_to_json(u).dump() << '\n';
}

inline std::vector<Utterance> load_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("corpus: cannot read " + path);
  std::vector<Utterance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(utterance_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corpus: bad JSON at " + path + ":" + std::to_string(line_no) +
                      ": " + e.what());
    }
  }
  return out;
}

}  // namespace slue
