#pragma once

// Output symbol table. Base block: start/end, word boundary, star, character
// symbols. Concept symbols (one open character per concept plus one shared
// close) form a contiguous extension block appended after the base symbols,
// so an ASR-stage vocabulary can be extended in place for the SLU stages.

#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "slue/common.hpp"

namespace slue {

class Vocabulary {
 public:
  static constexpr const char* kSos = "<s>";
  static constexpr const char* kEos = "</s>";
  static constexpr const char* kBoundary = "_";
  static constexpr const char* kStar = "*";
  static constexpr const char* kClose = "</c>";

  Vocabulary() = default;

  static std::string concept_open(const std::string& concept_name) {
    return "<c:" + concept_name + ">";
  }
  static bool is_concept_open(const std::string& sym) {
    return sym.size() > 4 && sym.rfind("<c:", 0) == 0 && sym.back() == '>';
  }
  static std::string concept_of(const std::string& sym) {
    return sym.substr(3, sym.size() - 4);
  }

  // base (ASR-stage) alphabet: start/end, word boundary, single characters
  static Vocabulary base(const std::string& chars = "abcdefghijklmnopqrstuvwxyz-'") {
    Vocabulary v;
    v.add(kSos);
    v.add(kEos);
    v.add(kBoundary);
    for (char c : chars) v.add(std::string(1, c));
    return v;
  }

  // SLU extension block: one open symbol per concept, the shared close, star
  static std::vector<std::string> concept_extension_symbols(
      const std::vector<std::string>& concepts) {
    std::vector<std::string> ext;
    for (const auto& c : concepts) ext.push_back(concept_open(c));
    ext.push_back(kClose);
    ext.push_back(kStar);
    return ext;
  }

  // base alphabet plus the concept extension block
  static Vocabulary with_concepts(const std::vector<std::string>& concepts,
                                  const std::string& chars = "abcdefghijklmnopqrstuvwxyz-'") {
    Vocabulary v = base(chars);
    v.extend(concept_extension_symbols(concepts));
    return v;
  }

  int add(const std::string& sym) {
    if (index_.count(sym))
      throw VocabularyError("vocabulary: duplicate symbol '" + sym + "'");
    const int id = static_cast<int>(symbols_.size());
    symbols_.push_back(sym);
    index_[sym] = id;
    return id;
  }

  // append a contiguous block of new symbols
  void extend(const std::vector<std::string>& syms) {
    for (const auto& s : syms) add(s);
  }

  int id(const std::string& sym) const {
    auto it = index_.find(sym);
    if (it == index_.end())
      throw VocabularyError("vocabulary: unknown symbol '" + sym + "'");
    return it->second;
  }
  bool contains(const std::string& sym) const { return index_.count(sym) != 0; }
  const std::string& symbol(int id) const {
    if (id < 0 || id >= static_cast<int>(symbols_.size()))
      throw VocabularyError("vocabulary: id " + std::to_string(id) + " out of range");
    return symbols_[id];
  }
  int size() const { return static_cast<int>(symbols_.size()); }

  int sos() const { return id(kSos); }
  int eos() const { return id(kEos); }
  int star() const { return id(kStar); }
  int boundary() const { return id(kBoundary); }

  std::vector<int> ids(const std::vector<std::string>& syms) const {
    std::vector<int> out;
    out.reserve(syms.size());
    for (const auto& s : syms) out.push_back(id(s));
    return out;
  }
  std::vector<std::string> tokens(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(symbol(i));
    return out;
  }

  nlohmann::json to_json() const { return nlohmann::json(symbols_); }
  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v;
    for (const auto& s : j) v.add(s.get<std::string>());
    return v;
  }

  bool operator==(const Vocabulary& o) const { return symbols_ == o.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace slue
