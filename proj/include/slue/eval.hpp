#pragma once

// CER / CVER scoring: minimal edit-distance alignment with a deterministic
// backtrace, micro-averaged corpus rates, and per-concept error breakdowns.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "slue/common.hpp"

namespace slue {

enum class EditOp { Match, Substitute, Delete, Insert };

struct EditStep {
  EditOp op;
  std::string ref;  // empty for insertions
  std::string hyp;  // empty for deletions
};

using EditScript = std::vector<EditStep>;

// Unit-cost Levenshtein alignment. Tie-break on equal cost prefers
// match > substitute > delete > insert, applied during the backtrace.
inline EditScript align(const std::vector<std::string>& ref,
                        const std::vector<std::string>& hyp) {
  const std::size_t m = ref.size(), n = hyp.size();
  std::vector<std::vector<int>> d(m + 1, std::vector<int>(n + 1, 0));
  for (std::size_t i = 0; i <= m; ++i) d[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= n; ++j) d[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= m; ++i)
    for (std::size_t j = 1; j <= n; ++j) {
      const int sub = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d[i][j] = std::min({sub, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  EditScript script;
  std::size_t i = m, j = n;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] && ref[i - 1] == hyp[j - 1]) {
      script.push_back({EditOp::Match, ref[i - 1], hyp[j - 1]});
      --i, --j;
    } else if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1) {
      script.push_back({EditOp::Substitute, ref[i - 1], hyp[j - 1]});
      --i, --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      script.push_back({EditOp::Delete, ref[i - 1], ""});
      --i;
    } else {
      script.push_back({EditOp::Insert, "", hyp[j - 1]});
      --j;
    }
  }
  std::reverse(script.begin(), script.end());
  return script;
}

inline int edit_distance(const EditScript& s) {
  int d = 0;
  for (const auto& st : s)
    if (st.op != EditOp::Match) ++d;
  return d;
}

struct PerConceptErrors {
  std::size_t ins = 0, del = 0, sub = 0, cor = 0;
  std::size_t total() const { return ins + del + sub + cor; }
};

struct ScoreReport {
  std::size_t n_ref = 0;
  std::size_t ins = 0, del = 0, sub = 0, cor = 0;
  std::map<std::string, PerConceptErrors> per_concept;

  double rate() const {
    if (n_ref == 0) return ins > 0 ? 1.0 : 0.0;
    return static_cast<double>(ins + del + sub) / static_cast<double>(n_ref);
  }

  void absorb(const EditScript& script, const std::vector<std::string>& concept_keys) {
    std::size_t k = 0;
    for (const auto& st : script) {
      const std::string& key = concept_keys.empty()
                                   ? (st.op == EditOp::Insert ? st.hyp : st.ref)
                                   : concept_keys[k];
      ++k;
      switch (st.op) {
        case EditOp::Match:
          ++cor;
          ++n_ref;
          ++per_concept[key].cor;
          break;
        case EditOp::Substitute:
          ++sub;
          ++n_ref;
          ++per_concept[key].sub;
          break;
        case EditOp::Delete:
          ++del;
          ++n_ref;
          ++per_concept[key].del;
          break;
        case EditOp::Insert:
          ++ins;
          ++per_concept[key].ins;
          break;
      }
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["rate"] = rate();
    j["I"] = ins;
    j["D"] = del;
    j["S"] = sub;
    j["C"] = cor;
    j["N"] = n_ref;
    nlohmann::json pc = nlohmann::json::object();
    for (const auto& [name, e] : per_concept)
      pc[name] = {{"I", e.ins}, {"D", e.del}, {"S", e.sub}, {"C", e.cor}};
    j["per_concept"] = pc;
    return j;
  }
};

// Micro-averaged corpus score over per-utterance token lists paired by id.
// For CER the tokens are concept labels; for CVER they are concept\tvalue
// keys. concept_key extracts the per-concept breakdown label from a token.
inline ScoreReport score_tokens(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& refs,
    const std::vector<std::pair<std::string, std::vector<std::string>>>& hyps) {
  if (refs.size() != hyps.size())
    throw DataError("score: " + std::to_string(refs.size()) + " references vs " +
                    std::to_string(hyps.size()) + " hypotheses");
  ScoreReport report;
  for (std::size_t u = 0; u < refs.size(); ++u) {
    if (refs[u].first != hyps[u].first)
      throw DataError("score: utterance id mismatch '" + refs[u].first + "' vs '" +
                      hyps[u].first + "'");
    auto script = align(refs[u].second, hyps[u].second);
    std::vector<std::string> keys;
    for (const auto& st : script) {
      const std::string& tok = st.op == EditOp::Insert ? st.hyp : st.ref;
      keys.push_back(tok.substr(0, tok.find('\t')));
    }
    report.absorb(script, keys);
  }
  return report;
}

inline std::string cver_token(const std::string& concept_name, std::string value) {
  // value comparison is exact after trimming and lowercasing
  std::size_t b = value.find_first_not_of(' ');
  std::size_t e = value.find_last_not_of(' ');
  value = (b == std::string::npos) ? "" : value.substr(b, e - b + 1);
  for (auto& c : value) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return concept_name + "\t" + value;
}

// per-concept I/D/S table sorted by reference frequency (desc), then name
inline std::string error_report_table(const ScoreReport& r) {
  std::vector<std::pair<std::string, PerConceptErrors>> rows(r.per_concept.begin(),
                                                             r.per_concept.end());
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.second.total() != b.second.total()) return a.second.total() > b.second.total();
    return a.first < b.first;
  });
  std::string out = "concept                          I     D     S     C\n";
  char buf[128];
  for (const auto& [name, e] : rows) {
    std::snprintf(buf, sizeof(buf), "%-28s %5zu %5zu %5zu %5zu\n", name.c_str(),
                  e.ins, e.del, e.sub, e.cor);
    out += buf;
  }
  return out;
}

}  // namespace slue
