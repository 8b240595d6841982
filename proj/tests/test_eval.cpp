// Alignment and CER/CVER scoring: golden scripts, exhaustive recursion
// oracle, symmetry, micro-averaging, per-concept accounting.

#include <gtest/gtest.h>

#include "slue/eval.hpp"

using slue::align;
using slue::EditOp;
using slue::ScoreReport;

namespace {

// independent oracle: naive exponential recursion over suffixes
int naive_distance(const std::string& ref, const std::string& hyp,
                   std::size_t i = 0, std::size_t j = 0) {
  if (i == ref.size()) return static_cast<int>(hyp.size() - j);
  if (j == hyp.size()) return static_cast<int>(ref.size() - i);
  const int sub = naive_distance(ref, hyp, i + 1, j + 1) + (ref[i] == hyp[j] ? 0 : 1);
  const int del = naive_distance(ref, hyp, i + 1, j) + 1;
  const int ins = naive_distance(ref, hyp, i, j + 1) + 1;
  return std::min({sub, del, ins});
}

std::vector<std::string> toks(const std::string& s) {
  std::vector<std::string> out;
  for (char c : s) out.push_back(std::string(1, c));
  return out;
}

}  // namespace

TEST(Align, GoldenScripts) {
  auto s = align(toks("ABC"), toks("AC"));
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].op, EditOp::Match);
  EXPECT_EQ(s[1].op, EditOp::Delete);
  EXPECT_EQ(s[1].ref, "B");
  EXPECT_EQ(s[2].op, EditOp::Match);
  EXPECT_EQ(slue::edit_distance(s), 1);

  auto empty_hyp = align(toks("ABC"), {});
  EXPECT_EQ(slue::edit_distance(empty_hyp), 3);
  for (const auto& st : empty_hyp) EXPECT_EQ(st.op, EditOp::Delete);

  auto same = align(toks("ABAB"), toks("ABAB"));
  EXPECT_EQ(slue::edit_distance(same), 0);
  for (const auto& st : same) EXPECT_EQ(st.op, EditOp::Match);

  // tie-break: substitution preferred over delete+insert
  auto sub = align(toks("A"), toks("B"));
  ASSERT_EQ(sub.size(), 1u);
  EXPECT_EQ(sub[0].op, EditOp::Substitute);
}

TEST(Align, ScriptReplaysRefToHyp) {
  slue::Rng rng(31);
  const std::string alpha = "ABC";
  for (int it = 0; it < 300; ++it) {
    std::string ref, hyp;
    for (std::size_t k = rng.uniform_int(7); k > 0; --k)
      ref += alpha[rng.uniform_int(3)];
    for (std::size_t k = rng.uniform_int(7); k > 0; --k)
      hyp += alpha[rng.uniform_int(3)];
    auto script = align(toks(ref), toks(hyp));
    std::string replay;
    for (const auto& st : script)
      if (st.op != EditOp::Delete) replay += st.hyp;
    EXPECT_EQ(replay, hyp) << ref << " vs " << hyp;
    // cost sum = DP minimum
    EXPECT_EQ(slue::edit_distance(script), naive_distance(ref, hyp));
  }
}

TEST(Align, ExhaustiveOracleShortStrings) {
  // full oracle sweep up to length 4 here; the acceptance suite covers <= 6
  std::vector<std::string> all = {""};
  for (int len = 1; len <= 4; ++len) {
    std::vector<std::string> next;
    for (const auto& s : all)
      if (static_cast<int>(s.size()) == len - 1)
        for (char c : {'A', 'B', 'C'}) next.push_back(s + c);
    all.insert(all.end(), next.begin(), next.end());
  }
  for (const auto& r : all)
    for (const auto& h : all)
      ASSERT_EQ(slue::edit_distance(align(toks(r), toks(h))), naive_distance(r, h))
          << r << " vs " << h;
}

TEST(Align, SymmetryWithOpsSwapped) {
  slue::Rng rng(32);
  const std::string alpha = "ABC";
  for (int it = 0; it < 200; ++it) {
    std::string ref, hyp;
    for (std::size_t k = rng.uniform_int(8); k > 0; --k)
      ref += alpha[rng.uniform_int(3)];
    for (std::size_t k = rng.uniform_int(8); k > 0; --k)
      hyp += alpha[rng.uniform_int(3)];
    auto fwd = align(toks(ref), toks(hyp));
    auto rev = align(toks(hyp), toks(ref));
    EXPECT_EQ(slue::edit_distance(fwd), slue::edit_distance(rev));
    int fwd_ins = 0, fwd_del = 0, rev_ins = 0, rev_del = 0;
    for (const auto& st : fwd) {
      fwd_ins += st.op == EditOp::Insert;
      fwd_del += st.op == EditOp::Delete;
    }
    for (const auto& st : rev) {
      rev_ins += st.op == EditOp::Insert;
      rev_del += st.op == EditOp::Delete;
    }
    EXPECT_EQ(fwd_ins, rev_del);
    EXPECT_EQ(fwd_del, rev_ins);
  }
}

TEST(Score, SimpleCerExamples) {
  // one utterance, ref 2 concepts, hyp only the first -> 50%
  auto r = slue::score_tokens({{"u1", {"a", "b"}}}, {{"u1", {"a"}}});
  EXPECT_DOUBLE_EQ(r.rate(), 0.5);
  EXPECT_EQ(r.del, 1u);
  EXPECT_EQ(r.cor, 1u);
  EXPECT_EQ(r.n_ref, 2u);
  // perfect
  auto p = slue::score_tokens({{"u1", {"a", "b"}}}, {{"u1", {"a", "b"}}});
  EXPECT_DOUBLE_EQ(p.rate(), 0.0);
  // C + D + S = N_ref
  EXPECT_EQ(r.cor + r.del + r.sub, r.n_ref);
}

TEST(Score, IdPairingErrors) {
  EXPECT_THROW(slue::score_tokens({{"u1", {}}}, {{"u2", {}}}), slue::DataError);
  EXPECT_THROW(slue::score_tokens({{"u1", {}}}, {}), slue::DataError);
}

TEST(Score, MicroAverageIdentity) {
  // utt1: 1/1 wrong (100%), utt2: 0/9 wrong (0%) -> micro 10%, macro would be 50%
  auto r = slue::score_tokens(
      {{"u1", {"x"}}, {"u2", {"a", "a", "a", "a", "a", "a", "a", "a", "a"}}},
      {{"u1", {"y"}}, {"u2", {"a", "a", "a", "a", "a", "a", "a", "a", "a"}}});
  EXPECT_DOUBLE_EQ(r.rate(), 0.1);
}

TEST(Score, PerConceptSumsMatchGlobal) {
  auto r = slue::score_tokens(
      {{"u1", {"a", "b", "c"}}, {"u2", {"b", "b"}}},
      {{"u1", {"a", "x", "c", "d"}}, {"u2", {"b"}}});
  std::size_t i = 0, d = 0, s = 0, c = 0;
  for (const auto& [name, e] : r.per_concept) {
    i += e.ins;
    d += e.del;
    s += e.sub;
    c += e.cor;
  }
  EXPECT_EQ(i, r.ins);
  EXPECT_EQ(d, r.del);
  EXPECT_EQ(s, r.sub);
  EXPECT_EQ(c, r.cor);
  // single delete shows up under its concept
  auto one = slue::score_tokens({{"u", {"B"}}}, {{"u", {}}});
  EXPECT_EQ(one.per_concept.at("B").del, 1u);
  // empty corpus -> empty table
  auto empty = slue::score_tokens({}, {});
  EXPECT_TRUE(empty.per_concept.empty());
  EXPECT_TRUE(slue::error_report_table(empty).find('\n') != std::string::npos);
}

TEST(Score, CverTokenSemantics) {
  // concept right, value wrong: CVER substitution but CER match
  auto cer = slue::score_tokens({{"u", {"city"}}}, {{"u", {"city"}}});
  auto cver = slue::score_tokens({{"u", {slue::cver_token("city", "paris")}}},
                                 {{"u", {slue::cver_token("city", "lyon")}}});
  EXPECT_EQ(cer.sub, 0u);
  EXPECT_EQ(cver.sub, 1u);
  // per-concept key strips the value part
  EXPECT_EQ(cver.per_concept.count("city"), 1u);
  // trimming + lowercasing
  EXPECT_EQ(slue::cver_token("c", "  Paris "), "c\tparis");
}

TEST(Score, RateMayExceedOne) {
  auto r = slue::score_tokens({{"u", {"a"}}}, {{"u", {"a", "b", "c"}}});
  EXPECT_DOUBLE_EQ(r.rate(), 2.0);
}
