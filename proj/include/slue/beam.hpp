#pragma once

// Beam search over decoder steps with shallow-fusion score combination.
// Deterministic: equal fused scores are ordered by lexicographic symbol
// sequence.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "slue/common.hpp"
#include "slue/lm.hpp"
#include "slue/model.hpp"

namespace slue {

struct BeamConfig {
  int beam = 10;
  int nbest = 1;
  double lambda = 0.0;       // LM weight
  double length_bonus = 0.0; // per emitted symbol
  double max_len_factor = 2.0;
  int max_len_override = 0;  // 0 = 2 * T_enc runaway guard
  const LexiconTrie* lookahead = nullptr;  // optional word look-ahead
  double oov_logpenalty = -10.0;

  void validate() const {
    if (beam < 1) throw ConfigError("beam: width must be >= 1");
    if (nbest < 1 || nbest > beam) throw ConfigError("beam: require 1 <= nbest <= beam");
    if (lambda < 0) throw ConfigError("beam: lambda must be >= 0");
  }
};

inline double fuse(double s2s_logp, double lm_logp, double lambda,
                   double length_bonus, int length) {
  if (!std::isfinite(s2s_logp) || !std::isfinite(lm_logp))
    throw NumericError("fuse: non-finite score");
  return s2s_logp + lambda * lm_logp + length_bonus * length;
}

struct NBestEntry {
  std::vector<int> syms;  // without <s> / </s>
  double s2s = 0.0;
  double lm = 0.0;
  double fused = 0.0;
  bool truncated = false;
};

namespace beam_detail {

template <typename T>
struct Hyp {
  std::vector<int> syms;
  double s2s = 0.0, lm = 0.0, fused = 0.0;
  int y_prev;
  DecoderState<T> state;
  LmState<T> lm_state;
};

template <typename T>
bool better(const Hyp<T>& a, const Hyp<T>& b) {
  if (a.fused != b.fused) return a.fused > b.fused;
  return a.syms < b.syms;
}

inline bool entry_better(const NBestEntry& a, const NBestEntry& b) {
  if (a.fused != b.fused) return a.fused > b.fused;
  return a.syms < b.syms;
}

template <typename T>
std::vector<T> log_softmax_values(const Tensor<T>& logits) {
  const auto& v = logits.data();
  T mx = v[0];
  for (T x : v) mx = std::max(mx, x);
  T z = 0;
  for (T x : v) z += std::exp(x - mx);
  const T lz = mx + std::log(z);
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lz;
  return out;
}

}  // namespace beam_detail

template <typename T>
std::vector<NBestEntry> beam_search(Seq2SeqModel<T>& model, CharLm<T>* lm,
                                    const FeatureMatrix& x, const BeamConfig& cfg) {
  using beam_detail::Hyp;
  cfg.validate();
  if (lm && !(lm->vocab() == model.vocab()))
    throw ConfigError("beam: model and LM vocabularies differ");
  NoGradGuard ng;
  const bool was_training = model.train_mode;
  model.train_mode = false;
  auto enc = model.encode(x);
  model.train_mode = was_training;
  const Vocabulary& vocab = model.vocab();
  const int eos = vocab.eos();
  const int max_len = cfg.max_len_override > 0
                          ? cfg.max_len_override
                          : std::max(1, static_cast<int>(cfg.max_len_factor * enc.t_enc()));

  std::vector<Hyp<T>> live(1);
  live[0].y_prev = vocab.sos();
  live[0].state = model.initial_state();
  if (lm) live[0].lm_state = lm->initial_state();

  // one step's candidate: either a live extension or an eos-terminated entry
  struct Candidate {
    Hyp<T> hyp;
    bool is_eos = false;
  };
  auto candidate_better = [](const Candidate& a, const Candidate& b) {
    if (a.hyp.fused != b.hyp.fused) return a.hyp.fused > b.hyp.fused;
    return a.hyp.syms < b.hyp.syms;
  };

  std::vector<NBestEntry> finished;
  for (int step = 0;
       step < max_len && !live.empty() &&
       static_cast<int>(finished.size()) < cfg.beam;
       ++step) {
    std::vector<Candidate> pool;
    pool.reserve(live.size() * vocab.size());
    for (auto& h : live) {
      auto res = model.decode_step(h.y_prev, h.state, enc);
      auto logp = beam_detail::log_softmax_values(res.logits);
      std::vector<T> lm_logp;
      LmState<T> lm_next;
      if (lm) {
        auto [lp, ns] = lm->score_step(h.lm_state, h.y_prev);
        lm_next = std::move(ns);
        lm_logp = lp.data();
      }
      for (int v = 0; v < vocab.size(); ++v) {
        if (v == vocab.sos()) continue;
        Hyp<T> c;
        c.s2s = h.s2s + static_cast<double>(logp[v]);
        c.lm = h.lm;
        if (lm) {
          double lv = static_cast<double>(lm_logp[v]);
          if (cfg.lookahead) {
            const std::string& sym = vocab.symbol(v);
            if (sym.size() == 1 || sym == Vocabulary::kBoundary || v == eos) {
              lv = lookahead_char_logprob(h.lm_state.word_prefix, *cfg.lookahead, sym,
                                          cfg.oov_logpenalty);
            }
          }
          c.lm += lv;
        }
        if (v == eos) {
          // terminating candidate: competes for a beam slot like any other
          c.syms = h.syms;
          c.fused = fuse(c.s2s, c.lm, cfg.lambda, cfg.length_bonus,
                         static_cast<int>(c.syms.size()));
          pool.push_back({std::move(c), true});
          continue;
        }
        c.syms = h.syms;
        c.syms.push_back(v);
        c.fused = fuse(c.s2s, c.lm, cfg.lambda, cfg.length_bonus,
                       static_cast<int>(c.syms.size()));
        c.y_prev = v;
        c.state = res.state;
        if (lm) {
          c.lm_state = lm_next;
          if (cfg.lookahead) {
            const std::string& sym = vocab.symbol(v);
            if (sym.size() == 1)
              c.lm_state.word_prefix = h.lm_state.word_prefix + sym;
            else
              c.lm_state.word_prefix.clear();
          }
        }
        pool.push_back({std::move(c), false});
      }
    }
    // keep the best B candidates; those that chose the end symbol finish,
    // the rest stay live for the next step
    std::sort(pool.begin(), pool.end(), candidate_better);
    if (static_cast<int>(pool.size()) > cfg.beam) pool.resize(cfg.beam);
    live.clear();
    for (auto& c : pool) {
      if (c.is_eos) {
        NBestEntry e;
        e.syms = std::move(c.hyp.syms);
        e.s2s = c.hyp.s2s;
        e.lm = c.hyp.lm;
        e.fused = c.hyp.fused;
        finished.push_back(std::move(e));
      } else {
        live.push_back(std::move(c.hyp));
      }
    }
    if (cfg.length_bonus <= 0 && !live.empty() &&
        static_cast<int>(finished.size()) >= cfg.nbest) {
      // extensions can only lower the fused score, so once the nbest-th best
      // finished hypothesis strictly beats the best live one, no future
      // finisher can enter the n-best list
      std::vector<double> scores;
      scores.reserve(finished.size());
      for (const auto& e : finished) scores.push_back(e.fused);
      std::nth_element(scores.begin(), scores.begin() + (cfg.nbest - 1),
                       scores.end(), std::greater<double>());
      if (scores[cfg.nbest - 1] > live[0].fused) break;
    }
  }
  if (finished.empty()) {
    // nothing reached </s> within the length guard: report the best
    // unfinished hypothesis, flagged as truncated
    std::sort(live.begin(), live.end(), beam_detail::better<T>);
    NBestEntry e;
    e.syms = live[0].syms;
    e.s2s = live[0].s2s;
    e.lm = live[0].lm;
    e.fused = live[0].fused;
    e.truncated = true;
    return {e};
  }
  std::sort(finished.begin(), finished.end(), beam_detail::entry_better);
  if (static_cast<int>(finished.size()) > cfg.nbest) finished.resize(cfg.nbest);
  return finished;
}

// greedy argmax decoding (reference path for the B=1 identity)
template <typename T>
NBestEntry greedy_decode(Seq2SeqModel<T>& model, const FeatureMatrix& x,
                         int max_len_override = 0, double max_len_factor = 2.0) {
  NoGradGuard ng;
  const bool was_training = model.train_mode;
  model.train_mode = false;
  auto enc = model.encode(x);
  model.train_mode = was_training;
  const Vocabulary& vocab = model.vocab();
  const int max_len = max_len_override > 0
                          ? max_len_override
                          : std::max(1, static_cast<int>(max_len_factor * enc.t_enc()));
  NBestEntry e;
  auto state = model.initial_state();
  int y_prev = vocab.sos();
  for (int step = 0; step < max_len; ++step) {
    auto res = model.decode_step(y_prev, state, enc);
    auto logp = beam_detail::log_softmax_values(res.logits);
    int best = -1;
    for (int v = 0; v < vocab.size(); ++v)
      if (v != vocab.sos() && (best < 0 || logp[v] > logp[best])) best = v;
    e.s2s += static_cast<double>(logp[best]);
    e.fused = e.s2s;
    if (best == vocab.eos()) return e;
    e.syms.push_back(best);
    state = std::move(res.state);
    y_prev = best;
  }
  e.truncated = true;
  return e;
}

// JSON Lines record for the N-best output of one utterance
inline nlohmann::json nbest_to_json(const std::string& id,
                                    const std::vector<NBestEntry>& nbest,
                                    const Vocabulary& vocab) {
  nlohmann::json rec;
  rec["id"] = id;
  rec["nbest"] = nlohmann::json::array();
  for (const auto& e : nbest) {
    nlohmann::json h;
    h["symbols"] = vocab.tokens(e.syms);
    h["s2s"] = e.s2s;
    h["lm"] = e.lm;
    h["fused"] = e.fused;
    if (e.truncated) h["truncated"] = true;
    rec["nbest"].push_back(h);
  }
  return rec;
}

}  // namespace slue
