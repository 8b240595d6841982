#pragma once

// LSTM language model over output symbols, plus the lexicon-trie machinery
// that turns word-level probability mass into per-character look-ahead
// scores for fusion.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "slue/checkpoint.hpp"
#include "slue/common.hpp"
#include "slue/model.hpp"
#include "slue/tensor.hpp"
#include "slue/vocab.hpp"

namespace slue {

struct LmConfig {
  int layers = 2;
  int width = 256;
  int embed_dim = 64;

  static LmConfig tiny() {
    LmConfig c;
    c.layers = 1;
    c.width = 64;
    c.embed_dim = 32;
    return c;
  }

  nlohmann::json to_json() const {
    return {{"layers", layers}, {"width", width}, {"embed_dim", embed_dim}};
  }
  static LmConfig from_json(const nlohmann::json& j) {
    LmConfig c;
    c.layers = j.at("layers").get<int>();
    c.width = j.at("width").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    return c;
  }
};

template <typename T>
struct LmState {
  std::vector<std::pair<Tensor<T>, Tensor<T>>> hc;
  std::string word_prefix;  // look-ahead mode only
};

template <typename T>
class CharLm {
 public:
  CharLm(LmConfig cfg, Vocabulary vocab, Rng& rng)
      : cfg_(cfg), vocab_(std::move(vocab)) {
    const T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg_.width)));
    embed_ = Tensor<T>::randn({vocab_.size(), cfg_.embed_dim}, rng, T(0.1));
    int in = cfg_.embed_dim;
    for (int l = 0; l < cfg_.layers; ++l) {
      lstm_.push_back(LstmCellParams<T>::init(in, cfg_.width, rng));
      in = cfg_.width;
    }
    out_w_ = Tensor<T>::randn({cfg_.width, vocab_.size()}, rng, s);
    out_b_ = Tensor<T>::zeros({vocab_.size()}, true);
  }

  const Vocabulary& vocab() const { return vocab_; }
  const LmConfig& config() const { return cfg_; }

  LmState<T> initial_state() const {
    LmState<T> s;
    for (int l = 0; l < cfg_.layers; ++l)
      s.hc.push_back({Tensor<T>::zeros({1, cfg_.width}), Tensor<T>::zeros({1, cfg_.width})});
    return s;
  }

  // consume one symbol, return log-probabilities over the next symbol
  std::pair<Tensor<T>, LmState<T>> score_step(const LmState<T>& state, int symbol) {
    if (symbol < 0 || symbol >= vocab_.size())
      throw VocabularyError("lm: symbol id " + std::to_string(symbol) +
                            " outside vocabulary");
    auto x = take_row(embed_, symbol);
    LmState<T> next;
    next.word_prefix = state.word_prefix;
    for (int l = 0; l < cfg_.layers; ++l) {
      auto [h, c] = lstm_step(lstm_[l], x, state.hc[l].first, state.hc[l].second);
      next.hc.push_back({h, c});
      x = h;
    }
    auto logits = add(matmul(x, out_w_), out_b_);
    return {log_softmax_flat(logits), std::move(next)};
  }

  // mean next-symbol NLL of a sequence (with implicit <s> start, </s> end)
  Tensor<T> sequence_loss(const std::vector<int>& seq) {
    auto state = initial_state();
    int prev = vocab_.sos();
    Tensor<T> total = Tensor<T>::scalar(T(0));
    std::vector<int> targets = seq;
    targets.push_back(vocab_.eos());
    for (int y : targets) {
      auto [logp, next] = score_step(state, prev);
      total = add(total, nll(logp, y));
      state = std::move(next);
      prev = y;
    }
    return scale(total, T(1) / static_cast<T>(targets.size()));
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    for (auto& [n, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.push_back({"lm.embed", embed_});
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = "lm.lstm" + std::to_string(l);
      out.push_back({p + ".wih", lstm_[l].wih});
      out.push_back({p + ".whh", lstm_[l].whh});
      out.push_back({p + ".b", lstm_[l].b});
    }
    out.push_back({"lm.out.w", out_w_});
    out.push_back({"lm.out.b", out_b_});
    return out;
  }

  Checkpoint to_checkpoint() {
    Checkpoint ck;
    ck.metadata["kind"] = "char-lm";
    ck.metadata["vocab"] = vocab_.to_json();
    ck.metadata["config"] = cfg_.to_json();
    for (auto& [name, t] : named_parameters())
      ck.put(name, t.shape(), std::vector<float>(t.data().begin(), t.data().end()));
    return ck;
  }

  static CharLm from_checkpoint(const Checkpoint& ck) {
    if (ck.metadata.value("kind", "") != "char-lm")
      throw ConfigError("checkpoint is not a char-lm");
    Rng rng(0);
    CharLm lm(LmConfig::from_json(ck.metadata.at("config")),
              Vocabulary::from_json(ck.metadata.at("vocab")), rng);
    for (auto& [name, t] : lm.named_parameters()) {
      const auto& e = ck.get(name);
      if (e.shape != t.shape())
        throw ShapeError("lm checkpoint tensor '" + name + "' shape mismatch");
      for (std::size_t i = 0; i < e.data.size(); ++i)
        t.data()[i] = static_cast<T>(e.data[i]);
    }
    return lm;
  }

 private:
  LmConfig cfg_;
  Vocabulary vocab_;
  Tensor<T> embed_;
  std::vector<LstmCellParams<T>> lstm_;
  Tensor<T> out_w_, out_b_;
};

// ---------------------------------------------------------------------------
// lexicon trie with per-node continuation mass

class LexiconTrie {
 public:
  // words with probabilities (unnormalized weights allowed)
  void add(const std::string& word, double prob) {
    if (word.empty() || prob <= 0)
      throw ConfigError("lexicon: word must be non-empty with positive probability");
    int node = 0;
    nodes_[0].mass += prob;
    for (char c : word) {
      auto it = nodes_[node].children.find(c);
      if (it == nodes_[node].children.end()) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();  // may reallocate; re-index the parent after
        nodes_[node].children[c] = id;
        node = id;
      } else {
        node = it->second;
      }
      nodes_[node].mass += prob;
    }
    nodes_[node].word_prob += prob;
  }

  // UTF-8 word per line, optional tab-separated log-probability
  static LexiconTrie load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("lexicon: cannot read " + path);
    LexiconTrie t;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos)
        t.add(line, 1.0);
      else
        t.add(line.substr(0, tab), std::exp(std::stod(line.substr(tab + 1))));
    }
    return t;
  }

  // node id for a prefix, or -1 when the prefix leaves the lexicon
  int walk(const std::string& prefix) const {
    int node = 0;
    for (char c : prefix) {
      auto it = nodes_[node].children.find(c);
      if (it == nodes_[node].children.end()) return -1;
      node = it->second;
    }
    return node;
  }

  double mass(int node) const { return node < 0 ? 0.0 : nodes_[node].mass; }
  double word_prob(int node) const { return node < 0 ? 0.0 : nodes_[node].word_prob; }
  bool empty() const { return nodes_.size() == 1 && nodes_[0].mass == 0.0; }

 private:
  struct TrieNode {
    std::map<char, int> children;
    double mass = 0.0;       // total probability of words below (and at) this node
    double word_prob = 0.0;  // probability of the word ending exactly here
  };
  std::vector<TrieNode> nodes_ = std::vector<TrieNode>(1);
};

// Look-ahead character log-probability: P(c | prefix) as a ratio of trie
// continuation masses; the word-boundary symbol closes the word and takes
// the word's own probability share, so the per-character products along a
// full word telescope to that word's mass fraction. Characters leaving the
// lexicon get a flat fallback penalty.
inline double lookahead_char_logprob(const std::string& prefix, const LexiconTrie& trie,
                                     const std::string& next_sym,
                                     double oov_logpenalty = -10.0) {
  const int node = trie.walk(prefix);
  if (node < 0) return oov_logpenalty;
  if (next_sym == Vocabulary::kBoundary || next_sym == Vocabulary::kEos) {
    const double wp = trie.word_prob(node);
    if (wp <= 0.0) return oov_logpenalty;
    return std::log(wp / trie.mass(node));
  }
  if (next_sym.size() != 1) return oov_logpenalty;
  const int next = trie.walk(prefix + next_sym);
  if (next < 0) return oov_logpenalty;
  return std::log(trie.mass(next) / trie.mass(node));
}

}  // namespace slue
