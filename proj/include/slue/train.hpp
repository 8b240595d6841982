#pragma once

// Training loops (seq2seq and LM), curriculum orchestration, decoding and
// scoring over corpora, and LM-weight tuning.

#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "slue/beam.hpp"
#include "slue/codec.hpp"
#include "slue/common.hpp"
#include "slue/eval.hpp"
#include "slue/lm.hpp"
#include "slue/model.hpp"
#include "slue/synth.hpp"
#include "slue/tensor.hpp"

namespace slue {

struct TrainConfig {
  int epochs = 30;
  double lr = 1e-3;
  double clip = 5.0;
  int patience = 3;  // early stop on dev loss
  std::uint64_t seed = 1;
  bool verbose = false;
};

struct TrainSample {
  std::string id;
  FeatureMatrix features;
  std::vector<int> target;  // ends with </s>
};

// scheme-specific target for one utterance; ASR stage passes empty spans
inline std::vector<int> target_ids(const Utterance& u, Scheme scheme, bool with_tags,
                                   const Vocabulary& vocab) {
  auto tokens = encode_target(u.words, with_tags ? u.spans : std::vector<ConceptSpan>{},
                              with_tags ? scheme : Scheme::AllWordsC);
  auto ids = vocab.ids(tokens);
  ids.push_back(vocab.eos());
  return ids;
}

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_dev_loss = 0.0;
};

namespace train_detail {

template <typename T>
std::vector<std::vector<T>> snapshot(std::vector<std::pair<std::string, Tensor<T>>> params) {
  std::vector<std::vector<T>> out;
  for (auto& [n, t] : params) out.push_back(t.data());
  return out;
}

template <typename T>
void restore(std::vector<std::pair<std::string, Tensor<T>>> params,
             const std::vector<std::vector<T>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].second.data() = snap[i];
}

}  // namespace train_detail

// optional per-epoch callback; returning true stops training (the epoch's
// parameters are kept as a best-so-far candidate like any other)
template <typename T>
using EpochCallback = std::function<bool(int epoch, Seq2SeqModel<T>& model)>;

template <typename T>
TrainResult train_seq2seq(Seq2SeqModel<T>& model, const std::vector<TrainSample>& train,
                          const std::vector<TrainSample>& dev, const TrainConfig& cfg,
                          EpochCallback<T> callback = nullptr) {
  auto params = model.parameters();
  AdamOptimizer<T> opt(params, static_cast<T>(cfg.lr));
  Rng rng(cfg.seed);
  TrainResult result;
  auto named = model.named_parameters();
  auto buffers = model.named_buffers();
  std::vector<std::vector<T>> best_params, best_buffers;
  int since_best = 0;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    model.train_mode = true;
    double train_loss = 0.0;
    for (std::size_t idx : order) {
      const auto& s = train[idx];
      auto loss = model.teacher_forced_loss(s.features, s.target);
      train_loss += static_cast<double>(loss.item());
      opt.zero_grad();
      backward(loss);
      clip_global_norm(params, static_cast<T>(cfg.clip));
      opt.step();
    }
    train_loss /= std::max<std::size_t>(1, train.size());

    model.train_mode = false;
    double dev_loss = 0.0;
    {
      NoGradGuard ng;
      for (const auto& s : dev)
        dev_loss += static_cast<double>(model.teacher_forced_loss(s.features, s.target).item());
    }
    dev_loss /= std::max<std::size_t>(1, dev.size());
    result.history.push_back({epoch, train_loss, dev_loss});
    if (cfg.verbose)
      std::cerr << "epoch " << epoch << " train_loss " << train_loss << " dev_loss "
                << dev_loss << "\n";

    if (result.best_epoch < 0 || dev_loss < result.best_dev_loss) {
      result.best_epoch = epoch;
      result.best_dev_loss = dev_loss;
      best_params = train_detail::snapshot<T>(named);
      best_buffers = train_detail::snapshot<T>(buffers);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
    if (callback && callback(epoch, model)) break;
  }
  if (!best_params.empty()) {
    train_detail::restore<T>(named, best_params);
    train_detail::restore<T>(buffers, best_buffers);
  }
  model.train_mode = false;
  return result;
}

// ---------------------------------------------------------------------------
// LM training; returns held-out perplexity (per symbol, including </s>)

template <typename T>
double lm_train(CharLm<T>& lm, const std::vector<std::vector<int>>& train,
                const std::vector<std::vector<int>>& heldout, const TrainConfig& cfg) {
  if (train.empty()) throw DataError("lm_train: empty corpus");
  auto params = lm.parameters();
  AdamOptimizer<T> opt(params, static_cast<T>(cfg.lr));
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double best = 1e300;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t idx : order) {
      auto loss = lm.sequence_loss(train[idx]);
      opt.zero_grad();
      backward(loss);
      clip_global_norm(params, static_cast<T>(cfg.clip));
      opt.step();
    }
    double nll_sum = 0.0;
    std::size_t n_sym = 0;
    {
      NoGradGuard ng;
      for (const auto& s : heldout.empty() ? train : heldout) {
        nll_sum += static_cast<double>(lm.sequence_loss(s).item()) * (s.size() + 1);
        n_sym += s.size() + 1;
      }
    }
    const double ppl = std::exp(nll_sum / std::max<std::size_t>(1, n_sym));
    if (cfg.verbose) std::cerr << "lm epoch " << epoch << " heldout ppl " << ppl << "\n";
    if (ppl < best) {
      best = ppl;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// decoding + scoring over a corpus

struct DecodedUtterance {
  std::string id;
  std::vector<NBestEntry> nbest;
};

template <typename T>
std::vector<DecodedUtterance> decode_corpus(Seq2SeqModel<T>& model, CharLm<T>* lm,
                                            const std::vector<TrainSample>& utts,
                                            const BeamConfig& cfg) {
  std::vector<DecodedUtterance> out;
  out.reserve(utts.size());
  for (const auto& u : utts)
    out.push_back({u.id, beam_search(model, lm, u.features, cfg)});
  return out;
}

struct EvalResult {
  ScoreReport cer;
  ScoreReport cver;
};

// Reference and hypothesis pair lists -> CER and CVER reports.
// AllWords-C / SupWords-C values go through the normalization rules;
// NormValues-C content is the value itself and needs no rules.
inline EvalResult evaluate_pairs(
    const std::vector<std::pair<std::string, std::vector<ParsedPair>>>& refs,
    const std::vector<std::pair<std::string, std::vector<ParsedPair>>>& hyps,
    Scheme scheme, const NormRuleSet* rules) {
  auto value_of = [&](const ParsedPair& p) {
    if (scheme == Scheme::NormValuesC || rules == nullptr) return p.content;
    return rules->normalize(p.concept_name, p.content);
  };
  std::vector<std::pair<std::string, std::vector<std::string>>> cer_ref, cer_hyp,
      cver_ref, cver_hyp;
  for (const auto& [id, pairs] : refs) {
    std::vector<std::string> c, cv;
    for (const auto& p : pairs) {
      c.push_back(p.concept_name);
      cv.push_back(cver_token(p.concept_name, value_of(p)));
    }
    cer_ref.push_back({id, c});
    cver_ref.push_back({id, cv});
  }
  for (const auto& [id, pairs] : hyps) {
    std::vector<std::string> c, cv;
    for (const auto& p : pairs) {
      c.push_back(p.concept_name);
      cv.push_back(cver_token(p.concept_name, value_of(p)));
    }
    cer_hyp.push_back({id, c});
    cver_hyp.push_back({id, cv});
  }
  EvalResult r;
  r.cer = score_tokens(cer_ref, cer_hyp);
  r.cver = score_tokens(cver_ref, cver_hyp);
  return r;
}

template <typename T>
EvalResult evaluate_decoded(const std::vector<Utterance>& refs,
                            const std::vector<DecodedUtterance>& hyps,
                            const Vocabulary& vocab, Scheme scheme,
                            const NormRuleSet* rules) {
  std::vector<std::pair<std::string, std::vector<ParsedPair>>> ref_pairs, hyp_pairs;
  for (const auto& u : refs) {
    std::vector<ParsedPair> rp;
    for (const auto& sp : u.spans) {
      if (scheme == Scheme::NormValuesC)
        rp.push_back({sp.concept_name, sp.value});
      else {
        std::string text;
        for (int j = sp.start; j < sp.end; ++j) {
          if (!text.empty()) text += ' ';
          text += u.words[j];
        }
        rp.push_back({sp.concept_name, text});
      }
    }
    ref_pairs.push_back({u.id, std::move(rp)});
  }
  for (const auto& d : hyps) {
    const auto& top = d.nbest.at(0);
    hyp_pairs.push_back({d.id, parse_output(vocab.tokens(top.syms), scheme)});
  }
  return evaluate_pairs(ref_pairs, hyp_pairs, scheme, rules);
}

// grid-search the shallow-fusion weight on dev CER; ties -> smaller lambda
template <typename T>
std::pair<double, std::vector<std::pair<double, double>>> tune_lambda(
    Seq2SeqModel<T>& model, CharLm<T>& lm, const std::vector<Utterance>& refs,
    const std::vector<TrainSample>& utts, Scheme scheme, const NormRuleSet* rules,
    const std::vector<double>& grid, BeamConfig base_cfg) {
  double best_lambda = grid.at(0), best_cer = 1e300;
  std::vector<std::pair<double, double>> curve;
  for (double lambda : grid) {
    BeamConfig cfg = base_cfg;
    cfg.lambda = lambda;
    auto decoded = decode_corpus(model, lambda == 0.0 ? nullptr : &lm, utts, cfg);
    auto result = evaluate_decoded<T>(refs, decoded, model.vocab(), scheme, rules);
    curve.push_back({lambda, result.cer.rate()});
    if (result.cer.rate() < best_cer) {
      best_cer = result.cer.rate();
      best_lambda = lambda;
    }
  }
  return {best_lambda, curve};
}

// ---------------------------------------------------------------------------
// curriculum orchestration

struct CurriculumStage {
  std::string name;
  std::string scheme;  // "ASR" | "AllWords-C" | "SupWords-C" | "NormValues-C"
  std::string init;    // "fresh" | "from:<stage>" | "extend:<stage>"
  std::string corpus_filter;  // domain filter, empty = all
  int epochs = 10;
};

struct CorpusBundle {
  std::vector<Utterance> utterances;  // with split labels
  std::vector<FeatureMatrix> features;  // parallel to utterances
  std::vector<std::string> concepts;
};

inline std::vector<TrainSample> stage_samples(const CorpusBundle& corpus,
                                              const std::string& split,
                                              const std::string& domain_filter,
                                              const std::string& scheme_name_str,
                                              const Vocabulary& vocab) {
  const bool asr = scheme_name_str == "ASR";
  const Scheme scheme = asr ? Scheme::AllWordsC : scheme_from_name(scheme_name_str);
  std::vector<TrainSample> out;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const auto& u = corpus.utterances[i];
    if (u.split != split) continue;
    if (!domain_filter.empty() && u.domain != domain_filter) continue;
    out.push_back({u.id, corpus.features[i], target_ids(u, scheme, !asr, vocab)});
  }
  return out;
}

template <typename T>
Vocabulary stage_vocabulary(const CurriculumStage& stage,
                            const std::vector<std::string>& concepts) {
  if (stage.scheme == "ASR") return Vocabulary::base();
  return Vocabulary::with_concepts(concepts);
}

// Executes stages in order inside workdir. The ASR->SLU boundary uses
// extend_output_layer so earlier training is fully reused; later SLU stages
// typically initialize "from:" the AllWords-C checkpoint. Re-running a
// completed stage list is a no-op returning the recorded manifest.
template <typename T>
nlohmann::json run_curriculum(const std::vector<CurriculumStage>& stages,
                              const CorpusBundle& corpus, const std::string& workdir,
                              const ModelConfig& model_cfg, const TrainConfig& base_cfg) {
  namespace fs = std::filesystem;
  if (stages.empty()) throw ConfigError("curriculum: empty stage list");
  fs::create_directories(workdir);
  const std::string manifest_path = workdir + "/manifest.json";
  nlohmann::json manifest;
  if (fs::exists(manifest_path)) {
    std::ifstream f(manifest_path);
    manifest = nlohmann::json::parse(f);
  } else {
    manifest["stages"] = nlohmann::json::array();
  }
  nlohmann::json cfg_desc;
  cfg_desc["model"] = model_cfg.to_json();
  cfg_desc["seed"] = base_cfg.seed;
  manifest["config_hash"] =
      std::to_string(fnv1a(cfg_desc.dump() + std::to_string(stages.size())));

  auto stage_record = [&](const std::string& name) -> nlohmann::json* {
    for (auto& s : manifest["stages"])
      if (s["name"] == name) return &s;
    return nullptr;
  };

  for (const auto& stage : stages) {
    const std::string ckpt_path = workdir + "/" + stage.name + ".ckpt";
    if (auto* rec = stage_record(stage.name); rec && fs::exists(ckpt_path)) continue;

    Vocabulary vocab = stage_vocabulary<T>(stage, corpus.concepts);
    std::unique_ptr<Seq2SeqModel<T>> model;
    if (stage.init == "fresh") {
      Rng rng(base_cfg.seed);
      model = std::make_unique<Seq2SeqModel<T>>(model_cfg, vocab, rng);
    } else if (stage.init.rfind("from:", 0) == 0) {
      const std::string src = workdir + "/" + stage.init.substr(5) + ".ckpt";
      if (!fs::exists(src)) throw ConfigError("curriculum: missing checkpoint " + src);
      model = std::make_unique<Seq2SeqModel<T>>(
          Seq2SeqModel<T>::from_checkpoint(Checkpoint::load(src)));
      if (!(model->vocab() == vocab))
        throw VocabularyError("curriculum: stage '" + stage.name +
                              "' vocabulary differs from source checkpoint");
    } else if (stage.init.rfind("extend:", 0) == 0) {
      const std::string src = workdir + "/" + stage.init.substr(7) + ".ckpt";
      if (!fs::exists(src)) throw ConfigError("curriculum: missing checkpoint " + src);
      auto extended = extend_output_layer(
          Checkpoint::load(src), Vocabulary::concept_extension_symbols(corpus.concepts),
          base_cfg.seed);
      model = std::make_unique<Seq2SeqModel<T>>(Seq2SeqModel<T>::from_checkpoint(extended));
    } else {
      throw ConfigError("curriculum: unknown init '" + stage.init + "'");
    }

    auto train = stage_samples(corpus, "train", stage.corpus_filter, stage.scheme,
                               model->vocab());
    auto dev = stage_samples(corpus, "dev", stage.corpus_filter, stage.scheme,
                             model->vocab());
    if (train.empty()) throw DataError("curriculum: stage '" + stage.name +
                                       "' selects no training utterances");
    TrainConfig cfg = base_cfg;
    cfg.epochs = stage.epochs;
    auto result = train_seq2seq(*model, train, dev, cfg);

    // dev CER after the stage (greedy; SLU stages only)
    double dev_cer = -1.0;
    if (stage.scheme != "ASR") {
      const Scheme scheme = scheme_from_name(stage.scheme);
      BeamConfig bc;
      bc.beam = 1;
      auto decoded = decode_corpus(*model, static_cast<CharLm<T>*>(nullptr), dev, bc);
      std::vector<Utterance> dev_refs;
      for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
        const auto& u = corpus.utterances[i];
        if (u.split == "dev" &&
            (stage.corpus_filter.empty() || u.domain == stage.corpus_filter))
          dev_refs.push_back(u);
      }
      dev_cer = evaluate_decoded<T>(dev_refs, decoded, model->vocab(), scheme, nullptr)
                    .cer.rate();
    }

    model->to_checkpoint().save(ckpt_path);
    nlohmann::json rec;
    rec["name"] = stage.name;
    rec["scheme"] = stage.scheme;
    rec["init"] = stage.init;
    rec["checkpoint"] = ckpt_path;
    rec["epochs_run"] = result.history.size();
    rec["best_epoch"] = result.best_epoch;
    rec["dev_loss"] = result.best_dev_loss;
    if (dev_cer >= 0) rec["dev_cer"] = dev_cer;
    nlohmann::json losses = nlohmann::json::array();
    for (const auto& h : result.history) losses.push_back(h.train_loss);
    rec["train_losses"] = losses;
    if (auto* old = stage_record(stage.name))
      *old = rec;
    else
      manifest["stages"].push_back(rec);
    std::ofstream f(manifest_path);
    f << manifest.dump(2) << "\n";
  }
  {
    std::ofstream f(manifest_path);
    f << manifest.dump(2) << "\n";
  }
  return manifest;
}

}  // namespace slue
