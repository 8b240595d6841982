// Command-line front end: corpus generation, training (seq2seq and LM,
// single stage or curriculum), decoding, scoring, and LM-weight tuning.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slue/beam.hpp"
#include "slue/codec.hpp"
#include "slue/common.hpp"
#include "slue/dsp.hpp"
#include "slue/eval.hpp"
#include "slue/lm.hpp"
#include "slue/model.hpp"
#include "slue/synth.hpp"
#include "slue/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

slue::CorpusBundle load_bundle(const std::string& dir) {
  slue::CorpusBundle bundle;
  bundle.utterances = slue::load_corpus(dir + "/corpus.jsonl");
  std::ifstream mf(dir + "/corpus_manifest.json");
  if (!mf) throw slue::DataError("missing " + dir + "/corpus_manifest.json");
  json manifest = json::parse(mf);
  bundle.concepts = manifest.at("concepts").get<std::vector<std::string>>();
  bundle.features.reserve(bundle.utterances.size());
  for (const auto& u : bundle.utterances) {
    if (u.audio.empty())
      throw slue::DataError("utterance " + u.id + " has no feature file");
    bundle.features.push_back(slue::load_fbank(dir + "/" + u.audio));
  }
  return bundle;
}

std::vector<slue::TrainSample> split_samples(const slue::CorpusBundle& bundle,
                                             const std::string& split,
                                             const std::string& scheme,
                                             const slue::Vocabulary& vocab) {
  return slue::stage_samples(bundle, split, "", scheme, vocab);
}

std::vector<slue::Utterance> split_refs(const slue::CorpusBundle& bundle,
                                        const std::string& split) {
  std::vector<slue::Utterance> out;
  for (const auto& u : bundle.utterances)
    if (u.split == split) out.push_back(u);
  return out;
}

slue::CurriculumStage parse_stage(const std::string& spec) {
  slue::CurriculumStage st;
  std::istringstream is(spec);
  std::string kv;
  while (std::getline(is, kv, ',')) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw slue::ConfigError("bad stage spec item '" + kv + "'");
    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    if (key == "name")
      st.name = val;
    else if (key == "scheme")
      st.scheme = val;
    else if (key == "init")
      st.init = val;
    else if (key == "epochs")
      st.epochs = std::stoi(val);
    else if (key == "filter")
      st.corpus_filter = val;
    else
      throw slue::ConfigError("unknown stage key '" + key + "'");
  }
  if (st.name.empty() || st.scheme.empty() || st.init.empty())
    throw slue::ConfigError("stage spec needs name=, scheme=, init=");
  return st;
}

int run(int argc, char** argv) {
  CLI::App app{"end-to-end spoken language understanding toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file; flags override");

  // ---- corpus-gen
  auto* gen = app.add_subcommand("corpus-gen", "generate the synthetic corpus");
  std::string gen_out = "corpus";
  std::size_t gen_n = 2500;
  std::uint64_t gen_seed = 1;
  int gen_domains = 1;
  double gen_noise = 0.4, gen_jitter = 0.3, gen_repetition = 0.15;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--n", gen_n, "utterances per domain");
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--domains", gen_domains, "1 or 2 synthetic domains")
      ->check(CLI::Range(1, 2));
  gen->add_option("--noise", gen_noise, "feature noise sigma");
  gen->add_option("--jitter", gen_jitter, "duration jitter fraction");
  gen->add_option("--repetition", gen_repetition, "self-correction fraction");

  // ---- train
  auto* train = app.add_subcommand("train", "train a model (stages) or the LM");
  std::string tr_corpus = "corpus", tr_workdir = "run", tr_component = "s2s";
  std::string tr_profile = "tiny", tr_lm_scheme = "AllWords-C";
  std::vector<std::string> tr_stages;
  slue::TrainConfig tr_cfg;
  train->add_option("--corpus", tr_corpus, "corpus directory");
  train->add_option("--workdir", tr_workdir, "run directory for checkpoints/manifest");
  train->add_option("--component", tr_component, "s2s | lm");
  train->add_option("--profile", tr_profile, "tiny | full");
  train->add_option("--stage", tr_stages,
                    "curriculum stage: name=..,scheme=..,init=..,epochs=..[,filter=..]");
  train->add_option("--scheme", tr_lm_scheme, "LM target scheme (component=lm)");
  train->add_option("--epochs", tr_cfg.epochs, "max epochs per stage (LM mode)");
  train->add_option("--lr", tr_cfg.lr, "learning rate");
  train->add_option("--clip", tr_cfg.clip, "gradient clipping global norm");
  train->add_option("--patience", tr_cfg.patience, "early-stop patience");
  train->add_option("--seed", tr_cfg.seed, "training seed");
  train->add_flag("--verbose", tr_cfg.verbose, "log per-epoch losses");

  // ---- decode
  auto* dec = app.add_subcommand("decode", "beam decoding to N-best JSONL");
  std::string de_model, de_lm = "none", de_corpus = "corpus", de_split = "dev";
  std::string de_out = "nbest.jsonl", de_lexicon;
  slue::BeamConfig de_cfg;
  dec->add_option("--model", de_model, "seq2seq checkpoint")->required();
  dec->add_option("--lm", de_lm, "LM checkpoint, or 'none'");
  dec->add_option("--corpus", de_corpus, "corpus directory");
  dec->add_option("--split", de_split, "train | dev | test");
  dec->add_option("--out", de_out, "output JSONL");
  dec->add_option("--beam", de_cfg.beam, "beam width");
  dec->add_option("--nbest", de_cfg.nbest, "hypotheses per utterance");
  dec->add_option("--lambda", de_cfg.lambda, "LM fusion weight");
  dec->add_option("--length-bonus", de_cfg.length_bonus, "per-symbol bonus");
  dec->add_option("--lexicon", de_lexicon, "enable word look-ahead from this lexicon");

  // ---- score
  auto* sc = app.add_subcommand("score", "CER/CVER scoring");
  std::string sc_ref, sc_hyp, sc_scheme = "AllWords-C", sc_rules = "none";
  std::string sc_out;
  sc->add_option("--ref", sc_ref, "reference corpus.jsonl (or nbest JSONL)")->required();
  sc->add_option("--hyp", sc_hyp, "hypothesis nbest JSONL")->required();
  sc->add_option("--scheme", sc_scheme, "output scheme of the hypotheses");
  sc->add_option("--rules", sc_rules, "normalization rules file, or 'none'");
  sc->add_option("--out", sc_out, "write machine-readable JSON report here");

  // ---- tune-lambda
  auto* tl = app.add_subcommand("tune-lambda", "grid-search the LM weight on dev CER");
  std::string tl_model, tl_lm, tl_corpus = "corpus", tl_split = "dev";
  std::string tl_scheme = "AllWords-C", tl_rules = "none", tl_out = "decode.cfg";
  std::string tl_grid = "0,0.1,0.2,0.3,0.4,0.5";
  slue::BeamConfig tl_cfg;
  tl->add_option("--model", tl_model, "seq2seq checkpoint")->required();
  tl->add_option("--lm", tl_lm, "LM checkpoint")->required();
  tl->add_option("--corpus", tl_corpus, "corpus directory");
  tl->add_option("--split", tl_split, "tuning split");
  tl->add_option("--scheme", tl_scheme, "output scheme");
  tl->add_option("--rules", tl_rules, "normalization rules file, or 'none'");
  tl->add_option("--grid", tl_grid, "comma-separated lambda grid");
  tl->add_option("--beam", tl_cfg.beam, "beam width");
  tl->add_option("--out", tl_out, "decode config file to write the best lambda into");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // collapse CLI11's per-error exit codes onto the documented usage code
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (gen->parsed()) {
    fs::create_directories(gen_out + "/features");
    std::vector<slue::Utterance> all;
    std::vector<std::string> concepts;
    for (int d = 0; d < gen_domains; ++d) {
      auto grammar = slue::DomainGrammar::default_grammar(d == 0 ? "lodging" : "shows");
      grammar.repetition_fraction = gen_repetition;
      if (d == 0) concepts = grammar.concept_names();
      auto corpus = slue::generate_corpus(grammar, gen_n, gen_seed + d);
      for (auto& u : corpus) all.push_back(std::move(u));
      if (d == 0) {
        grammar.norm_rules().save(gen_out + "/norm_rules.tsv");
        std::ofstream lex(gen_out + "/lexicon.txt");
        for (const auto& w : grammar.lexicon_words()) lex << w << "\n";
      }
    }
    auto acoustics = slue::SymbolAcoustics::make_default(40, gen_seed + 100);
    acoustics.noise = gen_noise;
    acoustics.jitter = gen_jitter;
    for (auto& u : all) {
      auto feats = slue::render_features(u.words, acoustics,
                                         slue::render_seed(gen_seed, u.id));
      u.audio = "features/" + u.id + ".fbnk";
      slue::save_fbank(feats, gen_out + "/" + u.audio);
    }
    slue::save_corpus(all, gen_out + "/corpus.jsonl");
    json manifest;
    manifest["concepts"] = concepts;
    manifest["seed"] = gen_seed;
    manifest["n"] = gen_n;
    manifest["domains"] = gen_domains;
    manifest["noise"] = gen_noise;
    json splits;
    for (const char* s : {"train", "dev", "test"}) {
      json ids = json::array();
      for (const auto& u : all)
        if (u.split == s) ids.push_back(u.id);
      splits[s] = ids;
    }
    manifest["splits"] = splits;
    std::ofstream(gen_out + "/corpus_manifest.json") << manifest.dump(2) << "\n";
    std::cout << "wrote " << all.size() << " utterances to " << gen_out << "\n";
    return 0;
  }

  if (train->parsed()) {
    auto bundle = load_bundle(tr_corpus);
    fs::create_directories(tr_workdir);
    if (tr_component == "lm") {
      auto vocab = slue::Vocabulary::with_concepts(bundle.concepts);
      const auto scheme = slue::scheme_from_name(tr_lm_scheme);
      std::vector<std::vector<int>> tr, dv;
      for (const auto& u : bundle.utterances) {
        auto ids = vocab.ids(slue::encode_target(u.words, u.spans, scheme));
        (u.split == "dev" ? dv : tr).push_back(std::move(ids));
      }
      slue::Rng rng(tr_cfg.seed);
      slue::CharLm<float> lm(slue::LmConfig::tiny(), vocab, rng);
      const double ppl = slue::lm_train(lm, tr, dv, tr_cfg);
      lm.to_checkpoint().save(tr_workdir + "/lm.ckpt");
      std::cout << "lm heldout perplexity " << ppl << ", checkpoint "
                << tr_workdir << "/lm.ckpt\n";
      return 0;
    }
    if (tr_stages.empty())
      throw slue::ConfigError("train: at least one --stage is required");
    std::vector<slue::CurriculumStage> stages;
    for (const auto& s : tr_stages) stages.push_back(parse_stage(s));
    const auto model_cfg = tr_profile == "full" ? slue::ModelConfig::full_scale()
                                                : slue::ModelConfig::tiny();
    auto manifest =
        slue::run_curriculum<float>(stages, bundle, tr_workdir, model_cfg, tr_cfg);
    std::cout << manifest.dump(2) << "\n";
    return 0;
  }

  if (dec->parsed()) {
    auto model = slue::Seq2SeqModel<float>::from_checkpoint(slue::Checkpoint::load(de_model));
    std::unique_ptr<slue::CharLm<float>> lm;
    if (de_lm != "none")
      lm = std::make_unique<slue::CharLm<float>>(
          slue::CharLm<float>::from_checkpoint(slue::Checkpoint::load(de_lm)));
    slue::LexiconTrie trie;
    if (!de_lexicon.empty()) {
      trie = slue::LexiconTrie::load(de_lexicon);
      de_cfg.lookahead = &trie;
    }
    auto bundle = load_bundle(de_corpus);
    auto samples = split_samples(bundle, de_split, "AllWords-C", model.vocab());
    std::ofstream out(de_out);
    if (!out) throw slue::DataError("cannot write " + de_out);
    for (const auto& s : samples) {
      auto nbest = slue::beam_search(model, lm.get(), s.features, de_cfg);
      out << slue::nbest_to_json(s.id, nbest, model.vocab()).dump() << "\n";
    }
    std::cout << "decoded " << samples.size() << " utterances to " << de_out << "\n";
    return 0;
  }

  auto load_pairs = [](const std::string& path, slue::Scheme scheme)
      -> std::vector<std::pair<std::string, std::vector<slue::ParsedPair>>> {
    std::ifstream f(path);
    if (!f) throw slue::DataError("cannot read " + path);
    std::vector<std::pair<std::string, std::vector<slue::ParsedPair>>> out;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      if (j.contains("nbest")) {
        auto syms = j["nbest"].at(0).at("symbols").get<std::vector<std::string>>();
        out.push_back({j.at("id").get<std::string>(), slue::parse_output(syms, scheme)});
      } else {
        auto u = slue::utterance_from_json(j);
        out.push_back({u.id, slue::annotation_pairs(u, scheme)});
      }
    }
    return out;
  };

  if (sc->parsed()) {
    const auto scheme = slue::scheme_from_name(sc_scheme);
    slue::NormRuleSet rules;
    const bool have_rules = sc_rules != "none";
    if (have_rules) rules = slue::NormRuleSet::load(sc_rules);
    auto all_refs = load_pairs(sc_ref, scheme);
    auto hyps = load_pairs(sc_hyp, scheme);
    // the reference file may cover more utterances (e.g. every split); keep
    // the ones that were decoded, in hypothesis order
    std::map<std::string, std::vector<slue::ParsedPair>> by_id;
    for (auto& [id, pairs] : all_refs) by_id.emplace(id, std::move(pairs));
    std::vector<std::pair<std::string, std::vector<slue::ParsedPair>>> refs;
    for (const auto& [id, pairs] : hyps) {
      auto it = by_id.find(id);
      if (it == by_id.end())
        throw slue::DataError("score: hypothesis id '" + id + "' not in reference");
      refs.push_back({id, it->second});
    }
    auto result =
        slue::evaluate_pairs(refs, hyps, scheme, have_rules ? &rules : nullptr);
    std::printf("CER  %.4f  (I=%zu D=%zu S=%zu N=%zu)\n", result.cer.rate(),
                result.cer.ins, result.cer.del, result.cer.sub, result.cer.n_ref);
    std::printf("CVER %.4f  (I=%zu D=%zu S=%zu N=%zu)\n", result.cver.rate(),
                result.cver.ins, result.cver.del, result.cver.sub, result.cver.n_ref);
    std::cout << slue::error_report_table(result.cer);
    json report;
    report["cer"] = result.cer.rate();
    report["cver"] = result.cver.rate();
    report["cer_detail"] = result.cer.to_json();
    report["cver_detail"] = result.cver.to_json();
    if (!sc_out.empty()) std::ofstream(sc_out) << report.dump(2) << "\n";
    return 0;
  }

  if (tl->parsed()) {
    auto model = slue::Seq2SeqModel<float>::from_checkpoint(slue::Checkpoint::load(tl_model));
    auto lm = slue::CharLm<float>::from_checkpoint(slue::Checkpoint::load(tl_lm));
    auto bundle = load_bundle(tl_corpus);
    auto samples = split_samples(bundle, tl_split, tl_scheme, model.vocab());
    auto refs = split_refs(bundle, tl_split);
    const auto scheme = slue::scheme_from_name(tl_scheme);
    slue::NormRuleSet rules;
    const bool have_rules = tl_rules != "none";
    if (have_rules) rules = slue::NormRuleSet::load(tl_rules);
    std::vector<double> grid;
    std::istringstream gs(tl_grid);
    std::string item;
    while (std::getline(gs, item, ',')) grid.push_back(std::stod(item));
    auto [best, curve] = slue::tune_lambda(model, lm, refs, samples, scheme,
                                           have_rules ? &rules : nullptr, grid, tl_cfg);
    for (const auto& [l, cer] : curve)
      std::printf("lambda %.2f  dev CER %.4f\n", l, cer);
    std::printf("best lambda %.2f\n", best);
    std::ofstream(tl_out) << "lambda=" << best << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const slue::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const slue::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const slue::ShapeError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  }
}
