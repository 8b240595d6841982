// Compile-level smoke test: every public header builds together and the
// basic objects construct.

#include <gtest/gtest.h>

#include "slue/beam.hpp"
#include "slue/checkpoint.hpp"
#include "slue/codec.hpp"
#include "slue/common.hpp"
#include "slue/dsp.hpp"
#include "slue/eval.hpp"
#include "slue/lm.hpp"
#include "slue/model.hpp"
#include "slue/synth.hpp"
#include "slue/tensor.hpp"
#include "slue/train.hpp"
#include "slue/vocab.hpp"

TEST(Smoke, Constructs) {
  auto vocab = slue::Vocabulary::base();
  EXPECT_GT(vocab.size(), 20);
  slue::Rng rng(1);
  slue::Seq2SeqModel<float> model(slue::ModelConfig::tiny(), vocab, rng);
  EXPECT_EQ(model.vocab().size(), vocab.size());
  slue::CharLm<float> lm(slue::LmConfig::tiny(), vocab, rng);
  auto g = slue::DomainGrammar::default_grammar();
  EXPECT_EQ(g.concepts.size(), 20u);
}
