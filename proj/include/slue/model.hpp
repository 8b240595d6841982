#pragma once

// Attention encoder-decoder: 2-d conv blocks (batch norm + tanh, stride 2 in
// time for 4x subsampling) feeding stacked biLSTM layers; additive attention
// over the encoder states; LSTM decoder with a two-layer output head.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "slue/checkpoint.hpp"
#include "slue/common.hpp"
#include "slue/dsp.hpp"
#include "slue/tensor.hpp"
#include "slue/vocab.hpp"

namespace slue {

struct ConvBlockCfg {
  int out_ch = 32;
  int kh = 3, kw = 3;
  int sh = 1, sw = 1;
};

struct ModelConfig {
  int n_mels = 40;
  std::vector<ConvBlockCfg> conv;
  int enc_layers = 4;
  int d_h = 320;  // encoder hidden per direction
  int dec_layers = 4;
  int d_dec = 320;
  int embed_dim = 64;
  int att_dim = 320;
  int fc_dim = 320;

  // paper-scale: 4 conv blocks 32/32/64/64, stride 2 in time at blocks 1
  // and 3, frequency preserved then flattened into the biLSTM input
  static ModelConfig full_scale() {
    ModelConfig c;
    c.conv = {{32, 3, 3, 2, 1}, {32, 3, 3, 1, 1}, {64, 3, 3, 2, 1}, {64, 3, 3, 1, 1}};
    return c;
  }

  // desk-scale profile for tests and the synthetic task
  static ModelConfig tiny() {
    ModelConfig c;
    c.conv = {{16, 3, 3, 2, 2}, {16, 3, 3, 2, 2}};
    c.enc_layers = 1;
    c.d_h = 64;
    c.dec_layers = 1;
    c.d_dec = 64;
    c.embed_dim = 32;
    c.att_dim = 64;
    c.fc_dim = 64;
    return c;
  }

  int time_subsampling() const {
    int s = 1;
    for (const auto& b : conv) s *= b.sh;
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["n_mels"] = n_mels;
    j["conv"] = nlohmann::json::array();
    for (const auto& b : conv)
      j["conv"].push_back({{"out_ch", b.out_ch}, {"kh", b.kh}, {"kw", b.kw},
                           {"sh", b.sh}, {"sw", b.sw}});
    j["enc_layers"] = enc_layers;
    j["d_h"] = d_h;
    j["dec_layers"] = dec_layers;
    j["d_dec"] = d_dec;
    j["embed_dim"] = embed_dim;
    j["att_dim"] = att_dim;
    j["fc_dim"] = fc_dim;
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_mels = j.at("n_mels").get<int>();
    c.conv.clear();
    for (const auto& b : j.at("conv"))
      c.conv.push_back({b.at("out_ch").get<int>(), b.at("kh").get<int>(),
                        b.at("kw").get<int>(), b.at("sh").get<int>(),
                        b.at("sw").get<int>()});
    c.enc_layers = j.at("enc_layers").get<int>();
    c.d_h = j.at("d_h").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.d_dec = j.at("d_dec").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.att_dim = j.at("att_dim").get<int>();
    c.fc_dim = j.at("fc_dim").get<int>();
    return c;
  }
};

template <typename T>
struct LstmCellParams {
  Tensor<T> wih;  // [in, 4h], gate order i,f,g,o
  Tensor<T> whh;  // [h, 4h]
  Tensor<T> b;    // [4h]

  static LstmCellParams init(int in, int h, Rng& rng) {
    LstmCellParams p;
    const T s_ih = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
    const T s_hh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(h)));
    p.wih = Tensor<T>::randn({in, 4 * h}, rng, s_ih);
    p.whh = Tensor<T>::randn({h, 4 * h}, rng, s_hh);
    p.b = Tensor<T>::zeros({4 * h}, true);
    for (int i = h; i < 2 * h; ++i) p.b.data()[i] = T(1);  // forget-gate bias
    return p;
  }
};

template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_step(const LstmCellParams<T>& p,
                                          const Tensor<T>& x, const Tensor<T>& h,
                                          const Tensor<T>& c) {
  const int hd = p.whh.shape()[0];
  auto gates = add(add(matmul(x, p.wih), matmul(h, p.whh)), p.b);
  auto i = sigmoid_t(slice_flat(gates, 0, hd));
  auto f = sigmoid_t(slice_flat(gates, hd, hd));
  auto g = tanh_t(slice_flat(gates, 2 * hd, hd));
  auto o = sigmoid_t(slice_flat(gates, 3 * hd, hd));
  auto c_new = add(mul(f, c), mul(i, g));
  auto h_new = mul(o, tanh_t(c_new));
  return {h_new, c_new};
}

template <typename T>
struct EncoderOutput {
  Tensor<T> states;     // [T_enc, 2*d_h]
  Tensor<T> projected;  // [T_enc, att_dim], attention key projection U*H
  int subsampling_factor = 4;
  int t_enc() const { return states.shape()[0]; }
};

template <typename T>
struct DecoderState {
  std::vector<std::pair<Tensor<T>, Tensor<T>>> hc;  // per layer (h, c), [1,d]

  std::vector<T> serialize() const {
    std::vector<T> out;
    for (const auto& [h, c] : hc) {
      out.insert(out.end(), h.data().begin(), h.data().end());
      out.insert(out.end(), c.data().begin(), c.data().end());
    }
    return out;
  }

  static DecoderState deserialize(const std::vector<T>& flat, int layers, int d) {
    DecoderState s;
    std::size_t off = 0;
    for (int l = 0; l < layers; ++l) {
      std::vector<T> h(flat.begin() + off, flat.begin() + off + d);
      off += d;
      std::vector<T> c(flat.begin() + off, flat.begin() + off + d);
      off += d;
      s.hc.push_back({Tensor<T>::from({1, d}, std::move(h)),
                      Tensor<T>::from({1, d}, std::move(c))});
    }
    return s;
  }
};

template <typename T>
struct StepResult {
  Tensor<T> logits;  // [1, |V|]
  DecoderState<T> state;
  Tensor<T> attention;  // [T_enc, 1], softmax-normalized
};

template <typename T>
class Seq2SeqModel {
 public:
  bool train_mode = true;

  Seq2SeqModel(ModelConfig cfg, Vocabulary vocab, Rng& rng)
      : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
    init_params(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }

  EncoderOutput<T> encode(const FeatureMatrix& x) {
    if (x.n_mels != cfg_.n_mels)
      throw ShapeError("encode: feature width " + std::to_string(x.n_mels) +
                       " != configured n_mels " + std::to_string(cfg_.n_mels));
    if (x.frames() < cfg_.time_subsampling())
      throw DataError("encode: input of " + std::to_string(x.frames()) +
                      " frames shorter than the subsampling receptive field");
    std::vector<T> data(x.data.begin(), x.data.end());
    auto cur = Tensor<T>::from({1, x.frames(), x.n_mels}, std::move(data));
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      const auto& b = cfg_.conv[i];
      cur = conv2d(cur, conv_w_[i], conv_b_[i], b.sh, b.sw, b.kh / 2, b.kw / 2);
      cur = batch_norm(cur, bn_gamma_[i], bn_beta_[i], bn_mean_[i], bn_var_[i],
                       train_mode);
      cur = tanh_t(cur);
    }
    auto rows_mat = channels_to_rows(cur);  // [T_enc, C*F]
    const int t_enc = rows_mat.shape()[0];
    std::vector<Tensor<T>> rows;
    rows.reserve(t_enc);
    for (int t = 0; t < t_enc; ++t)
      rows.push_back(slice_flat(rows_mat, t * rows_mat.shape()[1], rows_mat.shape()[1]));
    for (int l = 0; l < cfg_.enc_layers; ++l) rows = bilstm_layer(l, rows);
    EncoderOutput<T> out;
    out.states = stack_rows(rows);
    out.projected = matmul(out.states, att_u_);
    out.subsampling_factor = cfg_.time_subsampling();
    return out;
  }

  // additive attention: e_j = v . tanh(W s + U h_j + b)
  std::pair<Tensor<T>, Tensor<T>> attend(const Tensor<T>& s_prev,
                                         const EncoderOutput<T>& enc) {
    auto query = add(matmul(s_prev, att_w_), att_b_);      // [1, a]
    auto scores = matmul(tanh_t(add(enc.projected, query)), att_v_);  // [T,1]
    auto alpha = softmax_flat(scores);
    auto context = matmul(transpose(alpha), enc.states);  // [1, 2*d_h]
    return {context, alpha};
  }

  DecoderState<T> initial_state() const {
    DecoderState<T> s;
    for (int l = 0; l < cfg_.dec_layers; ++l)
      s.hc.push_back({Tensor<T>::zeros({1, cfg_.d_dec}), Tensor<T>::zeros({1, cfg_.d_dec})});
    return s;
  }

  StepResult<T> decode_step(int y_prev, const DecoderState<T>& state,
                            const EncoderOutput<T>& enc) {
    if (y_prev < 0 || y_prev >= vocab_.size())
      throw VocabularyError("decode_step: symbol id " + std::to_string(y_prev) +
                            " outside vocabulary of " + std::to_string(vocab_.size()));
    auto [context, alpha] = attend(state.hc.back().first, enc);
    auto x = concat1d(take_row(embed_, y_prev), context);
    StepResult<T> out;
    out.state.hc.reserve(cfg_.dec_layers);
    for (int l = 0; l < cfg_.dec_layers; ++l) {
      auto [h, c] = lstm_step(dec_lstm_[l], x, state.hc[l].first, state.hc[l].second);
      out.state.hc.push_back({h, c});
      x = h;
    }
    auto hidden = tanh_t(add(matmul(x, fc1_w_), fc1_b_));
    out.logits = add(matmul(hidden, fc2_w_), fc2_b_);
    out.attention = alpha;
    return out;
  }

  // mean per-symbol NLL under teacher forcing; target must end with </s>
  Tensor<T> teacher_forced_loss(const FeatureMatrix& x, const std::vector<int>& target) {
    if (target.empty() || target.back() != vocab_.eos())
      throw DataError("teacher_forced_loss: target must be non-empty and end with " +
                      std::string(Vocabulary::kEos));
    for (int y : target)
      if (y < 0 || y >= vocab_.size())
        throw VocabularyError("teacher_forced_loss: symbol id " + std::to_string(y) +
                              " outside vocabulary");
    auto enc = encode(x);
    auto state = initial_state();
    int y_prev = vocab_.sos();
    Tensor<T> total = Tensor<T>::scalar(T(0));
    for (int y : target) {
      auto step = decode_step(y_prev, state, enc);
      total = add(total, nll(log_softmax_flat(step.logits), y));
      state = std::move(step.state);
      y_prev = y;
    }
    return scale(total, T(1) / static_cast<T>(target.size()));
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      const std::string p = "enc.conv" + std::to_string(i);
      out.push_back({p + ".w", conv_w_[i]});
      out.push_back({p + ".b", conv_b_[i]});
      out.push_back({p + ".bn.gamma", bn_gamma_[i]});
      out.push_back({p + ".bn.beta", bn_beta_[i]});
    }
    for (int l = 0; l < cfg_.enc_layers; ++l) {
      for (int dir = 0; dir < 2; ++dir) {
        const std::string p = "enc.lstm" + std::to_string(l) +
                              (dir == 0 ? ".fwd" : ".bwd");
        auto& cell = enc_lstm_[l * 2 + dir];
        out.push_back({p + ".wih", cell.wih});
        out.push_back({p + ".whh", cell.whh});
        out.push_back({p + ".b", cell.b});
      }
    }
    out.push_back({"att.w", att_w_});
    out.push_back({"att.u", att_u_});
    out.push_back({"att.b", att_b_});
    out.push_back({"att.v", att_v_});
    out.push_back({"dec.embed", embed_});
    for (int l = 0; l < cfg_.dec_layers; ++l) {
      const std::string p = "dec.lstm" + std::to_string(l);
      out.push_back({p + ".wih", dec_lstm_[l].wih});
      out.push_back({p + ".whh", dec_lstm_[l].whh});
      out.push_back({p + ".b", dec_lstm_[l].b});
    }
    out.push_back({"dec.fc1.w", fc1_w_});
    out.push_back({"dec.fc1.b", fc1_b_});
    out.push_back({"dec.fc2.w", fc2_w_});
    out.push_back({"dec.fc2.b", fc2_b_});
    return out;
  }

  // running batch-norm statistics (saved, not trained)
  std::vector<std::pair<std::string, Tensor<T>>> named_buffers() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      const std::string p = "enc.conv" + std::to_string(i) + ".bn";
      out.push_back({p + ".running_mean", bn_mean_[i]});
      out.push_back({p + ".running_var", bn_var_[i]});
    }
    return out;
  }

  Checkpoint to_checkpoint() {
    Checkpoint ck;
    ck.metadata["kind"] = "seq2seq";
    ck.metadata["vocab"] = vocab_.to_json();
    ck.metadata["config"] = cfg_.to_json();
    for (auto& [name, t] : named_parameters())
      ck.put(name, t.shape(), to_f32(t.data()));
    for (auto& [name, t] : named_buffers())
      ck.put(name, t.shape(), to_f32(t.data()));
    return ck;
  }

  static Seq2SeqModel from_checkpoint(const Checkpoint& ck) {
    if (ck.metadata.value("kind", "") != "seq2seq")
      throw ConfigError("checkpoint is not a seq2seq model");
    auto cfg = ModelConfig::from_json(ck.metadata.at("config"));
    auto vocab = Vocabulary::from_json(ck.metadata.at("vocab"));
    Rng rng(0);
    Seq2SeqModel m(cfg, vocab, rng);
    for (auto& [name, t] : m.named_parameters()) load_into(ck, name, t);
    for (auto& [name, t] : m.named_buffers()) load_into(ck, name, t);
    return m;
  }

 private:
  static std::vector<float> to_f32(const std::vector<T>& v) {
    return std::vector<float>(v.begin(), v.end());
  }

  static void load_into(const Checkpoint& ck, const std::string& name, Tensor<T>& t) {
    const auto& e = ck.get(name);
    if (e.shape != t.shape())
      throw ShapeError("checkpoint tensor '" + name + "' has shape " +
                       shape_str(e.shape) + ", expected " + shape_str(t.shape()));
    for (std::size_t i = 0; i < e.data.size(); ++i)
      t.data()[i] = static_cast<T>(e.data[i]);
  }

  std::vector<Tensor<T>> bilstm_layer(int l, const std::vector<Tensor<T>>& rows) {
    const int t_len = static_cast<int>(rows.size());
    auto& fwd = enc_lstm_[l * 2];
    auto& bwd = enc_lstm_[l * 2 + 1];
    std::vector<Tensor<T>> hf(t_len), hb(t_len);
    auto h = Tensor<T>::zeros({1, cfg_.d_h});
    auto c = Tensor<T>::zeros({1, cfg_.d_h});
    for (int t = 0; t < t_len; ++t) {
      auto [hn, cn] = lstm_step(fwd, rows[t], h, c);
      hf[t] = h = hn;
      c = cn;
    }
    h = Tensor<T>::zeros({1, cfg_.d_h});
    c = Tensor<T>::zeros({1, cfg_.d_h});
    for (int t = t_len - 1; t >= 0; --t) {
      auto [hn, cn] = lstm_step(bwd, rows[t], h, c);
      hb[t] = h = hn;
      c = cn;
    }
    std::vector<Tensor<T>> out(t_len);
    for (int t = 0; t < t_len; ++t) out[t] = concat1d(hf[t], hb[t]);
    return out;
  }

  void init_params(Rng& rng) {
    int in_ch = 1, freq = cfg_.n_mels;
    for (const auto& b : cfg_.conv) {
      const T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in_ch * b.kh * b.kw)));
      conv_w_.push_back(Tensor<T>::randn({b.out_ch, in_ch, b.kh, b.kw}, rng, s));
      conv_b_.push_back(Tensor<T>::zeros({b.out_ch}, true));
      auto gamma = Tensor<T>::zeros({b.out_ch}, true);
      std::fill(gamma.data().begin(), gamma.data().end(), T(1));
      bn_gamma_.push_back(gamma);
      bn_beta_.push_back(Tensor<T>::zeros({b.out_ch}, true));
      bn_mean_.push_back(Tensor<T>::zeros({b.out_ch}));
      auto rv = Tensor<T>::zeros({b.out_ch});
      std::fill(rv.data().begin(), rv.data().end(), T(1));
      bn_var_.push_back(rv);
      in_ch = b.out_ch;
      freq = (freq + 2 * (b.kw / 2) - b.kw) / b.sw + 1;
    }
    int lstm_in = in_ch * freq;
    for (int l = 0; l < cfg_.enc_layers; ++l) {
      enc_lstm_.push_back(LstmCellParams<T>::init(lstm_in, cfg_.d_h, rng));
      enc_lstm_.push_back(LstmCellParams<T>::init(lstm_in, cfg_.d_h, rng));
      lstm_in = 2 * cfg_.d_h;
    }
    const int enc_width = 2 * cfg_.d_h;
    const T sa = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg_.att_dim)));
    att_w_ = Tensor<T>::randn({cfg_.d_dec, cfg_.att_dim}, rng,
                              static_cast<T>(1.0 / std::sqrt((double)cfg_.d_dec)));
    att_u_ = Tensor<T>::randn({enc_width, cfg_.att_dim}, rng,
                              static_cast<T>(1.0 / std::sqrt((double)enc_width)));
    att_b_ = Tensor<T>::zeros({cfg_.att_dim}, true);
    att_v_ = Tensor<T>::randn({cfg_.att_dim, 1}, rng, sa);
    embed_ = Tensor<T>::randn({vocab_.size(), cfg_.embed_dim}, rng, T(0.1));
    int dec_in = cfg_.embed_dim + enc_width;
    for (int l = 0; l < cfg_.dec_layers; ++l) {
      dec_lstm_.push_back(LstmCellParams<T>::init(dec_in, cfg_.d_dec, rng));
      dec_in = cfg_.d_dec;
    }
    fc1_w_ = Tensor<T>::randn({cfg_.d_dec, cfg_.fc_dim}, rng,
                              static_cast<T>(1.0 / std::sqrt((double)cfg_.d_dec)));
    fc1_b_ = Tensor<T>::zeros({cfg_.fc_dim}, true);
    fc2_w_ = Tensor<T>::randn({cfg_.fc_dim, vocab_.size()}, rng, T(0.01));
    fc2_b_ = Tensor<T>::zeros({vocab_.size()}, true);
  }

  ModelConfig cfg_;
  Vocabulary vocab_;
  std::vector<Tensor<T>> conv_w_, conv_b_, bn_gamma_, bn_beta_, bn_mean_, bn_var_;
  std::vector<LstmCellParams<T>> enc_lstm_;  // [layer*2 + dir]
  Tensor<T> att_w_, att_u_, att_b_, att_v_;
  Tensor<T> embed_;
  std::vector<LstmCellParams<T>> dec_lstm_;
  Tensor<T> fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

// Append output-layer columns (and embedding rows) for new symbols; every
// existing parameter value is left bit-identical. Operates directly on the
// checkpoint so the transfer step needs no model evaluation.
inline Checkpoint extend_output_layer(const Checkpoint& src,
                                      const std::vector<std::string>& new_symbols,
                                      std::uint64_t seed = 1234) {
  auto vocab = Vocabulary::from_json(src.metadata.at("vocab"));
  for (const auto& s : new_symbols)
    if (vocab.contains(s))
      throw VocabularyError("extend_output_layer: symbol '" + s + "' already present");
  Checkpoint out = src;
  const int k = static_cast<int>(new_symbols.size());
  Rng rng(seed);
  {
    auto& w = out.get_mutable("dec.fc2.w");
    const int fc = w.shape[0], v_old = w.shape[1];
    std::vector<float> nw(static_cast<std::size_t>(fc) * (v_old + k));
    for (int i = 0; i < fc; ++i) {
      for (int j = 0; j < v_old; ++j)
        nw[static_cast<std::size_t>(i) * (v_old + k) + j] =
            w.data[static_cast<std::size_t>(i) * v_old + j];
      for (int j = 0; j < k; ++j)
        nw[static_cast<std::size_t>(i) * (v_old + k) + v_old + j] =
            static_cast<float>(rng.normal()) * 0.01f;
    }
    w.shape = {fc, v_old + k};
    w.data = std::move(nw);
  }
  {
    auto& b = out.get_mutable("dec.fc2.b");
    for (int j = 0; j < k; ++j) b.data.push_back(0.0f);
    b.shape = {b.shape[0] + k};
  }
  {
    auto& e = out.get_mutable("dec.embed");
    const int dim = e.shape[1];
    for (int j = 0; j < k * dim; ++j)
      e.data.push_back(static_cast<float>(rng.normal()) * 0.01f);
    e.shape = {e.shape[0] + k, dim};
  }
  vocab.extend(new_symbols);
  out.metadata["vocab"] = vocab.to_json();
  return out;
}

}  // namespace slue
