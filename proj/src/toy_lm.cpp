#include "gendie/toy_lm.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "gendie/rng.hpp"

namespace gendie {

using nlohmann::json;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using MapC = Eigen::Map<const RowMatrix>;
using MapM = Eigen::Map<RowMatrix>;
using MapCRow = Eigen::Map<const RowVectorXd>;
using MapRow = Eigen::Map<RowVectorXd>;

namespace {

constexpr double kRmsEps = 1e-6;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u))); }

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

// y = x / rms(x) * g, row-wise.
void rms_forward(const RowMatrix& x, const double* gain, RowMatrix& normed, VectorXd& rms, RowMatrix& out) {
  const auto d = x.cols();
  normed.resize(x.rows(), d);
  rms.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    rms(i) = std::sqrt(x.row(i).squaredNorm() / static_cast<double>(d) + kRmsEps);
    normed.row(i) = x.row(i) / rms(i);
  }
  out = normed.array().rowwise() * MapCRow(gain, d).array();
}

RowMatrix rms_backward(const RowMatrix& dout, const RowMatrix& normed, const VectorXd& rms, const double* gain,
                       double* dgain) {
  const auto d = normed.cols();
  MapRow(dgain, d) += (dout.array() * normed.array()).colwise().sum().matrix();
  RowMatrix dn = dout.array().rowwise() * MapCRow(gain, d).array();
  RowMatrix dx(normed.rows(), d);
  for (Eigen::Index i = 0; i < normed.rows(); ++i) {
    const double proj = dn.row(i).dot(normed.row(i)) / static_cast<double>(d);
    dx.row(i) = (dn.row(i) - proj * normed.row(i)) / rms(i);
  }
  return dx;
}

void softmax_inplace(RowVectorXd& v) {
  const double mx = v.maxCoeff();
  v = (v.array() - mx).exp();
  v /= v.sum();
}

}  // namespace

json ToyLMConfig::to_json() const {
  return json{{"d_model", d_model}, {"n_heads", n_heads},           {"n_layers", n_layers},
              {"d_ff", d_ff},       {"context_window", context_window}, {"init_std", init_std},
              {"seed", seed}};
}

ToyLMConfig ToyLMConfig::from_json(const json& j) {
  ToyLMConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.context_window = j.value("context_window", c.context_window);
  c.init_std = j.value("init_std", c.init_std);
  c.seed = j.value("seed", c.seed);
  return c;
}

ParamLayout ParamLayout::make(std::size_t vocab, const ToyLMConfig& cfg) {
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto f = static_cast<std::size_t>(cfg.d_ff);
  ParamLayout l;
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  l.tok_emb = take(vocab * d);
  l.pos_emb = take(static_cast<std::size_t>(cfg.context_window) * d);
  for (int i = 0; i < cfg.n_layers; ++i) {
    Block b{};
    b.norm1 = take(d);
    b.wq = take(d * d);
    b.wk = take(d * d);
    b.wv = take(d * d);
    b.wo = take(d * d);
    b.norm2 = take(d);
    b.w1 = take(d * f);
    b.b1 = take(f);
    b.w2 = take(f * d);
    b.b2 = take(d);
    l.blocks.push_back(b);
  }
  l.norm_f = take(d);
  l.head = take(d * vocab);
  l.head_b = take(vocab);
  l.total = off;
  return l;
}

ToyLM::ToyLM(Vocabulary vocab, ToyLMConfig cfg) : vocab_(std::move(vocab)), cfg_(cfg) {
  if (cfg_.d_model <= 0 || cfg_.n_heads <= 0 || cfg_.d_model % cfg_.n_heads != 0) {
    throw LMError("d_model must be a positive multiple of n_heads");
  }
  if (cfg_.n_layers <= 0 || cfg_.d_ff <= 0 || cfg_.context_window <= 0) throw LMError("invalid model shape");
  if (vocab_.size() > Vocabulary::kMaxSize) throw LMError("vocabulary too large for the toy model");
  layout_ = ParamLayout::make(vocab_.size(), cfg_);
  params_.assign(layout_.total, 0.0);

  Rng rng(cfg_.seed);
  for (double& p : params_) p = cfg_.init_std * rng.normal();
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  auto fill = [&](std::size_t at, std::size_t n, double value) {
    std::fill(params_.begin() + static_cast<std::ptrdiff_t>(at), params_.begin() + static_cast<std::ptrdiff_t>(at + n),
              value);
  };
  for (const auto& b : layout_.blocks) {
    fill(b.norm1, d, 1.0);
    fill(b.norm2, d, 1.0);
    fill(b.b1, static_cast<std::size_t>(cfg_.d_ff), 0.0);
    fill(b.b2, d, 0.0);
  }
  fill(layout_.norm_f, d, 1.0);
  fill(layout_.head_b, vocab_.size(), 0.0);
}

RowMatrix ToyLM::forward(std::span<const TokenId> tokens, ForwardCache* cache) const {
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index d = cfg_.d_model;
  const Eigen::Index V = static_cast<Eigen::Index>(vocab_.size());
  const Eigen::Index F = cfg_.d_ff;
  const Eigen::Index dh = d / cfg_.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (T == 0) throw LMError("forward: empty input");
  if (T > cfg_.context_window) {
    throw LMError("sequence of " + std::to_string(T) + " tokens exceeds context window " +
                  std::to_string(cfg_.context_window));
  }
  const double* P = params_.data();

  RowMatrix x(T, d);
  for (Eigen::Index i = 0; i < T; ++i) {
    const TokenId t = tokens[static_cast<std::size_t>(i)];
    if (t < 0 || t >= V) throw LMError("token id " + std::to_string(t) + " outside vocabulary");
    x.row(i) = MapCRow(P + layout_.tok_emb + static_cast<std::size_t>(t) * d, d) +
               MapCRow(P + layout_.pos_emb + static_cast<std::size_t>(i) * d, d);
  }

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.tokens.assign(tokens.begin(), tokens.end());
  c.layers.assign(layout_.blocks.size(), LayerCache{});

  for (std::size_t l = 0; l < layout_.blocks.size(); ++l) {
    const auto& b = layout_.blocks[l];
    LayerCache& lc = c.layers[l];
    lc.x_in = x;
    rms_forward(x, P + b.norm1, lc.n1, lc.r1, lc.h1);
    lc.q = lc.h1 * MapC(P + b.wq, d, d);
    lc.k = lc.h1 * MapC(P + b.wk, d, d);
    lc.v = lc.h1 * MapC(P + b.wv, d, d);
    lc.o.setZero(T, d);
    lc.attn.resize(static_cast<std::size_t>(cfg_.n_heads));
    for (int h = 0; h < cfg_.n_heads; ++h) {
      RowMatrix s = (lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose()) * scale;
      for (Eigen::Index i = 0; i < T; ++i) {
        const double mx = s.row(i).head(i + 1).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          s(i, j) = std::exp(s(i, j) - mx);
          z += s(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) s(i, j) /= z;
        for (Eigen::Index j = i + 1; j < T; ++j) s(i, j) = 0.0;
      }
      lc.o.middleCols(h * dh, dh) = s * lc.v.middleCols(h * dh, dh);
      lc.attn[static_cast<std::size_t>(h)] = std::move(s);
    }
    x += lc.o * MapC(P + b.wo, d, d);
    lc.x_mid = x;
    rms_forward(x, P + b.norm2, lc.n2, lc.r2, lc.h2);
    lc.u = lc.h2 * MapC(P + b.w1, d, F);
    lc.u.rowwise() += MapCRow(P + b.b1, F);
    lc.a = lc.u.unaryExpr([](double u) { return gelu(u); });
    x += lc.a * MapC(P + b.w2, F, d);
    x.rowwise() += MapCRow(P + b.b2, d);
  }
  rms_forward(x, P + layout_.norm_f, c.nf, c.rf, c.hf);
  RowMatrix logits = c.hf * MapC(P + layout_.head, d, V);
  logits.rowwise() += MapCRow(P + layout_.head_b, V);
  return logits;
}

void ToyLM::backward(const ForwardCache& c, const RowMatrix& dlogits, std::span<double> grad) const {
  if (grad.size() != params_.size()) throw LMError("gradient buffer size mismatch");
  const Eigen::Index T = static_cast<Eigen::Index>(c.tokens.size());
  const Eigen::Index d = cfg_.d_model;
  const Eigen::Index V = static_cast<Eigen::Index>(vocab_.size());
  const Eigen::Index F = cfg_.d_ff;
  const Eigen::Index dh = d / cfg_.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (dlogits.rows() != T || dlogits.cols() != V) throw LMError("dlogits shape mismatch");
  const double* P = params_.data();
  double* G = grad.data();

  MapM(G + layout_.head, d, V).noalias() += c.hf.transpose() * dlogits;
  MapRow(G + layout_.head_b, V) += dlogits.colwise().sum();
  RowMatrix dhf = dlogits * MapC(P + layout_.head, d, V).transpose();
  RowMatrix dx = rms_backward(dhf, c.nf, c.rf, P + layout_.norm_f, G + layout_.norm_f);

  for (std::size_t li = layout_.blocks.size(); li-- > 0;) {
    const auto& b = layout_.blocks[li];
    const LayerCache& lc = c.layers[li];

    // x_out = x_mid + gelu(h2 W1 + b1) W2 + b2
    MapM(G + b.w2, F, d).noalias() += lc.a.transpose() * dx;
    MapRow(G + b.b2, d) += dx.colwise().sum();
    RowMatrix du = (dx * MapC(P + b.w2, F, d).transpose()).array() *
                   lc.u.unaryExpr([](double u) { return gelu_grad(u); }).array();
    MapM(G + b.w1, d, F).noalias() += lc.h2.transpose() * du;
    MapRow(G + b.b1, F) += du.colwise().sum();
    RowMatrix dh2 = du * MapC(P + b.w1, d, F).transpose();
    RowMatrix dmid = dx + rms_backward(dh2, lc.n2, lc.r2, P + b.norm2, G + b.norm2);

    // x_mid = x_in + o Wo
    MapM(G + b.wo, d, d).noalias() += lc.o.transpose() * dmid;
    RowMatrix d_o = dmid * MapC(P + b.wo, d, d).transpose();
    RowMatrix dq(T, d), dk(T, d), dv(T, d);
    for (int h = 0; h < cfg_.n_heads; ++h) {
      const RowMatrix& A = lc.attn[static_cast<std::size_t>(h)];
      const auto doh = d_o.middleCols(h * dh, dh);
      RowMatrix dA = doh * lc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = A.transpose() * doh;
      RowMatrix ds = A.array() * (dA.colwise() - (dA.array() * A.array()).rowwise().sum().matrix()).array();
      ds *= scale;
      dq.middleCols(h * dh, dh) = ds * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * lc.q.middleCols(h * dh, dh);
    }
    MapM(G + b.wq, d, d).noalias() += lc.h1.transpose() * dq;
    MapM(G + b.wk, d, d).noalias() += lc.h1.transpose() * dk;
    MapM(G + b.wv, d, d).noalias() += lc.h1.transpose() * dv;
    RowMatrix dh1 = dq * MapC(P + b.wq, d, d).transpose() + dk * MapC(P + b.wk, d, d).transpose() +
                    dv * MapC(P + b.wv, d, d).transpose();
    dx = dmid + rms_backward(dh1, lc.n1, lc.r1, P + b.norm1, G + b.norm1);
  }

  for (Eigen::Index i = 0; i < T; ++i) {
    const auto t = static_cast<std::size_t>(c.tokens[static_cast<std::size_t>(i)]);
    MapRow(G + layout_.tok_emb + t * d, d) += dx.row(i);
    MapRow(G + layout_.pos_emb + static_cast<std::size_t>(i) * d, d) += dx.row(i);
  }
}

// KV-cached incremental decoder over a fixed parameter snapshot.
class ToyDecodeState final : public DecodeState {
 public:
  explicit ToyDecodeState(const ToyLM& m) : m_(&m), kv_(m.layout_.blocks.size()) {}

  std::span<const double> next_logprobs() const override {
    if (logprobs_.size() == 0) throw LMError("decode state has no input yet");
    return {logprobs_.data(), static_cast<std::size_t>(logprobs_.size())};
  }

  void push(TokenId token) override;

  std::unique_ptr<DecodeState> clone() const override { return std::make_unique<ToyDecodeState>(*this); }

 private:
  struct KV {
    std::vector<double> k, v;
  };

  const ToyLM* m_;
  std::vector<KV> kv_;
  Eigen::Index pos_ = 0;
  RowVectorXd logprobs_;
};

void ToyDecodeState::push(TokenId token) {
  const ToyLM& m = *m_;
  const auto& cfg = m.cfg_;
  const auto& layout = m.layout_;
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index V = static_cast<Eigen::Index>(m.vocab_.size());
  const Eigen::Index F = cfg.d_ff;
  const Eigen::Index dh = d / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (token < 0 || token >= V) throw LMError("token id " + std::to_string(token) + " outside vocabulary");
  if (pos_ >= cfg.context_window) {
    throw LMError("decoding past the context window of " + std::to_string(cfg.context_window));
  }
  const double* P = m.params_.data();

  auto rms = [&](const RowVectorXd& x, const double* gain) -> RowVectorXd {
    const double r = std::sqrt(x.squaredNorm() / static_cast<double>(d) + kRmsEps);
    return (x / r).array() * MapCRow(gain, d).array();
  };

  RowVectorXd x = MapCRow(P + layout.tok_emb + static_cast<std::size_t>(token) * d, d) +
                  MapCRow(P + layout.pos_emb + static_cast<std::size_t>(pos_) * d, d);
  const Eigen::Index n = pos_ + 1;
  for (std::size_t l = 0; l < layout.blocks.size(); ++l) {
    const auto& b = layout.blocks[l];
    KV& kv = kv_[l];
    const RowVectorXd h = rms(x, P + b.norm1);
    const RowVectorXd q = h * MapC(P + b.wq, d, d);
    const RowVectorXd k = h * MapC(P + b.wk, d, d);
    const RowVectorXd v = h * MapC(P + b.wv, d, d);
    kv.k.insert(kv.k.end(), k.data(), k.data() + d);
    kv.v.insert(kv.v.end(), v.data(), v.data() + d);
    MapC K(kv.k.data(), n, d);
    MapC Vc(kv.v.data(), n, d);
    RowVectorXd o(d);
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      RowVectorXd s = (K.middleCols(hd * dh, dh) * q.segment(hd * dh, dh).transpose()).transpose() * scale;
      softmax_inplace(s);
      o.segment(hd * dh, dh) = s * Vc.middleCols(hd * dh, dh);
    }
    x += o * MapC(P + b.wo, d, d);
    const RowVectorXd h2 = rms(x, P + b.norm2);
    RowVectorXd u = h2 * MapC(P + b.w1, d, F) + MapCRow(P + b.b1, F);
    u = u.unaryExpr([](double z) { return gelu(z); });
    x += u * MapC(P + b.w2, F, d) + MapCRow(P + b.b2, d);
  }
  const RowVectorXd hf = rms(x, P + layout.norm_f);
  RowVectorXd logits = hf * MapC(P + layout.head, d, V) + MapCRow(P + layout.head_b, V);
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  logprobs_ = logits.array() - lse;
  ++pos_;
}

std::unique_ptr<DecodeState> ToyLM::start(const LMContext& ctx) const {
  auto state = std::make_unique<ToyDecodeState>(*this);
  for (TokenId t : serialize_context(ctx, vocab_)) state->push(t);
  return state;
}

RowMatrix log_softmax_rows(const RowMatrix& logits) {
  RowMatrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

bool ToyLM::parameters_finite() const {
  for (double p : params_) {
    if (!std::isfinite(p)) return false;
  }
  return true;
}

std::string ToyLM::parameter_hash() const {
  return hex64(fnv1a(params_.data(), params_.size() * sizeof(double)));
}

std::string ToyLM::config_hash() const {
  std::string blob = cfg_.to_json().dump();
  for (const auto& w : vocab_.words()) {
    blob += '\n';
    blob += w;
  }
  return hex64(fnv1a(blob.data(), blob.size()));
}

json ToyLM::to_json() const {
  json j;
  j["format"] = "gendie.toylm.v1";
  j["config"] = cfg_.to_json();
  json words = json::array();
  for (std::size_t i = 6; i < vocab_.size(); ++i) words.push_back(vocab_.words()[i]);
  j["vocab"] = std::move(words);
  j["step_count"] = step_count_;
  j["config_hash"] = config_hash();
  j["param_hash"] = parameter_hash();
  j["params"] = params_;
  return j;
}

ToyLM ToyLM::from_json(const json& j) {
  if (j.value("format", std::string()) != "gendie.toylm.v1") throw LMError("not a toy-model checkpoint");
  std::vector<std::string> words;
  for (const auto& w : j.at("vocab")) words.push_back(w.get<std::string>());
  ToyLM m(Vocabulary::from_words(words), ToyLMConfig::from_json(j.at("config")));
  auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != m.params_.size()) {
    throw LMError("checkpoint has " + std::to_string(params.size()) + " parameters, layout expects " +
                  std::to_string(m.params_.size()));
  }
  m.params_ = std::move(params);
  m.step_count_ = j.at("step_count").get<std::int64_t>();
  if (j.contains("config_hash") && j.at("config_hash").get<std::string>() != m.config_hash()) {
    throw LMError("checkpoint config hash mismatch");
  }
  if (j.contains("param_hash") && j.at("param_hash").get<std::string>() != m.parameter_hash()) {
    throw LMError("checkpoint parameter hash mismatch");
  }
  return m;
}

void ToyLM::save(const std::filesystem::path& path) const { write_text_file(path, to_json().dump()); }

ToyLM ToyLM::load(const std::filesystem::path& path) { return from_json(json::parse(read_text_file(path))); }

}  // namespace gendie
