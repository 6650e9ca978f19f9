#include "scenlat/seqdspn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "scenlat/rng.hpp"

namespace scenlat {

using ad::Tensor;
using ad::Var;

void DSPNConfig::validate() const {
  if (inner_steps < 1) throw std::invalid_argument("dspn: inner_steps must be at least 1");
  if (!(inner_lr > 0.0)) throw std::invalid_argument("dspn: inner_lr must be positive");
  if (n_max < 1) throw std::invalid_argument("dspn: n_max must be at least 1");
  if (!(lambda >= 0.0)) throw std::invalid_argument("dspn: lambda must be non-negative");
  if (!(init_std >= 0.0)) throw std::invalid_argument("dspn: init_std must be non-negative");
  if (unroll_steps < 0) throw std::invalid_argument("dspn: unroll_steps must be non-negative");
}

namespace {

constexpr int kFeatures = 3;

using EncV = SetEncoderT<Var>;
using SeqV = SeqAET<Var>;

struct ParamVars {
  EncV set;
  SeqV seq;
  std::vector<Var> all;  // visit order
};

std::vector<const Tensor*> tensors_of(const SeqDSPNParams& p) {
  std::vector<const Tensor*> out;
  const_cast<SeqDSPNParams&>(p).visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

ParamVars make_vars(const SeqDSPNParams& p, bool trainable) {
  ParamVars v;
  v.seq.encoder.resize(p.seq.encoder.size());
  v.seq.decoder.resize(p.seq.decoder.size());
  const auto ts = tensors_of(p);
  std::size_t at = 0;
  auto assign = [&](const std::string&, Var& var) {
    var = trainable ? ad::leaf(*ts[at]) : ad::constant(*ts[at]);
    v.all.push_back(var);
    ++at;
  };
  v.set.visit("", assign);
  v.seq.visit("", assign);
  return v;
}

// X: (frames * n) x 3, m: (frames * n) x 1 -> frames x embedding
Var encode_sets(const Var& X, const Var& m, const EncV& p, int n) {
  const int frames = X.rows() / n;
  Var h1 = ad::relu(ad::add_row(ad::matmul(X, p.w1), p.b1));
  Var h2 = ad::relu(ad::add_row(ad::matmul(h1, p.w2), p.b2));
  Var pooled = ad::group_max(ad::mul_col(h2, m), n);
  // (1 - max mask) blends in the empty-set embedding; zero whenever an element is fully present
  Var absent = ad::add_scalar(ad::scale(ad::group_max(m, n), -1.0), 1.0);
  return ad::add(pooled, ad::mul_col(ad::broadcast_rows(p.empty, frames), absent));
}

struct LstmState {
  std::vector<Var> h, c;
};

Var lstm_step(const LstmLayerT<Var>& L, const Var& x, Var& h, Var& c) {
  const int H = h.cols();
  Var gates = ad::add_row(ad::add(ad::matmul(x, L.wx), ad::matmul(h, L.wh)), L.b);
  Var i = ad::sigmoid(ad::slice_cols(gates, 0, H));
  Var f = ad::sigmoid(ad::slice_cols(gates, H, H));
  Var g = ad::tanh(ad::slice_cols(gates, 2 * H, H));
  Var o = ad::sigmoid(ad::slice_cols(gates, 3 * H, H));
  c = ad::add(ad::mul(f, c), ad::mul(i, g));
  h = ad::mul(o, ad::tanh(c));
  return h;
}

// E: (T * B) x D, t-major. Returns the final state of every layer.
LstmState run_encoder(const Var& E, int T, int B, const SeqV& p) {
  const int H = p.encoder.front().wh.rows();
  LstmState s;
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    s.h.push_back(ad::constant(Tensor(B, H)));
    s.c.push_back(ad::constant(Tensor(B, H)));
  }
  for (int t = 0; t < T; ++t) {
    Var x = ad::slice_rows(E, t * B, B);
    for (std::size_t l = 0; l < p.encoder.size(); ++l) x = lstm_step(p.encoder[l], x, s.h[l], s.c[l]);
  }
  return s;
}

struct SeqOut {
  Var z;      // B x H
  Var e_hat;  // (T * B) x D, t-major
};

SeqOut run_seq(const Var& E, int T, int B, const SeqV& p) {
  LstmState s = run_encoder(E, T, B, p);
  SeqOut out;
  out.z = s.h.back();
  const int D = p.out_w.cols();
  Var input = ad::constant(Tensor(B, D));
  std::vector<Var> steps;
  for (int t = 0; t < T; ++t) {
    Var x = input;
    for (std::size_t l = 0; l < p.decoder.size(); ++l) x = lstm_step(p.decoder[l], x, s.h[l], s.c[l]);
    input = ad::add_row(ad::matmul(x, p.out_w), p.out_b);
    steps.push_back(input);
  }
  out.e_hat = ad::concat_rows(steps);
  return out;
}

std::vector<double> row_sq_sums(const Tensor& t) {
  std::vector<double> out(static_cast<std::size_t>(t.rows), 0.0);
  for (int r = 0; r < t.rows; ++r)
    for (int c = 0; c < t.cols; ++c) out[r] += t(r, c) * t(r, c);
  return out;
}

struct InnerResult {
  Var X, m;
  Tensor embedding;  // encoding of the final iterate
  std::vector<double> initial_loss, final_loss;
};

// Frame f of the batch starts from Rng(derive_seed(seed, f, 0)).
void draw_start(int frames, int n, double init_std, std::uint64_t seed, Tensor& X, Tensor& m) {
  X = Tensor(frames * n, kFeatures);
  m = Tensor(frames * n, 1);
  for (int f = 0; f < frames; ++f) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(f), 0));
    for (int i = 0; i < n; ++i) {
      const int r = f * n + i;
      for (int k = 0; k < kFeatures; ++k) X(r, k) = init_std * rng.normal();
      m(r, 0) = rng.uniform01();
    }
  }
}

InnerResult run_inner(const Var& target, const EncV& enc, const DSPNConfig& cfg, std::uint64_t seed,
                      bool differentiable) {
  const int frames = target.rows();
  const int n = cfg.n_max;
  Tensor X0, m0;
  draw_start(frames, n, cfg.init_std, seed, X0, m0);

  ad::GradModeGuard recording(true);
  InnerResult r;
  Var X = ad::leaf(std::move(X0));
  Var m = ad::leaf(std::move(m0));
  const int tracked_from = differentiable ? (cfg.unroll_steps > 0 ? std::max(0, cfg.inner_steps - cfg.unroll_steps) : 0)
                                          : cfg.inner_steps;
  for (int k = 0; k < cfg.inner_steps; ++k) {
    const bool track = k >= tracked_from;
    if (!track) {
      X = ad::leaf(X.value());
      m = ad::leaf(m.value());
    }
    Var diff = ad::sub(encode_sets(X, m, enc, n), track ? target : ad::constant(target.value()));
    Var loss = ad::sum(ad::square(diff));
    if (!std::isfinite(loss.item()))
      throw std::runtime_error("dspn inner loop: non-finite inner loss at step " + std::to_string(k));
    if (k == 0) r.initial_loss = row_sq_sums(diff.value());
    auto g = ad::grad(loss, {X, m}, track);
    if (track) {
      X = ad::sub(X, ad::scale(g[0], cfg.inner_lr));
      m = ad::clamp(ad::sub(m, ad::scale(g[1], cfg.inner_lr)), 0.0, 1.0);
    } else {
      Tensor nx = X.value(), nm = m.value();
      for (std::size_t i = 0; i < nx.size(); ++i) nx.data[i] -= cfg.inner_lr * g[0].value().data[i];
      for (std::size_t i = 0; i < nm.size(); ++i)
        nm.data[i] = std::clamp(nm.data[i] - cfg.inner_lr * g[1].value().data[i], 0.0, 1.0);
      X = ad::leaf(std::move(nx));
      m = ad::leaf(std::move(nm));
    }
  }
  {
    ad::NoGradGuard off;
    Var e = encode_sets(ad::constant(X.value()), ad::constant(m.value()), enc, n);
    r.embedding = e.value();
    Tensor d = ad::sub(e, ad::constant(target.value())).value();
    r.final_loss = row_sq_sums(d);
  }
  for (double v : r.final_loss)
    if (!std::isfinite(v)) throw std::runtime_error("dspn inner loop: non-finite final inner loss");
  r.X = X;
  r.m = m;
  return r;
}

SetPrediction prediction_of(const Tensor& X, const Tensor& m, int frame, int n) {
  SetPrediction p;
  for (int i = 0; i < n; ++i) {
    const int r = frame * n + i;
    p.elements.push_back(Feature{X(r, 0), X(r, 1), X(r, 2)});
    p.mask.push_back(m(r, 0));
  }
  return p;
}

// Sum over frames of the set loss, divided by `batch`.
Var set_loss_op(const Var& X, const Var& m, const std::vector<const FrameSet*>& targets, int n, SetLossKind kind,
                int batch) {
  const Tensor& xv = X.value();
  const Tensor& mv = m.value();
  Tensor gx(xv.rows, xv.cols), gm(mv.rows, 1);
  double total = 0.0;
  for (std::size_t f = 0; f < targets.size(); ++f) {
    const int fi = static_cast<int>(f);
    SetLossGrad lg = set_loss_grad(kind, prediction_of(xv, mv, fi, n), *targets[f]);
    total += lg.value;
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < kFeatures; ++k) gx(fi * n + i, k) = lg.d_elements[i][k];
      gm(fi * n + i, 0) = lg.d_mask[i];
    }
  }
  const double inv = 1.0 / batch;
  return ad::custom_op({X, m}, Tensor(1, 1, total * inv), [gx = std::move(gx), gm = std::move(gm), inv](const Tensor& g) {
    const double s = g.data[0] * inv;
    Tensor a = gx, b = gm;
    for (auto& v : a.data) v *= s;
    for (auto& v : b.data) v *= s;
    return std::vector<Tensor>{std::move(a), std::move(b)};
  });
}

struct Packed {
  int B = 0, T = 0, n = 0;
  Tensor X, m;
  std::vector<const FrameSet*> frames;  // t-major
};

Packed pack(const std::vector<const std::vector<FrameSet>*>& batch, int n) {
  Packed p;
  p.B = static_cast<int>(batch.size());
  p.T = static_cast<int>(batch.front()->size());
  p.n = n;
  p.X = Tensor(p.T * p.B * n, kFeatures);
  p.m = Tensor(p.T * p.B * n, 1);
  for (int t = 0; t < p.T; ++t)
    for (int b = 0; b < p.B; ++b) {
      const auto& seq = *batch[b];
      if (static_cast<int>(seq.size()) != p.T) throw std::invalid_argument("seqdspn: sequences differ in length");
      const FrameSet& fs = seq[t];
      if (fs.capacity() != n) throw std::invalid_argument("seqdspn: frame capacity differs from n_max");
      p.frames.push_back(&fs);
      for (int i = 0; i < n; ++i) {
        const int r = (t * p.B + b) * n + i;
        for (int k = 0; k < kFeatures; ++k) p.X(r, k) = fs.elements[i][k];
        p.m(r, 0) = fs.mask[i] ? 1.0 : 0.0;
      }
    }
  return p;
}

struct Forward {
  Var total, set, embed;
  double inner_improved = 0.0;
  double embed_energy = 0.0;  // sum over frames of mean(e_t^2), batch mean
  int frames = 0;
};

Forward forward_batch(const Packed& pk, const ParamVars& v, const DSPNConfig& cfg, std::uint64_t seed,
                      bool differentiable) {
  Var E = encode_sets(ad::constant(pk.X), ad::constant(pk.m), v.set, pk.n);
  SeqOut so = run_seq(E, pk.T, pk.B, v.seq);
  InnerResult inner = run_inner(so.e_hat, v.set, cfg, seed, differentiable);
  Forward out;
  out.set = set_loss_op(inner.X, inner.m, pk.frames, pk.n, cfg.set_loss, pk.B);
  const double w = cfg.lambda / (static_cast<double>(pk.B) * E.cols());
  out.embed = ad::scale(ad::sum(ad::square(ad::sub(E, so.e_hat))), w);
  out.total = ad::add(out.set, out.embed);
  out.frames = static_cast<int>(pk.frames.size());
  for (double x : E.value().data) out.embed_energy += x * x;
  out.embed_energy /= static_cast<double>(pk.B) * E.cols();
  int improved = 0;
  for (std::size_t f = 0; f < inner.final_loss.size(); ++f) improved += inner.final_loss[f] < inner.initial_loss[f];
  out.inner_improved = static_cast<double>(improved) / out.frames;
  return out;
}

void init_uniform(Tensor& t, double bound, Rng& rng) {
  for (auto& v : t.data) v = rng.uniform(-bound, bound);
}

}  // namespace

std::size_t SeqDSPNParams::count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors_of(*this)) n += t->size();
  return n;
}

std::vector<double> SeqDSPNParams::flatten() const {
  std::vector<double> out;
  out.reserve(count());
  for (const Tensor* t : tensors_of(*this)) out.insert(out.end(), t->data.begin(), t->data.end());
  return out;
}

void SeqDSPNParams::unflatten(const std::vector<double>& flat) {
  if (flat.size() != count()) throw std::invalid_argument("seqdspn: parameter count mismatch");
  std::size_t at = 0;
  visit([&](const std::string&, Tensor& t) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at), flat.begin() + static_cast<std::ptrdiff_t>(at + t.size()),
              t.data.begin());
    at += t.size();
  });
}

SeqDSPNParams init_seqdspn_params(const SeqDSPNArch& a, std::uint64_t seed) {
  Rng rng(seed);
  SeqDSPNParams p;
  auto& s = p.set;
  s.w1 = Tensor(kFeatures, a.element_hidden);
  s.b1 = Tensor(1, a.element_hidden);
  s.w2 = Tensor(a.element_hidden, a.embedding);
  s.b2 = Tensor(1, a.embedding);
  s.empty = Tensor(1, a.embedding);
  // Glorot bounds keep the inner-loop curvature well inside the step-size stability limit at the start
  init_uniform(s.w1, std::sqrt(6.0 / (kFeatures + a.element_hidden)), rng);
  init_uniform(s.w2, std::sqrt(6.0 / (a.element_hidden + a.embedding)), rng);

  const int H = a.lstm_hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(H));
  auto layer = [&](int in) {
    LstmLayerT<Tensor> L{Tensor(in, 4 * H), Tensor(H, 4 * H), Tensor(1, 4 * H)};
    init_uniform(L.wx, bound, rng);
    init_uniform(L.wh, bound, rng);
    for (int j = H; j < 2 * H; ++j) L.b.data[static_cast<std::size_t>(j)] = 1.0;  // forget gate
    return L;
  };
  for (int l = 0; l < a.lstm_layers; ++l) p.seq.encoder.push_back(layer(l == 0 ? a.embedding : H));
  for (int l = 0; l < a.lstm_layers; ++l) p.seq.decoder.push_back(layer(l == 0 ? a.embedding : H));
  p.seq.out_w = Tensor(H, a.embedding);
  p.seq.out_b = Tensor(1, a.embedding);
  init_uniform(p.seq.out_w, std::sqrt(6.0 / (H + a.embedding)), rng);
  return p;
}

std::vector<FrameSet> prepare_frames(const Scenario& s, const SeqDSPNArch& arch, int n_max, const FeatureScale& scale) {
  auto frames = resample_to_frames(s, ResampleOptions{arch.frame_count, arch.rate_hz, n_max});
  for (auto& f : frames)
    for (auto& e : f.elements) {
      e[0] /= scale.x;
      e[1] /= scale.y;
      e[2] /= scale.v;
    }
  return frames;
}

Embedding set_encode(const FrameSet& f, const SetEncoderParams& p) {
  ad::NoGradGuard off;
  const int n = f.capacity();
  if (n == 0) return p.empty.data;
  Tensor X(n, kFeatures), m(n, 1);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < kFeatures; ++k) X(i, k) = f.elements[i][k];
    m(i, 0) = f.mask[i] ? 1.0 : 0.0;
  }
  EncV v{ad::constant(p.w1), ad::constant(p.b1), ad::constant(p.w2), ad::constant(p.b2), ad::constant(p.empty)};
  return encode_sets(ad::constant(X), ad::constant(m), v, n).value().data;
}

SeqAEOutput seq_autoencode(const std::vector<Embedding>& e_seq, const SeqAEParams& p) {
  if (e_seq.empty()) throw std::invalid_argument("seq_autoencode: empty sequence");
  ad::NoGradGuard off;
  const int T = static_cast<int>(e_seq.size());
  const int D = static_cast<int>(e_seq.front().size());
  Tensor E(T, D);
  for (int t = 0; t < T; ++t) {
    if (static_cast<int>(e_seq[t].size()) != D) throw std::invalid_argument("seq_autoencode: ragged embeddings");
    std::copy(e_seq[t].begin(), e_seq[t].end(), E.row(t));
  }
  SeqDSPNParams holder;
  holder.seq = p;
  ParamVars v = make_vars(holder, false);
  SeqOut so = run_seq(ad::constant(E), T, 1, v.seq);
  SeqAEOutput out;
  out.z = so.z.value().data;
  for (int t = 0; t < T; ++t) out.e_hat.emplace_back(so.e_hat.value().row(t), so.e_hat.value().row(t) + D);
  return out;
}

SetPrediction dspn_decode(const Embedding& e_hat, const SetEncoderParams& enc, const DSPNConfig& cfg,
                          std::uint64_t seed) {
  cfg.validate();
  if (static_cast<int>(e_hat.size()) != enc.w2.cols)
    throw std::invalid_argument("dspn_decode: embedding width does not match the encoder");
  EncV v{ad::constant(enc.w1), ad::constant(enc.b1), ad::constant(enc.w2), ad::constant(enc.b2),
         ad::constant(enc.empty)};
  InnerResult r = run_inner(ad::constant(Tensor(1, enc.w2.cols, e_hat)), v, cfg, seed, false);
  SetPrediction p = prediction_of(r.X.value(), r.m.value(), 0, cfg.n_max);
  p.dspn_embedding = r.embedding.data;
  return p;
}

SeqDSPNLoss seqdspn_loss(const std::vector<std::vector<FrameSet>>& batch, const SeqDSPNParams& params,
                         const DSPNConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (batch.empty()) throw std::invalid_argument("seqdspn_loss: empty batch");
  std::vector<const std::vector<FrameSet>*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  ad::NoGradGuard off;
  Forward f = forward_batch(pack(ptrs, cfg.n_max), make_vars(params, false), cfg, seed, false);
  const double B = static_cast<double>(batch.size());
  return SeqDSPNLoss{f.total.item(), f.set.item() * B, f.embed.item() * B, f.inner_improved, f.frames};
}

SeqDSPNLoss seqdspn_loss_and_grad(const std::vector<std::vector<FrameSet>>& batch, const SeqDSPNParams& params,
                                  const DSPNConfig& cfg, std::uint64_t seed, std::vector<double>& grad) {
  cfg.validate();
  if (batch.empty()) throw std::invalid_argument("seqdspn_loss: empty batch");
  std::vector<const std::vector<FrameSet>*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  ad::GradModeGuard on(true);
  ParamVars v = make_vars(params, true);
  Forward f = forward_batch(pack(ptrs, cfg.n_max), v, cfg, seed, true);
  grad.clear();
  for (const auto& g : ad::grad(f.total, v.all)) grad.insert(grad.end(), g.value().data.begin(), g.value().data.end());
  const double B = static_cast<double>(batch.size());
  return SeqDSPNLoss{f.total.item(), f.set.item() * B, f.embed.item() * B, f.inner_improved, f.frames};
}

SeqDSPN::SeqDSPN(const SeqDSPNArch& arch, const DSPNConfig& cfg, std::uint64_t seed, const FeatureScale& scale)
    : arch_(arch), cfg_(cfg), scale_(scale), params_(init_seqdspn_params(arch, seed)) {
  cfg_.validate();
}

std::vector<double> SeqDSPN::embed(const Scenario& s) const { return embed(std::vector<Scenario>{s}, 1).front(); }

std::vector<std::vector<double>> SeqDSPN::embed(const std::vector<Scenario>& data, int batch_size) const {
  ad::NoGradGuard off;
  ParamVars v = make_vars(params_, false);
  std::vector<std::vector<double>> out;
  out.reserve(data.size());
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::vector<FrameSet>> seqs;
    std::vector<const std::vector<FrameSet>*> ptrs;
    for (std::size_t i = start; i < end; ++i) seqs.push_back(frames(data[i]));
    for (const auto& s : seqs) ptrs.push_back(&s);
    Packed pk = pack(ptrs, cfg_.n_max);
    Var E = encode_sets(ad::constant(pk.X), ad::constant(pk.m), v.set, pk.n);
    LstmState st = run_encoder(E, pk.T, pk.B, v.seq);
    const Tensor& z = st.h.back().value();
    for (int b = 0; b < pk.B; ++b) out.emplace_back(z.row(b), z.row(b) + z.cols);
  }
  return out;
}

SeqDSPNTrainResult train_seqdspn(const std::vector<Scenario>& train_set, const std::vector<Scenario>& val_set,
                                 const SeqDSPNArch& arch, const DSPNConfig& cfg, const TrainHyperparams& hp,
                                 const SeqDSPNEpochCallback& on_epoch, const FeatureScale& scale) {
  if (train_set.empty() || val_set.empty()) throw std::invalid_argument("train_seqdspn: empty data set");
  if (hp.epochs < 0 || hp.batch_size < 1) throw std::invalid_argument("train_seqdspn: bad hyperparameters");
  SeqDSPN model(arch, cfg, derive_seed(hp.seed, 0, 21), scale);

  std::vector<std::vector<FrameSet>> train_frames, val_frames;
  for (const auto& s : train_set) train_frames.push_back(model.frames(s));
  for (const auto& s : val_set) val_frames.push_back(model.frames(s));

  const std::uint64_t val_seed = derive_seed(hp.seed, 0, 23);
  auto evaluate = [&](TrainingLog::Epoch& e) {
    ad::NoGradGuard off;
    ParamVars v = make_vars(model.params(), false);
    double total = 0.0, set = 0.0, embed = 0.0, improved = 0.0, energy = 0.0;
    int frames = 0;
    for (std::size_t start = 0, bi = 0; start < val_frames.size(); start += hp.batch_size, ++bi) {
      const std::size_t end = std::min(val_frames.size(), start + static_cast<std::size_t>(hp.batch_size));
      std::vector<const std::vector<FrameSet>*> ptrs;
      for (std::size_t i = start; i < end; ++i) ptrs.push_back(&val_frames[i]);
      Forward f = forward_batch(pack(ptrs, cfg.n_max), v, cfg, derive_seed(val_seed, bi, 0), false);
      const double B = static_cast<double>(end - start);
      total += f.total.item() * B;
      set += f.set.item() * B;
      embed += f.embed.item() * B;
      improved += f.inner_improved * f.frames;
      energy += f.embed_energy * B;
      frames += f.frames;
    }
    const double n = static_cast<double>(val_frames.size());
    e.metrics["val_embed_energy"] = energy / n;
    if (!std::isfinite(total)) throw std::runtime_error("train_seqdspn: non-finite validation loss");
    e.metrics["val_loss"] = total / n;
    e.metrics["val_set"] = set / n;
    e.metrics["val_embed"] = embed / n;
    e.metrics["val_inner_improved"] = improved / frames;
  };

  TrainingLog log;
  TrainingLog::Epoch e0;
  evaluate(e0);
  log.epochs.push_back(e0);
  if (on_epoch) on_epoch(e0);
  double best = e0.metrics["val_loss"];
  std::vector<double> best_params = model.params().flatten();

  Adam<double> adam(model.params().count(), AdamOptions{hp.lr, 0.9, 0.999, 1e-8, hp.grad_clip});
  Rng shuffle_rng(derive_seed(hp.seed, 0, 22));
  std::vector<std::size_t> order(train_frames.size());
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double total = 0.0, set = 0.0, embed = 0.0, improved = 0.0, norm = 0.0;
    int frames = 0, batches = 0;
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
      std::vector<const std::vector<FrameSet>*> ptrs;
      for (std::size_t i = start; i < end; ++i) ptrs.push_back(&train_frames[order[i]]);
      ParamVars v = make_vars(model.params(), true);
      Forward f = forward_batch(pack(ptrs, cfg.n_max), v, cfg, derive_seed(hp.seed, step++, 24), true);
      if (!std::isfinite(f.total.item()))
        throw std::runtime_error("train_seqdspn: non-finite loss in epoch " + std::to_string(epoch));
      auto grads = ad::grad(f.total, v.all);
      std::vector<double> flat, g;
      flat = model.params().flatten();
      g.reserve(flat.size());
      for (const auto& gv : grads) g.insert(g.end(), gv.value().data.begin(), gv.value().data.end());
      norm += adam.step(std::span<double>(flat), std::span<const double>(g));
      model.params().unflatten(flat);
      const double B = static_cast<double>(end - start);
      total += f.total.item() * B;
      set += f.set.item() * B;
      embed += f.embed.item() * B;
      improved += f.inner_improved * f.frames;
      frames += f.frames;
      ++batches;
    }
    TrainingLog::Epoch e;
    e.epoch = epoch;
    const double n = static_cast<double>(order.size());
    e.metrics["train_loss"] = total / n;
    e.metrics["train_set"] = set / n;
    e.metrics["train_embed"] = embed / n;
    e.metrics["train_inner_improved"] = improved / frames;
    e.metrics["grad_norm"] = norm / batches;
    double enc_norm = 0.0;
    for (const Tensor* t : {&model.params().set.w1, &model.params().set.w2})
      for (double x : t->data) enc_norm += x * x;
    e.metrics["set_encoder_norm"] = std::sqrt(enc_norm);
    evaluate(e);
    log.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
    if (e.metrics["val_loss"] < best) {
      best = e.metrics["val_loss"];
      best_params = model.params().flatten();
      log.best_epoch = epoch;
    }
  }
  model.params().unflatten(best_params);
  return SeqDSPNTrainResult{std::move(model), std::move(log)};
}

}  // namespace scenlat
