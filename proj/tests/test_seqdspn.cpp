#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "scenlat/rng.hpp"
#include "scenlat/seqdspn.hpp"
#include "scenlat/synthetic.hpp"

using namespace scenlat;

namespace {

double relu(double v) { return v > 0.0 ? v : 0.0; }
double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::vector<double> element_features(const Feature& x, const SetEncoderParams& p) {
  const int h = p.w1.cols, d = p.w2.cols;
  std::vector<double> a(static_cast<std::size_t>(h)), out(static_cast<std::size_t>(d));
  for (int j = 0; j < h; ++j) {
    double s = p.b1(0, j);
    for (int k = 0; k < 3; ++k) s += x[k] * p.w1(k, j);
    a[static_cast<std::size_t>(j)] = relu(s);
  }
  for (int j = 0; j < d; ++j) {
    double s = p.b2(0, j);
    for (int k = 0; k < h; ++k) s += a[static_cast<std::size_t>(k)] * p.w2(k, j);
    out[static_cast<std::size_t>(j)] = relu(s);
  }
  return out;
}

std::vector<double> encode_oracle(const FrameSet& f, const SetEncoderParams& p) {
  const int d = p.w2.cols;
  bool any = false;
  std::vector<double> best(static_cast<std::size_t>(d), -1.0);
  for (int i = 0; i < f.capacity(); ++i) {
    if (!f.mask[static_cast<std::size_t>(i)]) continue;
    any = true;
    const auto e = element_features(f.elements[static_cast<std::size_t>(i)], p);
    for (int j = 0; j < d; ++j) best[static_cast<std::size_t>(j)] = std::max(best[static_cast<std::size_t>(j)], e[static_cast<std::size_t>(j)]);
  }
  return any ? best : p.empty.data;
}

// A plain LSTM written against the documented gate order (input, forget, cell, output).
struct Cell {
  std::vector<double> h, c;
};

void lstm(const LstmLayerT<ad::Tensor>& L, const std::vector<double>& x, Cell& s) {
  const int H = L.wh.rows;
  std::vector<double> g(static_cast<std::size_t>(4 * H));
  for (int j = 0; j < 4 * H; ++j) {
    double v = L.b(0, j);
    for (std::size_t k = 0; k < x.size(); ++k) v += x[k] * L.wx(static_cast<int>(k), j);
    for (int k = 0; k < H; ++k) v += s.h[static_cast<std::size_t>(k)] * L.wh(k, j);
    g[static_cast<std::size_t>(j)] = v;
  }
  for (int j = 0; j < H; ++j) {
    const auto u = static_cast<std::size_t>(j);
    const double i = sigmoid(g[u]), f = sigmoid(g[u + H]), c = std::tanh(g[u + 2 * H]), o = sigmoid(g[u + 3 * H]);
    s.c[u] = f * s.c[u] + i * c;
    s.h[u] = o * std::tanh(s.c[u]);
  }
}

SeqAEOutput seq_oracle(const std::vector<Embedding>& e, const SeqAEParams& p) {
  const int H = p.encoder.front().wh.rows;
  std::vector<Cell> st(p.encoder.size(), Cell{std::vector<double>(static_cast<std::size_t>(H), 0.0),
                                              std::vector<double>(static_cast<std::size_t>(H), 0.0)});
  for (const auto& x : e) {
    std::vector<double> in = x;
    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
      lstm(p.encoder[l], in, st[l]);
      in = st[l].h;
    }
  }
  SeqAEOutput out;
  out.z = st.back().h;
  const int D = p.out_w.cols;
  std::vector<double> in(static_cast<std::size_t>(D), 0.0);
  for (std::size_t t = 0; t < e.size(); ++t) {
    std::vector<double> x = in;
    for (std::size_t l = 0; l < p.decoder.size(); ++l) {
      lstm(p.decoder[l], x, st[l]);
      x = st[l].h;
    }
    std::vector<double> y(static_cast<std::size_t>(D));
    for (int j = 0; j < D; ++j) {
      double v = p.out_b(0, j);
      for (int k = 0; k < H; ++k) v += x[static_cast<std::size_t>(k)] * p.out_w(k, j);
      y[static_cast<std::size_t>(j)] = v;
    }
    out.e_hat.push_back(y);
    in = y;
  }
  return out;
}

FrameSet random_frame(Rng& rng, int n, int valid) {
  FrameSet f;
  for (int i = 0; i < n; ++i) {
    if (i < valid) {
      f.elements.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1.2)});
      f.mask.push_back(1);
    } else {
      f.elements.push_back({0.0, 0.0, 0.0});
      f.mask.push_back(0);
    }
  }
  return f;
}

// Gives every parameter, including the biases and the empty vector, a nonzero value.
void jitter(SeqDSPNParams& p, Rng& rng, double scale) {
  auto flat = p.flatten();
  for (auto& v : flat) v += scale * rng.normal();
  p.unflatten(flat);
}

std::vector<std::vector<FrameSet>> frames_of(const SeqDSPN& model, const std::vector<Scenario>& data) {
  std::vector<std::vector<FrameSet>> out;
  for (const auto& s : data) out.push_back(model.frames(s));
  return out;
}

}  // namespace

TEST_CASE("set encoder: oracle, permutation, singleton and subset properties") {
  const SeqDSPNArch arch;
  auto params = init_seqdspn_params(arch, 4);
  Rng rng(8);
  jitter(params, rng, 0.1);
  const auto& enc = params.set;
  for (int trial = 0; trial < 300; ++trial) {
    const int valid = static_cast<int>(rng.below(4));
    const auto f = random_frame(rng, 3, valid);
    const auto e = set_encode(f, enc);
    REQUIRE(e.size() == 32u);
    const auto o = encode_oracle(f, enc);
    for (std::size_t j = 0; j < e.size(); ++j) CHECK(e[j] == doctest::Approx(o[j]).epsilon(1e-12));

    // permuted copy, mask moved along: bit-identical
    FrameSet g = f;
    std::reverse(g.elements.begin(), g.elements.end());
    std::reverse(g.mask.begin(), g.mask.end());
    CHECK(set_encode(g, enc) == e);

    if (valid >= 1) {
      FrameSet sub = f;
      sub.mask[static_cast<std::size_t>(valid - 1)] = 0;
      sub.elements[static_cast<std::size_t>(valid - 1)] = {0, 0, 0};
      if (valid >= 2) {
        const auto es = set_encode(sub, enc);
        for (std::size_t j = 0; j < e.size(); ++j) CHECK(es[j] <= e[j]);
      }
      FrameSet one = random_frame(rng, 3, 1);
      const auto e1 = set_encode(one, enc);
      const auto o1 = element_features(one.elements[0], enc);
      for (std::size_t j = 0; j < e1.size(); ++j) CHECK(e1[j] == doctest::Approx(o1[j]).epsilon(1e-12));
    }
  }
  FrameSet none = random_frame(rng, 3, 0);
  CHECK(set_encode(none, enc) == enc.empty.data);
}

TEST_CASE("sequence autoencoder matches a hand-written LSTM and has the documented shapes") {
  const SeqDSPNArch arch;
  auto params = init_seqdspn_params(arch, 2);
  Rng rng(3);
  jitter(params, rng, 0.05);
  std::vector<Embedding> seq;
  for (int t = 0; t < 13; ++t) {
    Embedding e(32);
    for (auto& v : e) v = rng.uniform(0, 1);
    seq.push_back(e);
  }
  const auto out = seq_autoencode(seq, params.seq);
  CHECK(out.z.size() == 64u);
  REQUIRE(out.e_hat.size() == 13u);
  for (const auto& e : out.e_hat) CHECK(e.size() == 32u);

  const auto ref = seq_oracle(seq, params.seq);
  for (std::size_t j = 0; j < 64; ++j) CHECK(out.z[j] == doctest::Approx(ref.z[j]).epsilon(1e-10));
  for (std::size_t t = 0; t < 13; ++t)
    for (std::size_t j = 0; j < 32; ++j) CHECK(out.e_hat[t][j] == doctest::Approx(ref.e_hat[t][j]).epsilon(1e-10));

  const auto again = seq_autoencode(seq, params.seq);
  CHECK(again.z == out.z);
  CHECK(again.e_hat == out.e_hat);

  const auto single = seq_autoencode({seq.front()}, params.seq);
  CHECK(single.e_hat.size() == 1u);
  CHECK(single.z.size() == 64u);
  CHECK_THROWS_AS(seq_autoencode({}, params.seq), std::invalid_argument);
}

TEST_CASE("inner decoding loop lowers its objective and stays put at a vanishing step") {
  const SeqDSPNArch arch;
  const auto params = init_seqdspn_params(arch, 11);
  DSPNConfig cfg;
  Rng rng(19);
  int improved = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = random_frame(rng, 3, 1 + static_cast<int>(rng.below(3)));
    const auto target = set_encode(f, params.set);
    const auto seed = static_cast<std::uint64_t>(trial);

    DSPNConfig frozen = cfg;
    frozen.inner_lr = 1e-300;
    const auto start = dspn_decode(target, params.set, frozen, seed);
    const auto end = dspn_decode(target, params.set, cfg, seed);
    for (double m : end.mask) CHECK((m >= 0.0 && m <= 1.0));

    const auto sq = [&](const std::vector<double>& e) {
      double s = 0.0;
      for (std::size_t j = 0; j < e.size(); ++j) s += (e[j] - target[j]) * (e[j] - target[j]);
      return s;
    };
    improved += sq(end.dspn_embedding) < sq(start.dspn_embedding);

    // the start is the seeded draw: N(0, init_std) elements, then a U(0,1) mask value, per slot
    Rng draw(derive_seed(seed, 0, 0));
    for (std::size_t i = 0; i < 3; ++i) {
      for (int k = 0; k < 3; ++k) CHECK(start.elements[i][k] == doctest::Approx(cfg.init_std * draw.normal()).epsilon(1e-12));
      CHECK(start.mask[i] == doctest::Approx(draw.uniform01()).epsilon(1e-12));
    }
    CHECK(dspn_decode(target, params.set, cfg, seed).elements == end.elements);
  }
  MESSAGE("inner loss decreased on " << improved << "/100 trials");
  CHECK(improved >= 95);

  CHECK_THROWS_AS(dspn_decode(Embedding(5, 0.0), params.set, cfg, 0), std::invalid_argument);
  DSPNConfig bad;
  bad.inner_steps = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = {};
  bad.inner_lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("loss: weight of the embedding term and permutation invariance") {
  GeneratorConfig g;
  g.rng_seed = 5;
  const auto data = generate_scenarios(g, 6);
  const SeqDSPNArch arch;
  DSPNConfig cfg;
  const SeqDSPN model(arch, cfg, 1);
  const auto batch = frames_of(model, data);

  DSPNConfig zero = cfg;
  zero.lambda = 0.0;
  const auto l0 = seqdspn_loss(batch, model.params(), zero, 7);
  // total is a batch mean, the components are batch sums
  CHECK(l0.total == doctest::Approx(l0.set / 6).epsilon(1e-12));
  CHECK(l0.embed == 0.0);
  CHECK(l0.frames == 6 * 13);

  DSPNConfig one = cfg, two = cfg;
  one.lambda = 1.0;
  two.lambda = 2.0;
  const auto l1 = seqdspn_loss(batch, model.params(), one, 7);
  const auto l2 = seqdspn_loss(batch, model.params(), two, 7);
  CHECK(l1.set == doctest::Approx(l0.set).epsilon(1e-12));
  CHECK(6 * (l2.total - l1.total) == doctest::Approx(l1.embed).epsilon(1e-9));
  CHECK(l1.total == doctest::Approx(l1.set / 6 + l1.embed / 6).epsilon(1e-12));

  auto shuffled = batch;
  Rng rng(2);
  for (auto& seq : shuffled)
    for (auto& f : seq) {
      for (std::size_t i = f.elements.size(); i > 1; --i) {
        const auto j = rng.below(i);
        std::swap(f.elements[i - 1], f.elements[j]);
        std::swap(f.mask[i - 1], f.mask[j]);
      }
    }
  const auto ls = seqdspn_loss(shuffled, model.params(), one, 7);
  CHECK(ls.total == doctest::Approx(l1.total).epsilon(1e-12));

  DSPNConfig hung = cfg;
  hung.set_loss = SetLossKind::Hungarian;
  CHECK(std::isfinite(seqdspn_loss(batch, model.params(), hung, 7).total));
}

TEST_CASE("end-to-end embedding ignores participant order") {
  GeneratorConfig g;
  g.rng_seed = 9;
  g.class_mix = {0.0, 0.0, 0.0, 1.0};  // several participants per scene
  const auto data = generate_scenarios(g, 20);
  const SeqDSPN model(SeqDSPNArch{}, DSPNConfig{}, 3);
  Rng rng(4);
  for (const auto& s : data) {
    auto t = s;
    std::reverse(t.trajectories.begin(), t.trajectories.end());
    const auto z = model.embed(s);
    CHECK(z.size() == 64u);
    CHECK(model.embed(t) == z);
  }
  const auto batch = model.embed(data, 7);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto single = model.embed(data[i]);
    for (std::size_t j = 0; j < 64; ++j) CHECK(batch[i][j] == doctest::Approx(single[j]).epsilon(1e-12));
  }
}

TEST_CASE("outer gradient through the unrolled inner loop matches central differences") {
  SeqDSPNArch arch;
  arch.element_hidden = 4;
  arch.embedding = 5;
  arch.lstm_hidden = 4;
  arch.lstm_layers = 2;
  arch.frame_count = 3;
  DSPNConfig cfg;
  cfg.inner_steps = 4;
  cfg.lambda = 3.0;
  GeneratorConfig g;
  g.rng_seed = 12;
  const auto data = generate_scenarios(g, 3);
  SeqDSPN model(arch, cfg, 6);
  Rng rng(1);
  jitter(model.params(), rng, 0.05);
  const auto batch = frames_of(model, data);

  for (SetLossKind kind : {SetLossKind::Chamfer, SetLossKind::Hungarian}) {
    cfg.set_loss = kind;
    std::vector<double> grad;
    const auto base = seqdspn_loss_and_grad(batch, model.params(), cfg, 21, grad);
    CHECK(base.total == doctest::Approx(seqdspn_loss(batch, model.params(), cfg, 21).total).epsilon(1e-12));
    const auto flat = model.params().flatten();
    REQUIRE(grad.size() == flat.size());
    const double eps = 1e-6;
    int checked = 0;
    for (std::size_t i = 0; i < flat.size(); i += 3) {
      auto p = model.params();
      auto v = flat;
      v[i] = flat[i] + eps;
      p.unflatten(v);
      const double up = seqdspn_loss(batch, p, cfg, 21).total;
      v[i] = flat[i] - eps;
      p.unflatten(v);
      const double down = seqdspn_loss(batch, p, cfg, 21).total;
      // skip coordinates whose stencil crosses a relu, clamp, or matching switch
      if (std::abs(up + down - 2 * base.total) / (eps * eps) > 1e4) continue;
      const double fd = (up - down) / (2 * eps);
      ++checked;
      INFO("parameter " << i << " fd " << fd << " analytic " << grad[i]);
      CHECK(std::abs(fd - grad[i]) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
    CHECK(checked > static_cast<int>(flat.size() / 3) * 3 / 4);
  }
}

TEST_CASE("small training run halves the validation loss") {
  GeneratorConfig g;
  g.rng_seed = 31;
  const auto data = generate_scenarios(g, 200);
  const std::vector<Scenario> train(data.begin(), data.begin() + 160), val(data.begin() + 160, data.end());
  DSPNConfig cfg;
  cfg.lambda = 10.0;
  TrainHyperparams hp;
  hp.epochs = 20;
  hp.batch_size = 16;
  hp.grad_clip = 1.0;
  hp.seed = 3;
  const auto r = train_seqdspn(train, val, SeqDSPNArch{}, cfg, hp);
  const double initial = r.log.metric(0, "val_loss");
  const double best = r.log.metric(r.log.best_epoch, "val_loss");
  MESSAGE("val loss " << initial << " -> " << best << " (epoch " << r.log.best_epoch << ")");
  CHECK(best < 0.5 * initial);
  CHECK(r.log.epochs.size() == 21u);
  // the returned model is the best one
  const auto frames = frames_of(r.model, val);
  const auto again = seqdspn_loss(frames, r.model.params(), cfg, 0);
  CHECK(std::isfinite(again.total));
}
