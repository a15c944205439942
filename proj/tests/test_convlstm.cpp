#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "airtrace/convlstm.hpp"
#include "airtrace/errors.hpp"
#include "airtrace/rng.hpp"

using namespace airtrace;

namespace {

template <typename S>
std::vector<Tensor3<S>> random_seq(Rng& rng, int s, int c, int h, int w) {
  std::vector<Tensor3<S>> seq;
  for (int t = 0; t < s; t++) {
    Tensor3<S> img(c, h, w);
    for (S& v : img.data) v = static_cast<S>(rng.uniform());
    seq.push_back(img);
  }
  return seq;
}

// Direct per-pixel ConvLSTM step, written independently of the im2col
// path: explicit nested-loop convolutions and per-gate arithmetic.
template <typename S>
void naive_cell(const S* params, const CellLayout& L, const Tensor3<S>& x,
                const Tensor3<S>& h_prev, const Tensor3<S>& c_prev,
                Tensor3<S>& h_t, Tensor3<S>& c_t) {
  const int k = L.k, pad = L.k / 2, H = L.height, W = L.width;
  auto conv_at = [&](const S* w_row, const Tensor3<S>& src, int r, int c) {
    S acc = 0;
    for (int ic = 0; ic < src.channels; ic++) {
      for (int dy = 0; dy < k; dy++) {
        for (int dx = 0; dx < k; dx++) {
          int rr = r + dy - pad, cc = c + dx - pad;
          if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
          acc += w_row[(ic * k + dy) * k + dx] * src.at(ic, rr, cc);
        }
      }
    }
    return acc;
  };
  h_t = Tensor3<S>(L.hid, H, W);
  c_t = Tensor3<S>(L.hid, H, W);
  const int ickk = L.in_ch * k * k, hkk = L.hid * k * k;
  for (int oc = 0; oc < L.hid; oc++) {
    for (int r = 0; r < H; r++) {
      for (int c = 0; c < W; c++) {
        auto gate_pre = [&](int gate) {
          int row = gate * L.hid + oc;
          S a = params[L.b + row];
          a += conv_at(params + L.wx + static_cast<size_t>(row) * ickk, x, r, c);
          a += conv_at(params + L.wh + static_cast<size_t>(row) * hkk, h_prev,
                       r, c);
          return a;
        };
        S ai = gate_pre(0), af = gate_pre(1), ao = gate_pre(2), ag = gate_pre(3);
        size_t pp = static_cast<size_t>(r) * W + c;
        if (L.peephole) {
          ai += params[L.wci + oc * H * W + pp] * c_prev.at(oc, r, c);
          af += params[L.wcf + oc * H * W + pp] * c_prev.at(oc, r, c);
        }
        S i = S(1) / (S(1) + std::exp(-ai));
        S f = S(1) / (S(1) + std::exp(-af));
        S g = std::tanh(ag);
        S cc = f * c_prev.at(oc, r, c) + i * g;
        if (L.peephole) ao += params[L.wco + oc * H * W + pp] * cc;
        S o = S(1) / (S(1) + std::exp(-ao));
        c_t.at(oc, r, c) = cc;
        h_t.at(oc, r, c) = o * std::tanh(cc);
      }
    }
  }
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.in_channels = 1;
  cfg.hidden_channels = 2;
  cfg.kernel = 3;
  cfg.layers = 1;
  cfg.height = 4;
  cfg.width = 4;
  return cfg;
}

// Central finite differences over every parameter; returns the max
// relative error against the analytic gradient.
double gradcheck(const ModelConfig& cfg, uint64_t seed, double eps = 1e-3) {
  Rng rng(seed);
  auto model = ConvLstmModel<double>::init(cfg, rng);
  auto seq = random_seq<double>(rng, 3, cfg.in_channels, cfg.height, cfg.width);
  auto targets =
      random_seq<double>(rng, 3, cfg.in_channels, cfg.height, cfg.width);

  ForwardCache<double> cache;
  model.forward(seq, &cache);
  AVec<double> grads;
  model.backward(seq, targets, cache, grads);

  double worst = 0.0;
  for (size_t p = 0; p < model.params.size(); p++) {
    double keep = model.params[p];
    model.params[p] = keep + eps;
    double lp = mse_loss(model.forward(seq), targets);
    model.params[p] = keep - eps;
    double lm = mse_loss(model.forward(seq), targets);
    model.params[p] = keep;
    double fd = (lp - lm) / (2.0 * eps);
    double rel = std::abs(grads[p] - fd) /
                 std::max(std::abs(grads[p]) + std::abs(fd), 1e-6);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace

TEST_SUITE_BEGIN("convlstm");

TEST_CASE("zero-parameter cell collapses analytically") {
  CellLayout L = CellLayout::make(0, 1, 2, 3, 4, 4, false);
  std::vector<float> params(L.end, 0.0f);
  Tensor3<float> x(1, 4, 4);
  for (float& v : x.data) v = 0.7f;
  Tensor3<float> h0(2, 4, 4), c0(2, 4, 4);
  StepState<float> st;
  Workspace<float> ws;

  // zero states: i=f=o=0.5, g=0 so c=0, h=0
  cell_forward(params.data(), L, x, h0, c0, st, ws);
  for (float v : st.c.data) REQUIRE(v == 0.0f);
  for (float v : st.h.data) REQUIRE(v == 0.0f);
  for (int ch = 0; ch < 4; ch++) {
    float expect = ch < 3 ? 0.5f : 0.0f;  // i,f,o sigmoid(0); g tanh(0)
    for (size_t p = 0; p < st.gates.plane_size(); p++) {
      REQUIRE(st.gates.plane(ch * 2)[p] == expect);
    }
  }

  // c_prev = C: c_t = 0.5*C
  for (size_t p = 0; p < c0.size(); p++) c0.data[p] = 0.25f * (p % 7);
  cell_forward(params.data(), L, x, h0, c0, st, ws);
  for (size_t p = 0; p < c0.size(); p++) {
    REQUIRE(st.c.data[p] == doctest::Approx(0.5f * c0.data[p]));
  }
}

TEST_CASE("cell matches the naive per-pixel oracle") {
  for (bool peep : {false, true}) {
    CellLayout L = CellLayout::make(0, 2, 4, 3, 8, 8, peep);
    Rng rng(peep ? 21 : 20);
    std::vector<float> params(L.end);
    for (float& v : params) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    Tensor3<float> x(2, 8, 8), h0(4, 8, 8), c0(4, 8, 8);
    for (float& v : x.data) v = static_cast<float>(rng.uniform());
    for (float& v : h0.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (float& v : c0.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    StepState<float> st;
    Workspace<float> ws;
    cell_forward(params.data(), L, x, h0, c0, st, ws);
    Tensor3<float> hn, cn;
    naive_cell(params.data(), L, x, h0, c0, hn, cn);
    for (size_t p = 0; p < hn.size(); p++) {
      REQUIRE(std::abs(st.h.data[p] - hn.data[p]) < 1e-5f);
      REQUIRE(std::abs(st.c.data[p] - cn.data[p]) < 1e-5f);
    }
  }
}

TEST_CASE("cell state growth is bounded by one per step") {
  CellLayout L = CellLayout::make(0, 1, 3, 3, 6, 6, false);
  Rng rng(33);
  std::vector<float> params(L.end);
  for (float& v : params) v = static_cast<float>(rng.uniform(-2.0, 2.0));
  Tensor3<float> x(1, 6, 6), h0(3, 6, 6), c0(3, 6, 6);
  for (float& v : x.data) v = static_cast<float>(rng.uniform(-5.0, 5.0));
  for (float& v : h0.data) v = static_cast<float>(rng.uniform(-5.0, 5.0));
  for (float& v : c0.data) v = static_cast<float>(rng.uniform(-3.0, 3.0));
  StepState<float> st;
  Workspace<float> ws;
  cell_forward(params.data(), L, x, h0, c0, st, ws);
  for (size_t p = 0; p < st.c.size(); p++) {
    REQUIRE(std::abs(st.c.data[p]) <= std::abs(c0.data[p]) + 1.0f + 1e-6f);
  }
}

TEST_CASE("cell rejects mismatched shapes") {
  CellLayout L = CellLayout::make(0, 1, 2, 3, 4, 4, false);
  std::vector<float> params(L.end, 0.0f);
  Tensor3<float> x(2, 4, 4), h0(2, 4, 4), c0(2, 4, 4);
  StepState<float> st;
  Workspace<float> ws;
  CHECK_THROWS_AS(cell_forward(params.data(), L, x, h0, c0, st, ws),
                  ContractError);
}

TEST_CASE("model_forward shape and range") {
  ModelConfig cfg = tiny_config();
  cfg.height = cfg.width = 8;
  cfg.hidden_channels = 4;
  Rng rng(7);
  auto model = ConvLstmModel<float>::init(cfg, rng);
  auto seq = random_seq<float>(rng, 5, 1, 8, 8);
  auto out = model.forward(seq);
  REQUIRE(out.size() == 5);
  for (const auto& img : out) {
    CHECK(img.channels == 1);
    CHECK(img.height == 8);
    CHECK(img.width == 8);
    for (float v : img.data) {
      REQUIRE(v > 0.0f);
      REQUIRE(v < 1.0f);
      REQUIRE(std::isfinite(v));
    }
  }
  std::vector<Tensor3<float>> bad = {Tensor3<float>(2, 8, 8)};
  CHECK_THROWS_AS(model.forward(bad), ContractError);
}

TEST_CASE("perturbing the first image changes every output") {
  ModelConfig cfg = tiny_config();
  cfg.height = cfg.width = 8;
  cfg.hidden_channels = 4;
  Rng rng(11);
  auto model = ConvLstmModel<float>::init(cfg, rng);
  auto seq = random_seq<float>(rng, 4, 1, 8, 8);
  auto base = model.forward(seq);
  seq[0].data[3] += 0.5f;
  auto bumped = model.forward(seq);
  for (size_t t = 0; t < base.size(); t++) {
    double diff = 0.0;
    for (size_t p = 0; p < base[t].size(); p++) {
      diff += std::abs(base[t].data[p] - bumped[t].data[p]);
    }
    REQUIRE(diff > 0.0);
  }
}

TEST_CASE("mse basics and naive oracle") {
  Rng rng(3);
  auto a = random_seq<float>(rng, 3, 1, 6, 6);
  CHECK(mse_loss(a, a) == 0.0);

  std::vector<Tensor3<float>> zeros(2, Tensor3<float>(1, 4, 4));
  std::vector<Tensor3<float>> ones(2, Tensor3<float>(1, 4, 4));
  for (auto& t : ones)
    for (float& v : t.data) v = 1.0f;
  CHECK(mse_loss(zeros, ones) == doctest::Approx(1.0));

  auto b = random_seq<float>(rng, 3, 1, 6, 6);
  double naive = 0.0;
  size_t n = 0;
  for (size_t t = 0; t < a.size(); t++) {
    for (size_t p = 0; p < a[t].size(); p++) {
      double d = static_cast<double>(a[t].data[p]) - b[t].data[p];
      naive += d * d;
      n++;
    }
  }
  naive /= static_cast<double>(n);
  CHECK(mse_loss(a, b) == doctest::Approx(naive).epsilon(1e-7));

  CHECK_THROWS_AS(mse_loss(a, zeros), ContractError);
}

TEST_CASE("gradcheck: default tiny model") {
  CHECK(gradcheck(tiny_config(), 1234) < 1e-3);
}

TEST_CASE("gradcheck: peephole cells") {
  ModelConfig cfg = tiny_config();
  cfg.peephole = true;
  CHECK(gradcheck(cfg, 555) < 1e-3);
}

TEST_CASE("gradcheck: two stacked layers") {
  ModelConfig cfg = tiny_config();
  cfg.layers = 2;
  CHECK(gradcheck(cfg, 777) < 1e-3);
}

TEST_CASE("gradcheck: decoder input modes") {
  ModelConfig cfg = tiny_config();
  cfg.decoder_input = DecoderInputMode::prev_only;
  CHECK(gradcheck(cfg, 888) < 1e-3);
  cfg.decoder_input = DecoderInputMode::current_only;
  CHECK(gradcheck(cfg, 999) < 1e-3);
}

TEST_CASE("directional derivative matches the gradient") {
  ModelConfig cfg = tiny_config();
  cfg.hidden_channels = 3;
  Rng rng(2468);
  auto model = ConvLstmModel<double>::init(cfg, rng);
  auto seq = random_seq<double>(rng, 3, 1, 4, 4);
  auto targets = random_seq<double>(rng, 3, 1, 4, 4);
  ForwardCache<double> cache;
  model.forward(seq, &cache);
  AVec<double> grads;
  model.backward(seq, targets, cache, grads);

  std::vector<double> dir(grads.size());
  for (double& v : dir) v = rng.uniform(-1.0, 1.0);
  double gdot = 0.0;
  for (size_t p = 0; p < grads.size(); p++) gdot += grads[p] * dir[p];

  const double eps = 1e-5;
  auto shifted = model;
  for (size_t p = 0; p < dir.size(); p++) shifted.params[p] += eps * dir[p];
  double lp = mse_loss(shifted.forward(seq), targets);
  for (size_t p = 0; p < dir.size(); p++) {
    shifted.params[p] -= 2.0 * eps * dir[p];
  }
  double lm = mse_loss(shifted.forward(seq), targets);
  double fd = (lp - lm) / (2.0 * eps);
  CHECK(std::abs(gdot - fd) / std::max(std::abs(gdot), 1e-12) < 1e-4);
}

TEST_CASE("zero loss gives zero gradients") {
  ModelConfig cfg = tiny_config();
  Rng rng(9);
  auto model = ConvLstmModel<double>::init(cfg, rng);
  auto seq = random_seq<double>(rng, 3, 1, 4, 4);
  ForwardCache<double> cache;
  auto out = model.forward(seq, &cache);
  AVec<double> grads;
  double loss = model.backward(seq, out, cache, grads);  // target = output
  CHECK(loss == 0.0);
  for (size_t p = model.readout_b_offset(); p < model.param_count(); p++) {
    REQUIRE(grads[p] == 0.0);
  }
  for (double g : grads) REQUIRE(g == 0.0);
}

TEST_CASE("adam zero gradient is a no-op that still counts steps") {
  AdamState<float> st(4);
  AVec<float> params{1.0f, -2.0f, 3.0f, 0.5f};
  auto before = params;
  st.apply(params, {0.0f, 0.0f, 0.0f, 0.0f});
  CHECK(params == before);
  CHECK(st.step == 1);
}

TEST_CASE("adam first step is bounded by the learning rate") {
  for (double g : {1e-6, 0.01, 1.0, 250.0}) {
    AdamState<double> st(1);
    AVec<double> params{0.0};
    st.apply(params, {g});
    CHECK(std::abs(params[0]) <= st.hp.lr * 1.001);
    CHECK(params[0] < 0.0);  // moves against the gradient
  }
}

TEST_CASE("adam descends w squared") {
  AdamState<double> st(1);
  st.hp.lr = 0.008;  // small enough that the iterates stay monotone
  AVec<double> w{1.0};
  double prev = w[0];
  for (int i = 0; i < 100; i++) {
    st.apply(w, {2.0 * w[0]});
    REQUIRE(w[0] < prev);
    prev = w[0];
  }
  CHECK(w[0] < 0.35);
}

TEST_CASE("training learns the all-zero corpus") {
  ModelConfig cfg;
  cfg.in_channels = 1;
  cfg.hidden_channels = 4;
  cfg.height = cfg.width = 8;
  Rng rng(41);
  auto model = ConvLstmModel<float>::init(cfg, rng);

  std::vector<FrameSequence> corpus;
  for (int i = 0; i < 8; i++) {
    FrameSequence fs;
    for (int t = 0; t < 4; t++) {
      fs.images.emplace_back(8, 8, 1);
      fs.start_ms.push_back(t);
    }
    corpus.push_back(fs);
  }
  TrainOptions opts;
  opts.epochs = 5;
  opts.batch_size = 1;
  opts.seed = 7;
  opts.adam.lr = 0.2;
  auto result = train_model(model, corpus, opts);
  REQUIRE(result.epoch_loss.size() == 5);
  CHECK(result.epoch_loss.back() < 1e-3);
  CHECK(result.epoch_loss.back() < result.epoch_loss.front());
}

TEST_CASE("training is bit-deterministic in the seed") {
  ModelConfig cfg;
  cfg.in_channels = 1;
  cfg.hidden_channels = 3;
  cfg.height = cfg.width = 8;

  auto run = [&]() {
    Rng rng(500);
    auto model = ConvLstmModel<float>::init(cfg, rng);
    Rng data_rng(123);
    std::vector<FrameSequence> corpus;
    for (int i = 0; i < 6; i++) {
      FrameSequence fs;
      for (int t = 0; t < 3; t++) {
        FrameImage img(8, 8, 1);
        for (float& v : img.pix) v = static_cast<float>(data_rng.uniform());
        fs.images.push_back(img);
        fs.start_ms.push_back(t);
      }
      corpus.push_back(fs);
    }
    TrainOptions opts;
    opts.epochs = 3;
    opts.batch_size = 4;
    opts.seed = 99;
    train_model(model, corpus, opts);
    return model.params;
  };
  auto p1 = run();
  auto p2 = run();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); i++) REQUIRE(p1[i] == p2[i]);
}

TEST_CASE("empty corpus refuses to train") {
  ModelConfig cfg = tiny_config();
  Rng rng(1);
  auto model = ConvLstmModel<float>::init(cfg, rng);
  CHECK_THROWS_AS(train_model(model, {}, TrainOptions{}), ContractError);
}

TEST_CASE("save and load roundtrip bit-exactly") {
  namespace fs = std::filesystem;
  ModelConfig cfg;
  cfg.in_channels = 2;
  cfg.hidden_channels = 5;
  cfg.height = cfg.width = 8;
  cfg.peephole = true;
  cfg.decoder_input = DecoderInputMode::prev_only;
  Rng rng(20240817);
  auto model = ConvLstmModel<float>::init(cfg, rng);

  fs::path path = fs::temp_directory_path() / "airtrace_model_rt.vadb";
  save_model(model, path.string());
  auto loaded = load_model(path.string());
  CHECK(loaded.config == model.config);
  REQUIRE(loaded.params.size() == model.params.size());
  for (size_t p = 0; p < model.params.size(); p++) {
    REQUIRE(loaded.params[p] == model.params[p]);
  }
  fs::remove(path);
}

TEST_CASE("model file integrity checks") {
  namespace fs = std::filesystem;
  ModelConfig cfg = tiny_config();
  Rng rng(5);
  auto model = ConvLstmModel<float>::init(cfg, rng);
  fs::path path = fs::temp_directory_path() / "airtrace_model_it.vadb";
  save_model(model, path.string());

  // truncated file
  auto full = [&] {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    return bytes;
  }();
  {
    std::ofstream out(path, std::ios::binary);
    out.write(full.data(), static_cast<std::streamsize>(full.size() - 10));
  }
  CHECK_THROWS_AS(load_model(path.string()), FormatError);

  // bad magic
  {
    std::string bad = full;
    bad[0] = 'X';
    std::ofstream out(path, std::ios::binary);
    out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
  }
  CHECK_THROWS_AS(load_model(path.string()), FormatError);

  // config mismatch on expectation
  {
    std::ofstream out(path, std::ios::binary);
    out.write(full.data(), static_cast<std::streamsize>(full.size()));
  }
  ModelConfig other = cfg;
  other.hidden_channels = 7;
  CHECK_THROWS_AS(load_model(path.string(), other), FormatError);
  CHECK_NOTHROW(load_model(path.string(), cfg));
  fs::remove(path);
}

TEST_SUITE_END();
