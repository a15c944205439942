#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "airtrace/raster.hpp"
#include "airtrace/rng.hpp"
#include "airtrace/tensor.hpp"

namespace airtrace {

// What the decoder sees at step t besides its recurrent state: the previous
// reconstruction (zero image at t=0), the current input image, or both
// concatenated channelwise (default).
enum class DecoderInputMode : uint32_t {
  prev_and_current = 0,
  prev_only = 1,
  current_only = 2,
};

struct ModelConfig {
  int in_channels = 1;
  int hidden_channels = 16;
  int kernel = 3;
  int layers = 1;  // ConvLSTM layers in encoder and in decoder each
  int height = 64;
  int width = 64;
  bool peephole = false;
  DecoderInputMode decoder_input = DecoderInputMode::prev_and_current;

  int decoder_in_channels() const {
    return decoder_input == DecoderInputMode::prev_and_current
               ? 2 * in_channels
               : in_channels;
  }
  void validate() const {
    if (in_channels < 1 || hidden_channels < 1 || layers < 1 || height < 1 ||
        width < 1) {
      throw ConfigError("model: dimensions must be positive");
    }
    if (kernel < 1 || kernel % 2 == 0) {
      throw ConfigError("model: kernel must be odd");
    }
  }
  bool operator==(const ModelConfig&) const = default;
};

// Offsets of one cell's parameters inside the flat parameter vector. Gate
// row order in the fused kernels is [input, forget, output, candidate].
struct CellLayout {
  int in_ch = 0, hid = 0, k = 0, height = 0, width = 0;
  bool peephole = false;
  size_t wx = 0, wh = 0, b = 0, wci = 0, wcf = 0, wco = 0, end = 0;

  size_t wx_size() const { return static_cast<size_t>(4) * hid * in_ch * k * k; }
  size_t wh_size() const { return static_cast<size_t>(4) * hid * hid * k * k; }
  size_t b_size() const { return static_cast<size_t>(4) * hid; }
  size_t peep_size() const {
    return peephole ? static_cast<size_t>(hid) * height * width : 0;
  }

  static CellLayout make(size_t start, int in_ch, int hid, int k, int h, int w,
                         bool peephole) {
    CellLayout l;
    l.in_ch = in_ch;
    l.hid = hid;
    l.k = k;
    l.height = h;
    l.width = w;
    l.peephole = peephole;
    l.wx = start;
    l.wh = l.wx + l.wx_size();
    l.b = l.wh + l.wh_size();
    l.wci = l.b + l.b_size();
    l.wcf = l.wci + l.peep_size();
    l.wco = l.wcf + l.peep_size();
    l.end = l.wco + l.peep_size();
    return l;
  }
};

// Cached activations of one cell step, kept for backprop through time.
template <typename S>
struct StepState {
  Tensor3<S> gates;   // (4*hid, H, W): activated i, f, o, g
  Tensor3<S> c;       // cell state
  Tensor3<S> tanh_c;
  Tensor3<S> h;       // hidden state
};

template <typename S>
struct ForwardCache {
  std::vector<std::vector<StepState<S>>> enc;  // [step][layer]
  std::vector<std::vector<StepState<S>>> dec;
  std::vector<Tensor3<S>> outputs;  // s reconstructed images
};

namespace detail {

template <typename S>
using MatMap =
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename S>
S sigmoid(S v) {
  return S(1) / (S(1) + std::exp(-v));
}

}  // namespace detail

// Scratch buffers reused across cell invocations.
template <typename S>
struct Workspace {
  AVec<S> colx, colh, dgates, dcol;
};

// Shi-style ConvLSTM cell step. x: (in_ch,H,W); h_prev/c_prev: (hid,H,W).
// Writes the activated gates, c, tanh(c) and h into `out`. When the layout
// has peephole terms, the input and forget gates see c_prev and the output
// gate sees the fresh c_t.
template <typename S>
void cell_forward(const S* params, const CellLayout& L, const Tensor3<S>& x,
                  const Tensor3<S>& h_prev, const Tensor3<S>& c_prev,
                  StepState<S>& out, Workspace<S>& ws) {
  if (x.channels != L.in_ch || x.height != L.height || x.width != L.width ||
      h_prev.channels != L.hid || !h_prev.same_shape(c_prev)) {
    throw ContractError("cell_forward: shape mismatch");
  }
  const int hid = L.hid, k = L.k;
  const size_t hw = x.plane_size();

  out.gates = Tensor3<S>(4 * hid, L.height, L.width);
  out.c = Tensor3<S>(hid, L.height, L.width);
  out.tanh_c = Tensor3<S>(hid, L.height, L.width);
  out.h = Tensor3<S>(hid, L.height, L.width);

  im2col(x, k, ws.colx);
  im2col(h_prev, k, ws.colh);

  detail::MatMap<S> G(out.gates.data.data(), 4 * hid, hw);
  detail::ConstMatMap<S> Wx(params + L.wx, 4 * hid, L.in_ch * k * k);
  detail::ConstMatMap<S> Wh(params + L.wh, 4 * hid, hid * k * k);
  detail::ConstMatMap<S> Cx(ws.colx.data(), L.in_ch * k * k, hw);
  detail::ConstMatMap<S> Ch(ws.colh.data(), hid * k * k, hw);
  G.noalias() = Wx * Cx;
  G.noalias() += Wh * Ch;
  const S* b = params + L.b;
  for (int ch = 0; ch < 4 * hid; ch++) G.row(ch).array() += b[ch];

  // Pre-activations in gate order [i,f,o,g]; peephole contributions first.
  if (L.peephole) {
    const S* wci = params + L.wci;
    const S* wcf = params + L.wcf;
    for (int ch = 0; ch < hid; ch++) {
      S* ai = out.gates.plane(ch);
      S* af = out.gates.plane(hid + ch);
      const S* cp = c_prev.plane(ch);
      const S* wi = wci + ch * hw;
      const S* wf = wcf + ch * hw;
      for (size_t p = 0; p < hw; p++) {
        ai[p] += wi[p] * cp[p];
        af[p] += wf[p] * cp[p];
      }
    }
  }
  for (int ch = 0; ch < hid; ch++) {
    S* ai = out.gates.plane(ch);
    S* af = out.gates.plane(hid + ch);
    S* ag = out.gates.plane(3 * hid + ch);
    const S* cp = c_prev.plane(ch);
    S* ct = out.c.plane(ch);
    S* tc = out.tanh_c.plane(ch);
    for (size_t p = 0; p < hw; p++) {
      S i = detail::sigmoid(ai[p]);
      S f = detail::sigmoid(af[p]);
      S g = std::tanh(ag[p]);
      ai[p] = i;
      af[p] = f;
      ag[p] = g;
      ct[p] = f * cp[p] + i * g;
      tc[p] = std::tanh(ct[p]);
    }
  }
  if (L.peephole) {
    const S* wco = params + L.wco;
    for (int ch = 0; ch < hid; ch++) {
      S* ao = out.gates.plane(2 * hid + ch);
      const S* ct = out.c.plane(ch);
      const S* w = wco + ch * hw;
      for (size_t p = 0; p < hw; p++) ao[p] += w[p] * ct[p];
    }
  }
  for (int ch = 0; ch < hid; ch++) {
    S* ao = out.gates.plane(2 * hid + ch);
    const S* tc = out.tanh_c.plane(ch);
    S* h = out.h.plane(ch);
    for (size_t p = 0; p < hw; p++) {
      S o = detail::sigmoid(ao[p]);
      ao[p] = o;
      h[p] = o * tc[p];
    }
  }
}

// Backward of one cell step. dh/dc_in: gradients flowing into h_t and c_t.
// Accumulates parameter gradients into `grads`, writes input gradient dx
// and recurrent gradients dh_prev (accumulated) and dc_prev (overwritten).
template <typename S>
void cell_backward(const S* params, const CellLayout& L, const Tensor3<S>& x,
                   const Tensor3<S>& h_prev, const Tensor3<S>& c_prev,
                   const StepState<S>& st, const Tensor3<S>& dh,
                   const Tensor3<S>& dc_in, S* grads, Tensor3<S>& dx,
                   Tensor3<S>& dh_prev, Tensor3<S>& dc_prev, Workspace<S>& ws) {
  const int hid = L.hid, k = L.k;
  const size_t hw = x.plane_size();

  // dgates holds pre-activation gradients in gate order [i,f,o,g].
  ws.dgates.assign(static_cast<size_t>(4) * hid * hw, S(0));
  dc_prev = Tensor3<S>(hid, L.height, L.width);

  S* dwci = L.peephole ? grads + L.wci : nullptr;
  S* dwcf = L.peephole ? grads + L.wcf : nullptr;
  S* dwco = L.peephole ? grads + L.wco : nullptr;

  for (int ch = 0; ch < hid; ch++) {
    const S* i = st.gates.plane(ch);
    const S* f = st.gates.plane(hid + ch);
    const S* o = st.gates.plane(2 * hid + ch);
    const S* g = st.gates.plane(3 * hid + ch);
    const S* tc = st.tanh_c.plane(ch);
    const S* ct = st.c.plane(ch);
    const S* cp = c_prev.plane(ch);
    const S* dhp = dh.plane(ch);
    const S* dcp_in = dc_in.plane(ch);
    S* dai = ws.dgates.data() + static_cast<size_t>(ch) * hw;
    S* daf = ws.dgates.data() + static_cast<size_t>(hid + ch) * hw;
    S* dao = ws.dgates.data() + static_cast<size_t>(2 * hid + ch) * hw;
    S* dag = ws.dgates.data() + static_cast<size_t>(3 * hid + ch) * hw;
    S* dcprev = dc_prev.plane(ch);
    const S* wci = L.peephole ? params + L.wci + ch * hw : nullptr;
    const S* wcf = L.peephole ? params + L.wcf + ch * hw : nullptr;
    const S* wco = L.peephole ? params + L.wco + ch * hw : nullptr;

    for (size_t p = 0; p < hw; p++) {
      S d_o = dhp[p] * tc[p];
      S da_o = d_o * o[p] * (S(1) - o[p]);
      S dc = dcp_in[p] + dhp[p] * o[p] * (S(1) - tc[p] * tc[p]);
      if (L.peephole) {
        dwco[ch * hw + p] += da_o * ct[p];
        dc += da_o * wco[p];
      }
      S di = dc * g[p];
      S df = dc * cp[p];
      S dg = dc * i[p];
      S da_i = di * i[p] * (S(1) - i[p]);
      S da_f = df * f[p] * (S(1) - f[p]);
      S da_g = dg * (S(1) - g[p] * g[p]);
      S dcp = dc * f[p];
      if (L.peephole) {
        dwci[ch * hw + p] += da_i * cp[p];
        dwcf[ch * hw + p] += da_f * cp[p];
        dcp += da_i * wci[p] + da_f * wcf[p];
      }
      dai[p] = da_i;
      daf[p] = da_f;
      dao[p] = da_o;
      dag[p] = da_g;
      dcprev[p] = dcp;
    }
  }

  detail::ConstMatMap<S> dA(ws.dgates.data(), 4 * hid, hw);

  // Parameter gradients.
  im2col(x, k, ws.colx);
  im2col(h_prev, k, ws.colh);
  detail::ConstMatMap<S> Cx(ws.colx.data(), L.in_ch * k * k, hw);
  detail::ConstMatMap<S> Ch(ws.colh.data(), hid * k * k, hw);
  detail::MatMap<S> dWx(grads + L.wx, 4 * hid, L.in_ch * k * k);
  detail::MatMap<S> dWh(grads + L.wh, 4 * hid, hid * k * k);
  dWx.noalias() += dA * Cx.transpose();
  dWh.noalias() += dA * Ch.transpose();
  S* db = grads + L.b;
  for (int ch = 0; ch < 4 * hid; ch++) db[ch] += dA.row(ch).sum();

  // Input and recurrent gradients via the transposed convolution.
  detail::ConstMatMap<S> Wx(params + L.wx, 4 * hid, L.in_ch * k * k);
  detail::ConstMatMap<S> Wh(params + L.wh, 4 * hid, hid * k * k);

  ws.dcol.assign(static_cast<size_t>(L.in_ch) * k * k * hw, S(0));
  detail::MatMap<S>(ws.dcol.data(), L.in_ch * k * k, hw).noalias() =
      Wx.transpose() * dA;
  col2im(ws.dcol, L.in_ch, L.height, L.width, k, dx);

  ws.dcol.assign(static_cast<size_t>(hid) * k * k * hw, S(0));
  detail::MatMap<S>(ws.dcol.data(), hid * k * k, hw).noalias() =
      Wh.transpose() * dA;
  Tensor3<S> dhp_local;
  col2im(ws.dcol, hid, L.height, L.width, k, dhp_local);
  if (dh_prev.size() == 0) {
    dh_prev = std::move(dhp_local);
  } else {
    for (size_t p = 0; p < dh_prev.size(); p++) {
      dh_prev.data[p] += dhp_local.data[p];
    }
  }
}

template <typename S>
double mse_loss(const std::vector<Tensor3<S>>& output,
                const std::vector<Tensor3<S>>& target) {
  if (output.size() != target.size() || output.empty()) {
    throw ContractError("mse: sequence lengths differ or empty");
  }
  double acc = 0.0;
  size_t count = 0;
  for (size_t t = 0; t < output.size(); t++) {
    if (!output[t].same_shape(target[t])) throw ContractError("mse: shape mismatch");
    for (size_t p = 0; p < output[t].size(); p++) {
      double d = static_cast<double>(output[t].data[p]) - target[t].data[p];
      acc += d * d;
    }
    count += output[t].size();
  }
  return acc / static_cast<double>(count);
}

// ConvLSTM encoder-decoder with a 1x1 conv + sigmoid readout. All
// parameters live in one flat vector whose layout is: encoder layers
// 0..L-1, decoder layers 0..L-1 (per layer: Wx, Wh, b, then peephole
// Wci/Wcf/Wco when enabled), readout weight (out_ch x hid), readout bias.
template <typename S>
class ConvLstmModel {
 public:
  ModelConfig config;
  AVec<S> params;

  static ConvLstmModel init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ConvLstmModel m;
    m.config = cfg;
    m.build_layout();
    m.params.assign(m.count_, S(0));
    for (size_t l = 0; l < m.enc_.size() + m.dec_.size(); l++) {
      const CellLayout& L =
          l < m.enc_.size() ? m.enc_[l] : m.dec_[l - m.enc_.size()];
      double kx = 1.0 / std::sqrt(static_cast<double>(L.in_ch) * L.k * L.k);
      for (size_t p = 0; p < L.wx_size(); p++) {
        m.params[L.wx + p] = static_cast<S>(rng.uniform(-kx, kx));
      }
      double kh = 1.0 / std::sqrt(static_cast<double>(L.hid) * L.k * L.k);
      for (size_t p = 0; p < L.wh_size(); p++) {
        m.params[L.wh + p] = static_cast<S>(rng.uniform(-kh, kh));
      }
      // biases start at zero except the forget gate, opened to +1 so early
      // training does not wash the cell state out.
      for (int ch = 0; ch < L.hid; ch++) m.params[L.b + L.hid + ch] = S(1);
      // peephole weights start at zero
    }
    double kr = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_channels));
    for (size_t p = 0; p < m.readout_w_size(); p++) {
      m.params[m.readout_w_ + p] = static_cast<S>(rng.uniform(-kr, kr));
    }
    // The readout bias starts deep in the sigmoid tail: traffic images are
    // mostly empty, and a near-dark prior spares many epochs that would
    // otherwise be spent driving the background level down.
    for (int ch = 0; ch < cfg.in_channels; ch++) {
      m.params[m.readout_b_ + ch] = S(-4);
    }
    return m;
  }

  size_t param_count() const { return count_; }
  const std::vector<CellLayout>& encoder_layers() const { return enc_; }
  const std::vector<CellLayout>& decoder_layers() const { return dec_; }
  size_t readout_w_offset() const { return readout_w_; }
  size_t readout_b_offset() const { return readout_b_; }
  size_t readout_w_size() const {
    return static_cast<size_t>(config.in_channels) * config.hidden_channels;
  }

  // Rebuilds offsets after config/params were filled in externally (load).
  void build_layout() {
    config.validate();
    enc_.clear();
    dec_.clear();
    size_t off = 0;
    int in_ch = config.in_channels;
    for (int l = 0; l < config.layers; l++) {
      enc_.push_back(CellLayout::make(off, in_ch, config.hidden_channels,
                                      config.kernel, config.height,
                                      config.width, config.peephole));
      off = enc_.back().end;
      in_ch = config.hidden_channels;
    }
    in_ch = config.decoder_in_channels();
    for (int l = 0; l < config.layers; l++) {
      dec_.push_back(CellLayout::make(off, in_ch, config.hidden_channels,
                                      config.kernel, config.height,
                                      config.width, config.peephole));
      off = dec_.back().end;
      in_ch = config.hidden_channels;
    }
    readout_w_ = off;
    readout_b_ = readout_w_ + readout_w_size();
    count_ = readout_b_ + config.in_channels;
  }

  std::vector<Tensor3<S>> forward(const std::vector<Tensor3<S>>& seq,
                                  ForwardCache<S>* cache = nullptr) const {
    check_sequence(seq);
    const int s = static_cast<int>(seq.size());
    const int hid = config.hidden_channels;
    const int H = config.height, W = config.width;
    const size_t hw = static_cast<size_t>(H) * W;
    Workspace<S> ws;

    ForwardCache<S> local;
    ForwardCache<S>& cc = cache ? *cache : local;
    cc.enc.assign(s, {});
    cc.dec.assign(s, {});
    cc.outputs.clear();

    const Tensor3<S> zero_state(hid, H, W);

    // Encoder pass.
    for (int t = 0; t < s; t++) {
      cc.enc[t].resize(config.layers);
      const Tensor3<S>* x = &seq[t];
      for (int l = 0; l < config.layers; l++) {
        const Tensor3<S>& hp = t > 0 ? cc.enc[t - 1][l].h : zero_state;
        const Tensor3<S>& cp = t > 0 ? cc.enc[t - 1][l].c : zero_state;
        cell_forward(params.data(), enc_[l], *x, hp, cp, cc.enc[t][l], ws);
        x = &cc.enc[t][l].h;
      }
    }

    // Decoder pass, initialized from the encoder's final states.
    std::vector<Tensor3<S>> outputs;
    outputs.reserve(s);
    detail::ConstMatMap<S> Wr(params.data() + readout_w_, config.in_channels,
                              hid);
    const S* br = params.data() + readout_b_;
    for (int t = 0; t < s; t++) {
      cc.dec[t].resize(config.layers);
      Tensor3<S> din = decoder_input(seq, outputs, t);
      const Tensor3<S>* x = &din;
      for (int l = 0; l < config.layers; l++) {
        const Tensor3<S>& hp = t > 0 ? cc.dec[t - 1][l].h : cc.enc[s - 1][l].h;
        const Tensor3<S>& cp = t > 0 ? cc.dec[t - 1][l].c : cc.enc[s - 1][l].c;
        cell_forward(params.data(), dec_[l], *x, hp, cp, cc.dec[t][l], ws);
        x = &cc.dec[t][l].h;
      }
      // 1x1 readout + sigmoid.
      Tensor3<S> y(config.in_channels, H, W);
      detail::MatMap<S> Y(y.data.data(), config.in_channels, hw);
      detail::ConstMatMap<S> Htop(cc.dec[t].back().h.data.data(), hid, hw);
      Y.noalias() = Wr * Htop;
      for (int ch = 0; ch < config.in_channels; ch++) {
        S* row = y.plane(ch);
        for (size_t p = 0; p < hw; p++) {
          row[p] = detail::sigmoid(row[p] + br[ch]);
        }
      }
      outputs.push_back(y);
    }
    cc.outputs = outputs;
    return outputs;
  }

  // Gradients of mse_loss(outputs, targets) w.r.t. every parameter.
  // Returns the loss. `grads` is resized and zeroed when accumulate=false.
  double backward(const std::vector<Tensor3<S>>& seq,
                  const std::vector<Tensor3<S>>& targets,
                  const ForwardCache<S>& cache, AVec<S>& grads,
                  bool accumulate = false) const {
    check_sequence(seq);
    if (cache.outputs.size() != seq.size() || cache.enc.size() != seq.size()) {
      throw ContractError("backward: cache does not match the sequence");
    }
    const int s = static_cast<int>(seq.size());
    const int hid = config.hidden_channels;
    const int C = config.in_channels;
    const int H = config.height, W = config.width;
    const size_t hw = static_cast<size_t>(H) * W;
    if (!accumulate) {
      grads.assign(count_, S(0));
    } else if (grads.size() != count_) {
      throw ContractError("backward: gradient buffer size mismatch");
    }
    Workspace<S> ws;

    const double loss = mse_loss(cache.outputs, targets);
    const double inv_n =
        1.0 / (static_cast<double>(s) * C * hw);

    const Tensor3<S> zero_state(hid, H, W);
    detail::ConstMatMap<S> Wr(params.data() + readout_w_, C, hid);

    // dy[t]: gradient w.r.t. reconstruction t. Filled from the loss now,
    // plus (later) the prev-image slice of decoder step t+1's input grad.
    std::vector<Tensor3<S>> dy(s);
    for (int t = 0; t < s; t++) {
      dy[t] = Tensor3<S>(C, H, W);
      for (size_t p = 0; p < dy[t].size(); p++) {
        dy[t].data[p] =
            static_cast<S>(2.0 * inv_n *
                           (static_cast<double>(cache.outputs[t].data[p]) -
                            targets[t].data[p]));
      }
    }

    // Decoder BPTT, last step first.
    std::vector<Tensor3<S>> dh(config.layers), dc(config.layers);
    for (int l = 0; l < config.layers; l++) {
      dh[l] = Tensor3<S>(hid, H, W);
      dc[l] = Tensor3<S>(hid, H, W);
    }
    Tensor3<S> dh_enc_final(hid, H, W), dc_enc_final(hid, H, W);
    std::vector<Tensor3<S>> dh_enc(config.layers), dc_enc(config.layers);
    for (int l = 0; l < config.layers; l++) {
      dh_enc[l] = Tensor3<S>(hid, H, W);
      dc_enc[l] = Tensor3<S>(hid, H, W);
    }

    for (int t = s - 1; t >= 0; t--) {
      // Readout backward: dz = dy * y(1-y).
      Tensor3<S> dz(C, H, W);
      const Tensor3<S>& y = cache.outputs[t];
      for (size_t p = 0; p < dz.size(); p++) {
        S yy = y.data[p];
        dz.data[p] = dy[t].data[p] * yy * (S(1) - yy);
      }
      detail::ConstMatMap<S> dZ(dz.data.data(), C, hw);
      detail::ConstMatMap<S> Htop(cache.dec[t].back().h.data.data(), hid, hw);
      detail::MatMap<S>(grads.data() + readout_w_, C, hid).noalias() +=
          dZ * Htop.transpose();
      S* dbr = grads.data() + readout_b_;
      for (int ch = 0; ch < C; ch++) dbr[ch] += dZ.row(ch).sum();
      // into the top decoder hidden state
      {
        detail::MatMap<S> dH(dh[config.layers - 1].data.data(), hid, hw);
        dH.noalias() += Wr.transpose() * dZ;
      }

      // Walk the decoder stack top-down.
      Tensor3<S> din = decoder_input(seq, cache.outputs, t);
      for (int l = config.layers - 1; l >= 0; l--) {
        const Tensor3<S>& x = l == 0 ? din : cache.dec[t][l - 1].h;
        const Tensor3<S>& hp =
            t > 0 ? cache.dec[t - 1][l].h : cache.enc[s - 1][l].h;
        const Tensor3<S>& cp =
            t > 0 ? cache.dec[t - 1][l].c : cache.enc[s - 1][l].c;
        Tensor3<S> dx;
        Tensor3<S> dh_prev, dc_prev;
        cell_backward(params.data(), dec_[l], x, hp, cp, cache.dec[t][l],
                      dh[l], dc[l], grads.data(), dx, dh_prev, dc_prev, ws);
        if (l > 0) {
          for (size_t p = 0; p < dx.size(); p++) {
            dh[l - 1].data[p] += dx.data[p];
          }
        } else {
          // Split the input gradient: the prev-reconstruction slice flows
          // into dy[t-1]; the current-image slice lands on constants.
          if (t > 0 && config.decoder_input != DecoderInputMode::current_only) {
            for (int ch = 0; ch < C; ch++) {
              const S* src = dx.plane(ch);
              S* dst = dy[t - 1].plane(ch);
              for (size_t p = 0; p < hw; p++) dst[p] += src[p];
            }
          }
        }
        if (t > 0) {
          dh[l] = std::move(dh_prev);
          dc[l] = std::move(dc_prev);
        } else {
          dh_enc[l] = std::move(dh_prev);
          dc_enc[l] = std::move(dc_prev);
        }
      }
    }

    // Encoder BPTT; the decoder's initial-state gradients seed step s-1.
    for (int t = s - 1; t >= 0; t--) {
      for (int l = config.layers - 1; l >= 0; l--) {
        const Tensor3<S>& x = l == 0 ? seq[t] : cache.enc[t][l - 1].h;
        const Tensor3<S>& hp = t > 0 ? cache.enc[t - 1][l].h : zero_state;
        const Tensor3<S>& cp = t > 0 ? cache.enc[t - 1][l].c : zero_state;
        Tensor3<S> dx, dh_prev, dc_prev;
        cell_backward(params.data(), enc_[l], x, hp, cp, cache.enc[t][l],
                      dh_enc[l], dc_enc[l], grads.data(), dx, dh_prev, dc_prev,
                      ws);
        if (l > 0) {
          for (size_t p = 0; p < dx.size(); p++) {
            dh_enc[l - 1].data[p] += dx.data[p];
          }
        }
        if (t > 0) {
          dh_enc[l] = std::move(dh_prev);
          dc_enc[l] = std::move(dc_prev);
        }
      }
    }
    return loss;
  }

 private:
  std::vector<CellLayout> enc_, dec_;
  size_t readout_w_ = 0, readout_b_ = 0, count_ = 0;

  void check_sequence(const std::vector<Tensor3<S>>& seq) const {
    if (seq.empty()) throw ContractError("model: empty sequence");
    for (const auto& img : seq) {
      if (img.channels != config.in_channels || img.height != config.height ||
          img.width != config.width) {
        throw ContractError("model: sequence shape mismatch");
      }
    }
  }

  Tensor3<S> decoder_input(const std::vector<Tensor3<S>>& seq,
                           const std::vector<Tensor3<S>>& outputs,
                           int t) const {
    const int C = config.in_channels;
    const Tensor3<S>* prev = t > 0 ? &outputs[t - 1] : nullptr;
    switch (config.decoder_input) {
      case DecoderInputMode::prev_only: {
        if (prev) return *prev;
        return Tensor3<S>(C, config.height, config.width);
      }
      case DecoderInputMode::current_only:
        return seq[t];
      case DecoderInputMode::prev_and_current:
      default: {
        Tensor3<S> din(2 * C, config.height, config.width);
        if (prev) {
          std::copy(prev->data.begin(), prev->data.end(), din.data.begin());
        }
        std::copy(seq[t].data.begin(), seq[t].data.end(),
                  din.data.begin() + C * din.plane_size());
        return din;
      }
    }
  }
};

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
struct AdamState {
  AdamParams hp;
  AVec<S> m, v;
  int64_t step = 0;

  explicit AdamState(size_t n = 0, const AdamParams& p = {}) : hp(p) {
    m.assign(n, S(0));
    v.assign(n, S(0));
  }

  void apply(AVec<S>& params, const AVec<S>& grads) {
    if (params.size() != m.size() || grads.size() != m.size()) {
      throw ContractError("adam: size mismatch");
    }
    step++;
    const double b1 = hp.beta1, b2 = hp.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (size_t p = 0; p < params.size(); p++) {
      double g = grads[p];
      double mm = b1 * m[p] + (1.0 - b1) * g;
      double vv = b2 * v[p] + (1.0 - b2) * g * g;
      m[p] = static_cast<S>(mm);
      v[p] = static_cast<S>(vv);
      params[p] -= static_cast<S>(hp.lr * (mm / bc1) /
                                  (std::sqrt(vv / bc2) + hp.eps));
    }
  }
};

struct TrainOptions {
  int epochs = 30;
  int batch_size = 8;
  uint64_t seed = 1;
  AdamParams adam;
  // Observation hook, called after each epoch with (epoch, mean loss, model);
  // must not mutate the model. Training results do not depend on it.
  std::function<void(int, double, const ConvLstmModel<float>&)> on_epoch;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean per-sequence loss per epoch
};

Tensor3<float> to_tensor(const FrameImage& img);
FrameImage to_image(const Tensor3<float>& t);
std::vector<Tensor3<float>> to_tensor_seq(const FrameSequence& seq);

// Adam/MSE training over clean sequences; deterministic given (corpus,
// config, options). The model must be initialized for the corpus shape.
TrainResult train_model(ConvLstmModel<float>& model,
                        const std::vector<FrameSequence>& corpus,
                        const TrainOptions& opts);

void write_loss_csv(std::ostream& out, const std::vector<double>& epoch_loss);

void save_model(const ConvLstmModel<float>& model, const std::string& path);
ConvLstmModel<float> load_model(const std::string& path);
// Load and require the stored config to equal `expect`.
ConvLstmModel<float> load_model(const std::string& path,
                                const ModelConfig& expect);

}  // namespace airtrace
