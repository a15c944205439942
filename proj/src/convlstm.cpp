#include "airtrace/convlstm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>

#include "airtrace/errors.hpp"

namespace airtrace {

Tensor3<float> to_tensor(const FrameImage& img) {
  Tensor3<float> t(img.channels, img.height, img.width);
  t.data.assign(img.pix.begin(), img.pix.end());  // same layout
  return t;
}

FrameImage to_image(const Tensor3<float>& t) {
  FrameImage img(t.width, t.height, t.channels);
  img.pix.assign(t.data.begin(), t.data.end());
  return img;
}

std::vector<Tensor3<float>> to_tensor_seq(const FrameSequence& seq) {
  std::vector<Tensor3<float>> out;
  out.reserve(seq.images.size());
  for (const FrameImage& img : seq.images) out.push_back(to_tensor(img));
  return out;
}

TrainResult train_model(ConvLstmModel<float>& model,
                        const std::vector<FrameSequence>& corpus,
                        const TrainOptions& opts) {
  if (corpus.empty()) throw ContractError("train: empty corpus");
  if (opts.epochs < 1 || opts.batch_size < 1) {
    throw ConfigError("train: epochs and batch size must be positive");
  }
  std::vector<std::vector<Tensor3<float>>> seqs;
  seqs.reserve(corpus.size());
  for (const FrameSequence& fs : corpus) seqs.push_back(to_tensor_seq(fs));

  Rng rng(opts.seed);
  AdamState<float> adam(model.param_count(), opts.adam);
  AVec<float> grads, batch_grads;
  std::vector<size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), size_t{0});

  TrainResult result;
  ForwardCache<float> cache;
  for (int epoch = 0; epoch < opts.epochs; epoch++) {
    Rng erng = rng.fork(static_cast<uint64_t>(epoch));
    // Fisher-Yates on the sequence order.
    for (size_t i = order.size(); i > 1; i--) {
      size_t j = erng.uniform_int(uint64_t{i});
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    size_t done = 0;
    while (done < order.size()) {
      size_t batch = std::min<size_t>(opts.batch_size, order.size() - done);
      batch_grads.assign(model.param_count(), 0.0f);
      double batch_loss = 0.0;
      for (size_t bi = 0; bi < batch; bi++) {
        const auto& seq = seqs[order[done + bi]];
        model.forward(seq, &cache);
        batch_loss += model.backward(seq, seq, cache, grads);
        for (size_t p = 0; p < grads.size(); p++) batch_grads[p] += grads[p];
      }
      if (!std::isfinite(batch_loss)) {
        throw ContractError("train: loss diverged to non-finite");
      }
      float inv = 1.0f / static_cast<float>(batch);
      for (float& g : batch_grads) g *= inv;
      adam.apply(model.params, batch_grads);
      epoch_loss += batch_loss;
      done += batch;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    if (opts.on_epoch) opts.on_epoch(epoch, result.epoch_loss.back(), model);
  }
  return result;
}

void write_loss_csv(std::ostream& out, const std::vector<double>& epoch_loss) {
  out << "epoch,mean_loss\n";
  for (size_t i = 0; i < epoch_loss.size(); i++) {
    out << i << ',' << epoch_loss[i] << '\n';
  }
  if (!out) throw IoError("loss csv: write failure");
}

namespace {

constexpr char kMagic[4] = {'V', 'A', 'D', 'B'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("model file: truncated header");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_model(const ConvLstmModel<float>& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  const ModelConfig& c = model.config;
  put_u32(out, static_cast<uint32_t>(c.in_channels));
  put_u32(out, static_cast<uint32_t>(c.hidden_channels));
  put_u32(out, static_cast<uint32_t>(c.kernel));
  put_u32(out, static_cast<uint32_t>(c.layers));
  put_u32(out, static_cast<uint32_t>(c.height));
  put_u32(out, static_cast<uint32_t>(c.width));
  put_u32(out, c.peephole ? 1 : 0);
  put_u32(out, static_cast<uint32_t>(c.decoder_input));
  put_u32(out, static_cast<uint32_t>(model.param_count()));
  // Parameters as little-endian f32 in layout order (the build targets
  // little-endian hardware; serialize raw).
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(model.params.data()),
            static_cast<std::streamsize>(model.params.size() * 4));
  if (!out) throw IoError("model file: write failure");
}

ConvLstmModel<float> load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("model file: bad magic");
  }
  uint32_t version = get_u32(in);
  if (version != kVersion) {
    throw FormatError("model file: unsupported version " +
                      std::to_string(version));
  }
  ModelConfig c;
  c.in_channels = static_cast<int>(get_u32(in));
  c.hidden_channels = static_cast<int>(get_u32(in));
  c.kernel = static_cast<int>(get_u32(in));
  c.layers = static_cast<int>(get_u32(in));
  c.height = static_cast<int>(get_u32(in));
  c.width = static_cast<int>(get_u32(in));
  c.peephole = get_u32(in) != 0;
  uint32_t mode = get_u32(in);
  if (mode > 2) throw FormatError("model file: bad decoder input mode");
  c.decoder_input = static_cast<DecoderInputMode>(mode);
  uint32_t stored = get_u32(in);

  ConvLstmModel<float> m;
  m.config = c;
  m.build_layout();
  if (stored != m.param_count()) {
    throw FormatError("model file: parameter count disagrees with config");
  }
  m.params.resize(stored);
  in.read(reinterpret_cast<char*>(m.params.data()),
          static_cast<std::streamsize>(stored) * 4);
  if (in.gcount() != static_cast<std::streamsize>(stored) * 4) {
    throw FormatError("model file: truncated parameter block");
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw FormatError("model file: trailing bytes after parameters");
  }
  return m;
}

ConvLstmModel<float> load_model(const std::string& path,
                                const ModelConfig& expect) {
  ConvLstmModel<float> m = load_model(path);
  if (!(m.config == expect)) {
    throw FormatError("model file: shape mismatch with the expected config");
  }
  return m;
}

}  // namespace airtrace
