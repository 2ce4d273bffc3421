#include "amcseg/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "amcseg/binio.hpp"

namespace amcseg {

Variant variant_from(const std::string& name) {
  if (name == "UNET") return Variant::UNET;
  if (name == "ATT_UNET") return Variant::ATT_UNET;
  if (name == "MSU_NET") return Variant::MSU_NET;
  if (name == "AMC_NET") return Variant::AMC_NET;
  throw std::invalid_argument("unknown variant '" + name +
                              "' (expected UNET, ATT_UNET, MSU_NET or AMC_NET)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::UNET: return "UNET";
    case Variant::ATT_UNET: return "ATT_UNET";
    case Variant::MSU_NET: return "MSU_NET";
    case Variant::AMC_NET: return "AMC_NET";
  }
  return "?";
}

void ModelSpec::validate() const {
  if (base_channels < 1)
    throw std::invalid_argument("model spec: base_channels must be >= 1");
  if (input_h < 16 || input_w < 16 || input_h % 16 != 0 || input_w % 16 != 0)
    throw std::invalid_argument("model spec: input size must be divisible by 16 (four 2x poolings)");
  for (int d : dilation_rates)
    if (d < 1) throw std::invalid_argument("model spec: dilation rates must be positive");
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw std::invalid_argument("model spec: dropout_p must be in [0,1)");
}

bool operator==(const ModelSpec& a, const ModelSpec& b) {
  return a.variant == b.variant && a.base_channels == b.base_channels &&
         a.dilation_rates == b.dilation_rates && a.input_h == b.input_h &&
         a.input_w == b.input_w && a.init_seed == b.init_seed &&
         a.dropout_p == b.dropout_p;
}

// ---- construction -----------------------------------------------------------

template <class T>
typename Network<T>::ConvRef Network<T>::add_conv(const std::string& name, int in_ch,
                                                  int out_ch, int k,
                                                  std::mt19937_64& rng) {
  // Glorot-uniform. The conv chain has no interleaved activations, so a
  // variance-preserving fan average is required; fan-in He scaling doubles the
  // activation variance per layer and saturates the head before training.
  const double fan_in = static_cast<double>(in_ch) * k * k;
  const double fan_out = static_cast<double>(out_ch) * k * k;
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  auto w = Tensor<T>::zeros({out_ch, in_ch, k, k}, true);
  for (auto& v : w.data()) v = static_cast<T>(u(rng));
  auto b = Tensor<T>::zeros({out_ch}, true);

  ConvRef ref;
  ref.w = static_cast<int>(params_.size());
  params_.push_back({name + ".w", w});
  index_[name + ".w"] = ref.w;
  ref.b = static_cast<int>(params_.size());
  params_.push_back({name + ".b", b});
  index_[name + ".b"] = ref.b;
  return ref;
}

template <class T>
typename Network<T>::MsRef Network<T>::add_ms(const std::string& name, int ch,
                                              std::mt19937_64& rng) {
  MsRef ref;
  for (int i = 0; i < 4; ++i)
    ref.branch[i] = add_conv(name + ".d" + std::to_string(spec_.dilation_rates[i]),
                             ch, ch, 3, rng);
  ref.proj = add_conv(name + ".proj", 4 * ch, ch, 1, rng);
  return ref;
}

template <class T>
typename Network<T>::AgRef Network<T>::add_ag(const std::string& name, int skip_ch,
                                              int gate_ch, int inter_ch,
                                              std::mt19937_64& rng) {
  AgRef ref;
  ref.gate = add_conv(name + ".gate", gate_ch, inter_ch, 1, rng);
  ref.skip = add_conv(name + ".skip", skip_ch, inter_ch, 1, rng);
  ref.psi = add_conv(name + ".psi", inter_ch, 1, 1, rng);
  return ref;
}

template <class T>
Network<T>::Network(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  std::mt19937_64 rng(spec_.init_seed);
  const int n = spec_.base_channels;

  auto conv_name = [](int i) { return "conv_" + std::to_string(i); };

  // Encoder blocks 1..4.
  for (int i = 0; i < 4; ++i) {
    const int ch = n << i;
    const int in_ch = (i == 0) ? 1 : (n << (i - 1));
    conv_[2 * i] = add_conv(conv_name(2 * i + 1), in_ch, ch, 3, rng);
    if (spec_.has_ms()) ms_[i] = add_ms("ms_" + std::to_string(i + 1), ch, rng);
    conv_[2 * i + 1] = add_conv(conv_name(2 * i + 2), ch, ch, 3, rng);
  }

  // Bottleneck block 5.
  conv_[8] = add_conv(conv_name(9), 8 * n, 16 * n, 3, rng);
  conv_[9] = add_conv(conv_name(10), 16 * n, 16 * n, 3, rng);

  // Decoder blocks 6..9; attention-gate widths follow the 64/32/16/8 ladder.
  for (int j = 0; j < 4; ++j) {
    const int skip_ch = n << (3 - j);
    const int gate_ch = 2 * skip_ch;
    if (spec_.has_ag()) {
      const int inter_ch = std::max(1, (4 * n) >> j);
      ag_[j] = add_ag("ag_" + std::to_string(j + 1), skip_ch, gate_ch, inter_ch, rng);
    }
    const int out_ch = skip_ch;
    conv_[10 + 2 * j] = add_conv(conv_name(11 + 2 * j), gate_ch + skip_ch, out_ch, 3, rng);
    if (spec_.has_ms())
      ms_[4 + j] = add_ms("ms_" + std::to_string(5 + j), out_ch, rng);
    conv_[11 + 2 * j] = add_conv(conv_name(12 + 2 * j), out_ch, out_ch, 3, rng);
  }

  conv_[18] = add_conv(conv_name(19), n, 1, 1, rng);
}

template <class T>
Tensor<T> Network<T>::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::invalid_argument("no parameter named '" + name + "'");
  return params_[static_cast<std::size_t>(it->second)].tensor;
}

template <class T>
std::size_t Network<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.tensor.numel();
  return total;
}

template <class T>
void Network<T>::zero_grads() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <class T>
std::vector<std::vector<T>> Network<T>::snapshot() const {
  std::vector<std::vector<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor.data());
  return out;
}

template <class T>
void Network<T>::restore(const std::vector<std::vector<T>>& values) {
  if (values.size() != params_.size())
    throw std::invalid_argument("restore: parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].size() != params_[i].tensor.numel())
      throw std::invalid_argument("restore: size mismatch for " + params_[i].name);
    params_[i].tensor.data() = values[i];
  }
}

// ---- forward ----------------------------------------------------------------

template <class T>
Tensor<T> Network<T>::apply_conv(const ConvRef& c, const Tensor<T>& x, int dilation) const {
  const auto& w = params_[static_cast<std::size_t>(c.w)].tensor;
  const auto& b = params_[static_cast<std::size_t>(c.b)].tensor;
  const int k = w.dim(2);
  const int pad = (k == 3) ? dilation : 0;  // dilation-aware "same"
  return conv2d(x, w, b, 1, dilation, pad);
}

template <class T>
Tensor<T> ms_block(const Tensor<T>& x, const MsBlockParams<T>& p,
                   const std::array<int, 4>& rates) {
  std::vector<Tensor<T>> branches;
  branches.reserve(4);
  for (int i = 0; i < 4; ++i)
    branches.push_back(conv2d(x, p.w[static_cast<std::size_t>(i)],
                              p.b[static_cast<std::size_t>(i)], 1, rates[static_cast<std::size_t>(i)],
                              rates[static_cast<std::size_t>(i)]));
  return conv2d(concat_channels(branches), p.proj_w, p.proj_b, 1, 1, 0);
}

template <class T>
Tensor<T> attention_gate(const Tensor<T>& skip, const Tensor<T>& gate,
                         const AttentionGateParams<T>& p) {
  if (skip.dim(2) != gate.dim(2) || skip.dim(3) != gate.dim(3))
    throw std::invalid_argument("attention gate: skip " + shape_str(skip.shape()) +
                                " and gating " + shape_str(gate.shape()) +
                                " differ spatially");
  auto g = conv2d(gate, p.gate_w, p.gate_b, 1, 1, 0);
  auto s = conv2d(skip, p.skip_w, p.skip_b, 1, 1, 0);
  auto att = sigmoid(conv2d(relu(add(g, s)), p.psi_w, p.psi_b, 1, 1, 0));
  return mul(skip, att);
}

template <class T>
Tensor<T> Network<T>::apply_ms(const MsRef& m, const Tensor<T>& x) const {
  MsBlockParams<T> p;
  for (int i = 0; i < 4; ++i) {
    p.w[static_cast<std::size_t>(i)] = params_[static_cast<std::size_t>(m.branch[static_cast<std::size_t>(i)].w)].tensor;
    p.b[static_cast<std::size_t>(i)] = params_[static_cast<std::size_t>(m.branch[static_cast<std::size_t>(i)].b)].tensor;
  }
  p.proj_w = params_[static_cast<std::size_t>(m.proj.w)].tensor;
  p.proj_b = params_[static_cast<std::size_t>(m.proj.b)].tensor;
  return ms_block(x, p, spec_.dilation_rates);
}

template <class T>
Tensor<T> Network<T>::apply_ag(const AgRef& a, const Tensor<T>& skip,
                               const Tensor<T>& gate) const {
  AttentionGateParams<T> p;
  p.gate_w = params_[static_cast<std::size_t>(a.gate.w)].tensor;
  p.gate_b = params_[static_cast<std::size_t>(a.gate.b)].tensor;
  p.skip_w = params_[static_cast<std::size_t>(a.skip.w)].tensor;
  p.skip_b = params_[static_cast<std::size_t>(a.skip.b)].tensor;
  p.psi_w = params_[static_cast<std::size_t>(a.psi.w)].tensor;
  p.psi_b = params_[static_cast<std::size_t>(a.psi.b)].tensor;
  return attention_gate(skip, gate, p);
}

template <class T>
struct Network<T>::Trace {
  std::array<Tensor<T>, 4> enc;  // block 1..4 outputs, pre-pool
  Tensor<T> bottleneck;          // block 5 output, pre-upsample
  std::array<Tensor<T>, 4> dec;  // block 6..9 outputs (9: pre-head)
  Tensor<T> probs;
};

template <class T>
typename Network<T>::Trace Network<T>::run(const Tensor<T>& input, bool training,
                                           std::mt19937_64* rng) const {
  if (input.ndim() != 4 || input.dim(1) != 1)
    throw std::invalid_argument("forward: expected (B,1,H,W) input, got " +
                                shape_str(input.shape()));
  if (input.dim(2) % 16 != 0 || input.dim(3) % 16 != 0)
    throw std::invalid_argument("forward: H and W must be divisible by 16, got " +
                                shape_str(input.shape()));
  const bool use_dropout = training && spec_.has_ms() && spec_.dropout_p > 0.0;
  if (use_dropout && rng == nullptr)
    throw std::invalid_argument("forward: training with dropout requires an rng");

  auto maybe_ms = [&](const Tensor<T>& x, int ms_index) {
    if (!spec_.has_ms()) return x;
    auto y = apply_ms(ms_[static_cast<std::size_t>(ms_index)], x);
    if (use_dropout) y = spatial_dropout(y, spec_.dropout_p, *rng);
    return y;
  };

  Trace tr;
  Tensor<T> x = input;
  for (int i = 0; i < 4; ++i) {
    auto a = apply_conv(conv_[static_cast<std::size_t>(2 * i)], x);
    a = maybe_ms(a, i);
    tr.enc[static_cast<std::size_t>(i)] = apply_conv(conv_[static_cast<std::size_t>(2 * i + 1)], a);
    x = maxpool2d(tr.enc[static_cast<std::size_t>(i)]);
  }

  x = apply_conv(conv_[9], apply_conv(conv_[8], x));
  tr.bottleneck = x;

  Tensor<T> up = upsample2d(x);
  for (int j = 0; j < 4; ++j) {
    const auto& skip = tr.enc[static_cast<std::size_t>(3 - j)];
    Tensor<T> s = spec_.has_ag() ? apply_ag(ag_[static_cast<std::size_t>(j)], skip, up) : skip;
    auto cat = concat_channels<T>({up, s});
    auto a = apply_conv(conv_[static_cast<std::size_t>(10 + 2 * j)], cat);
    a = maybe_ms(a, 4 + j);
    tr.dec[static_cast<std::size_t>(j)] =
        apply_conv(conv_[static_cast<std::size_t>(11 + 2 * j)], a);
    if (j < 3) up = upsample2d(tr.dec[static_cast<std::size_t>(j)]);
  }

  tr.probs = sigmoid(apply_conv(conv_[18], tr.dec[3]));
  return tr;
}

template <class T>
Tensor<T> Network<T>::forward(const Tensor<T>& input, bool training,
                              std::mt19937_64* dropout_rng) const {
  auto probs = run(input, training, dropout_rng).probs;
  if (!all_finite(probs))
    throw std::runtime_error("forward produced non-finite values");
  return probs;
}

template <class T>
std::vector<std::vector<T>> Network<T>::block_features(const Tensor<T>& input,
                                                       int block_index, int* out_h,
                                                       int* out_w) const {
  if (block_index < 1 || block_index > 9)
    throw std::invalid_argument("block_features: block index must be in 1..9, got " +
                                std::to_string(block_index));
  if (input.dim(0) != 1)
    throw std::invalid_argument("block_features: expected a single-item batch");
  NoGradGuard ng;
  Trace tr = run(input, false, nullptr);
  Tensor<T> t;
  if (block_index <= 4)
    t = tr.enc[static_cast<std::size_t>(block_index - 1)];
  else if (block_index == 5)
    t = tr.bottleneck;
  else
    t = tr.dec[static_cast<std::size_t>(block_index - 6)];

  const int C = t.dim(1), H = t.dim(2), W = t.dim(3);
  if (out_h) *out_h = H;
  if (out_w) *out_w = W;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<std::vector<T>> maps(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    const T* src = t.data().data() + static_cast<std::size_t>(c) * plane;
    auto [mn, mx] = std::minmax_element(src, src + plane);
    const T lo = *mn, span = *mx - *mn;
    auto& m = maps[static_cast<std::size_t>(c)];
    m.resize(plane);
    for (std::size_t i = 0; i < plane; ++i)
      m[i] = span > T(0) ? (src[i] - lo) / span : T(0);
  }
  return maps;
}

// ---- checkpoints ------------------------------------------------------------

void save_checkpoint(const Network<float>& net, const std::string& path) {
  auto os = open_out(path);
  os.write("AMC1", 4);
  write_pod<std::uint32_t>(os, 1);  // format version
  const ModelSpec& s = net.spec();
  write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(s.variant));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.base_channels));
  for (int d : s.dilation_rates) write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.input_h));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.input_w));
  write_pod<std::uint64_t>(os, s.init_seed);
  write_pod<double>(os, s.dropout_p);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(net.params().size()));
  for (const auto& p : net.params()) {
    write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(p.tensor.ndim()));
    for (int d : p.tensor.shape()) write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    write_vec(os, p.tensor.data());
  }
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

Network<float> load_checkpoint(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "AMC1", path);
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != 1)
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(version));
  ModelSpec s;
  s.variant = static_cast<Variant>(read_pod<std::uint8_t>(is, "variant"));
  s.base_channels = static_cast<int>(read_pod<std::uint32_t>(is, "base_channels"));
  for (auto& d : s.dilation_rates)
    d = static_cast<int>(read_pod<std::uint32_t>(is, "dilation"));
  s.input_h = static_cast<int>(read_pod<std::uint32_t>(is, "input_h"));
  s.input_w = static_cast<int>(read_pod<std::uint32_t>(is, "input_w"));
  s.init_seed = read_pod<std::uint64_t>(is, "init_seed");
  s.dropout_p = read_pod<double>(is, "dropout_p");

  Network<float> net(s);
  const auto count = read_pod<std::uint32_t>(is, "param count");
  if (count != net.params().size())
    throw std::runtime_error(path + ": checkpoint lists " + std::to_string(count) +
                             " parameters, model has " + std::to_string(net.params().size()));
  for (auto& p : net.params()) {
    const auto name_len = read_pod<std::uint16_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (name != p.name)
      throw std::runtime_error(path + ": parameter order mismatch, expected '" + p.name +
                               "' got '" + name + "'");
    const auto ndim = read_pod<std::uint8_t>(is, "ndim");
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_pod<std::uint32_t>(is, "dim"));
    if (shape != p.tensor.shape())
      throw std::runtime_error(path + ": shape mismatch for '" + p.name + "'");
    read_vec(is, p.tensor.data(), p.tensor.numel(), p.name.c_str());
  }
  return net;
}

template Tensor<float> ms_block<float>(const Tensor<float>&, const MsBlockParams<float>&,
                                       const std::array<int, 4>&);
template Tensor<double> ms_block<double>(const Tensor<double>&, const MsBlockParams<double>&,
                                         const std::array<int, 4>&);
template Tensor<float> attention_gate<float>(const Tensor<float>&, const Tensor<float>&,
                                             const AttentionGateParams<float>&);
template Tensor<double> attention_gate<double>(const Tensor<double>&, const Tensor<double>&,
                                               const AttentionGateParams<double>&);
template class Network<float>;
template class Network<double>;

}  // namespace amcseg
