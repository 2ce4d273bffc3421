#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "amcseg/tensor.hpp"

namespace amcseg {

// Encoder-decoder segmentation network with four 2x pooling stages, optional
// multi-scale dilated-convolution blocks after the first conv of each coding
// block, and optional attention gates on the skip connections. The full
// variant carries both; the ablations drop one or the other.

enum class Variant { UNET, ATT_UNET, MSU_NET, AMC_NET };

Variant variant_from(const std::string& name);
std::string variant_name(Variant v);

struct ModelSpec {
  Variant variant = Variant::AMC_NET;
  int base_channels = 16;
  std::array<int, 4> dilation_rates{1, 2, 3, 5};
  int input_h = 128;
  int input_w = 128;
  std::uint64_t init_seed = 0;
  double dropout_p = 0.2;

  void validate() const;
  bool has_ms() const { return variant == Variant::MSU_NET || variant == Variant::AMC_NET; }
  bool has_ag() const { return variant == Variant::ATT_UNET || variant == Variant::AMC_NET; }
};

bool operator==(const ModelSpec& a, const ModelSpec& b);

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
struct MsBlockParams {
  std::array<Tensor<T>, 4> w;  // 3x3 branch weights, one per dilation rate
  std::array<Tensor<T>, 4> b;
  Tensor<T> proj_w;  // 1x1, 4n -> n
  Tensor<T> proj_b;
};

template <class T>
struct AttentionGateParams {
  Tensor<T> gate_w, gate_b;  // 1x1 on the gating (upsampled) signal
  Tensor<T> skip_w, skip_b;  // 1x1 on the encoder skip
  Tensor<T> psi_w, psi_b;    // 1x1 down to a single saliency channel
};

// Four parallel dilated 3x3 convs on the same input, channel-concatenated and
// projected back to the input width by a 1x1 conv. Spatial size preserved.
template <class T>
Tensor<T> ms_block(const Tensor<T>& x, const MsBlockParams<T>& p,
                   const std::array<int, 4>& rates);

// skip * sigmoid(psi(relu(gate_proj + skip_proj))), the saliency map
// broadcasting over the skip's channels. Requires equal spatial sizes.
template <class T>
Tensor<T> attention_gate(const Tensor<T>& skip, const Tensor<T>& gate,
                         const AttentionGateParams<T>& p);

template <class T>
class Network {
 public:
  explicit Network(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  std::vector<NamedParam<T>>& params() { return params_; }
  const std::vector<NamedParam<T>>& params() const { return params_; }
  Tensor<T> param(const std::string& name) const;
  std::size_t parameter_count() const;

  // input is (B,1,H,W) with values in [0,1] and H, W divisible by 16; output
  // is (B,1,H,W) of probabilities. Dropout applies only when training and the
  // spec's dropout_p > 0 (MS variants only).
  Tensor<T> forward(const Tensor<T>& input, bool training = false,
                    std::mt19937_64* dropout_rng = nullptr) const;

  // Feature maps produced by coding block `block_index` in 1..9 (before the
  // pooling/upsampling that follows the block), min-max normalized per
  // channel to [0,1] for export.
  std::vector<std::vector<T>> block_features(const Tensor<T>& input, int block_index,
                                             int* out_h = nullptr,
                                             int* out_w = nullptr) const;

  void zero_grads();
  std::vector<std::vector<T>> snapshot() const;
  void restore(const std::vector<std::vector<T>>& values);

 private:
  struct ConvRef {
    int w = -1;
    int b = -1;
  };
  struct MsRef {
    std::array<ConvRef, 4> branch;
    ConvRef proj;
  };
  struct AgRef {
    ConvRef gate, skip, psi;
  };

  ConvRef add_conv(const std::string& name, int in_ch, int out_ch, int k,
                   std::mt19937_64& rng);
  MsRef add_ms(const std::string& name, int ch, std::mt19937_64& rng);
  AgRef add_ag(const std::string& name, int skip_ch, int gate_ch, int inter_ch,
               std::mt19937_64& rng);

  Tensor<T> apply_conv(const ConvRef& c, const Tensor<T>& x, int dilation = 1) const;
  Tensor<T> apply_ms(const MsRef& m, const Tensor<T>& x) const;
  Tensor<T> apply_ag(const AgRef& a, const Tensor<T>& skip, const Tensor<T>& gate) const;

  struct Trace;  // intermediate activations of one forward pass
  Trace run(const Tensor<T>& input, bool training, std::mt19937_64* rng) const;

  ModelSpec spec_;
  std::vector<NamedParam<T>> params_;
  std::map<std::string, int> index_;

  std::array<ConvRef, 19> conv_;  // conv_1 .. conv_19
  std::array<MsRef, 8> ms_;       // ms_1 .. ms_8
  std::array<AgRef, 4> ag_;       // ag_1 .. ag_4
};

// Checkpoint file: magic "AMC1", spec fields, then named parameter tensors as
// little-endian float32 with explicit shapes. Round-trips bit-exactly.
void save_checkpoint(const Network<float>& net, const std::string& path);
Network<float> load_checkpoint(const std::string& path);

}  // namespace amcseg
