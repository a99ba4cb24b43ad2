#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "m2m/graph.hpp"
#include "m2m/image.hpp"

namespace m2m {

enum class NetKind { Demosaick, Denoise };

/// Where the demosaicking net's extra Conv+BN+ReLU sits relative to the
/// depth-to-space upsampling.
enum class ExtraLayer { AfterUpsampling, BeforeUpsampling };

struct NetSpec {
  NetKind kind = NetKind::Demosaick;
  int body_layers = 14;
  int features = 64;
  int in_channels = 4;
  int out_channels = 3;
  bool residual = true;
  ExtraLayer extra_layer = ExtraLayer::AfterUpsampling;

  static NetSpec demosaick_default() { return {}; }
  static NetSpec denoise_default() { return {NetKind::Denoise, 17, 64, 1, 1, true, ExtraLayer::AfterUpsampling}; }

  void validate() const;
  friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

void to_json(nlohmann::json& j, const NetSpec& s);
void from_json(const nlohmann::json& j, NetSpec& s);

/// One convolution stage: conv3x3 (in → out), optionally followed by BN and ReLU.
struct LayerDesc {
  int in_channels;
  int out_channels;
  bool batch_norm;
  bool relu;
  bool upsample_after;  ///< depth_to_space(2) follows this stage
};

/// Stage list implied by a spec (demosaick: body, 12-feature stage, upsampling,
/// extra stage, plain output conv; denoise: conv+ReLU, conv+BN+ReLU body, plain conv).
std::vector<LayerDesc> layer_plan(const NetSpec& spec);

/// Learned parameters plus batch-norm running statistics. Tensor names are
/// `layer<i>.weight`, `layer<i>.bias`, `layer<i>.bn.gamma`, `layer<i>.bn.beta`.
template <typename Scalar>
struct NetParams {
  NetSpec spec;
  std::vector<std::string> names;
  std::vector<Tensor<Scalar>> tensors;
  /// One entry per layer; layers without BN hold empty state.
  std::vector<BnState<Scalar>> bn;

  Tensor<Scalar>& at(const std::string& name);
  const Tensor<Scalar>& at(const std::string& name) const;
  std::size_t parameter_count() const;
  void set_zero();

  template <typename Other>
  NetParams<Other> cast() const {
    NetParams<Other> out{spec, names, {}, {}};
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<Other>());
    for (const auto& s : bn) out.bn.push_back(s.template cast<Other>());
    return out;
  }
};

/// He-uniform conv weights, zero biases, gamma = 1, beta = 0, identity running stats.
/// The last conv starts at zero, so an untrained residual net returns its base.
NetParams<float> build_demosaick_net(const NetSpec& spec, std::uint64_t seed = 0);
NetParams<float> build_denoise_net(const NetSpec& spec, std::uint64_t seed = 0);
NetParams<float> build_net(const NetSpec& spec, std::uint64_t seed = 0);

/// Leaves for every parameter tensor, in NetParams order.
template <typename Scalar>
std::vector<Var<Scalar>> bind_params(Graph<Scalar>& g, const NetParams<Scalar>& params, bool requires_grad);

/// Demosaicking net on packed phases (N, 4, H/2, W/2). `base` is the bilinear
/// estimate (N, 3, H, W) added to the residual; pass it even when zero.
/// Train mode updates params.bn running statistics.
template <typename Scalar>
Var<Scalar> demosaick_forward(NetParams<Scalar>& params, const std::vector<Var<Scalar>>& vars, Var<Scalar> packed,
                              Var<Scalar> base, Mode mode);

/// Denoiser on (N, C, H, W); residual nets return input − predicted noise.
template <typename Scalar>
Var<Scalar> denoise_forward(NetParams<Scalar>& params, const std::vector<Var<Scalar>>& vars, Var<Scalar> noisy,
                            Mode mode);

/// Full-resolution RGB estimate of one mosaic; not clipped. Running statistics
/// are left untouched in either mode.
PlanarImage<double> forward_demosaick(const NetParams<float>& params, const BayerFrame& bayer, Mode mode = Mode::Eval);
PlanarImage<double> forward_denoise(const NetParams<float>& params, const PlanarImage<double>& noisy,
                                    Mode mode = Mode::Eval);

/// `.m2m` checkpoint: one line of JSON header (netspec, tensor table with
/// name/shape/offset/count in float units) then little-endian float32 data.
void save_checkpoint(const std::filesystem::path& path, const NetParams<float>& params);
NetParams<float> load_checkpoint(const std::filesystem::path& path);

extern template struct NetParams<float>;
extern template struct NetParams<double>;

}  // namespace m2m
