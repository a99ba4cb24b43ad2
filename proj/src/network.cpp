#include "m2m/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace m2m {

void NetSpec::validate() const {
  if (body_layers < 1) throw SpecError("netspec.body_layers must be >= 1");
  if (features < 1) throw SpecError("netspec.features must be >= 1");
  if (in_channels < 1 || out_channels < 1) throw SpecError("netspec channel counts must be >= 1");
  if (kind == NetKind::Demosaick && in_channels != 4) throw SpecError("demosaick net takes 4 packed phases");
  if (kind == NetKind::Denoise && body_layers < 2) throw SpecError("denoise net needs body_layers >= 2");
  if (kind == NetKind::Denoise && residual && in_channels != out_channels)
    throw SpecError("residual denoiser needs in_channels == out_channels");
}

void to_json(nlohmann::json& j, const NetSpec& s) {
  j = nlohmann::json{{"kind", s.kind == NetKind::Demosaick ? "demosaick" : "denoise"},
                     {"body_layers", s.body_layers},
                     {"features", s.features},
                     {"in_channels", s.in_channels},
                     {"out_channels", s.out_channels},
                     {"residual", s.residual},
                     {"extra_layer", s.extra_layer == ExtraLayer::AfterUpsampling ? "after_upsampling"
                                                                                   : "before_upsampling"}};
}

void from_json(const nlohmann::json& j, NetSpec& s) {
  const std::string kind = j.value("kind", "demosaick");
  if (kind == "demosaick")
    s = NetSpec::demosaick_default();
  else if (kind == "denoise")
    s = NetSpec::denoise_default();
  else
    throw SpecError("netspec.kind must be 'demosaick' or 'denoise'");
  s.body_layers = j.value("body_layers", s.body_layers);
  s.features = j.value("features", s.features);
  s.in_channels = j.value("in_channels", s.in_channels);
  s.out_channels = j.value("out_channels", s.out_channels);
  s.residual = j.value("residual", s.residual);
  const std::string extra = j.value("extra_layer", std::string("after_upsampling"));
  if (extra == "after_upsampling")
    s.extra_layer = ExtraLayer::AfterUpsampling;
  else if (extra == "before_upsampling")
    s.extra_layer = ExtraLayer::BeforeUpsampling;
  else
    throw SpecError("netspec.extra_layer must be 'after_upsampling' or 'before_upsampling'");
}

std::vector<LayerDesc> layer_plan(const NetSpec& spec) {
  spec.validate();
  const int f = spec.features;
  std::vector<LayerDesc> plan;
  if (spec.kind == NetKind::Demosaick) {
    const int shuffled = spec.out_channels * 4;
    for (int i = 0; i < spec.body_layers; ++i) plan.push_back({i == 0 ? spec.in_channels : f, f, true, true, false});
    if (spec.extra_layer == ExtraLayer::AfterUpsampling) {
      plan.push_back({f, shuffled, true, true, true});
      plan.push_back({spec.out_channels, f, true, true, false});
    } else {
      plan.push_back({f, f, true, true, false});
      plan.push_back({f, shuffled, false, false, true});
      return plan;
    }
    plan.push_back({f, spec.out_channels, false, false, false});
  } else {
    plan.push_back({spec.in_channels, f, false, true, false});
    for (int i = 0; i < spec.body_layers - 2; ++i) plan.push_back({f, f, true, true, false});
    plan.push_back({f, spec.out_channels, false, false, false});
  }
  return plan;
}

template <typename Scalar>
Tensor<Scalar>& NetParams<Scalar>::at(const std::string& name) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return tensors[i];
  throw SpecError("no parameter named '" + name + "'");
}

template <typename Scalar>
const Tensor<Scalar>& NetParams<Scalar>::at(const std::string& name) const {
  return const_cast<NetParams*>(this)->at(name);
}

template <typename Scalar>
std::size_t NetParams<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += std::size_t(t.size());
  return n;
}

template <typename Scalar>
void NetParams<Scalar>::set_zero() {
  for (auto& t : tensors) t.set_zero();
}

template struct NetParams<float>;
template struct NetParams<double>;

NetParams<float> build_net(const NetSpec& spec, std::uint64_t seed) {
  const auto plan = layer_plan(spec);
  NetParams<float> p{spec, {}, {}, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const LayerDesc& l = plan[i];
    const std::string prefix = "layer" + std::to_string(i);
    Tensor<float> w({l.out_channels, l.in_channels, 3, 3});
    const double bound = std::sqrt(6.0 / (9.0 * l.in_channels));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.values()[k] = float(uniform(rng));
    if (i + 1 == plan.size() && spec.residual) w.set_zero();
    p.names.push_back(prefix + ".weight");
    p.tensors.push_back(std::move(w));
    p.names.push_back(prefix + ".bias");
    p.tensors.emplace_back(Tensor<float>::Shape{1, l.out_channels, 1, 1});
    if (l.batch_norm) {
      p.names.push_back(prefix + ".bn.gamma");
      p.tensors.emplace_back(Tensor<float>::Shape{1, l.out_channels, 1, 1}, 1.0f);
      p.names.push_back(prefix + ".bn.beta");
      p.tensors.emplace_back(Tensor<float>::Shape{1, l.out_channels, 1, 1});
      p.bn.push_back(BnState<float>::identity(l.out_channels));
    } else {
      p.bn.emplace_back();
    }
  }
  return p;
}

NetParams<float> build_demosaick_net(const NetSpec& spec, std::uint64_t seed) {
  if (spec.kind != NetKind::Demosaick) throw SpecError("build_demosaick_net: spec kind is not demosaick");
  return build_net(spec, seed);
}

NetParams<float> build_denoise_net(const NetSpec& spec, std::uint64_t seed) {
  if (spec.kind != NetKind::Denoise) throw SpecError("build_denoise_net: spec kind is not denoise");
  return build_net(spec, seed);
}

template <typename Scalar>
std::vector<Var<Scalar>> bind_params(Graph<Scalar>& g, const NetParams<Scalar>& params, bool requires_grad) {
  std::vector<Var<Scalar>> vars;
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) vars.push_back(g.leaf(t, requires_grad));
  return vars;
}

namespace {

template <typename Scalar>
Var<Scalar> run_layers(NetParams<Scalar>& params, const std::vector<Var<Scalar>>& vars, Var<Scalar> x, Mode mode) {
  const auto plan = layer_plan(params.spec);
  if (vars.size() != params.tensors.size()) throw ShapeError("parameter binding size mismatch");
  std::size_t k = 0;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const LayerDesc& l = plan[i];
    x = conv3x3(x, vars[k], vars[k + 1]);
    k += 2;
    if (l.batch_norm) {
      x = batch_norm(x, vars[k], vars[k + 1], params.bn[i], mode);
      k += 2;
    }
    if (l.relu) x = relu(x);
    if (l.upsample_after) x = depth_to_space(x, 2);
  }
  return x;
}

}  // namespace

template <typename Scalar>
Var<Scalar> demosaick_forward(NetParams<Scalar>& params, const std::vector<Var<Scalar>>& vars, Var<Scalar> packed,
                              Var<Scalar> base, Mode mode) {
  if (params.spec.kind != NetKind::Demosaick) throw SpecError("demosaick_forward: not a demosaicking net");
  const auto& pv = packed.value();
  if (pv.channels() != 4) throw ShapeError("demosaick_forward: expected 4 packed phases");
  Var<Scalar> residual = run_layers(params, vars, packed, mode);
  if (!params.spec.residual) return residual;
  if (base.shape() != residual.shape()) throw ShapeError("demosaick_forward: base has wrong shape");
  return add(residual, base);
}

template <typename Scalar>
Var<Scalar> denoise_forward(NetParams<Scalar>& params, const std::vector<Var<Scalar>>& vars, Var<Scalar> noisy,
                            Mode mode) {
  if (params.spec.kind != NetKind::Denoise) throw SpecError("denoise_forward: not a denoising net");
  if (noisy.value().channels() != params.spec.in_channels) throw ShapeError("denoise_forward: channel mismatch");
  Var<Scalar> noise = run_layers(params, vars, noisy, mode);
  return params.spec.residual ? sub(noisy, noise) : noise;
}

template std::vector<Var<float>> bind_params(Graph<float>&, const NetParams<float>&, bool);
template std::vector<Var<double>> bind_params(Graph<double>&, const NetParams<double>&, bool);
template Var<float> demosaick_forward(NetParams<float>&, const std::vector<Var<float>>&, Var<float>, Var<float>, Mode);
template Var<double> demosaick_forward(NetParams<double>&, const std::vector<Var<double>>&, Var<double>, Var<double>,
                                       Mode);
template Var<float> denoise_forward(NetParams<float>&, const std::vector<Var<float>>&, Var<float>, Mode);
template Var<double> denoise_forward(NetParams<double>&, const std::vector<Var<double>>&, Var<double>, Mode);

PlanarImage<double> forward_demosaick(const NetParams<float>& params, const BayerFrame& bayer, Mode mode) {
  NetParams<float> local = params;
  Graph<float> g;
  const auto vars = bind_params(g, local, false);
  const Var<float> packed = g.leaf(tensor_from_image<float>(pack_phases(bayer)));
  const Var<float> base = g.leaf(tensor_from_image<float>(demosaic_bilinear(bayer)));
  return image_from_tensor(demosaick_forward(local, vars, packed, base, mode).value());
}

PlanarImage<double> forward_denoise(const NetParams<float>& params, const PlanarImage<double>& noisy, Mode mode) {
  NetParams<float> local = params;
  Graph<float> g;
  const auto vars = bind_params(g, local, false);
  const Var<float> x = g.leaf(tensor_from_image<float>(noisy));
  return image_from_tensor(denoise_forward(local, vars, x, mode).value());
}

// Checkpoint layout: JSON header line, '\n', then float32 little-endian data.
// Running statistics are stored as extra entries named `layer<i>.bn.running_mean`
// and `layer<i>.bn.running_var`, plus a `bn` table carrying momentum and eps.

void save_checkpoint(const std::filesystem::path& path, const NetParams<float>& params) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  nlohmann::json header;
  header["format"] = "m2m-checkpoint";
  header["version"] = 1;
  header["netspec"] = params.spec;
  nlohmann::json table = nlohmann::json::array();
  std::vector<const float*> blobs;
  std::vector<std::size_t> counts;
  std::size_t offset = 0;
  auto add_entry = [&](const std::string& name, const std::array<int, 4>& shape, const float* data,
                       std::size_t count) {
    table.push_back({{"name", name}, {"shape", shape}, {"offset", offset}, {"count", count}});
    blobs.push_back(data);
    counts.push_back(count);
    offset += count;
  };
  for (std::size_t i = 0; i < params.tensors.size(); ++i)
    add_entry(params.names[i], params.tensors[i].shape(), params.tensors[i].data(),
              std::size_t(params.tensors[i].size()));
  nlohmann::json bn = nlohmann::json::array();
  for (std::size_t i = 0; i < params.bn.size(); ++i) {
    const auto& s = params.bn[i];
    if (s.running_mean.size() == 0) continue;
    const int c = int(s.running_mean.size());
    const std::string prefix = "layer" + std::to_string(i) + ".bn.";
    add_entry(prefix + "running_mean", {1, c, 1, 1}, s.running_mean.data(), std::size_t(c));
    add_entry(prefix + "running_var", {1, c, 1, 1}, s.running_var.data(), std::size_t(c));
    bn.push_back({{"layer", i}, {"momentum", s.momentum}, {"eps", s.eps}});
  }
  header["tensors"] = table;
  header["bn"] = bn;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < blobs.size(); ++i)
    out.write(reinterpret_cast<const char*>(blobs[i]), std::streamsize(counts[i] * sizeof(float)));
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

NetParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path.string() + "' has a malformed header: " + e.what());
  }
  if (header.value("format", "") != "m2m-checkpoint") throw IoError("'" + path.string() + "' is not an m2m checkpoint");
  const std::vector<char> rest{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::size_t total = rest.size() / sizeof(float);
  std::vector<float> blob(total);
  std::memcpy(blob.data(), rest.data(), total * sizeof(float));

  NetParams<float> p = build_net(header.at("netspec").get<NetSpec>(), 0);
  auto fill = [&](const nlohmann::json& entry, float* dst, std::size_t expected) {
    const std::size_t off = entry.at("offset"), count = entry.at("count");
    if (count != expected || off + count > total)
      throw IoError("checkpoint entry '" + entry.at("name").get<std::string>() + "' has inconsistent size");
    std::memcpy(dst, blob.data() + off, count * sizeof(float));
  };
  std::size_t matched = 0;
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name");
    const auto dot = name.rfind(".bn.running_");
    if (dot != std::string::npos) {
      const int layer = std::stoi(name.substr(5, dot - 5));
      auto& s = p.bn.at(std::size_t(layer));
      auto& arr = name.ends_with("running_mean") ? s.running_mean : s.running_var;
      fill(entry, arr.data(), std::size_t(arr.size()));
      continue;
    }
    Tensor<float>& t = p.at(name);
    if (entry.at("shape").get<std::array<int, 4>>() != t.shape())
      throw IoError("checkpoint tensor '" + name + "' has unexpected shape");
    fill(entry, t.data(), std::size_t(t.size()));
    ++matched;
  }
  if (matched != p.tensors.size()) throw IoError("checkpoint is missing parameters");
  for (const auto& b : header.value("bn", nlohmann::json::array())) {
    auto& s = p.bn.at(b.at("layer").get<std::size_t>());
    s.momentum = b.at("momentum");
    s.eps = b.at("eps");
  }
  return p;
}

}  // namespace m2m
