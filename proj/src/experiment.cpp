#include "m2m/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "m2m/datasets.hpp"
#include "m2m/gradcheck.hpp"
#include "m2m/image_io.hpp"
#include "m2m/metrics.hpp"
#include "m2m/parallel.hpp"
#include "m2m/warp.hpp"

#ifndef M2M_REVISION
#define M2M_REVISION "unknown"
#endif

namespace m2m {

using nlohmann::json;

std::string revision() { return M2M_REVISION; }

namespace {

// ---- config <-> JSON -------------------------------------------------------

json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"steps_per_epoch", t.steps_per_epoch},
          {"learning_rate", t.learning_rate},
          {"lr_drop_epochs", t.lr_drop_epochs},
          {"lr_drop_factor", t.lr_drop_factor},
          {"batch_size", t.batch_size},
          {"patch_size", t.patch_size},
          {"loss_p", t.loss_p},
          {"bn_train_mode", t.bn_train_mode},
          {"pair_max_shift", t.pair_max_shift},
          {"pair_max_rot_deg", t.pair_max_rot_deg},
          {"border_crop", t.border_crop}};
}

json registration_json(const RegistrationConfig& r) {
  return {{"pyramid_levels", r.pyramid_levels}, {"max_iters_per_level", r.max_iters_per_level},
          {"convergence_eps", r.convergence_eps}, {"min_overlap", r.min_overlap},
          {"min_det", r.min_det},               {"max_det", r.max_det},
          {"min_level_size", r.min_level_size}};
}

json burst_json(const BurstSpec& b) {
  return {{"frames", b.frames},
          {"max_shift", b.max_shift},
          {"max_rot_deg", b.max_rot_deg},
          {"max_scale_shear", b.max_scale_shear},
          {"sigma", b.noise.sigma},
          {"clip", b.noise.clip},
          {"pattern", b.pattern.name()}};
}

json data_json(const DataConfig& d) {
  return {{"train_dir", d.train_dir.string()},
          {"validation_dir", d.validation_dir.string()},
          {"eval_dir", d.eval_dir.string()},
          {"image", d.image.string()},
          {"burst_dir", d.burst_dir.string()},
          {"checkpoint", d.checkpoint.string()},
          {"denoiser_checkpoint", d.denoiser_checkpoint.string()},
          {"input", d.input.string()},
          {"synthetic_count", d.synthetic_count},
          {"synthetic_size", d.synthetic_size},
          {"synthetic_seed", d.synthetic_seed},
          {"validation_count", d.validation_count},
          {"validation_seed", d.validation_seed}};
}

/// Typed reads from the merged document; type mismatches name the key path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  template <typename T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(child(key), std::string("invalid value (") + e.what() + ")");
    }
  }
  void get_path(const char* key, std::filesystem::path& out) const {
    std::string s = out.string();
    get(key, s);
    out = s;
  }
  Reader sub(const char* key) const { return Reader(j_.at(key), child(key)); }
  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
  const json& doc() const { return j_; }

 private:
  const json& j_;
  std::string path_;
};

void read_train(const Reader& r, TrainConfig& t) {
  r.get("epochs", t.epochs);
  r.get("steps_per_epoch", t.steps_per_epoch);
  r.get("learning_rate", t.learning_rate);
  r.get("lr_drop_epochs", t.lr_drop_epochs);
  r.get("lr_drop_factor", t.lr_drop_factor);
  r.get("batch_size", t.batch_size);
  r.get("patch_size", t.patch_size);
  r.get("loss_p", t.loss_p);
  r.get("bn_train_mode", t.bn_train_mode);
  r.get("pair_max_shift", t.pair_max_shift);
  r.get("pair_max_rot_deg", t.pair_max_rot_deg);
  r.get("border_crop", t.border_crop);
}

void read_netspec(const Reader& r, NetSpec& s) {
  try {
    s = r.doc().get<NetSpec>();
  } catch (const SpecError& e) {
    throw ConfigError(r.child("kind"), e.what());
  } catch (const json::exception& e) {
    throw ConfigError(r.child("kind"), std::string("invalid netspec (") + e.what() + ")");
  }
}

void reject_unknown(const json& given, const json& known, const std::string& path) {
  if (!given.is_object()) throw ConfigError(path, "expected an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!known.contains(it.key())) throw ConfigError(key, "unknown key");
    if (known.at(it.key()).is_object()) reject_unknown(it.value(), known.at(it.key()), key);
  }
}

void apply_override(json& doc, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(spec, "override must look like key.path=value");
  const std::string key = spec.substr(0, eq), text = spec.substr(eq + 1);
  json* node = &doc;
  std::stringstream parts(key);
  std::string part, walked;
  while (std::getline(parts, part, '.')) {
    walked += (walked.empty() ? "" : ".") + part;
    if (!node->is_object() || !node->contains(part)) throw ConfigError(walked, "unknown key");
    node = &(*node)[part];
  }
  if (node->is_object()) throw ConfigError(key, "cannot override a whole section");
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *node = value;
}

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    net.validate();
  } catch (const SpecError& e) {
    throw ConfigError("net", e.what());
  }
  if (net.kind != NetKind::Demosaick) throw ConfigError("net.kind", "must be 'demosaick'");
  try {
    denoiser.validate();
  } catch (const SpecError& e) {
    throw ConfigError("denoiser", e.what());
  }
  if (denoiser.kind != NetKind::Denoise) throw ConfigError("denoiser.kind", "must be 'denoise'");
  auto train_ok = [](const TrainConfig& t, const std::string& section) {
    try {
      t.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(section + "." + e.key_path().substr(e.key_path().find('.') + 1),
                        std::string(e.what()).substr(e.key_path().size() + 2));
    }
  };
  train_ok(pretrain, "pretrain");
  train_ok(finetune, "finetune");
  train_ok(denoiser_training.train, "denoiser_training.train");
  if (steps_per_pair < 1) throw ConfigError("steps_per_pair", "must be >= 1");
  try {
    registration.validate();
  } catch (const Error& e) {
    throw ConfigError("registration", e.what());
  }
  if (burst.frames < 2) throw ConfigError("burst.frames", "must be >= 2");
  if (burst.max_shift < 0) throw ConfigError("burst.max_shift", "must be >= 0");
  if (burst.max_rot_deg < 0) throw ConfigError("burst.max_rot_deg", "must be >= 0");
  if (burst.max_scale_shear < 0) throw ConfigError("burst.max_scale_shear", "must be >= 0");
  if (!(burst.noise.sigma >= 0)) throw ConfigError("burst.sigma", "must be >= 0");
  if (data.synthetic_count < 1) throw ConfigError("data.synthetic_count", "must be >= 1");
  if (data.synthetic_size < 32 || data.synthetic_size % 2) throw ConfigError("data.synthetic_size", "must be even and >= 32");
  if (data.validation_count < 1) throw ConfigError("data.validation_count", "must be >= 1");
  if (!(denoiser_training.sigma_min >= 0) || denoiser_training.sigma_max < denoiser_training.sigma_min)
    throw ConfigError("denoiser_training.sigma_max", "must be >= sigma_min >= 0");
  if (stripes.size < 32) throw ConfigError("stripes.size", "must be >= 32");
  if (stripes.frames < 2) throw ConfigError("stripes.frames", "must be >= 2");
  if (!(stripes.sigma >= 0)) throw ConfigError("stripes.sigma", "must be >= 0");
  if (stripes.steps_per_pair < 1) throw ConfigError("stripes.steps_per_pair", "must be >= 1");
  if (!(gradcheck.tolerance > 0) || !(gradcheck.composed_tolerance > 0))
    throw ConfigError("gradcheck.tolerance", "must be > 0");
  if (gradcheck.composed_size < 8 || gradcheck.composed_size % 2)
    throw ConfigError("gradcheck.composed_size", "must be even and >= 8");
  if (border_crop < 0) throw ConfigError("border_crop", "must be >= 0");
}

json to_json(const ExperimentConfig& c) {
  json net, den;
  to_json(net, c.net);
  to_json(den, c.denoiser);
  return {{"seed", c.seed},
          {"out_dir", c.out_dir.string()},
          {"net", net},
          {"denoiser", den},
          {"pretrain_mode", c.pretrain_mode == PretrainMode::GroundTruth ? "gt" : "m2m"},
          {"pretrain", train_json(c.pretrain)},
          {"finetune", train_json(c.finetune)},
          {"steps_per_pair", c.steps_per_pair},
          {"registration", registration_json(c.registration)},
          {"burst", burst_json(c.burst)},
          {"data", data_json(c.data)},
          {"denoiser_training",
           {{"train", train_json(c.denoiser_training.train)},
            {"sigma_min", c.denoiser_training.sigma_min},
            {"sigma_max", c.denoiser_training.sigma_max},
            {"validation_sigma", c.denoiser_training.validation_sigma}}},
          {"stripes",
           {{"size", c.stripes.size},
            {"frames", c.stripes.frames},
            {"sigma", c.stripes.sigma},
            {"steps_per_pair", c.stripes.steps_per_pair}}},
          {"gradcheck",
           {{"tolerance", c.gradcheck.tolerance},
            {"composed_tolerance", c.gradcheck.composed_tolerance},
            {"composed_size", c.gradcheck.composed_size},
            {"max_coords_per_input", c.gradcheck.max_coords_per_input}}},
          {"border_crop", c.border_crop},
          {"eval_zero_weights", c.eval_zero_weights}};
}

ExperimentConfig resolve_config(const json& doc, const std::vector<std::string>& overrides) {
  const ExperimentConfig defaults;
  json merged = to_json(defaults);
  if (!doc.is_null()) {
    reject_unknown(doc, merged, "");
    merged.merge_patch(doc);
  }
  for (const auto& o : overrides) apply_override(merged, o);

  ExperimentConfig c;
  const Reader r(merged, "");
  r.get("seed", c.seed);
  r.get_path("out_dir", c.out_dir);
  read_netspec(r.sub("net"), c.net);
  read_netspec(r.sub("denoiser"), c.denoiser);
  std::string mode = "m2m";
  r.get("pretrain_mode", mode);
  if (mode == "gt")
    c.pretrain_mode = PretrainMode::GroundTruth;
  else if (mode == "m2m")
    c.pretrain_mode = PretrainMode::MosaicToMosaic;
  else
    throw ConfigError("pretrain_mode", "must be 'gt' or 'm2m'");
  read_train(r.sub("pretrain"), c.pretrain);
  read_train(r.sub("finetune"), c.finetune);
  r.get("steps_per_pair", c.steps_per_pair);

  const Reader reg = r.sub("registration");
  reg.get("pyramid_levels", c.registration.pyramid_levels);
  reg.get("max_iters_per_level", c.registration.max_iters_per_level);
  reg.get("convergence_eps", c.registration.convergence_eps);
  reg.get("min_overlap", c.registration.min_overlap);
  reg.get("min_det", c.registration.min_det);
  reg.get("max_det", c.registration.max_det);
  reg.get("min_level_size", c.registration.min_level_size);

  const Reader b = r.sub("burst");
  b.get("frames", c.burst.frames);
  b.get("max_shift", c.burst.max_shift);
  b.get("max_rot_deg", c.burst.max_rot_deg);
  b.get("max_scale_shear", c.burst.max_scale_shear);
  b.get("sigma", c.burst.noise.sigma);
  b.get("clip", c.burst.noise.clip);
  std::string pattern = c.burst.pattern.name();
  b.get("pattern", pattern);
  try {
    c.burst.pattern = CfaPattern::parse(pattern);
  } catch (const ParameterError& e) {
    throw ConfigError("burst.pattern", e.what());
  }

  const Reader d = r.sub("data");
  d.get_path("train_dir", c.data.train_dir);
  d.get_path("validation_dir", c.data.validation_dir);
  d.get_path("eval_dir", c.data.eval_dir);
  d.get_path("image", c.data.image);
  d.get_path("burst_dir", c.data.burst_dir);
  d.get_path("checkpoint", c.data.checkpoint);
  d.get_path("denoiser_checkpoint", c.data.denoiser_checkpoint);
  d.get_path("input", c.data.input);
  d.get("synthetic_count", c.data.synthetic_count);
  d.get("synthetic_size", c.data.synthetic_size);
  d.get("synthetic_seed", c.data.synthetic_seed);
  d.get("validation_count", c.data.validation_count);
  d.get("validation_seed", c.data.validation_seed);

  const Reader dt = r.sub("denoiser_training");
  read_train(dt.sub("train"), c.denoiser_training.train);
  dt.get("sigma_min", c.denoiser_training.sigma_min);
  dt.get("sigma_max", c.denoiser_training.sigma_max);
  dt.get("validation_sigma", c.denoiser_training.validation_sigma);

  const Reader st = r.sub("stripes");
  st.get("size", c.stripes.size);
  st.get("frames", c.stripes.frames);
  st.get("sigma", c.stripes.sigma);
  st.get("steps_per_pair", c.stripes.steps_per_pair);

  const Reader gc = r.sub("gradcheck");
  gc.get("tolerance", c.gradcheck.tolerance);
  gc.get("composed_tolerance", c.gradcheck.composed_tolerance);
  gc.get("composed_size", c.gradcheck.composed_size);
  gc.get("max_coords_per_input", c.gradcheck.max_coords_per_input);

  r.get("border_crop", c.border_crop);
  r.get("eval_zero_weights", c.eval_zero_weights);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json doc;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file '" + path.string() + "'");
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw ConfigError("", "config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
  }
  return resolve_config(doc, overrides);
}

ExperimentKind parse_experiment_kind(const std::string& s) {
  if (s == "simulate") return ExperimentKind::Simulate;
  if (s == "pretrain") return ExperimentKind::Pretrain;
  if (s == "finetune") return ExperimentKind::Finetune;
  if (s == "demosaic") return ExperimentKind::Demosaic;
  if (s == "eval") return ExperimentKind::Eval;
  if (s == "gradcheck") return ExperimentKind::GradCheck;
  if (s == "stripes") return ExperimentKind::Stripes;
  throw ConfigError("kind", "unknown experiment kind '" + s + "'");
}

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Simulate: return "simulate";
    case ExperimentKind::Pretrain: return "pretrain";
    case ExperimentKind::Finetune: return "finetune";
    case ExperimentKind::Demosaic: return "demosaic";
    case ExperimentKind::Eval: return "eval";
    case ExperimentKind::GradCheck: return "gradcheck";
    case ExperimentKind::Stripes: return "stripes";
  }
  return "unknown";
}

// ---- gradient suite -----------------------------------------------------------

namespace {

Tensor<double> random_tensor(std::mt19937_64& rng, Tensor<double>::Shape shape, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor<double> t(shape);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.values()[i] = normal(rng);
  return t;
}

}  // namespace

std::vector<OpCheck> gradient_suite(const GradCheckConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCheckOptions opts;
  opts.max_coords_per_input = cfg.max_coords_per_input;
  opts.seed = seed;
  std::vector<OpCheck> out;
  auto check = [&](const std::string& name, const GraphFunction& f, const std::vector<Tensor<double>>& inputs,
                   double tol, std::vector<bool> frozen = {}) {
    GradCheckOptions o = opts;
    o.frozen = std::move(frozen);
    const GradCheckResult r = grad_check(f, inputs, o);
    out.push_back({name, r.max_rel_error, tol, r.coordinates});
  };
  using V = Var<double>;
  using Leaves = const std::vector<V>&;

  {
    const Tensor<double> proj = random_tensor(rng, {2, 4, 5, 6});
    check("conv3x3", [&](Graph<double>&, Leaves v) { return dot(conv3x3(v[0], v[1], v[2]), proj); },
          {random_tensor(rng, {2, 3, 5, 6}), random_tensor(rng, {4, 3, 3, 3}), random_tensor(rng, {1, 4, 1, 1})},
          cfg.tolerance);
  }
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    const Tensor<double> proj = random_tensor(rng, {3, 4, 4, 5});
    BnState<double> state = BnState<double>::identity(4);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (int c = 0; c < 4; ++c) {
      state.running_mean[c] = u(rng) - 1.0;
      state.running_var[c] = u(rng);
    }
    check(mode == Mode::Train ? "batch_norm(train)" : "batch_norm(eval)",
          [&, mode](Graph<double>&, Leaves v) {
            BnState<double> s = state;
            return dot(batch_norm(v[0], v[1], v[2], s, mode), proj);
          },
          {random_tensor(rng, {3, 4, 4, 5}, 2.0), random_tensor(rng, {1, 4, 1, 1}),
           random_tensor(rng, {1, 4, 1, 1})},
          cfg.tolerance);
  }
  {
    const Tensor<double> proj = random_tensor(rng, {2, 3, 4, 4});
    check("relu", [&](Graph<double>&, Leaves v) { return dot(relu(v[0]), proj); },
          {random_tensor(rng, {2, 3, 4, 4})}, cfg.tolerance);
    check("add", [&](Graph<double>&, Leaves v) { return dot(add(v[0], v[1]), proj); },
          {random_tensor(rng, {2, 3, 4, 4}), random_tensor(rng, {2, 3, 4, 4})}, cfg.tolerance);
    check("sub", [&](Graph<double>&, Leaves v) { return dot(sub(v[0], v[1]), proj); },
          {random_tensor(rng, {2, 3, 4, 4}), random_tensor(rng, {2, 3, 4, 4})}, cfg.tolerance);
    check("scale", [&](Graph<double>&, Leaves v) { return dot(scale(v[0], 0.7), proj); },
          {random_tensor(rng, {2, 3, 4, 4})}, cfg.tolerance);
    check("sum", [&](Graph<double>&, Leaves v) { return sum(v[0]); }, {random_tensor(rng, {2, 3, 4, 4})},
          cfg.tolerance);
  }
  {
    const Tensor<double> proj = random_tensor(rng, {2, 2, 6, 8});
    check("depth_to_space", [&](Graph<double>&, Leaves v) { return dot(depth_to_space(v[0], 2), proj); },
          {random_tensor(rng, {2, 8, 3, 4})}, cfg.tolerance);
    const Tensor<double> proj2 = random_tensor(rng, {2, 8, 3, 4});
    check("space_to_depth", [&](Graph<double>&, Leaves v) { return dot(space_to_depth(v[0], 2), proj2); },
          {random_tensor(rng, {2, 2, 6, 8})}, cfg.tolerance);
  }
  for (int p : {1, 2}) {
    const Tensor<double> target = random_tensor(rng, {2, 3, 5, 5});
    Tensor<double> mask({2, 3, 5, 5});
    std::bernoulli_distribution coin(0.6);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.values()[i] = coin(rng) ? 1.0 : 0.0;
    check("masked_loss(p=" + std::to_string(p) + ")",
          [&, p](Graph<double>&, Leaves v) { return masked_loss(v[0], target, mask, p); },
          {random_tensor(rng, {2, 3, 5, 5})}, cfg.tolerance);
  }
  {
    const Tensor<double> proj = random_tensor(rng, {2, 3, 10, 10});
    const std::vector<AffineMap> maps{
        AffineMap::translate(1.3, 0.6) * AffineMap::rotation_about(0.05, {4.5, 4.5}),
        AffineMap::from_params(0.97, 0.03, -0.02, 1.02, 0.4, 1.7)};
    check("warp_bicubic",
          [&](Graph<double>&, Leaves v) {
            return dot(warp_bicubic(v[0], std::span<const AffineMap>(maps), 10, 10).image, proj);
          },
          {random_tensor(rng, {2, 3, 12, 12})}, cfg.tolerance);
  }
  {
    // Whole objective: small net, one pair of 16x16 mosaics related by a known affinity.
    NetSpec spec;
    spec.body_layers = 2;
    spec.features = 4;
    NetParams<double> params = build_net(spec, seed).cast<double>();
    Tensor<double>& last = params.tensors[params.tensors.size() - 2];
    last = random_tensor(rng, last.shape(), 0.2);
    const int n = cfg.composed_size;
    const Image scene = synthetic_scene(n + 16, n + 16, seed);
    const AffineMap map = AffineMap::translate(0.6, -0.4) * AffineMap::rotation_about(0.02, {0.5 * (n - 1), 0.5 * (n - 1)});
    const Image view = warp_bicubic_image(scene, AffineMap::translate(8, 8) * map, n, n);
    // input(x) = scene(x + 8) and target(y) = scene(map(y) + 8) = input(map(y)).
    BurstPair pair{mosaic(scene.crop(8, 8, n, n)), mosaic(view), map, true};
    check("m2m_loss(composed)",
          [&](Graph<double>&, Leaves v) { return m2m_loss(params, v, pair, 2, Mode::Train); }, params.tensors,
          cfg.composed_tolerance);
  }
  return out;
}

// ---- experiment drivers -------------------------------------------------------

namespace {

std::vector<Image> load_or_synthesize(const std::filesystem::path& dir, int count, int size, std::uint64_t seed) {
  if (!dir.empty()) return load_png_dataset(dir);
  return synthetic_dataset(count, size, size, seed);
}

Image source_image(const ExperimentConfig& cfg) {
  if (!cfg.data.image.empty()) return read_png(cfg.data.image);
  return synthetic_scene(cfg.data.synthetic_size + 32, cfg.data.synthetic_size + 32, cfg.data.synthetic_seed + 1000);
}

NetParams<float> require_checkpoint(const std::filesystem::path& path, const char* key) {
  if (path.empty()) throw ConfigError(key, "a checkpoint path is required for this experiment");
  return load_checkpoint(path);
}

Burst make_burst(const ExperimentConfig& cfg) {
  if (!cfg.data.burst_dir.empty()) return read_burst(cfg.data.burst_dir);
  BurstSpec spec = cfg.burst;
  spec.seed = cfg.seed + 2;
  spec.noise.seed = cfg.seed + 3;
  return simulate_burst(source_image(cfg), spec);
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<ImageScore>& scores) {
  std::string csv = "image,psnr_db\n";
  for (const auto& s : scores) csv += s.name + "," + fixed(s.psnr_db) + "\n";
  write_text(path, csv);
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TracePoint>& trace) {
  std::string csv = "pair_index,input_idx,target_idx,psnr_db\n";
  for (const auto& t : trace)
    csv += std::to_string(t.pair_index) + "," + std::to_string(t.input_index) + "," + std::to_string(t.target_index) +
           "," + fixed(t.psnr_db) + "\n";
  write_text(path, csv);
}

double mean_of(const std::vector<ImageScore>& scores) {
  if (scores.empty()) return std::nan("");
  double s = 0.0;
  for (const auto& x : scores) s += x.psnr_db;
  return s / double(scores.size());
}

std::vector<ImageScore> bilinear_scores(const std::vector<Image>& images, int border_crop) {
  std::vector<ImageScore> out(images.size());
  parallel_for(int(images.size()), [&](int i) {
    out[std::size_t(i)] = {"image_" + std::to_string(i),
                           psnr(demosaic_bilinear(mosaic(images[std::size_t(i)])).clipped(), images[std::size_t(i)],
                                border_crop)};
  });
  return out;
}

void run_simulate(const ExperimentConfig& cfg, EvalReport& rep) {
  const Burst burst = make_burst(cfg);
  write_burst(cfg.out_dir / "burst", burst);
  if (burst.clean_reference)
    rep.images.push_back({"reference_bilinear",
                          psnr(demosaic_bilinear(burst.frames[std::size_t(burst.reference)]).clipped(),
                               *burst.clean_reference, cfg.border_crop)});
  rep.extras["frames"] = burst.frames.size();
  rep.extras["width"] = burst.frames.front().width();
  rep.extras["height"] = burst.frames.front().height();
  rep.extras["sigma"] = burst.sigma;
}

void run_pretrain(const ExperimentConfig& cfg, EvalReport& rep) {
  const auto data = load_or_synthesize(cfg.data.train_dir, cfg.data.synthetic_count, cfg.data.synthetic_size,
                                       cfg.data.synthetic_seed);
  const auto val = load_or_synthesize(cfg.data.validation_dir, cfg.data.validation_count, cfg.data.synthetic_size,
                                      cfg.data.validation_seed);
  TrainConfig train = cfg.pretrain;
  train.seed = cfg.seed;
  train.border_crop = cfg.border_crop;
  const PretrainResult r = pretrain(data, train, cfg.pretrain_mode, build_demosaick_net(cfg.net, cfg.seed + 5), val);
  save_checkpoint(cfg.out_dir / "model.m2m", r.params);
  std::string csv = "epoch,learning_rate,loss,psnr_db\n";
  for (std::size_t e = 0; e < r.psnr_log.size(); ++e)
    csv += std::to_string(e + 1) + "," + fixed(train.learning_rate_at(int(e))) + "," + fixed(r.loss_log[e]) + "," +
           fixed(r.psnr_log[e]) + "\n";
  write_text(cfg.out_dir / "pretrain_log.csv", csv);
  rep.images = evaluate_demosaicker(r.params, val, cfg.border_crop);
  rep.extras["bilinear_psnr"] = mean_of(bilinear_scores(val, cfg.border_crop));
  rep.extras["initial_psnr"] = r.initial_psnr;
  rep.extras["mode"] = cfg.pretrain_mode == PretrainMode::GroundTruth ? "gt" : "m2m";
}

void run_finetune(const ExperimentConfig& cfg, EvalReport& rep) {
  const NetParams<float> net = require_checkpoint(cfg.data.checkpoint, "data.checkpoint");
  const Burst burst = make_burst(cfg);
  TrainConfig train = cfg.finetune;
  train.seed = cfg.seed + 1;
  train.border_crop = cfg.border_crop;
  const Image* clean = burst.clean_reference ? &*burst.clean_reference : nullptr;
  const FinetuneResult r =
      finetune_burst(net, burst.frames, burst.reference, train, cfg.steps_per_pair, cfg.registration, clean);
  save_checkpoint(cfg.out_dir / "finetuned.m2m", r.params);
  const BayerFrame& ref = burst.frames[std::size_t(burst.reference)];
  write_png(cfg.out_dir / "reference_pretrained.png", forward_demosaick(net, ref).clipped(), 16);
  write_png(cfg.out_dir / "reference_finetuned.png", forward_demosaick(r.params, ref).clipped(), 16);
  write_trace_csv(cfg.out_dir / "trace.csv", r.trace);

  std::string csv = "input_idx,target_idx,valid,overlap,a11,a12,a21,a22,tx,ty,note\n";
  for (const auto& p : r.registrations) {
    const auto& a = p.map.linear;
    csv += std::to_string(p.input) + "," + std::to_string(p.target) + "," + (p.valid ? "1" : "0") + "," +
           fixed(p.overlap) + "," + fixed(a(0, 0)) + "," + fixed(a(0, 1)) + "," + fixed(a(1, 0)) + "," +
           fixed(a(1, 1)) + "," + fixed(p.map.translation.x()) + "," + fixed(p.map.translation.y()) + ",\"" +
           p.note + "\"\n";
  }
  write_text(cfg.out_dir / "registrations.csv", csv);
  rep.extras["pairs_used"] = r.pairs_used;
  rep.extras["pairs_total"] = r.registrations.size();
  rep.extras["steps_per_pair"] = cfg.steps_per_pair;
  rep.extras["learning_rate"] = train.learning_rate;
  if (!r.trace.empty()) {
    rep.images.push_back({"reference", r.trace.back().psnr_db});
    rep.extras["psnr_before"] = r.trace.front().psnr_db;
    rep.extras["psnr_gain"] = r.trace.back().psnr_db - r.trace.front().psnr_db;
  }
}

void run_eval(const ExperimentConfig& cfg, EvalReport& rep) {
  NetParams<float> net;
  if (cfg.eval_zero_weights) {
    net = build_demosaick_net(cfg.net, 0);
    net.set_zero();
  } else {
    net = require_checkpoint(cfg.data.checkpoint, "data.checkpoint");
  }
  const auto images = load_or_synthesize(cfg.data.eval_dir, cfg.data.validation_count, cfg.data.synthetic_size,
                                         cfg.data.validation_seed);
  rep.images = evaluate_demosaicker(net, images, cfg.border_crop);
  rep.extras["bilinear_psnr"] = mean_of(bilinear_scores(images, cfg.border_crop));
}

void run_demosaic(const ExperimentConfig& cfg, EvalReport& rep) {
  if (cfg.data.input.empty()) throw ConfigError("data.input", "a mosaic PNG is required");
  const NetParams<float> net = require_checkpoint(cfg.data.checkpoint, "data.checkpoint");
  const BayerFrame frame = read_bayer(cfg.data.input);
  write_png(cfg.out_dir / "demosaicked.png", forward_demosaick(net, frame).clipped(), 16);
  rep.extras["input"] = cfg.data.input.string();
  rep.extras["pattern"] = frame.pattern.name();
}

void run_gradcheck(const ExperimentConfig& cfg, EvalReport& rep) {
  const auto checks = gradient_suite(cfg.gradcheck, cfg.seed);
  std::string csv = "op,max_rel_error,tolerance,coordinates,passed\n";
  bool ok = true;
  for (const auto& c : checks) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3e,%.1e", c.max_rel_error, c.tolerance);
    csv += c.op + "," + buf + "," + std::to_string(c.coordinates) + "," + (c.passed() ? "1" : "0") + "\n";
    rep.extras["ops"][c.op] = c.max_rel_error;
    ok = ok && c.passed();
  }
  write_text(cfg.out_dir / "gradcheck.csv", csv);
  rep.extras["all_passed"] = ok;
}

NetParams<float> trained_denoiser(const ExperimentConfig& cfg, EvalReport& rep) {
  if (!cfg.data.denoiser_checkpoint.empty()) return load_checkpoint(cfg.data.denoiser_checkpoint);
  const auto data = load_or_synthesize(cfg.data.train_dir, cfg.data.synthetic_count, cfg.data.synthetic_size,
                                       cfg.data.synthetic_seed);
  const auto val = load_or_synthesize(cfg.data.validation_dir, cfg.data.validation_count, cfg.data.synthetic_size,
                                      cfg.data.validation_seed);
  TrainConfig train = cfg.denoiser_training.train;
  train.seed = cfg.seed + 4;
  const auto& dt = cfg.denoiser_training;
  const PretrainResult r = train_denoiser(data, train, build_denoise_net(cfg.denoiser, cfg.seed + 5), dt.sigma_min,
                                          dt.sigma_max, val, dt.validation_sigma);
  save_checkpoint(cfg.out_dir / "denoiser.m2m", r.params);
  rep.extras["denoiser_validation_psnr"] = r.psnr_log.back();
  return r.params;
}

void run_stripes(const ExperimentConfig& cfg, EvalReport& rep) {
  const NetParams<float> denoiser = trained_denoiser(cfg, rep);
  TrainConfig train = cfg.finetune;
  train.seed = cfg.seed + 1;
  train.border_crop = 0;
  for (TestImageKind kind : {TestImageKind::Stripes, TestImageKind::BinaryNoise}) {
    const std::string name = kind == TestImageKind::Stripes ? "stripes" : "binary_noise";
    const Image clean = make_test_image(kind, cfg.stripes.size, cfg.seed + 6);
    std::vector<Image> frames;
    for (int i = 0; i < cfg.stripes.frames; ++i)
      frames.push_back(add_noise(clean, NoiseSpec{cfg.stripes.sigma, false, cfg.seed * 1000 + 7 + std::uint64_t(i)}));
    const FinetuneResult r = finetune_denoiser_burst(denoiser, frames, 0, train, cfg.stripes.steps_per_pair, &clean);
    write_trace_csv(cfg.out_dir / (name + "_trace.csv"), r.trace);
    rep.images.push_back({name, r.trace.back().psnr_db});
    rep.extras[name + "_before"] = r.trace.front().psnr_db;
    rep.extras[name + "_gain"] = r.trace.back().psnr_db - r.trace.front().psnr_db;
  }
  rep.extras["gain_difference"] = rep.extras["stripes_gain"].get<double>() - rep.extras["binary_noise_gain"].get<double>();
}

}  // namespace

std::vector<ImageScore> evaluate_demosaicker(const NetParams<float>& params, const std::vector<Image>& images,
                                             int border_crop) {
  std::vector<ImageScore> out(images.size());
  parallel_for(int(images.size()), [&](int i) {
    const Image& img = images[std::size_t(i)];
    out[std::size_t(i)] = {"image_" + std::to_string(i),
                           psnr(forward_demosaick(params, mosaic(img)).clipped(), img, border_crop)};
  });
  return out;
}

EvalReport run_experiment(const ExperimentConfig& cfg, ExperimentKind kind) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(cfg.out_dir);
  const json resolved = to_json(cfg);
  write_text(cfg.out_dir / "config.json", resolved.dump(2) + "\n");

  EvalReport rep;
  rep.kind = to_string(kind);
  rep.seed = cfg.seed;
  rep.revision = revision();
  rep.config_hash = fnv1a_hex(resolved.dump());
  switch (kind) {
    case ExperimentKind::Simulate: run_simulate(cfg, rep); break;
    case ExperimentKind::Pretrain: run_pretrain(cfg, rep); break;
    case ExperimentKind::Finetune: run_finetune(cfg, rep); break;
    case ExperimentKind::Demosaic: run_demosaic(cfg, rep); break;
    case ExperimentKind::Eval: run_eval(cfg, rep); break;
    case ExperimentKind::GradCheck: run_gradcheck(cfg, rep); break;
    case ExperimentKind::Stripes: run_stripes(cfg, rep); break;
  }
  rep.mean_psnr = mean_of(rep.images);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  write_scores_csv(cfg.out_dir / "metrics.csv", rep.images);
  json j{{"kind", rep.kind},           {"mean_psnr", std::isfinite(rep.mean_psnr) ? json(rep.mean_psnr) : json()},
         {"config_hash", rep.config_hash}, {"seed", rep.seed},
         {"revision", rep.revision},   {"wall_seconds", rep.wall_seconds},
         {"border_crop", cfg.border_crop}, {"extras", rep.extras}};
  j["images"] = json::array();
  for (const auto& s : rep.images) j["images"].push_back({{"name", s.name}, {"psnr_db", s.psnr_db}});
  write_text(cfg.out_dir / "report.json", j.dump(2) + "\n");

  if (kind == ExperimentKind::GradCheck && !rep.extras["all_passed"].get<bool>())
    throw GradCheckError("gradient check failed; see " + (cfg.out_dir / "gradcheck.csv").string());
  return rep;
}

}  // namespace m2m
