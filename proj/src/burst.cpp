#include "m2m/burst.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <random>

#include "m2m/image_io.hpp"
#include "m2m/warp.hpp"

namespace m2m {

AffineMap Burst::ground_truth_map(int src, int dst) const {
  if (to_reference.empty()) throw DataError("burst carries no ground-truth maps");
  return to_reference.at(std::size_t(src)).inverse() * to_reference.at(std::size_t(dst));
}

int burst_margin(int width, int height, const BurstSpec& spec) {
  const double half_diag = 0.5 * std::hypot(double(width), double(height));
  const double rot = spec.max_rot_deg * std::numbers::pi / 180.0;
  const double reach = std::sqrt(2.0) * spec.max_shift + half_diag * (rot + 2.0 * spec.max_scale_shear) + 3.0;
  int margin = int(std::ceil(reach));
  return margin + (margin & 1);
}

Burst simulate_burst(const Image& rgb, const BurstSpec& spec) {
  if (spec.frames < 2) throw ParameterError("simulate_burst: need at least 2 frames");
  if (rgb.channels() != 3) throw DimensionError("simulate_burst: expected an RGB image");
  if (spec.max_shift < 0 || spec.max_rot_deg < 0 || spec.max_scale_shear < 0)
    throw ParameterError("simulate_burst: motion bounds must be >= 0");

  int margin = burst_margin(rgb.width(), rgb.height(), spec);
  const int w = (rgb.width() - 2 * margin) & ~1, h = (rgb.height() - 2 * margin) & ~1;
  if (w < 32 || h < 32) throw DimensionError("simulate_burst: image too small for the requested motion");

  std::mt19937_64 rng(spec.seed);
  auto uniform = [&rng](double bound) { return std::uniform_real_distribution<double>(-bound, bound)(rng); };

  Burst burst;
  burst.reference = 0;
  burst.sigma = spec.noise.sigma;
  const Eigen::Vector2d center(0.5 * (w - 1), 0.5 * (h - 1));
  const AffineMap into_source = AffineMap::translate(margin, margin);
  for (int i = 0; i < spec.frames; ++i) {
    AffineMap m = AffineMap::identity();
    if (i > 0) {
      const double theta = uniform(spec.max_rot_deg) * std::numbers::pi / 180.0;
      Eigen::Matrix2d distort;
      distort << 1.0 + uniform(spec.max_scale_shear), uniform(spec.max_scale_shear), 0.0,
          1.0 + uniform(spec.max_scale_shear);
      const Eigen::Vector2d shift(uniform(spec.max_shift), uniform(spec.max_shift));
      AffineMap rot = AffineMap::rotation_about(theta, Eigen::Vector2d::Zero());
      m.linear = rot.linear * distort;
      m.translation = center - m.linear * center + shift;
    }
    burst.to_reference.push_back(m);
    const Image view = warp_bicubic_image(rgb, into_source * m, w, h, WarpBorder::Clamp);
    if (i == 0) burst.clean_reference = view;
    NoiseSpec noise = spec.noise;
    noise.seed = spec.noise.seed * 1000003ULL + std::uint64_t(i) * 7919ULL + spec.seed;
    burst.frames.push_back(add_noise(mosaic(view, spec.pattern), noise));
  }
  return burst;
}

PairSchedule PairSchedule::lexicographic(int frames, int reference) {
  if (frames < 2) throw ParameterError("pair schedule needs at least 2 frames");
  if (reference < 0 || reference >= frames) throw ParameterError("reference index out of range");
  PairSchedule s;
  s.reference = reference;
  std::vector<int> inputs;
  for (int i = 0; i < frames; ++i)
    if (i != reference) inputs.push_back(i);
  inputs.push_back(reference);
  for (int in : inputs)
    for (int t = 0; t < frames; ++t)
      if (t != in) s.pairs.emplace_back(in, t);
  return s;
}

namespace {
std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%03zu.png", i);
  return buf;
}
}  // namespace

void write_burst(const std::filesystem::path& dir, const Burst& burst) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["reference"] = burst.reference;
  meta["sigma"] = burst.sigma;
  meta["frames"] = nlohmann::json::array();
  for (std::size_t i = 0; i < burst.frames.size(); ++i) {
    write_bayer(dir / frame_name(i), burst.frames[i], burst.sigma);
    meta["frames"].push_back(frame_name(i));
  }
  if (!burst.to_reference.empty()) meta["ground_truth_maps"] = burst.to_reference;
  if (burst.clean_reference) {
    write_png(dir / "clean_reference.png", *burst.clean_reference, 16);
    meta["clean_reference"] = "clean_reference.png";
  }
  std::ofstream(dir / "burst.json") << meta.dump(2) << "\n";
}

Burst read_burst(const std::filesystem::path& dir) {
  std::ifstream in(dir / "burst.json");
  if (!in) throw DataError("no burst.json in '" + dir.string() + "'");
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed burst.json: ") + e.what());
  }
  Burst burst;
  burst.reference = meta.value("reference", 0);
  burst.sigma = meta.value("sigma", 0.0);
  for (const auto& name : meta.at("frames")) burst.frames.push_back(read_bayer(dir / name.get<std::string>()));
  if (meta.contains("ground_truth_maps")) burst.to_reference = meta["ground_truth_maps"].get<std::vector<AffineMap>>();
  if (meta.contains("clean_reference"))
    burst.clean_reference = read_png(dir / meta["clean_reference"].get<std::string>());
  if (burst.frames.size() < 2) throw DataError("burst needs at least 2 frames");
  if (burst.reference < 0 || burst.reference >= int(burst.frames.size()))
    throw DataError("burst reference index out of range");
  return burst;
}

}  // namespace m2m
