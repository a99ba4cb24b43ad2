#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "m2m/affine.hpp"
#include "m2m/image.hpp"

namespace m2m {

struct BurstSpec {
  int frames = 10;
  double max_shift = 4.0;    ///< px, uniform per axis
  double max_rot_deg = 2.0;  ///< degrees, uniform
  /// Scale and shear perturbations are drawn within ±max_scale_shear.
  double max_scale_shear = 0.02;
  NoiseSpec noise;
  CfaPattern pattern;
  std::uint64_t seed = 0;
};

/// A burst of mosaics. `to_reference[i]` maps frame-i pixel coordinates to
/// reference-frame coordinates (frame_i(y) ≈ reference(to_reference[i](y))),
/// known only for simulations. `clean_reference` is the noise-free RGB view of
/// the reference frame, also simulation-only.
struct Burst {
  std::vector<BayerFrame> frames;
  int reference = 0;
  double sigma = 0.0;
  std::vector<AffineMap> to_reference;
  std::optional<Image> clean_reference;

  /// Map registering frame `src` onto frame `dst`: frame_src(T(y)) ≈ frame_dst(y).
  AffineMap ground_truth_map(int src, int dst) const;
};

/// Frame 0 is the reference (identity); frames i > 0 view the image through a
/// random affinity about the frame center, then are mosaicked and noised.
/// Frames are cropped from the interior of `rgb` so that every sample is
/// defined; the crop margin grows with the motion bounds.
Burst simulate_burst(const Image& rgb, const BurstSpec& spec);

/// Crop margin simulate_burst uses for a given image size and motion.
int burst_margin(int width, int height, const BurstSpec& spec);

/// All N(N−1) ordered (input, target) pairs, lexicographic by input then target,
/// except that the reference's input block is moved to the end.
struct PairSchedule {
  std::vector<std::pair<int, int>> pairs;
  int reference = 0;

  static PairSchedule lexicographic(int frames, int reference);
  std::size_t size() const { return pairs.size(); }
};

/// Directory layout: frame_###.png (+ .json sidecars) and burst.json holding
/// the reference index, sigma and, when known, ground-truth maps.
void write_burst(const std::filesystem::path& dir, const Burst& burst);
Burst read_burst(const std::filesystem::path& dir);

}  // namespace m2m
