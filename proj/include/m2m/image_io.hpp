#pragma once

#include <filesystem>

#include "m2m/image.hpp"

namespace m2m {

/// Reads an 8- or 16-bit PNG (gray, gray+alpha, RGB or RGBA; alpha dropped)
/// into [0,1] samples.
Image read_png(const std::filesystem::path& path);

/// Writes a 1- or 3-channel image, clipped to [0,1] and rounded. bit_depth is 8 or 16.
void write_png(const std::filesystem::path& path, const Image& img, int bit_depth = 8);

struct BayerSidecar {
  CfaPattern pattern;
  double sigma = 0.0;
};

/// `<stem>.json` next to a frame's PNG.
std::filesystem::path sidecar_path(const std::filesystem::path& png_path);

/// 16-bit single-channel PNG plus a {"pattern": ..., "sigma": ...} sidecar.
void write_bayer(const std::filesystem::path& png_path, const BayerFrame& frame, double sigma = 0.0);
BayerFrame read_bayer(const std::filesystem::path& png_path, BayerSidecar* sidecar = nullptr);

}  // namespace m2m
