#include "m2m/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "m2m/image_io.hpp"
#include "m2m/registration.hpp"

namespace m2m {

Image synthetic_scene(int width, int height, std::uint64_t seed) {
  if (width <= 0 || height <= 0) throw DimensionError("synthetic_scene: empty size");
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Image img(width, height, 3);
  PlaneMatrix<double> filled = PlaneMatrix<double>::Zero(height, width);
  long remaining = long(width) * height;

  // Background gradient.
  const std::array<double, 3> bg0{unit(rng), unit(rng), unit(rng)}, bg1{unit(rng), unit(rng), unit(rng)};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double t = (double(x) / width + double(y) / height) / 2.0;
      for (int c = 0; c < 3; ++c) img(c, y, x) = 0.15 + 0.7 * ((1 - t) * bg0[c] + t * bg1[c]);
    }

  // Dead leaves: front-to-back, each disc only paints pixels not yet covered.
  const double rmin = 2.0, rmax = 0.35 * std::min(width, height);
  const int max_leaves = 4000;
  for (int leaf = 0; leaf < max_leaves && remaining > long(width) * height / 50; ++leaf) {
    // Radius with density ∝ r^-3 between rmin and rmax (inverse CDF).
    const double u = unit(rng);
    const double r = 1.0 / std::sqrt((1 - u) / (rmin * rmin) + u / (rmax * rmax));
    const double cx = unit(rng) * (width + 2 * r) - r, cy = unit(rng) * (height + 2 * r) - r;
    std::array<double, 3> color;
    const double lum = 0.1 + 0.8 * unit(rng);
    for (int c = 0; c < 3; ++c) color[c] = std::clamp(lum + 0.35 * (unit(rng) - 0.5), 0.02, 0.98);
    const double gx = 0.25 * (unit(rng) - 0.5) / std::max(r, 1.0), gy = 0.25 * (unit(rng) - 0.5) / std::max(r, 1.0);
    const double freq = 0.3 + 1.2 * unit(rng), phase = 6.283 * unit(rng), tex_amp = 0.06 * unit(rng);
    const double angle = 3.1416 * unit(rng);
    const double ca = std::cos(angle), sa = std::sin(angle);
    const int x0 = std::max(0, int(std::floor(cx - r))), x1 = std::min(width - 1, int(std::ceil(cx + r)));
    const int y0 = std::max(0, int(std::floor(cy - r))), y1 = std::min(height - 1, int(std::ceil(cy + r)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy > r * r || filled(y, x) != 0.0) continue;
        filled(y, x) = 1.0;
        --remaining;
        const double shade = gx * dx + gy * dy + tex_amp * std::sin(freq * (ca * dx + sa * dy) + phase);
        for (int c = 0; c < 3; ++c) img(c, y, x) = std::clamp(color[c] + shade, 0.0, 1.0);
      }
  }
  return gaussian_blur(img, 0.6).clipped();
}

std::vector<Image> synthetic_dataset(int n, int width, int height, std::uint64_t seed) {
  std::vector<Image> out;
  out.reserve(std::size_t(std::max(n, 0)));
  for (int i = 0; i < n; ++i) out.push_back(synthetic_scene(width, height, seed + std::uint64_t(i)));
  return out;
}

TestImageKind parse_test_image_kind(std::string_view s) {
  if (s == "stripes") return TestImageKind::Stripes;
  if (s == "binary_noise") return TestImageKind::BinaryNoise;
  throw ParameterError("unknown test image kind '" + std::string(s) + "'");
}

Image make_test_image(TestImageKind kind, int size, std::uint64_t seed) {
  if (size < 32) throw ParameterError("make_test_image: size must be >= 32");
  Image img(size, size, 1);
  if (kind == TestImageKind::Stripes) {
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) img(0, y, x) = (x % 4) < 2 ? 1.0 : 0.0;
    return img;
  }
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) img(0, y, x) = coin(rng) ? 1.0 : 0.0;
  return img;
}

std::vector<Image> load_png_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory '" + dir.string() + "' not found");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("dataset directory '" + dir.string() + "' holds no PNG files");
  std::vector<Image> out;
  for (const auto& f : files) out.push_back(read_png(f));
  return out;
}

}  // namespace m2m
