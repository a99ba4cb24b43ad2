#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "m2m/image.hpp"

namespace m2m {

/// Procedural stand-in for a natural photograph: occluding colored discs with
/// power-law radii (dead-leaves model), smooth shading, fine texture, and a
/// slight optical blur. Deterministic per seed. RGB in [0,1].
Image synthetic_scene(int width, int height, std::uint64_t seed);

/// n scenes with seeds seed, seed+1, ...
std::vector<Image> synthetic_dataset(int n, int width, int height, std::uint64_t seed);

enum class TestImageKind { Stripes, BinaryNoise };
TestImageKind parse_test_image_kind(std::string_view s);

/// Single-channel images for the self-similarity experiment: stripes is a
/// vertical period-4 binary grating (value depends on x only); binary noise is
/// i.i.d. Bernoulli(0.5) per pixel. size >= 32.
Image make_test_image(TestImageKind kind, int size, std::uint64_t seed);

/// Every *.png under dir, sorted by name; throws DataError when none exist.
std::vector<Image> load_png_dataset(const std::filesystem::path& dir);

}  // namespace m2m
