#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "clipose/manifest.hpp"
#include "clipose/tensor.hpp"

namespace clipose {

/// Binary PGM (P5), 8- or 16-bit. Returns H×W with values in [0, 1].
Tensor read_pgm(const std::filesystem::path& path);

/// Writes an 8-bit P5 file; values are clamped to [0, 1] and rounded to
/// the nearest of 256 levels.
void write_pgm(const std::filesystem::path& path, const Tensor& image);

/// Nearest-neighbour resize to side×side: output (i, j) reads input
/// (floor(i·H/side), floor(j·W/side)).
Tensor resize_nearest(const Tensor& image, std::size_t side);

/// Loads one manifest source at the model resolution. `synthetic:` specs are
/// rendered directly at `side`; anything else is a PGM path, resolved against
/// `base_dir` when relative.
Tensor load_raster(const std::string& source, std::size_t side, const std::filesystem::path& base_dir = {});

/// Every sample of a manifest, in order.
std::vector<Tensor> load_rasters(const Manifest& manifest, std::size_t side);

}  // namespace clipose
