#include "clipose/raster.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "clipose/errors.hpp"
#include "clipose/synthetic.hpp"

namespace clipose {

namespace {

// Reads the next header integer, skipping whitespace and `#` comments.
std::size_t header_int(const std::string& data, std::size_t& pos, const std::string& path) {
  while (pos < data.size()) {
    const auto c = static_cast<unsigned char>(data[pos]);
    if (std::isspace(c)) {
      ++pos;
    } else if (c == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  std::size_t value = 0;
  const std::size_t start = pos;
  while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) {
    value = value * 10 + static_cast<std::size_t>(data[pos] - '0');
    if (value > 1u << 20) throw IoError(path + ": implausible PGM header value");
    ++pos;
  }
  if (pos == start) throw IoError(path + ": malformed PGM header");
  return value;
}

}  // namespace

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read raster " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (data.size() < 2 || data[0] != 'P' || data[1] != '5') throw IoError(name + ": not a binary PGM (P5)");
  std::size_t pos = 2;
  const std::size_t width = header_int(data, pos, name);
  const std::size_t height = header_int(data, pos, name);
  const std::size_t maxval = header_int(data, pos, name);
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) throw IoError(name + ": bad PGM header");
  ++pos;  // single whitespace byte before the raster
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  if (data.size() < pos + width * height * bytes_per) throw IoError(name + ": truncated PGM raster");
  std::vector<double> values(width * height);
  const auto* raw = reinterpret_cast<const unsigned char*>(data.data() + pos);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t v = bytes_per == 1 ? raw[i] : (static_cast<std::size_t>(raw[2 * i]) << 8) | raw[2 * i + 1];
    values[i] = static_cast<double>(std::min(v, maxval)) / static_cast<double>(maxval);
  }
  return Tensor({height, width}, std::move(values));
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2) throw DimensionError("write_pgm: expected H×W, got " + shape_to_string(image.shape()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write raster " + path.string());
  out << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  std::string bytes;
  bytes.reserve(image.size());
  for (double v : image.values()) {
    bytes.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing raster " + path.string());
}

Tensor resize_nearest(const Tensor& image, std::size_t side) {
  if (image.rank() != 2) throw DimensionError("resize: expected H×W, got " + shape_to_string(image.shape()));
  if (side == 0) throw ContractError("resize: side must be positive");
  const std::size_t h = image.dim(0), w = image.dim(1);
  if (h == side && w == side) return image;
  Tensor out = Tensor::zeros({side, side});
  for (std::size_t i = 0; i < side; ++i) {
    const std::size_t si = i * h / side;
    for (std::size_t j = 0; j < side; ++j) out.at(i, j) = image.at(si, j * w / side);
  }
  return out;
}

Tensor load_raster(const std::string& source, std::size_t side, const std::filesystem::path& base_dir) {
  if (is_synthetic_source(source)) return render_pose(parse_synthetic_source(source), side);
  std::filesystem::path path(source);
  if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
  return resize_nearest(read_pgm(path), side);
}

std::vector<Tensor> load_rasters(const Manifest& manifest, std::size_t side) {
  std::vector<Tensor> out;
  out.reserve(manifest.size());
  for (const auto& s : manifest.samples) out.push_back(load_raster(s.source, side, manifest.base_dir));
  return out;
}

}  // namespace clipose
