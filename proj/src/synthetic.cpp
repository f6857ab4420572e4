#include "clipose/synthetic.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <numbers>
#include <set>

#include "clipose/errors.hpp"
#include "clipose/rng.hpp"
#include "clipose/taxonomy.hpp"

namespace clipose {

namespace {

// Angles in degrees in the body frame: 90 points from hip to neck.
struct Limb {
  double upper;  // absolute direction of the upper segment
  double bend;   // lower segment direction relative to the upper one
};

struct Pair {
  Limb left, right;
};

constexpr std::array<double, 4> kTorso = {0.0, 90.0, 45.0, 135.0};

constexpr std::array<Pair, 4> kArms = {{
    {{240, 0}, {300, 0}},    // hanging
    {{180, 0}, {0, 0}},      // spread
    {{110, 0}, {70, 0}},     // overhead
    {{225, 90}, {315, -90}}, // bent at the elbows
}};

constexpr std::array<Pair, 6> kLegs = {{
    {{260, 0}, {280, 0}},    // together
    {{225, 0}, {315, 0}},    // wide stance
    {{270, 0}, {0, -90}},    // one knee raised
    {{180, 0}, {0, 0}},      // split
    {{250, 80}, {290, 80}},  // kneeling
    {{0, 0}, {20, 0}},       // seated, legs forward
}};

constexpr double kTorsoLength = 1.0;
constexpr double kUpperArm = 0.45, kForearm = 0.4;
constexpr double kThigh = 0.55, kShin = 0.5;
constexpr double kHeadRadius = 0.22, kHeadOffset = 0.3;

// Figures are centred on their bounding box, like a person crop, so the only
// geometric nuisances are joint angles and scale.
constexpr double kAngleJitter = 6.0;
constexpr double kScaleLo = 0.97, kScaleHi = 1.03;
constexpr double kFill = 0.8;

struct Point {
  double x, y;
};

struct Segment {
  Point a, b;
};

Point polar(Point from, double degrees, double length) {
  const double r = degrees * std::numbers::pi / 180.0;
  return {from.x + length * std::cos(r), from.y + length * std::sin(r)};
}

double segment_distance(Point p, const Segment& s) {
  const double dx = s.b.x - s.a.x, dy = s.b.y - s.a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - s.a.x) * dx + (p.y - s.a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (s.a.x + t * dx), p.y - (s.a.y + t * dy));
}

struct Figure {
  std::vector<Segment> segments;
  Point head;
};

// Deterministic draw order: 9 angle jitters, then scale.
struct Jitter {
  std::array<double, 9> angle{};
  double scale = 1;
};

Jitter draw_jitter(Rng& rng) {
  Jitter j;
  for (double& a : j.angle) a = rng.uniform(-kAngleJitter, kAngleJitter);
  j.scale = rng.uniform(kScaleLo, kScaleHi);
  return j;
}

Figure build_figure(std::size_t archetype, const Jitter& j) {
  // Scramble so that neighbouring archetype ids differ in every component.
  const std::size_t t = (archetype * 53 + 7) % kArchetypeCount;
  const double rot = kTorso[t % 4] + j.angle[0];
  const Pair& arms = kArms[(t / 4) % 4];
  const Pair& legs = kLegs[t / 16];

  auto dir = [&](double body_angle) { return body_angle + rot; };
  Figure f;
  const Point hip{0, 0};
  const Point neck = polar(hip, dir(90), kTorsoLength);
  f.segments.push_back({hip, neck});
  f.head = polar(neck, dir(90), kHeadOffset);

  auto limb = [&](Point root, const Limb& l, double ja, double jb, double len1, double len2) {
    const double a = l.upper + ja;
    const Point joint = polar(root, dir(a), len1);
    const Point end = polar(joint, dir(a + l.bend + jb), len2);
    f.segments.push_back({root, joint});
    f.segments.push_back({joint, end});
  };
  limb(neck, arms.left, j.angle[1], j.angle[2], kUpperArm, kForearm);
  limb(neck, arms.right, j.angle[3], j.angle[4], kUpperArm, kForearm);
  limb(hip, legs.left, j.angle[5], j.angle[6], kThigh, kShin);
  limb(hip, legs.right, j.angle[7], j.angle[8], kThigh, kShin);
  return f;
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

Tensor rasterize(const Figure& f, const Jitter& j, std::size_t side, double radius, double noise, Rng* rng) {
  double minx = f.head.x - kHeadRadius, maxx = f.head.x + kHeadRadius;
  double miny = f.head.y - kHeadRadius, maxy = f.head.y + kHeadRadius;
  for (const auto& s : f.segments) {
    for (const Point& p : {s.a, s.b}) {
      minx = std::min(minx, p.x);
      maxx = std::max(maxx, p.x);
      miny = std::min(miny, p.y);
      maxy = std::max(maxy, p.y);
    }
  }
  const double n = static_cast<double>(side);
  const double scale = kFill * n / std::max(maxx - minx, maxy - miny) * j.scale;
  const double cx = n / 2, cy = n / 2;
  const double mx = (minx + maxx) / 2, my = (miny + maxy) / 2;
  auto to_pixels = [&](Point p) { return Point{cx + (p.x - mx) * scale, cy - (p.y - my) * scale}; };

  std::vector<Segment> segs;
  for (const auto& s : f.segments) segs.push_back({to_pixels(s.a), to_pixels(s.b)});
  const Point head = to_pixels(f.head);
  const double head_r = kHeadRadius * scale;

  Tensor img = Tensor::zeros({side, side});
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const Point p{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5};
      double d = std::abs(std::hypot(p.x - head.x, p.y - head.y) - head_r);
      for (const auto& s : segs) d = std::min(d, segment_distance(p, s));
      double v = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      if (rng) v = std::max(v, noise * rng->uniform());
      img.at(y, x) = quantize(v);
    }
  }
  return img;
}

double default_radius(std::size_t side) { return std::max(1.0, static_cast<double>(side) / 16.0); }

void check_archetype(std::size_t a) {
  if (a >= kArchetypeCount) {
    throw ConfigError("synthetic archetype " + std::to_string(a) + " out of range (" +
                      std::to_string(kArchetypeCount) + " defined)");
  }
}

}  // namespace

bool is_synthetic_source(std::string_view source) { return source.starts_with(kSyntheticPrefix); }

std::string format_synthetic_source(const SyntheticPoseSpec& spec) {
  std::array<char, 64> noise{};
  auto r = std::to_chars(noise.data(), noise.data() + noise.size(), spec.noise);
  std::string out = std::string(kSyntheticPrefix) + std::to_string(spec.archetype) + ":" +
                    std::to_string(spec.seed) + ":" + std::string(noise.data(), r.ptr);
  if (spec.thickness > 0) {
    std::array<char, 64> th{};
    auto r2 = std::to_chars(th.data(), th.data() + th.size(), spec.thickness);
    out += ":" + std::string(th.data(), r2.ptr);
  }
  return out;
}

SyntheticPoseSpec parse_synthetic_source(std::string_view source) {
  auto fail = [&]() -> ConfigError {
    return ConfigError("malformed synthetic source '" + std::string(source) + "'");
  };
  if (!is_synthetic_source(source)) throw fail();
  std::vector<std::string_view> parts;
  std::string_view rest = source.substr(kSyntheticPrefix.size());
  for (std::size_t pos; (pos = rest.find(':')) != std::string_view::npos; rest.remove_prefix(pos + 1)) {
    parts.push_back(rest.substr(0, pos));
  }
  parts.push_back(rest);
  if (parts.size() != 3 && parts.size() != 4) throw fail();
  auto parse = [&](std::string_view s, auto& out) {
    const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw fail();
  };
  SyntheticPoseSpec spec;
  parse(parts[0], spec.archetype);
  parse(parts[1], spec.seed);
  parse(parts[2], spec.noise);
  if (parts.size() == 4) parse(parts[3], spec.thickness);
  if (!(spec.noise >= 0.0 && spec.noise <= 1.0) || !(spec.thickness >= 0.0)) throw fail();
  check_archetype(spec.archetype);
  return spec;
}

Tensor render_pose(const SyntheticPoseSpec& spec, std::size_t side) {
  check_archetype(spec.archetype);
  if (side == 0) throw ContractError("render_pose: side must be positive");
  Rng rng(spec.seed);
  const Jitter j = draw_jitter(rng);
  const double radius = spec.thickness > 0 ? spec.thickness : default_radius(side);
  return rasterize(build_figure(spec.archetype, j), j, side, radius, spec.noise, spec.noise > 0 ? &rng : nullptr);
}

Tensor render_archetype(std::size_t archetype, std::size_t side) {
  check_archetype(archetype);
  const Jitter none;
  return rasterize(build_figure(archetype, none), none, side, default_radius(side), 0.0, nullptr);
}

SyntheticDataset generate_synthetic_dataset(std::span<const std::size_t> archetypes,
                                            const SyntheticOptions& options) {
  if (options.images_per_class == 0) throw ConfigError("synthetic: images per class must be at least 1");
  if (archetypes.size() > kArchetypeCount) {
    throw ConfigError("synthetic: " + std::to_string(archetypes.size()) + " classes requested but only " +
                      std::to_string(kArchetypeCount) + " archetypes exist");
  }
  std::set<std::size_t> seen;
  for (std::size_t a : archetypes) {
    check_archetype(a);
    if (!seen.insert(a).second) throw ConfigError("synthetic: archetype " + std::to_string(a) + " used twice");
  }
  SyntheticDataset out;
  for (std::size_t label = 0; label < archetypes.size(); ++label) {
    for (std::size_t k = 0; k < options.images_per_class; ++k) {
      const SyntheticPoseSpec spec{archetypes[label], derive_seed(options.seed, label * 100003 + k), options.noise};
      const std::string id = "syn" + std::to_string(label) + "_" + std::to_string(k);
      out.manifest.samples.push_back({id, format_synthetic_source(spec), label});
      out.rasters.push_back(render_pose(spec, options.side));
    }
  }
  return out;
}

std::vector<std::size_t> archetypes_for(const Taxonomy& classes, const Taxonomy& reference) {
  std::vector<std::size_t> out(classes.size(), kArchetypeCount);
  std::set<std::size_t> used;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (auto idx = reference.find(classes.cls(i).name); idx && *idx < kArchetypeCount) {
      out[i] = *idx;
      used.insert(*idx);
    }
  }
  std::size_t next = 0;
  for (auto& a : out) {
    if (a != kArchetypeCount) continue;
    while (used.contains(next)) ++next;
    if (next >= kArchetypeCount) {
      throw ConfigError("synthetic: more classes than the " + std::to_string(kArchetypeCount) + " archetypes");
    }
    a = next;
    used.insert(next);
  }
  return out;
}

}  // namespace clipose
