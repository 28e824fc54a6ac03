#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "pcu4d/geometry.hpp"

namespace pcu4d {

namespace fs = std::filesystem;

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class FrameFormat { xyz, ply };

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool parse_double(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && ptr == tok.data() + tok.size();
}

/// Coordinates are stored as float32 values, matching the PLY property type.
inline bool parse_coord(std::string_view tok, double& out) {
  if (!parse_double(tok, out)) return false;
  out = static_cast<double>(static_cast<float>(out));
  return std::isfinite(out);
}

[[noreturn]] inline void fail(const fs::path& path, std::size_t line, const std::string& what) {
  throw FormatError(path.string() + ":" + std::to_string(line) + ": " + what);
}

inline std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline Frame read_ply(std::istream& in, const fs::path& path) {
  std::string line;
  std::size_t lineno = 1;  // "ply" already consumed
  std::size_t vertex_count = 0;
  bool have_vertex = false, in_vertex = false, ascii = false;
  std::vector<std::string> props;
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "comment" || toks[0] == "obj_info") continue;
    if (toks[0] == "end_header") break;
    if (toks[0] == "format") {
      if (toks.size() < 2 || toks[1] != "ascii") fail(path, lineno, "only ASCII PLY is supported");
      ascii = true;
    } else if (toks[0] == "element") {
      if (toks.size() != 3) fail(path, lineno, "malformed element line");
      if (toks[1] != "vertex") fail(path, lineno, "unsupported PLY element '" + std::string(toks[1]) + "'");
      double n = 0;
      if (!parse_double(toks[2], n) || n < 0 || n != std::floor(n)) fail(path, lineno, "bad vertex count");
      vertex_count = static_cast<std::size_t>(n);
      have_vertex = in_vertex = true;
    } else if (toks[0] == "property") {
      if (!in_vertex) fail(path, lineno, "property outside of an element");
      if (toks.size() != 3) fail(path, lineno, "unsupported property (lists are not supported)");
      props.emplace_back(toks[2]);
    } else {
      fail(path, lineno, "unexpected header line");
    }
  }
  if (!ascii) fail(path, lineno, "missing ascii format line");
  if (!have_vertex) fail(path, lineno, "missing vertex element");
  std::array<std::size_t, 3> idx{};
  const char* names[3] = {"x", "y", "z"};
  for (std::size_t a = 0; a < 3; ++a) {
    auto it = std::find(props.begin(), props.end(), names[a]);
    if (it == props.end()) fail(path, lineno, std::string("vertex lacks property ") + names[a]);
    idx[a] = static_cast<std::size_t>(it - props.begin());
  }
  Frame f;
  f.points.reserve(vertex_count);
  while (f.points.size() < vertex_count && std::getline(in, line)) {
    ++lineno;
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != props.size()) fail(path, lineno, "vertex row has wrong number of values");
    Point3 p{};
    for (std::size_t a = 0; a < 3; ++a)
      if (!parse_coord(toks[idx[a]], p[a])) fail(path, lineno, "invalid coordinate");
    f.points.push_back(p);
  }
  if (f.points.size() != vertex_count)
    fail(path, lineno,
         "header declares " + std::to_string(vertex_count) + " vertices, found " + std::to_string(f.points.size()));
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) fail(path, lineno, "unexpected data after vertex rows");
  }
  return f;
}

}  // namespace detail

/// Reads an ASCII XYZ file (one "x y z" per line, '#' comments) or an ASCII
/// PLY file with x/y/z vertex properties. PLY is recognized by its header.
inline Frame load_frame(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  Frame f;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    auto body = detail::trim(std::string_view(line).substr(0, line.find('#')));
    if (first && detail::trim(line) == "ply") return detail::read_ply(in, path);
    if (body.empty()) continue;
    first = false;
    auto toks = detail::split_ws(body);
    if (toks.size() != 3) detail::fail(path, lineno, "expected 3 values per line");
    Point3 p{};
    for (std::size_t a = 0; a < 3; ++a)
      if (!detail::parse_coord(toks[a], p[a]))
        detail::fail(path, lineno, "invalid coordinate '" + std::string(toks[a]) + "'");
    f.points.push_back(p);
  }
  if (f.points.empty()) throw FormatError(path.string() + ": no points");
  return f;
}

inline FrameFormat format_for(const fs::path& path) {
  return path.extension() == ".ply" ? FrameFormat::ply : FrameFormat::xyz;
}

/// Writes coordinates with 9 significant digits, enough to reload every
/// float32 value exactly.
inline void save_frame(const Frame& frame, const fs::path& path, FrameFormat format) {
  if (frame.points.empty()) throw std::invalid_argument("save_frame: refusing to write an empty frame");
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  if (format == FrameFormat::ply) {
    out << "ply\nformat ascii 1.0\nelement vertex " << frame.points.size()
        << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  }
  for (const auto& p : frame.points)
    out << detail::fmt9(p[0]) << ' ' << detail::fmt9(p[1]) << ' ' << detail::fmt9(p[2]) << '\n';
  if (!out) throw FormatError("write failed: " + path.string());
}

inline void save_frame(const Frame& frame, const fs::path& path) { save_frame(frame, path, format_for(path)); }

// ---------------------------------------------------------------------------
// Scalar-colored clouds

using Rgb = std::array<std::uint8_t, 3>;

/// Eight evenly spaced stops of the viridis colormap.
inline constexpr std::array<Rgb, 8> kRamp{{{68, 1, 84},
                                           {70, 50, 126},
                                           {54, 92, 141},
                                           {39, 127, 142},
                                           {31, 161, 135},
                                           {74, 193, 109},
                                           {160, 218, 57},
                                           {253, 231, 37}}};

/// Position along the ramp in [0, 7] for a scalar normalized to [0, 1].
inline double ramp_position(double u) { return std::clamp(u, 0.0, 1.0) * static_cast<double>(kRamp.size() - 1); }

inline Rgb ramp_color(double u) {
  const double pos = ramp_position(u);
  const std::size_t lo = std::min<std::size_t>(static_cast<std::size_t>(pos), kRamp.size() - 2);
  const double frac = pos - static_cast<double>(lo);
  Rgb c{};
  for (std::size_t k = 0; k < 3; ++k)
    c[k] = static_cast<std::uint8_t>(
        std::lround((1.0 - frac) * kRamp[lo][k] + frac * kRamp[lo + 1][k]));
  return c;
}

/// Maps scalars min..max onto the ramp; constant scalars get the middle color.
inline std::vector<Rgb> colorize(const std::vector<double>& scalars) {
  for (double s : scalars)
    if (!std::isfinite(s)) throw std::invalid_argument("colorize: non-finite scalar");
  std::vector<Rgb> out(scalars.size());
  if (scalars.empty()) return out;
  auto [mn, mx] = std::minmax_element(scalars.begin(), scalars.end());
  const double lo = *mn, span = *mx - *mn;
  for (std::size_t i = 0; i < scalars.size(); ++i) out[i] = ramp_color(span > 0.0 ? (scalars[i] - lo) / span : 0.5);
  return out;
}

inline void save_colored_cloud(const std::vector<Point3>& points, const std::vector<double>& scalars,
                               const fs::path& path) {
  if (points.size() != scalars.size()) throw std::invalid_argument("save_colored_cloud: size mismatch");
  if (points.empty()) throw std::invalid_argument("save_colored_cloud: empty cloud");
  auto colors = colorize(scalars);
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    out << detail::fmt9(p[0]) << ' ' << detail::fmt9(p[1]) << ' ' << detail::fmt9(p[2]) << ' '
        << int(colors[i][0]) << ' ' << int(colors[i][1]) << ' ' << int(colors[i][2]) << '\n';
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

/// Reads back the RGB columns written by save_colored_cloud.
inline std::vector<Rgb> load_colors(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  while (std::getline(in, line) && detail::trim(line) != "end_header") {
  }
  std::vector<Rgb> out;
  while (std::getline(in, line)) {
    auto toks = detail::split_ws(line);
    if (toks.size() != 6) continue;
    Rgb c{};
    for (std::size_t k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(std::stoi(std::string(toks[3 + k])));
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequence manifests

/// JSON: {"fps": 60, "frames": ["f000.ply", ...], "subject": "...",
/// "motion": "...", "protocol": "..."}. Relative frame paths resolve against
/// the manifest's directory.
struct SequenceManifest {
  int fps = 60;
  std::vector<fs::path> frames;
  std::string subject;
  std::string motion;
  std::string protocol;
};

inline SequenceManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  SequenceManifest m;
  try {
    m.fps = j.at("fps").get<int>();
    for (const auto& f : j.at("frames")) {
      fs::path p = f.get<std::string>();
      m.frames.push_back(p.is_absolute() ? p : path.parent_path() / p);
    }
    m.subject = j.value("subject", "");
    m.motion = j.value("motion", "");
    m.protocol = j.value("protocol", "");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (m.frames.empty()) throw FormatError(path.string() + ": manifest lists no frames");
  if (m.fps != 30 && m.fps != 60) throw FormatError(path.string() + ": fps must be 30 or 60");
  return m;
}

/// Frame paths are written relative to the manifest's directory when possible.
inline void save_manifest(const SequenceManifest& m, const fs::path& path) {
  nlohmann::json j;
  j["fps"] = m.fps;
  j["frames"] = nlohmann::json::array();
  for (const auto& f : m.frames) {
    auto rel = f.lexically_relative(path.parent_path());
    j["frames"].push_back((rel.empty() || rel.native().starts_with("..")) ? f.string() : rel.string());
  }
  if (!m.subject.empty()) j["subject"] = m.subject;
  if (!m.motion.empty()) j["motion"] = m.motion;
  if (!m.protocol.empty()) j["protocol"] = m.protocol;
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

inline std::vector<Frame> load_sequence(const SequenceManifest& m) {
  std::vector<Frame> frames;
  frames.reserve(m.frames.size());
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    frames.push_back(load_frame(m.frames[i]));
    frames.back().time_index = i;
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Synthetic deforming sequences

enum class ShapeKind { sphere, ellipsoid, two_lobe };

inline ShapeKind parse_shape(const std::string& s) {
  if (s == "sphere") return ShapeKind::sphere;
  if (s == "ellipsoid") return ShapeKind::ellipsoid;
  if (s == "two-lobe" || s == "two_lobe" || s == "blob") return ShapeKind::two_lobe;
  throw std::invalid_argument("unknown shape '" + s + "' (sphere | ellipsoid | two-lobe)");
}

/// A base surface advected by a rotation about z (angular_velocity rad per
/// frame) and a radial pulsation of relative amplitude `amplitude` whose
/// phase travels over the surface (pulsation_rate rad per frame).
struct SyntheticSpec {
  ShapeKind kind = ShapeKind::sphere;
  std::size_t points = 4096;
  std::size_t frames = 60;
  double amplitude = 0.08;
  double angular_velocity = 0.02;
  double pulsation_rate = 0.15;
  std::uint64_t seed = 7;
};

inline std::vector<Frame> gen_synthetic_sequence(const SyntheticSpec& spec) {
  if (spec.points == 0 || spec.frames == 0) throw std::invalid_argument("synthetic: counts must be >= 1");
  if (!(spec.amplitude >= 0.0)) throw std::invalid_argument("synthetic: amplitude must be >= 0");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Point3> base(spec.points);
  std::vector<Point3> center(spec.points, Point3{0.0, 0.0, 0.0});
  for (std::size_t i = 0; i < spec.points; ++i) {
    Point3 d{normal(rng), normal(rng), normal(rng)};
    double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (n < 1e-12) d = {1.0, 0.0, 0.0}, n = 1.0;
    for (auto& c : d) c /= n;
    switch (spec.kind) {
      case ShapeKind::sphere:
        base[i] = d;
        break;
      case ShapeKind::ellipsoid:
        base[i] = {d[0], 0.7 * d[1], 0.5 * d[2]};
        break;
      case ShapeKind::two_lobe: {
        const double cx = (i % 2 == 0) ? 0.45 : -0.45;
        center[i] = {cx, 0.0, 0.0};
        base[i] = {0.55 * d[0], 0.55 * d[1], 0.55 * d[2]};
        break;
      }
    }
  }
  std::vector<Frame> frames(spec.frames);
  for (std::size_t f = 0; f < spec.frames; ++f) {
    const double tf = static_cast<double>(f);
    const double ang = spec.angular_velocity * tf;
    const double ca = std::cos(ang), sa = std::sin(ang);
    auto& pts = frames[f].points;
    pts.resize(spec.points);
    for (std::size_t i = 0; i < spec.points; ++i) {
      const Point3& b = base[i];
      const double r = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
      const double dir_z = r > 0.0 ? b[2] / r : 0.0;
      const double pulse = 1.0 + spec.amplitude * std::sin(spec.pulsation_rate * tf + 3.0 * dir_z);
      const Point3 q{center[i][0] + pulse * b[0], center[i][1] + pulse * b[1], center[i][2] + pulse * b[2]};
      pts[i] = {ca * q[0] - sa * q[1], sa * q[0] + ca * q[1], q[2]};
    }
    // Stored at float precision, like frames read from disk.
    for (auto& p : pts)
      for (auto& c : p) c = static_cast<float>(c);
    frames[f].time_index = f;
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Degradation

enum class SubsampleStrategy { uniform_random, fps };

/// Keeps exactly `target` points. Uniform-random picks a seeded random subset
/// (kept in original order); fps keeps the farthest point sample seeded at
/// the lowest index (in selection order).
inline Frame subsample_frame(const Frame& frame, std::size_t target, SubsampleStrategy strategy,
                             std::uint64_t seed = 0) {
  const std::size_t n = frame.points.size();
  if (target > n) throw std::invalid_argument("subsample_frame: target exceeds point count");
  if (target == 0) throw std::invalid_argument("subsample_frame: target must be >= 1");
  Frame out;
  out.time_index = frame.time_index;
  out.time_value = frame.time_value;
  if (target == n) {
    out.points = frame.points;
    return out;
  }
  std::vector<std::size_t> keep;
  if (strategy == SubsampleStrategy::uniform_random) {
    std::vector<std::size_t> idx = all_indices(n);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < target; ++i) {
      std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
      std::swap(idx[i], idx[j]);
    }
    keep.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(target));
    std::sort(keep.begin(), keep.end());
  } else {
    const Tensor pts = to_tensor(frame.points);
    const auto cand = all_indices(n);
    keep = fps_select(pts, cand, target, FpsSeed::lowest(), Metric::xyz).centers;
  }
  out.points.reserve(target);
  for (std::size_t i : keep) out.points.push_back(frame.points[i]);
  return out;
}

}  // namespace pcu4d
