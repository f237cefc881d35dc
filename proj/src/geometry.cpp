#include "spotr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace spotr {

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

double sqdist(const Tensor& x, size_t i, size_t j) {
  double dx = x.at(i, 0) - x.at(j, 0);
  double dy = x.at(i, 1) - x.at(j, 1);
  double dz = x.at(i, 2) - x.at(j, 2);
  return dx * dx + dy * dy + dz * dz;
}

bool lex_less(const Tensor& x, size_t a, size_t b) {
  for (size_t k = 0; k < 3; ++k) {
    if (x.at(a, k) != x.at(b, k)) return x.at(a, k) < x.at(b, k);
  }
  return false;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct RawPoint {
  double x, y, z;
  int part;
};

RawPoint sample_cube(Rng& rng) {
  uint64_t face = rng.below(6);
  double u = -1.0 + 2.0 * rng.uniform();
  double v = -1.0 + 2.0 * rng.uniform();
  double s = face % 2 == 0 ? 1.0 : -1.0;
  switch (face / 2) {
    case 0:
      return {s, u, v, 1};
    case 1:
      return {u, s, v, 1};
    default:
      return {u, v, s, 0};  // top/bottom faces are the "cap" part
  }
}

RawPoint sample_torus(Rng& rng) {
  constexpr double kMajor = 1.0, kMinor = 0.4;
  for (;;) {
    double theta = kTau * rng.uniform();
    // Rejection on the surface-area Jacobian (major + minor cos theta).
    if (rng.uniform() * (kMajor + kMinor) > kMajor + kMinor * std::cos(theta))
      continue;
    double u = kTau * rng.uniform();
    double ring = kMajor + kMinor * std::cos(theta);
    int part = std::cos(theta) >= 0.0 ? 0 : 1;  // outer vs inner half
    return {ring * std::cos(u), ring * std::sin(u), kMinor * std::sin(theta),
            part};
  }
}

RawPoint sample_cylinder(Rng& rng) {
  constexpr double kRadius = 0.5, kHalfH = 1.0;
  constexpr double kSideArea = kTau * kRadius * (2.0 * kHalfH);
  constexpr double kCapArea = std::numbers::pi * kRadius * kRadius;
  double pick = rng.uniform() * (kSideArea + 2.0 * kCapArea);
  if (pick < kSideArea) {
    double theta = kTau * rng.uniform();
    double z = -kHalfH + 2.0 * kHalfH * rng.uniform();
    return {kRadius * std::cos(theta), kRadius * std::sin(theta), z, 1};
  }
  double z = pick < kSideArea + kCapArea ? kHalfH : -kHalfH;
  double r = kRadius * std::sqrt(rng.uniform());
  double theta = kTau * rng.uniform();
  return {r * std::cos(theta), r * std::sin(theta), z, 0};
}

// Spheres are sampled as antipodal pairs so the raw centroid is exactly
// zero and normalize() preserves the unit radius.
void sample_sphere_points(Rng& rng, size_t n, std::vector<RawPoint>& out) {
  auto unit = [&rng]() -> RawPoint {
    double z = 1.0 - 2.0 * rng.uniform();
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double theta = kTau * rng.uniform();
    return {r * std::cos(theta), r * std::sin(theta), z, 0};
  };
  while (out.size() + 2 <= n) {
    RawPoint p = unit();
    p.part = p.z >= 0.0 ? 0 : 1;
    RawPoint q{-p.x, -p.y, -p.z, p.z >= 0.0 ? 1 : 0};
    out.push_back(p);
    out.push_back(q);
  }
  if (out.size() < n) {
    RawPoint p = unit();
    p.part = p.z >= 0.0 ? 0 : 1;
    out.push_back(p);
  }
}

PointCloud make_cloud(ShapeKind kind, size_t n_points, Rng& rng,
                      double jitter) {
  std::vector<RawPoint> raw;
  raw.reserve(n_points);
  switch (kind) {
    case ShapeKind::Sphere:
      sample_sphere_points(rng, n_points, raw);
      break;
    case ShapeKind::Cube:
      for (size_t i = 0; i < n_points; ++i) raw.push_back(sample_cube(rng));
      break;
    case ShapeKind::Torus:
      for (size_t i = 0; i < n_points; ++i) raw.push_back(sample_torus(rng));
      break;
    case ShapeKind::Cylinder:
      for (size_t i = 0; i < n_points; ++i)
        raw.push_back(sample_cylinder(rng));
      break;
  }
  std::vector<double> pos(n_points * 3);
  std::vector<int> parts(n_points);
  int cls = static_cast<int>(kind);
  for (size_t i = 0; i < n_points; ++i) {
    pos[i * 3 + 0] = raw[i].x + (jitter > 0.0 ? jitter * rng.normal() : 0.0);
    pos[i * 3 + 1] = raw[i].y + (jitter > 0.0 ? jitter * rng.normal() : 0.0);
    pos[i * 3 + 2] = raw[i].z + (jitter > 0.0 ? jitter * rng.normal() : 0.0);
    parts[i] = kPartsPerClass * cls + raw[i].part;
  }
  PointCloud pc;
  pc.positions = Tensor::from({n_points, 3}, std::move(pos));
  pc.cloud_label = cls;
  pc.point_labels = std::move(parts);
  return normalize(pc);
}

}  // namespace

ShapeKind shape_from_name(const std::string& name) {
  if (name == "sphere") return ShapeKind::Sphere;
  if (name == "cube") return ShapeKind::Cube;
  if (name == "torus") return ShapeKind::Torus;
  if (name == "cylinder") return ShapeKind::Cylinder;
  throw UsageError("unknown shape class: " + name);
}

const char* shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Sphere:
      return "sphere";
    case ShapeKind::Cube:
      return "cube";
    case ShapeKind::Torus:
      return "torus";
    default:
      return "cylinder";
  }
}

PointCloud normalize(const PointCloud& pc) {
  size_t n = pc.size();
  if (n == 0) throw UsageError("normalize: empty cloud");
  double cx = 0, cy = 0, cz = 0;
  for (size_t i = 0; i < n; ++i) {
    cx += pc.positions.at(i, 0);
    cy += pc.positions.at(i, 1);
    cz += pc.positions.at(i, 2);
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  cz /= static_cast<double>(n);
  double r2max = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double dx = pc.positions.at(i, 0) - cx;
    double dy = pc.positions.at(i, 1) - cy;
    double dz = pc.positions.at(i, 2) - cz;
    r2max = std::max(r2max, dx * dx + dy * dy + dz * dz);
  }
  if (r2max < 1e-24)
    throw NumericError("normalize: degenerate cloud (all points coincide)");
  double inv = 1.0 / std::sqrt(r2max);
  std::vector<double> out(n * 3);
  for (size_t i = 0; i < n; ++i) {
    out[i * 3 + 0] = (pc.positions.at(i, 0) - cx) * inv;
    out[i * 3 + 1] = (pc.positions.at(i, 1) - cy) * inv;
    out[i * 3 + 2] = (pc.positions.at(i, 2) - cz) * inv;
  }
  PointCloud result = pc;
  result.positions = Tensor::from({n, 3}, std::move(out));
  return result;
}

std::vector<size_t> fps(const Tensor& positions, size_t m) {
  size_t n = positions.rows();
  if (m < 1 || m > n)
    throw UsageError("fps: need 1 <= m <= N, got m=" + std::to_string(m) +
                     " N=" + std::to_string(n));
  size_t seed = 0;
  for (size_t i = 1; i < n; ++i)
    if (lex_less(positions, i, seed)) seed = i;

  std::vector<size_t> selected{seed};
  std::vector<char> picked(n, 0);
  picked[seed] = 1;
  std::vector<double> mind(n);
  for (size_t i = 0; i < n; ++i) mind[i] = sqdist(positions, i, seed);

  while (selected.size() < m) {
    size_t best = n;
    for (size_t i = 0; i < n; ++i) {
      if (picked[i]) continue;
      if (best == n || mind[i] > mind[best] ||
          (mind[i] == mind[best] && lex_less(positions, i, best)))
        best = i;
    }
    selected.push_back(best);
    picked[best] = 1;
    for (size_t i = 0; i < n; ++i)
      mind[i] = std::min(mind[i], sqdist(positions, i, best));
  }
  return selected;
}

std::vector<Group> ball_query(const Tensor& positions,
                              const std::vector<size_t>& anchors,
                              double radius, size_t cap) {
  if (radius <= 0.0) throw UsageError("ball_query: radius must be positive");
  if (cap < 1) throw UsageError("ball_query: cap must be at least 1");
  size_t n = positions.rows();
  double r2 = radius * radius;
  std::vector<Group> groups;
  groups.reserve(anchors.size());
  for (size_t a : anchors) {
    std::vector<std::pair<double, size_t>> in_ball;
    for (size_t i = 0; i < n; ++i) {
      if (i == a) continue;
      double d2 = sqdist(positions, i, a);
      if (d2 <= r2) in_ball.emplace_back(d2, i);
    }
    std::sort(in_ball.begin(), in_ball.end());
    Group g;
    g.anchor = a;
    g.members.push_back(a);
    for (const auto& [d2, i] : in_ball) {
      if (g.members.size() >= cap) break;
      g.members.push_back(i);
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

std::vector<PointCloud> gen_shapes(const std::vector<ShapeKind>& classes,
                                   size_t n_points, size_t n_samples,
                                   uint64_t seed, double jitter) {
  if (classes.empty()) throw UsageError("gen_shapes: empty class list");
  if (n_points < 1) throw UsageError("gen_shapes: n_points must be positive");
  if (n_samples == 0 || n_samples % classes.size() != 0)
    throw UsageError(
        "gen_shapes: n_samples must be a positive multiple of the class "
        "count");
  Rng rng(seed);
  size_t per_class = n_samples / classes.size();
  std::vector<PointCloud> out;
  out.reserve(n_samples);
  for (ShapeKind kind : classes)
    for (size_t k = 0; k < per_class; ++k)
      out.push_back(make_cloud(kind, n_points, rng, jitter));
  return out;
}

PointCloud read_pc(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty file");
  std::istringstream header(line);
  std::string magic;
  long long n = -1, c = -1, l = -1;
  header >> magic >> n >> c >> l;
  if (magic != "PCD1" || header.fail() || n < 1 || c < 0 || l < 0 || l > 2)
    throw IoError(path + ": malformed header '" + line + "'");

  PointCloud pc;
  if (l == 1) {
    if (!std::getline(in, line)) throw IoError(path + ": missing class line");
    std::istringstream cls(line);
    int label;
    cls >> label;
    if (cls.fail()) throw IoError(path + ": malformed class line");
    pc.cloud_label = label;
  }

  size_t nn = static_cast<size_t>(n), cc = static_cast<size_t>(c);
  std::vector<double> pos(nn * 3);
  std::vector<double> feat(nn * cc);
  std::vector<int> parts;
  for (size_t i = 0; i < nn; ++i) {
    if (!std::getline(in, line))
      throw IoError(path + ": point count mismatch (header says " +
                    std::to_string(nn) + ")");
    std::istringstream row(line);
    for (size_t k = 0; k < 3; ++k) row >> pos[i * 3 + k];
    for (size_t k = 0; k < cc; ++k) row >> feat[i * cc + k];
    if (l == 2) {
      int part;
      row >> part;
      if (!row.fail()) parts.push_back(part);
    }
    if (row.fail())
      throw IoError(path + ": malformed point line " + std::to_string(i + 1));
  }
  pc.positions = Tensor::from({nn, 3}, std::move(pos));
  if (cc > 0) pc.features = Tensor::from({nn, cc}, std::move(feat));
  if (l == 2) {
    pc.point_labels = std::move(parts);
    pc.cloud_label = pc.point_labels[0] / kPartsPerClass;
  }
  return pc;
}

void write_pc(const std::string& path, const PointCloud& pc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  size_t n = pc.size();
  size_t c = pc.features.defined() ? pc.features.cols() : 0;
  int l = !pc.point_labels.empty() ? 2 : (pc.cloud_label >= 0 ? 1 : 0);
  if (l == 2 && pc.point_labels.size() != n)
    throw IoError("write_pc: point label count mismatch");
  out << "PCD1 " << n << " " << c << " " << l << "\n";
  if (l == 1) out << pc.cloud_label << "\n";
  for (size_t i = 0; i < n; ++i) {
    out << fmt_double(pc.positions.at(i, 0)) << " "
        << fmt_double(pc.positions.at(i, 1)) << " "
        << fmt_double(pc.positions.at(i, 2));
    for (size_t k = 0; k < c; ++k) out << " " << fmt_double(pc.features.at(i, k));
    if (l == 2) out << " " << pc.point_labels[i];
    out << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

void write_ply(const std::string& path,
               const std::vector<std::array<double, 3>>& points,
               const std::vector<std::array<uint8_t, 3>>& colors) {
  if (points.size() != colors.size())
    throw UsageError("write_ply: point/color count mismatch");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\n"
         "end_header\n";
  char buf[128];
  for (size_t i = 0; i < points.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %d %d %d\n", points[i][0],
                  points[i][1], points[i][2], colors[i][0], colors[i][1],
                  colors[i][2]);
    out << buf;
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace spotr
