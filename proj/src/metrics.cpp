#include "simseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace simseg {
namespace {

struct Counts {
  std::size_t inter = 0, p = 0, g = 0, agree = 0, total = 0;
};

Counts count(const BinaryMask& p, const BinaryMask& g) {
  if (!p.same_dims(g))
    throw InputError("metric masks differ in shape");
  Counts c;
  c.total = p.size();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] != 0;
    const bool b = g[i] != 0;
    c.inter += a && b;
    c.p += a;
    c.g += b;
    c.agree += a == b;
  }
  return c;
}

Spacing effective_spacing(const BinaryMask& m, DistanceUnits units) {
  return units == DistanceUnits::mm ? m.spacing() : Spacing{1.0, 1.0, 1.0};
}

bool on_surface(const BinaryMask& m, int z, int y, int x) {
  if (!m.at(z, y, x)) return false;
  auto bg = [&](int zz, int yy, int xx) {
    if (zz < 0 || zz >= m.depth() || yy < 0 || yy >= m.height() || xx < 0 ||
        xx >= m.width())
      return true;
    return m.at(zz, yy, xx) == 0;
  };
  if (bg(z, y - 1, x) || bg(z, y + 1, x) || bg(z, y, x - 1) || bg(z, y, x + 1))
    return true;
  if (m.depth() > 1 && (bg(z - 1, y, x) || bg(z + 1, y, x))) return true;
  return false;
}

constexpr double kFar = 1e30;

// One pass of the lower-envelope-of-parabolas squared distance transform
// along a line of n samples at physical step `step`.
void edt_1d(const double* f, double* d, int n, double step,
            std::vector<int>& v, std::vector<double>& zb) {
  int k = 0;
  v[0] = 0;
  zb[0] = -std::numeric_limits<double>::infinity();
  zb[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    const double xq = q * step;
    double s;
    for (;;) {
      const double xv = v[k] * step;
      s = ((f[q] + xq * xq) - (f[v[k]] + xv * xv)) / (2.0 * (xq - xv));
      if (s <= zb[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= zb[k]) {  // k == 0: replace the only parabola
      v[0] = q;
      zb[0] = -std::numeric_limits<double>::infinity();
      zb[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    ++k;
    v[k] = q;
    zb[k] = s;
    zb[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    const double xq = q * step;
    while (zb[k + 1] < xq) ++k;
    const double dx = xq - v[k] * step;
    d[q] = dx * dx + f[v[k]];
  }
}

// Squared distance from every voxel centre to the nearest voxel of `target`.
std::vector<double> squared_distance_map(const BinaryMask& target, Spacing s) {
  const int D = target.depth(), H = target.height(), W = target.width();
  std::vector<double> dist(target.size());
  for (std::size_t i = 0; i < dist.size(); ++i)
    dist[i] = target[i] ? 0.0 : kFar;
  const int longest = std::max({D, H, W});
  std::vector<double> f(longest), d(longest), zb(longest + 1);
  std::vector<int> v(longest);
  auto run = [&](int n, double step, auto index) {
    for (int i = 0; i < n; ++i) f[i] = dist[index(i)];
    edt_1d(f.data(), d.data(), n, step, v, zb);
    for (int i = 0; i < n; ++i) dist[index(i)] = d[i];
  };
  auto idx = [&](int z, int y, int x) {
    return (static_cast<std::size_t>(z) * H + y) * W + x;
  };
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      run(W, s.x, [&](int i) { return idx(z, y, i); });
  for (int z = 0; z < D; ++z)
    for (int x = 0; x < W; ++x)
      run(H, s.y, [&](int i) { return idx(z, i, x); });
  if (D > 1)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        run(D, s.z, [&](int i) { return idx(i, y, x); });
  return dist;
}

BinaryMask surface_mask(const BinaryMask& m) {
  BinaryMask out(m.depth(), m.height(), m.width(), m.spacing());
  for (int z = 0; z < m.depth(); ++z)
    for (int y = 0; y < m.height(); ++y)
      for (int x = 0; x < m.width(); ++x) out.at(z, y, x) = on_surface(m, z, y, x);
  return out;
}

std::vector<double> directed_surface_distances(const BinaryMask& from,
                                               const BinaryMask& to,
                                               Spacing s) {
  const std::vector<double> d2 = squared_distance_map(to, s);
  std::vector<double> out;
  for (std::size_t i = 0; i < from.size(); ++i)
    if (from[i]) out.push_back(std::sqrt(d2[i]));
  return out;
}

}  // namespace

double iou(const BinaryMask& p, const BinaryMask& g) {
  const Counts c = count(p, g);
  const std::size_t uni = c.p + c.g - c.inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.inter) / static_cast<double>(uni);
}

double dice(const BinaryMask& p, const BinaryMask& g) {
  const Counts c = count(p, g);
  if (c.p + c.g == 0) return 1.0;
  return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.p + c.g);
}

double pixel_accuracy(const BinaryMask& p, const BinaryMask& g) {
  const Counts c = count(p, g);
  if (c.total == 0) return 1.0;
  return static_cast<double>(c.agree) / static_cast<double>(c.total);
}

PointSet extract_surface(const BinaryMask& m, DistanceUnits units) {
  const Spacing s = effective_spacing(m, units);
  PointSet pts;
  for (int z = 0; z < m.depth(); ++z)
    for (int y = 0; y < m.height(); ++y)
      for (int x = 0; x < m.width(); ++x)
        if (on_surface(m, z, y, x)) pts.push_back({x * s.x, y * s.y, z * s.z});
  if (pts.empty()) throw InputError("surface of an empty mask is undefined");
  return pts;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InputError("percentile of an empty set");
  if (q < 0.0 || q > 100.0) throw InputError("percentile outside [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double directed_percentile_distance(const PointSet& a, const PointSet& b,
                                    double q) {
  if (a.empty() || b.empty())
    throw InputError("directed distance needs two non-empty point sets");
  std::vector<double> nearest;
  nearest.reserve(a.size());
  for (const Point3& pa : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const Point3& pb : b) {
      const double dx = pa.x - pb.x, dy = pa.y - pb.y, dz = pa.z - pb.z;
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    nearest.push_back(std::sqrt(best));
  }
  return percentile(std::move(nearest), q);
}

std::optional<double> hausdorff_percentile(const BinaryMask& p,
                                           const BinaryMask& g, double q,
                                           DistanceUnits units) {
  if (!p.same_dims(g)) throw InputError("metric masks differ in shape");
  const bool pe = count_foreground(p) == 0;
  const bool ge = count_foreground(g) == 0;
  if (pe && ge) return 0.0;
  if (pe || ge) return std::nullopt;
  const Spacing s = effective_spacing(g, units);
  const BinaryMask sp = surface_mask(p);
  const BinaryMask sg = surface_mask(g);
  const double a = percentile(directed_surface_distances(sp, sg, s), q);
  const double b = percentile(directed_surface_distances(sg, sp, s), q);
  return std::max(a, b);
}

std::optional<double> hd95(const BinaryMask& p, const BinaryMask& g,
                           DistanceUnits units) {
  return hausdorff_percentile(p, g, 95.0, units);
}

MetricsRecord evaluate_pair(const BinaryMask& p, const BinaryMask& g,
                            DistanceUnits units) {
  MetricsRecord r;
  r.iou = iou(p, g);
  r.dice = dice(p, g);
  r.acc = pixel_accuracy(p, g);
  r.hd95 = hd95(p, g, units);
  r.n_pixels = p.size();
  return r;
}

std::string to_string(AggregationLevel level) {
  return level == AggregationLevel::per_slice ? "per_slice" : "per_patient";
}

AggregationLevel parse_aggregation_level(const std::string& s) {
  if (s == "per_slice") return AggregationLevel::per_slice;
  if (s == "per_patient") return AggregationLevel::per_patient;
  throw ConfigError("unknown aggregation level '" + s + "'");
}

namespace {

struct Accum {
  double iou = 0, dice = 0, acc = 0, hd = 0;
  std::size_t n = 0, n_hd = 0;

  void add(double i, double d, double a, std::optional<double> h) {
    iou += i;
    dice += d;
    acc += a;
    ++n;
    if (h) {
      hd += *h;
      ++n_hd;
    }
  }
};

}  // namespace

MetricsSummary aggregate(const std::vector<MetricsRecord>& records,
                         AggregationLevel level) {
  if (records.empty()) throw InputError("cannot aggregate zero records");
  MetricsSummary s;
  s.level = level;
  s.n_records = records.size();
  for (const auto& r : records) s.hd95_undefined += !r.hd95.has_value();

  Accum top;
  if (level == AggregationLevel::per_slice) {
    for (const auto& r : records) top.add(r.iou, r.dice, r.acc, r.hd95);
    s.n_groups = records.size();
  } else {
    std::vector<std::string> order;
    std::map<std::string, Accum> groups;
    for (const auto& r : records) {
      auto [it, fresh] = groups.try_emplace(r.patient_id);
      if (fresh) order.push_back(r.patient_id);
      it->second.add(r.iou, r.dice, r.acc, r.hd95);
    }
    for (const auto& id : order) {
      const Accum& a = groups[id];
      const double n = static_cast<double>(a.n);
      std::optional<double> h;
      if (a.n_hd) h = a.hd / static_cast<double>(a.n_hd);
      top.add(a.iou / n, a.dice / n, a.acc / n, h);
    }
    s.n_groups = order.size();
  }
  const double n = static_cast<double>(top.n);
  s.iou = top.iou / n;
  s.dice = top.dice / n;
  s.acc = top.acc / n;
  if (top.n_hd) s.hd95 = top.hd / static_cast<double>(top.n_hd);
  return s;
}

BinaryMask mask_from_tensor(const Tensor& t, int n, Spacing spacing) {
  if (t.c() != 1) throw InputError("mask tensor must have one channel");
  BinaryMask m(1, t.h(), t.w(), spacing);
  const double* p = t.plane(n, 0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = p[i] >= 0.5 ? 1 : 0;
  return m;
}

}  // namespace simseg
