#include "simseg/phantom.hpp"

#include <cmath>
#include <numbers>

#include "simseg/rng.hpp"

namespace simseg {
namespace {

struct Anatomy {
  double cx, cy;              // body centre, mm
  double body_a, body_b;      // body semi-axes
  double lung_dx, lung_dy;    // lung centre offsets from the body centre
  double lung_a, lung_b;      // lung semi-axes (in-plane, full height)
};

Anatomy anatomy(const PhantomConfig& cfg) {
  const auto e = cfg.extent_mm();
  Anatomy a;
  a.cx = e[0] / 2;
  a.cy = e[1] / 2;
  a.body_a = 0.45 * e[0];
  a.body_b = 0.36 * e[1];
  a.lung_dx = 0.21 * e[0];
  a.lung_dy = -0.03 * e[1];
  a.lung_a = 0.15 * e[0];
  a.lung_b = 0.25 * e[1];
  return a;
}

double sq(double v) { return v * v; }

bool in_ellipse(double x, double y, double cx, double cy, double a, double b) {
  return sq((x - cx) / a) + sq((y - cy) / b) <= 1.0;
}

double displacement(const PhantomConfig& cfg, int k) {
  return cfg.motion_amplitude_mm / 2.0 *
         (1.0 - std::cos(2.0 * std::numbers::pi * k / cfg.n_phases));
}

// Cross-section scale of the unit ellipsoid at normalised height u.
double section(double u) { return u * u < 1.0 ? std::sqrt(1.0 - u * u) : 0.0; }

std::vector<Contour> ellipse_contours(const PhantomConfig& cfg,
                                      double amplitude) {
  const auto& c = cfg.tumor_center_mm;
  const auto& r = cfg.tumor_semi_axes_mm;
  std::vector<Contour> out;
  for (int z = 0; z < cfg.depth; ++z) {
    const double u = z * cfg.spacing.z - c[2];
    const double s = section((u - std::clamp(u, 0.0, amplitude)) / r[2]);
    if (s <= 0.0) continue;
    Contour contour;
    contour.slice = z;
    for (int j = 0; j < cfg.contour_vertices; ++j) {
      const double t = 2.0 * std::numbers::pi * j / cfg.contour_vertices;
      contour.points.push_back(
          {c[0] + r[0] * s * std::cos(t), c[1] + r[1] * s * std::sin(t)});
    }
    contour.points.push_back(contour.points.front());
    out.push_back(std::move(contour));
  }
  return out;
}

void gaussian_blur(Volume& v, double fwhm_mm) {
  if (fwhm_mm <= 0.0) return;
  const double sigma_mm = fwhm_mm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  const Spacing s = v.spacing();
  const int dims[3] = {v.width(), v.height(), v.depth()};
  const double steps[3] = {s.x, s.y, s.z};
  for (int axis = 0; axis < 3; ++axis) {
    const double sigma = sigma_mm / steps[axis];
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    if (radius == 0) continue;
    std::vector<double> k(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i)
      total += k[i + radius] = std::exp(-0.5 * sq(i / sigma));
    for (double& w : k) w /= total;
    const int n = dims[axis];
    std::vector<double> line(n);
    auto at = [&](int a, int b, int i) -> double& {
      if (axis == 0) return v.at(b, a, i);
      if (axis == 1) return v.at(b, i, a);
      return v.at(i, b, a);
    };
    const int na = axis == 0 ? v.height() : v.width();
    const int nb = axis == 2 ? v.height() : v.depth();
    for (int b = 0; b < nb; ++b)
      for (int a = 0; a < na; ++a) {
        for (int i = 0; i < n; ++i) line[i] = at(a, b, i);
        for (int i = 0; i < n; ++i) {
          double acc = 0.0;
          for (int j = -radius; j <= radius; ++j)
            acc += k[j + radius] * line[std::clamp(i + j, 0, n - 1)];
          at(a, b, i) = acc;
        }
      }
  }
}

double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

std::array<double, 3> PhantomConfig::extent_mm() const {
  return {(width - 1) * spacing.x, (height - 1) * spacing.y,
          (depth - 1) * spacing.z};
}

void PhantomConfig::validate() const {
  if (depth < 1 || height < 1 || width < 1)
    throw ConfigError("phantom grid dimensions must be positive");
  if (!spacing.valid()) throw ConfigError("phantom spacing must be positive");
  if (!(motion_amplitude_mm >= 0.0))
    throw ConfigError("motion_amplitude_mm must be >= 0");
  if (n_phases < 1) throw ConfigError("n_phases must be >= 1");
  if (!(tumor_suv_peak > background_suv))
    throw ConfigError("tumor_suv_peak must exceed background_suv");
  for (double r : tumor_semi_axes_mm)
    if (!(r > 0.0)) throw ConfigError("tumour semi-axes must be positive");
  if (contour_vertices < 3) throw ConfigError("contour_vertices must be >= 3");
  if (ct_noise_sigma < 0.0 || pet_noise_sigma < 0.0 || pet_blur_fwhm_mm < 0.0)
    throw ConfigError("noise and blur parameters must be non-negative");
  const auto e = extent_mm();
  const auto& c = tumor_center_mm;
  const auto& r = tumor_semi_axes_mm;
  const double lo[3] = {c[0] - r[0], c[1] - r[1], c[2] - r[2]};
  const double hi[3] = {c[0] + r[0], c[1] + r[1],
                        c[2] + r[2] + motion_amplitude_mm};
  for (int i = 0; i < 3; ++i)
    if (lo[i] < 0.0 || hi[i] > e[i])
      throw ConfigError("tumour (including its motion envelope) extends outside "
                        "the phantom grid");
}

Organ default_heart(const PhantomConfig& cfg, double suv) {
  const Anatomy a = anatomy(cfg);
  const auto e = cfg.extent_mm();
  return Organ{"heart",
               {a.cx + 0.04 * e[0], a.cy + 0.17 * e[1], 0.3 * e[2]},
               {0.14 * e[0], 0.12 * e[1], 0.22 * e[2]},
               suv,
               45.0};
}

PhantomStudy generate_phantom(const PhantomConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Anatomy an = anatomy(cfg);
  const Spacing sp = cfg.spacing;
  Volume ct(cfg.depth, cfg.height, cfg.width, sp);
  Volume pet(cfg.depth, cfg.height, cfg.width, sp);
  const auto& tc = cfg.tumor_center_mm;
  const auto& tr = cfg.tumor_semi_axes_mm;

  std::vector<double> disp(cfg.n_phases);
  for (int k = 0; k < cfg.n_phases; ++k) disp[k] = displacement(cfg, k);

  for (int z = 0; z < cfg.depth; ++z) {
    const double pz = z * sp.z;
    for (int y = 0; y < cfg.height; ++y) {
      const double py = y * sp.y;
      for (int x = 0; x < cfg.width; ++x) {
        const double px = x * sp.x;
        double hu = cfg.hu_air, suv = 0.0;
        if (in_ellipse(px, py, an.cx, an.cy, an.body_a, an.body_b)) {
          hu = cfg.hu_body;
          suv = cfg.background_suv;
          for (double side : {-1.0, 1.0})
            if (in_ellipse(px, py, an.cx + side * an.lung_dx, an.cy + an.lung_dy,
                           an.lung_a, an.lung_b)) {
              hu = cfg.hu_lung;
              suv = cfg.lung_suv;
            }
        }
        for (const Organ& o : cfg.confounders) {
          const double rho = sq((px - o.center_mm[0]) / o.semi_axes_mm[0]) +
                             sq((py - o.center_mm[1]) / o.semi_axes_mm[1]) +
                             sq((pz - o.center_mm[2]) / o.semi_axes_mm[2]);
          if (rho <= 1.0) {
            hu = o.hu;
            suv = o.suv;
          }
        }
        const double rho_xy =
            sq((px - tc[0]) / tr[0]) + sq((py - tc[1]) / tr[1]);
        if (rho_xy + sq((pz - tc[2]) / tr[2]) <= 1.0) hu = cfg.hu_tumor;
        double uptake = 0.0;
        for (double d : disp) {
          const double rho = rho_xy + sq((pz - tc[2] - d) / tr[2]);
          if (rho <= 1.0)
            uptake += (cfg.tumor_suv_peak - cfg.background_suv) *
                      (1.0 - 0.5 * rho);
        }
        ct.at(z, y, x) = hu;
        pet.at(z, y, x) = suv + uptake / cfg.n_phases;
      }
    }
  }
  gaussian_blur(pet, cfg.pet_blur_fwhm_mm);

  Rng rng(derive_seed(seed, 0x9e7));
  for (double& v : ct.values()) v = to_float(v + rng.normal(0.0, cfg.ct_noise_sigma));
  for (double& v : pet.values())
    v = to_float(std::max(0.0, v + rng.normal(0.0, cfg.pet_noise_sigma * v)));

  PhantomStudy out;
  out.config = cfg;
  out.seed = seed;
  out.study.patient_id = "phantom";
  out.study.scanner = cfg.scanner;
  out.study.ct = std::move(ct);
  out.study.pet = std::move(pet);
  out.study.rois.push_back(
      make_roi("GTV", ellipse_contours(cfg, 0.0), out.study.pet));
  out.study.rois.push_back(make_roi(
      "IGTV", ellipse_contours(cfg, cfg.motion_amplitude_mm), out.study.pet));
  out.gtv = out.study.rois[0].mask;
  out.igtv = out.study.rois[1].mask;
  return out;
}

void CohortDistribution::validate() const {
  if (!(semi_axis_min_mm > 0.0 && semi_axis_min_mm <= semi_axis_max_mm))
    throw ConfigError("cohort semi-axis range must satisfy 0 < min <= max");
  if (!(amplitude_min_mm >= 0.0 && amplitude_min_mm <= amplitude_max_mm))
    throw ConfigError("cohort amplitude range must satisfy 0 <= min <= max");
  if (!(suv_peak_min > base.background_suv && suv_peak_min <= suv_peak_max))
    throw ConfigError("cohort SUV peak range must exceed the background");
  if (!(heart_suv_min >= 0.0 && heart_suv_min <= heart_suv_max))
    throw ConfigError("cohort heart SUV range must satisfy 0 <= min <= max");
  if (scanners.empty()) throw ConfigError("cohort needs at least one scanner");
  if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
}

PhantomStudy phantom_patient(int index, const CohortDistribution& dist,
                             std::uint64_t seed) {
  dist.validate();
  const Anatomy an = anatomy(dist.base);
  const auto e = dist.base.extent_mm();
  for (int attempt = 0; attempt < dist.max_attempts; ++attempt) {
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(index),
                                        static_cast<std::uint64_t>(attempt));
    Rng rng(s);
    PhantomConfig cfg = dist.base;
    for (double& r : cfg.tumor_semi_axes_mm)
      r = rng.uniform(dist.semi_axis_min_mm, dist.semi_axis_max_mm);
    cfg.motion_amplitude_mm =
        rng.uniform(dist.amplitude_min_mm, dist.amplitude_max_mm);
    cfg.tumor_suv_peak = rng.uniform(dist.suv_peak_min, dist.suv_peak_max);
    const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
    cfg.tumor_center_mm[0] =
        an.cx + side * an.lung_dx + rng.uniform(-0.4, 0.4) * an.lung_a;
    cfg.tumor_center_mm[1] =
        an.cy + an.lung_dy + rng.uniform(-0.5, 0.5) * an.lung_b;
    const auto& r = cfg.tumor_semi_axes_mm;
    const double zlo = r[2] + cfg.spacing.z;
    const double zhi = e[2] - r[2] - cfg.motion_amplitude_mm - cfg.spacing.z;
    if (zlo > zhi) continue;
    cfg.tumor_center_mm[2] = rng.uniform(zlo, zhi);
    cfg.confounders = dist.base.confounders;
    cfg.confounders.push_back(default_heart(
        cfg, rng.uniform(dist.heart_suv_min, dist.heart_suv_max)));
    cfg.scanner = dist.scanners[rng.below(dist.scanners.size())];
    try {
      cfg.validate();
    } catch (const ConfigError&) {
      continue;
    }
    PhantomStudy p = generate_phantom(cfg, s);
    if (!qc_filter(p.study.roi("GTV")).accepted ||
        !qc_filter(p.study.roi("IGTV")).accepted)
      continue;
    char id[16];
    std::snprintf(id, sizeof id, "P%03d", index);
    p.study.patient_id = id;
    return p;
  }
  throw ConfigError("cohort distribution produced no QC-passing phantom for "
                    "patient " + std::to_string(index) + " within " +
                    std::to_string(dist.max_attempts) + " attempts");
}

std::vector<PhantomStudy> phantom_cohort(int n_patients,
                                         const CohortDistribution& dist,
                                         std::uint64_t seed) {
  if (n_patients < 1) throw ConfigError("phantom cohort needs >= 1 patient");
  std::vector<PhantomStudy> out;
  out.reserve(n_patients);
  for (int i = 0; i < n_patients; ++i)
    out.push_back(phantom_patient(i, dist, seed));
  return out;
}

}  // namespace simseg
