#include "simseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "simseg/png_io.hpp"
#include "simseg/rng.hpp"

namespace simseg {

namespace fs = std::filesystem;
using nlohmann::json;

bool Contour::closed() const {
  return points.size() >= 4 && points.front() == points.back();
}

std::pair<int, int> ROI::slice_range() const {
  int lo = -1, hi = -1;
  for (int z = 0; z < mask.depth(); ++z) {
    const std::uint8_t* s = mask.slice(z);
    if (std::any_of(s, s + mask.plane_size(), [](auto v) { return v != 0; })) {
      if (lo < 0) lo = z;
      hi = z;
    }
  }
  return {lo, hi};
}

const ROI& PatientStudy::roi(const std::string& name) const {
  for (const auto& r : rois)
    if (r.name == name) return r;
  throw DataError("patient " + patient_id + " has no ROI named '" + name + "'");
}

double window_ct(double hu, double lo, double hi) {
  if (!(lo < hi))
    throw ConfigError("HU window needs lo < hi, got [" + std::to_string(lo) +
                      ", " + std::to_string(hi) + "]");
  const double c = std::clamp(hu, lo, hi);
  return (c - lo) / (hi - lo) * 255.0;
}

Volume window_ct(const Volume& hu, const HuWindow& w) {
  Volume out = hu;
  for (double& v : out.values()) v = window_ct(v, w.lo, w.hi);
  return out;
}

double normalize_pet(double suv, double suv_max) {
  if (!(suv_max > 0.0))
    throw DataError("SUV normalisation needs suv_max > 0, got " +
                    std::to_string(suv_max));
  return std::clamp(suv / suv_max, 0.0, 1.0) * 255.0;
}

Volume normalize_pet(const Volume& suv, const ROI& roi) {
  Volume out = suv;
  for (double& v : out.values()) v = normalize_pet(v, roi.suv_max);
  return out;
}

QcResult qc_filter(double volume_cc, double suv_max) {
  QcResult r;
  const bool vol_ok = volume_cc >= kQcMinVolumeCc;
  const bool suv_ok = suv_max >= kQcMinSuvMax;
  r.accepted = vol_ok && suv_ok;
  if (!vol_ok) r.reason = "volume";
  if (!suv_ok) r.reason += r.reason.empty() ? "suv" : ",suv";
  return r;
}

QcResult qc_filter(const ROI& roi) { return qc_filter(roi.volume_cc, roi.suv_max); }

BinaryMask rasterize_contours(const std::vector<Contour>& contours, int depth,
                              int height, int width, Spacing spacing) {
  if (!spacing.valid()) throw DataError("voxel spacing must be positive");
  BinaryMask mask(depth, height, width, spacing);
  for (const Contour& c : contours) {
    if (!c.closed())
      throw DataError("contour on slice " + std::to_string(c.slice) +
                      " is not a closed polygon");
    if (c.slice < 0 || c.slice >= depth) continue;
    const auto& p = c.points;
    for (int r = 0; r < height; ++r) {
      const double py = r * spacing.y;
      for (int col = 0; col < width; ++col) {
        const double px = col * spacing.x;
        bool inside = false;
        for (std::size_t i = 0, j = p.size() - 1; i < p.size(); j = i++) {
          const double xi = p[i][0], yi = p[i][1];
          const double xj = p[j][0], yj = p[j][1];
          if ((yi > py) != (yj > py) &&
              px < (xj - xi) * (py - yi) / (yj - yi) + xi)
            inside = !inside;
        }
        if (inside) mask.at(c.slice, r, col) ^= 1;
      }
    }
  }
  return mask;
}

double compute_volume(const BinaryMask& mask, Spacing spacing) {
  if (!spacing.valid()) throw DataError("voxel spacing must be positive");
  return static_cast<double>(count_foreground(mask)) * spacing.voxel_volume() /
         1000.0;
}

double compute_volume(const BinaryMask& mask) {
  return compute_volume(mask, mask.spacing());
}

ROI make_roi(const std::string& name, std::vector<Contour> contours,
             const Volume& pet) {
  ROI roi;
  roi.name = name;
  roi.contours = std::move(contours);
  roi.mask = rasterize_contours(roi.contours, pet.depth(), pet.height(),
                                pet.width(), pet.spacing());
  roi.volume_cc = compute_volume(roi.mask);
  for (std::size_t i = 0; i < roi.mask.size(); ++i)
    if (roi.mask[i]) roi.suv_max = std::max(roi.suv_max, pet[i]);
  for (int z = 0; z < roi.mask.depth(); ++z) {
    const std::uint8_t* s = roi.mask.slice(z);
    roi.n_slices +=
        std::any_of(s, s + roi.mask.plane_size(), [](auto v) { return v != 0; });
  }
  return roi;
}

namespace {

double source_index(int i, double dst_step, double src_step, int n) {
  return std::clamp(i * dst_step / src_step, 0.0, static_cast<double>(n - 1));
}

void check_target(int depth, int height, int width, Spacing spacing) {
  if (depth < 1 || height < 1 || width < 1 || !spacing.valid())
    throw DataError("invalid resampling target grid");
}

}  // namespace

Volume resample_trilinear(const Volume& src, int depth, int height, int width,
                          Spacing spacing) {
  check_target(depth, height, width, spacing);
  if (src.size() == 0) throw DataError("cannot resample an empty volume");
  const Spacing& s = src.spacing();
  Volume out(depth, height, width, spacing);
  for (int z = 0; z < depth; ++z) {
    const double fz = source_index(z, spacing.z, s.z, src.depth());
    const int z0 = static_cast<int>(fz);
    const int z1 = std::min(z0 + 1, src.depth() - 1);
    const double wz = fz - z0;
    for (int y = 0; y < height; ++y) {
      const double fy = source_index(y, spacing.y, s.y, src.height());
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, src.height() - 1);
      const double wy = fy - y0;
      for (int x = 0; x < width; ++x) {
        const double fx = source_index(x, spacing.x, s.x, src.width());
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, src.width() - 1);
        const double wx = fx - x0;
        auto lerp_x = [&](int zz, int yy) {
          return (1 - wx) * src.at(zz, yy, x0) + wx * src.at(zz, yy, x1);
        };
        const double a = (1 - wy) * lerp_x(z0, y0) + wy * lerp_x(z0, y1);
        const double b = (1 - wy) * lerp_x(z1, y0) + wy * lerp_x(z1, y1);
        out.at(z, y, x) = (1 - wz) * a + wz * b;
      }
    }
  }
  return out;
}

BinaryMask resample_nearest(const BinaryMask& src, int depth, int height,
                            int width, Spacing spacing) {
  check_target(depth, height, width, spacing);
  if (src.size() == 0) throw DataError("cannot resample an empty mask");
  const Spacing& s = src.spacing();
  BinaryMask out(depth, height, width, spacing);
  for (int z = 0; z < depth; ++z) {
    const int sz = static_cast<int>(
        std::lround(source_index(z, spacing.z, s.z, src.depth())));
    for (int y = 0; y < height; ++y) {
      const int sy = static_cast<int>(
          std::lround(source_index(y, spacing.y, s.y, src.height())));
      for (int x = 0; x < width; ++x) {
        const int sx = static_cast<int>(
            std::lround(source_index(x, spacing.x, s.x, src.width())));
        out.at(z, y, x) = src.at(sz, sy, sx);
      }
    }
  }
  return out;
}

PreparedRoi prepare_roi(const PatientStudy& study, const std::string& roi_name,
                        const HuWindow& window) {
  const ROI& roi = study.roi(roi_name);
  if (!study.ct.same_dims(study.pet) || !roi.mask.same_dims(study.ct))
    throw DataError("patient " + study.patient_id +
                    ": CT, PET and ROI grids differ");
  PreparedRoi p;
  p.patient_id = study.patient_id;
  p.roi_name = roi_name;
  p.scanner = study.scanner;
  p.ct = window_ct(study.ct, window);
  p.pet = normalize_pet(study.pet, roi);
  for (double& v : p.ct.values()) v = std::round(v);
  for (double& v : p.pet.values()) v = std::round(v);
  p.mask = roi.mask;
  p.suv_max = roi.suv_max;
  p.volume_cc = roi.volume_cc;
  p.n_slices = roi.n_slices;
  return p;
}

SliceSample assemble_stack(const PreparedRoi& roi, int t, int depth) {
  const int nz = roi.ct.depth();
  if (t < 0 || t >= nz)
    throw InputError("slice " + std::to_string(t) + " outside volume of " +
                     std::to_string(nz) + " slices");
  if (depth < 1 || depth % 2 == 0)
    throw ConfigError("stack depth must be a positive odd integer");
  const int h = roi.ct.height(), w = roi.ct.width();
  SliceSample s;
  s.patient_id = roi.patient_id;
  s.slice_index = t;
  s.spacing = roi.ct.spacing();
  s.input = Tensor({1, 2 * depth, h, w});
  s.target = Tensor({1, 1, h, w});
  const std::size_t plane = roi.ct.plane_size();
  for (int k = 0; k < depth; ++k) {
    const int z = std::clamp(t - depth / 2 + k, 0, nz - 1);
    std::copy_n(roi.ct.slice(z), plane, s.input.plane(0, k));
    std::copy_n(roi.pet.slice(z), plane, s.input.plane(0, depth + k));
  }
  const std::uint8_t* m = roi.mask.slice(t);
  double* dst = s.target.plane(0, 0);
  for (std::size_t i = 0; i < plane; ++i) dst[i] = m[i] ? 1.0 : 0.0;
  return s;
}

SliceSample assemble_stack(const PatientStudy& study, const ROI& roi, int t,
                           int depth, const HuWindow& window) {
  return assemble_stack(prepare_roi(study, roi.name, window), t, depth);
}

std::vector<SliceSample> roi_samples(const PreparedRoi& roi, int depth) {
  std::vector<SliceSample> out;
  for (int z = 0; z < roi.mask.depth(); ++z) {
    const std::uint8_t* s = roi.mask.slice(z);
    if (std::any_of(s, s + roi.mask.plane_size(), [](auto v) { return v != 0; }))
      out.push_back(assemble_stack(roi, z, depth));
  }
  return out;
}

SplitSpec patient_split(const std::vector<std::string>& ids,
                        std::array<double, 3> ratios, std::uint64_t seed) {
  if (ids.size() < 3)
    throw InputError("patient split needs at least 3 patients, got " +
                     std::to_string(ids.size()));
  for (double r : ratios)
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");
  std::vector<std::string> order = ids;
  std::sort(order.begin(), order.end());
  if (std::adjacent_find(order.begin(), order.end()) != order.end())
    throw InputError("duplicate patient id in split input");
  Rng rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng.below(i + 1)]);

  const double n = static_cast<double>(order.size());
  auto part = [&](double r) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(n * r + 1e-9));
  };
  const std::size_t n_val = part(ratios[1]);
  const std::size_t n_test = part(ratios[2]);
  if (n_val + n_test >= order.size())
    throw InputError("too few patients for a non-empty training split");
  SplitSpec s;
  s.seed = seed;
  const std::size_t n_train = order.size() - n_val - n_test;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  return s;
}

SplitSpec patient_split(const std::vector<std::string>& ids,
                        std::uint64_t seed) {
  return patient_split(ids, {0.70, 0.15, 0.15}, seed);
}

Distribution describe(std::vector<double> values) {
  if (values.empty()) throw InputError("cannot describe an empty sample");
  Distribution d;
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  d.min = values.front();
  d.max = values.back();
  d.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - d.mean) * (v - d.mean);
  d.sd = std::sqrt(ss / n);
  const std::size_t mid = values.size() / 2;
  d.median = values.size() % 2 ? values[mid]
                               : 0.5 * (values[mid - 1] + values[mid]);
  return d;
}

DatasetStats dataset_stats(const std::vector<PatientStudy>& studies,
                           const std::string& roi_name) {
  if (studies.empty()) throw InputError("dataset statistics need studies");
  DatasetStats st;
  std::vector<double> slices, volumes, suvs;
  for (const auto& s : studies) {
    ++st.scanners[s.scanner];
    for (const auto& r : s.rois) {
      if (!roi_name.empty() && r.name != roi_name) continue;
      slices.push_back(r.n_slices);
      volumes.push_back(r.volume_cc);
      suvs.push_back(r.suv_max);
    }
  }
  if (slices.empty()) throw InputError("no ROI named '" + roi_name + "'");
  st.n_patients = studies.size();
  st.n_rois = slices.size();
  st.slices_per_roi = describe(slices);
  st.volume_cc = describe(volumes);
  st.suv_max = describe(suvs);
  return st;
}

// --- cohort files -----------------------------------------------------------

namespace {

json grid_json(const Volume& v) {
  const Spacing& s = v.spacing();
  return {{"dims", {v.depth(), v.height(), v.width()}},
          {"spacing_mm", {s.x, s.y, s.z}}};
}

void write_f32(const fs::path& path, const Volume& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  std::vector<float> buf(v.values().begin(), v.values().end());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw DataError("failed writing " + path.string());
}

Volume read_f32(const fs::path& path, const json& grid) {
  try {
    const auto dims = grid.at("dims").get<std::array<int, 3>>();
    const auto sp = grid.at("spacing_mm").get<std::array<double, 3>>();
    Volume v(dims[0], dims[1], dims[2], Spacing{sp[0], sp[1], sp[2]});
    if (!v.spacing().valid()) throw DataError("non-positive spacing");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<float> buf(v.size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
      throw DataError(path.string() + " is shorter than its declared grid");
    std::copy(buf.begin(), buf.end(), v.values().begin());
    return v;
  } catch (const json::exception& e) {
    throw DataError("malformed grid record for " + path.string() + ": " +
                    e.what());
  }
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("cannot parse " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

}  // namespace

void write_study(const PatientStudy& study, const fs::path& dir,
                 const std::map<std::string, double>& extra) {
  fs::create_directories(dir);
  json j;
  j["patient_id"] = study.patient_id;
  j["scanner"] = study.scanner;
  j["ct"] = grid_json(study.ct);
  j["pet"] = grid_json(study.pet);
  j["rois"] = json::array();
  for (const auto& r : study.rois) {
    j["rois"].push_back(r.name);
    json c = json::array();
    for (const auto& contour : r.contours)
      c.push_back({{"slice", contour.slice}, {"points", contour.points}});
    write_json(dir / ("roi_" + r.name + ".json"),
               {{"name", r.name}, {"contours", c}});
  }
  if (!extra.empty()) j["metadata"] = extra;
  write_json(dir / "study.json", j);
  write_f32(dir / "ct.f32", study.ct);
  write_f32(dir / "pet.f32", study.pet);
}

PatientStudy read_study(const fs::path& dir) {
  const json j = read_json(dir / "study.json");
  PatientStudy s;
  try {
    s.patient_id = j.at("patient_id").get<std::string>();
    s.scanner = j.value("scanner", "");
    s.ct = read_f32(dir / "ct.f32", j.at("ct"));
    s.pet = read_f32(dir / "pet.f32", j.at("pet"));
    if (!s.pet.same_dims(s.ct) || !(s.pet.spacing() == s.ct.spacing()))
      s.pet = resample_trilinear(s.pet, s.ct.depth(), s.ct.height(),
                                 s.ct.width(), s.ct.spacing());
    for (const auto& name : j.at("rois")) {
      const std::string n = name.get<std::string>();
      const json r = read_json(dir / ("roi_" + n + ".json"));
      std::vector<Contour> contours;
      for (const auto& c : r.at("contours")) {
        Contour contour;
        contour.slice = c.at("slice").get<int>();
        contour.points = c.at("points").get<std::vector<std::array<double, 2>>>();
        contours.push_back(std::move(contour));
      }
      s.rois.push_back(make_roi(n, std::move(contours), s.pet));
    }
  } catch (const json::exception& e) {
    throw DataError("malformed study in " + dir.string() + ": " + e.what());
  }
  return s;
}

void write_cohort(const std::vector<PatientStudy>& studies, const fs::path& root) {
  fs::create_directories(root);
  json ids = json::array();
  for (const auto& s : studies) {
    write_study(s, root / s.patient_id);
    ids.push_back(s.patient_id);
  }
  write_json(root / "cohort.json", {{"format", "simseg-cohort"},
                                    {"version", 1},
                                    {"patients", ids}});
}

std::vector<std::string> read_cohort_index(const fs::path& root) {
  const json j = read_json(root / "cohort.json");
  try {
    if (j.at("format").get<std::string>() != "simseg-cohort" ||
        j.at("version").get<int>() != 1)
      throw DataError(root.string() + " is not a version 1 cohort");
    return j.at("patients").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError("malformed cohort index in " + root.string() + ": " +
                    e.what());
  }
}

std::vector<PatientStudy> read_cohort(const fs::path& root) {
  std::vector<PatientStudy> out;
  for (const auto& id : read_cohort_index(root))
    out.push_back(read_study(root / id));
  return out;
}

// --- PNG export -------------------------------------------------------------

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
}

// Bilinear sampling of a plane at continuous (y, x), clamped to the border.
double sample_bilinear(const double* src, int h, int w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double wy = y - y0, wx = x - x0;
  return (1 - wy) * ((1 - wx) * src[y0 * w + x0] + wx * src[y0 * w + x1]) +
         wy * ((1 - wx) * src[y1 * w + x0] + wx * src[y1 * w + x1]);
}

std::vector<double> resize_plane(const double* src, int h, int w, int oh,
                                 int ow, const std::string& method) {
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double v;
      if (method == "nearest_integer") {
        v = oh >= h ? src[(y / (oh / h)) * w + x / (ow / w)]
                    : src[(y * (h / oh)) * w + x * (w / ow)];
      } else if (method == "bilinear") {
        const double sy = (y + 0.5) * h / oh - 0.5;
        const double sx = (x + 0.5) * w / ow - 0.5;
        v = sample_bilinear(src, h, w, sy, sx);
      } else {
        v = src[y * w + x];
      }
      out[static_cast<std::size_t>(y) * ow + x] = v;
    }
  return out;
}

std::string slice_name(const char* kind, int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03d.png", kind, t);
  return buf;
}

void write_plane(const fs::path& path, const std::vector<double>& values,
                 int size) {
  GrayImage img{size, size, std::vector<std::uint8_t>(values.size())};
  std::transform(values.begin(), values.end(), img.pixels.begin(), to_byte);
  write_png(path, img);
}

std::string spacing_str(Spacing s) {
  std::ostringstream o;
  o.precision(17);
  o << s.x << "," << s.y << "," << s.z;
  return o.str();
}

std::string export_method(int h, int w) {
  if (h == kExportSize && w == kExportSize) return "none";
  return (kExportSize % h == 0 && kExportSize % w == 0) ? "nearest_integer"
                                                        : "bilinear";
}

void write_mask_plane(const fs::path& path, const std::uint8_t* src, int h,
                      int w, const std::string& method) {
  const int S = kExportSize;
  std::vector<double> m(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = src[i] ? 255.0 : 0.0;
  if (method == "bilinear") {
    // Nearest upsampling for masks keeps them binary.
    std::vector<double> up(static_cast<std::size_t>(S) * S);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x)
        up[static_cast<std::size_t>(y) * S + x] =
            m[static_cast<std::size_t>(y * h / S) * w + x * w / S];
    write_plane(path, up, S);
  } else {
    write_plane(path, resize_plane(m.data(), h, w, S, S, method), S);
  }
}

std::vector<double> load_plane(const fs::path& dir, const char* kind, int t,
                               int h, int w, const std::string& method) {
  const fs::path path = dir / slice_name(kind, t);
  GrayImage img = read_png_gray(path);
  if (img.width != kExportSize || img.height != kExportSize)
    throw DataError(path.string() + " is not " + std::to_string(kExportSize) +
                    "x" + std::to_string(kExportSize));
  std::vector<double> v(img.pixels.begin(), img.pixels.end());
  if (method == "bilinear" ||
      (method == "nearest_integer" &&
       (kExportSize % h != 0 || kExportSize % w != 0))) {
    std::vector<double> down(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        down[static_cast<std::size_t>(y) * w + x] = sample_bilinear(
            v.data(), kExportSize, kExportSize,
            (y + 0.5) * kExportSize / h - 0.5,
            (x + 0.5) * kExportSize / w - 0.5);
    return down;
  }
  return resize_plane(v.data(), kExportSize, kExportSize, h, w, method);
}

std::string mask_method(const std::string& method) {
  return method == "none" ? "none" : "nearest_integer";
}

void store_mask(const std::vector<double>& plane, std::uint8_t* dst) {
  std::transform(plane.begin(), plane.end(), dst,
                 [](double v) { return v >= 128.0 ? 1 : 0; });
}

struct Sidecar {
  std::map<std::string, std::string> kv;
  fs::path dir;

  std::string get(const char* key) const {
    auto it = kv.find(key);
    if (it == kv.end())
      throw DataError("sidecar in " + dir.string() + " lacks '" + key + "'");
    return it->second;
  }
};

}  // namespace

ExportInfo export_png(const PreparedRoi& roi, const fs::path& dir,
                      Spacing spacing) {
  const int h = roi.ct.height(), w = roi.ct.width();
  const ExportInfo info{export_method(h, w), h, w};
  fs::create_directories(dir);
  const int S = kExportSize;
  for (int t = 0; t < roi.ct.depth(); ++t) {
    write_plane(dir / slice_name("ct", t),
                resize_plane(roi.ct.slice(t), h, w, S, S, info.resize_method),
                S);
    write_plane(dir / slice_name("pet", t),
                resize_plane(roi.pet.slice(t), h, w, S, S, info.resize_method),
                S);
    write_mask_plane(dir / slice_name("mask", t), roi.mask.slice(t), h, w,
                     info.resize_method);
  }
  std::ofstream meta(dir / "meta.txt");
  if (!meta) throw DataError("cannot write sidecar in " + dir.string());
  meta.precision(17);
  meta << "patient_id=" << roi.patient_id << "\n"
       << "roi=" << roi.roi_name << "\n"
       << "scanner=" << roi.scanner << "\n"
       << "spacing_mm=" << spacing_str(spacing) << "\n"
       << "suv_max=" << roi.suv_max << "\n"
       << "volume_cc=" << roi.volume_cc << "\n"
       << "n_slices=" << roi.n_slices << "\n"
       << "depth=" << roi.ct.depth() << "\n"
       << "native_height=" << h << "\n"
       << "native_width=" << w << "\n"
       << "resize_method=" << info.resize_method << "\n";
  if (!meta) throw DataError("failed writing sidecar in " + dir.string());
  return info;
}

void export_mask_png(const BinaryMask& mask, const fs::path& dir) {
  const int h = mask.height(), w = mask.width();
  const std::string method = export_method(h, w);
  fs::create_directories(dir);
  for (int t = 0; t < mask.depth(); ++t)
    write_mask_plane(dir / slice_name("mask", t), mask.slice(t), h, w,
                     method);
  std::ofstream meta(dir / "meta.txt");
  if (!meta) throw DataError("cannot write sidecar in " + dir.string());
  meta << "spacing_mm=" << spacing_str(mask.spacing()) << "\n"
       << "depth=" << mask.depth() << "\n"
       << "native_height=" << h << "\n"
       << "native_width=" << w << "\n"
       << "resize_method=" << method << "\n";
  if (!meta) throw DataError("failed writing sidecar in " + dir.string());
}

std::map<std::string, std::string> read_sidecar(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("malformed sidecar line in " + path.string() + ": " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

namespace {

struct GridInfo {
  int depth = 0, height = 0, width = 0;
  Spacing spacing;
  std::string method;
};

GridInfo grid_info(const Sidecar& sc) {
  GridInfo g;
  try {
    g.depth = std::stoi(sc.get("depth"));
    g.height = std::stoi(sc.get("native_height"));
    g.width = std::stoi(sc.get("native_width"));
    std::istringstream s(sc.get("spacing_mm"));
    char comma;
    s >> g.spacing.x >> comma >> g.spacing.y >> comma >> g.spacing.z;
  } catch (const std::logic_error& e) {
    throw DataError("malformed sidecar in " + sc.dir.string() + ": " + e.what());
  }
  if (g.depth < 1 || g.height < 1 || g.width < 1 || !g.spacing.valid())
    throw DataError("malformed sidecar in " + sc.dir.string());
  g.method = sc.get("resize_method");
  return g;
}

}  // namespace

PreparedRoi import_png(const fs::path& dir, Spacing* spacing) {
  const Sidecar sc{read_sidecar(dir / "meta.txt"), dir};
  const GridInfo g = grid_info(sc);
  PreparedRoi p;
  try {
    p.patient_id = sc.get("patient_id");
    p.roi_name = sc.get("roi");
    p.scanner = sc.get("scanner");
    p.suv_max = std::stod(sc.get("suv_max"));
    p.volume_cc = std::stod(sc.get("volume_cc"));
    p.n_slices = std::stoi(sc.get("n_slices"));
  } catch (const std::logic_error& e) {
    throw DataError("malformed sidecar in " + dir.string() + ": " + e.what());
  }
  if (spacing) *spacing = g.spacing;
  const int h = g.height, w = g.width;
  p.ct = Volume(g.depth, h, w, g.spacing);
  p.pet = Volume(g.depth, h, w, g.spacing);
  p.mask = BinaryMask(g.depth, h, w, g.spacing);
  for (int t = 0; t < g.depth; ++t) {
    const auto ct = load_plane(dir, "ct", t, h, w, g.method);
    const auto pet = load_plane(dir, "pet", t, h, w, g.method);
    std::transform(ct.begin(), ct.end(), p.ct.slice(t),
                   [](double v) { return std::round(v); });
    std::transform(pet.begin(), pet.end(), p.pet.slice(t),
                   [](double v) { return std::round(v); });
    store_mask(load_plane(dir, "mask", t, h, w, mask_method(g.method)),
               p.mask.slice(t));
  }
  return p;
}

BinaryMask import_mask_png(const fs::path& dir) {
  const GridInfo g = grid_info({read_sidecar(dir / "meta.txt"), dir});
  BinaryMask m(g.depth, g.height, g.width, g.spacing);
  for (int t = 0; t < g.depth; ++t)
    store_mask(load_plane(dir, "mask", t, g.height, g.width,
                          mask_method(g.method)),
               m.slice(t));
  return m;
}

}  // namespace simseg
