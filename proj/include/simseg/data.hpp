#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "simseg/tensor.hpp"
#include "simseg/volume.hpp"

namespace simseg {

inline constexpr double kQcMinVolumeCc = 3.0;
inline constexpr double kQcMinSuvMax = 3.0;
inline constexpr int kExportSize = 512;

struct HuWindow {
  double lo = -1350.0;
  double hi = 150.0;

  static HuWindow finetune() { return {-1350.0, 150.0}; }
  static HuWindow pretrain() { return {-1200.0, 200.0}; }
};

// Planar polygon on one slice, vertices in physical millimetres (x along
// columns, y along rows, pixel (r, c) centred at (c * sx, r * sy)). Closed
// means the last vertex repeats the first.
struct Contour {
  int slice = 0;
  std::vector<std::array<double, 2>> points;

  bool closed() const;
};

struct ROI {
  std::string name;
  std::vector<Contour> contours;
  BinaryMask mask;
  double volume_cc = 0.0;
  double suv_max = 0.0;
  int n_slices = 0;

  // Inclusive slice range holding foreground; {-1, -1} when empty.
  std::pair<int, int> slice_range() const;
};

struct PatientStudy {
  std::string patient_id;
  std::string scanner;
  Volume ct;   // HU
  Volume pet;  // SUV, on the CT grid
  std::vector<ROI> rois;

  const ROI& roi(const std::string& name) const;
};

// --- preprocessing ---------------------------------------------------------

// clamp(hu, lo, hi) mapped linearly onto [0, 255].
double window_ct(double hu, double lo, double hi);
Volume window_ct(const Volume& hu, const HuWindow& w);

// clamp(suv / suv_max, 0, 1) * 255.
double normalize_pet(double suv, double suv_max);
Volume normalize_pet(const Volume& suv, const ROI& roi);

struct QcResult {
  bool accepted = false;
  std::string reason;  // "", "volume", "suv" or "volume,suv"
};
QcResult qc_filter(double volume_cc, double suv_max);
QcResult qc_filter(const ROI& roi);

// Even-odd point-in-polygon test on pixel centres; all contours on a slice
// combine by parity so holes are supported.
BinaryMask rasterize_contours(const std::vector<Contour>& contours, int depth,
                              int height, int width, Spacing spacing);

double compute_volume(const BinaryMask& mask, Spacing spacing);
double compute_volume(const BinaryMask& mask);

// Rasterises the contours on the study grid and fills the derived fields.
ROI make_roi(const std::string& name, std::vector<Contour> contours,
             const Volume& pet);

// Resamples onto a grid with the given dims and spacing; both grids share
// their origin (voxel 0 centred at the physical origin). Samples beyond the
// source extent are clamped to the border.
Volume resample_trilinear(const Volume& src, int depth, int height, int width,
                          Spacing spacing);
BinaryMask resample_nearest(const BinaryMask& src, int depth, int height,
                            int width, Spacing spacing);

// --- 2.5D samples ----------------------------------------------------------

// One ROI of one study, windowed and normalised to integer levels in [0, 255]
// (the values a PNG round trip preserves).
struct PreparedRoi {
  std::string patient_id;
  std::string roi_name;
  std::string scanner;
  Volume ct;   // [0, 255]
  Volume pet;  // [0, 255]
  BinaryMask mask;
  double suv_max = 0.0;
  double volume_cc = 0.0;
  int n_slices = 0;
};

PreparedRoi prepare_roi(const PatientStudy& study, const std::string& roi_name,
                        const HuWindow& window);

struct SliceSample {
  Tensor input;   // (1, 2*depth, H, W): CT slices then PET slices, [0, 255]
  Tensor target;  // (1, 1, H, W), {0, 1}
  std::string patient_id;
  int slice_index = 0;
  Spacing spacing{};
};

// Channels t-depth/2 .. t+depth/2 per modality; missing neighbours at the
// volume boundary replicate the edge slice.
SliceSample assemble_stack(const PreparedRoi& roi, int t, int depth = 3);
SliceSample assemble_stack(const PatientStudy& study, const ROI& roi, int t,
                           int depth = 3,
                           const HuWindow& window = HuWindow::finetune());

// Samples for every slice that holds ROI foreground.
std::vector<SliceSample> roi_samples(const PreparedRoi& roi, int depth);

// --- splits and statistics -------------------------------------------------

struct SplitSpec {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
};

// Seeded shuffle, then floor(n * r) ids for validation and test (at least one
// each) with the remainder going to training.
SplitSpec patient_split(const std::vector<std::string>& ids,
                        std::array<double, 3> ratios, std::uint64_t seed);
SplitSpec patient_split(const std::vector<std::string>& ids,
                        std::uint64_t seed);

struct Distribution {
  double mean = 0.0;
  double sd = 0.0;  // population
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};
Distribution describe(std::vector<double> values);

struct DatasetStats {
  std::size_t n_patients = 0;
  std::size_t n_rois = 0;
  Distribution slices_per_roi;
  Distribution volume_cc;
  Distribution suv_max;
  std::map<std::string, std::size_t> scanners;
};

// Statistics over the named ROI of every study (all ROIs when empty).
DatasetStats dataset_stats(const std::vector<PatientStudy>& studies,
                           const std::string& roi_name = "");

// --- on-disk layouts -------------------------------------------------------
//
// Cohort:    <root>/cohort.json, <root>/<pid>/study.json, ct.f32, pet.f32,
//            roi_<name>.json
// Processed: <root>/<pid>/<roi>/{ct,pet,mask}_<ttt>.png, meta.txt

void write_study(const PatientStudy& study, const std::filesystem::path& dir,
                 const std::map<std::string, double>& extra = {});
PatientStudy read_study(const std::filesystem::path& dir);
void write_cohort(const std::vector<PatientStudy>& studies,
                  const std::filesystem::path& root);
std::vector<std::string> read_cohort_index(const std::filesystem::path& root);
std::vector<PatientStudy> read_cohort(const std::filesystem::path& root);

struct ExportInfo {
  std::string resize_method;  // "none", "nearest_integer" or "bilinear"
  int native_height = 0;
  int native_width = 0;
};

// Writes every slice of the prepared ROI as 512x512 8-bit PNGs plus the
// key-value sidecar. Integer upscaling is exactly invertible on import.
ExportInfo export_png(const PreparedRoi& roi, const std::filesystem::path& dir,
                      Spacing spacing);
PreparedRoi import_png(const std::filesystem::path& dir, Spacing* spacing);
// Mask slices alone, in the export_png layout, with a sidecar holding the grid
// (depth, native_height, native_width, spacing_mm, resize_method).
void export_mask_png(const BinaryMask& mask, const std::filesystem::path& dir);
BinaryMask import_mask_png(const std::filesystem::path& dir);

// Sidecar keys: patient_id, roi, scanner, spacing_mm, suv_max, volume_cc,
// n_slices, depth, native_height, native_width, resize_method.
std::map<std::string, std::string> read_sidecar(
    const std::filesystem::path& path);

}  // namespace simseg
