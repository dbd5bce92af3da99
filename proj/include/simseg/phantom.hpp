#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "simseg/data.hpp"

// Synthetic thorax with a moving lung tumour. Positions are physical
// millimetres with voxel (z, y, x) centred at (x*sx, y*sy, z*sz). Motion is a
// superior-inferior sinusoid, d_k = A/2 (1 - cos(2 pi k / n)), k = 0 being the
// reference phase.
namespace simseg {

struct Organ {
  std::string name;
  std::array<double, 3> center_mm{};      // x, y, z
  std::array<double, 3> semi_axes_mm{};  // x, y, z
  double suv = 0.0;
  double hu = 0.0;
};

struct PhantomConfig {
  int depth = 32;
  int height = 64;
  int width = 64;
  Spacing spacing{2.5, 2.5, 3.0};

  std::array<double, 3> tumor_center_mm{55.0, 70.0, 40.0};
  std::array<double, 3> tumor_semi_axes_mm{12.0, 12.0, 12.0};
  double motion_amplitude_mm = 8.0;
  int n_phases = 8;
  double tumor_suv_peak = 8.0;
  double background_suv = 0.8;
  double lung_suv = 0.4;
  std::vector<Organ> confounders;  // drawn over the background

  double hu_air = -1000.0;
  double hu_body = 40.0;
  double hu_lung = -850.0;
  double hu_tumor = 30.0;
  double ct_noise_sigma = 10.0;    // HU
  double pet_noise_sigma = 0.05;   // relative to the local uptake
  double pet_blur_fwhm_mm = 6.0;   // scanner resolution
  int contour_vertices = 128;
  std::string scanner = "phantom";

  void validate() const;
  std::array<double, 3> extent_mm() const;
};

// A heart-like confounder for the default grid.
Organ default_heart(const PhantomConfig& cfg, double suv);

struct PhantomStudy {
  PatientStudy study;  // ROIs "GTV" and "IGTV"
  BinaryMask gtv;
  BinaryMask igtv;
  PhantomConfig config;
  std::uint64_t seed = 0;
};

// GTV: the ellipsoid at the reference phase. IGTV: its swept envelope over
// displacements [0, A], so each slice's outline is the reference ellipse
// scaled by the largest cross-section any displacement puts there. Masks are
// rasterised from the per-slice polygons written with the study. PET is the
// phase average of the tumour uptake over the anatomy, Gaussian-blurred and
// noised; CT is the reference phase with additive noise.
PhantomStudy generate_phantom(const PhantomConfig& cfg, std::uint64_t seed);

struct CohortDistribution {
  PhantomConfig base;
  double semi_axis_min_mm = 10.0;
  double semi_axis_max_mm = 16.0;
  double amplitude_min_mm = 0.0;
  double amplitude_max_mm = 12.0;
  double suv_peak_min = 4.0;
  double suv_peak_max = 15.0;
  double heart_suv_min = 2.0;
  double heart_suv_max = 6.0;
  std::vector<std::string> scanners{"phantom-a", "phantom-b"};
  int max_attempts = 50;

  void validate() const;
};

// Patient i is drawn from derive_seed(seed, i); draws failing QC on either ROI
// are redrawn from the next sub-stream. Ids are "P000", "P001", ...
std::vector<PhantomStudy> phantom_cohort(int n_patients,
                                         const CohortDistribution& dist,
                                         std::uint64_t seed);
PhantomStudy phantom_patient(int index, const CohortDistribution& dist,
                             std::uint64_t seed);

}  // namespace simseg
