#pragma once

#include <optional>
#include <string>
#include <vector>

#include "simseg/tensor.hpp"
#include "simseg/volume.hpp"

namespace simseg {

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  bool operator==(const Point3&) const = default;
};
using PointSet = std::vector<Point3>;

// Surface distances are reported in millimetres (mask spacing) or in pixel
// units (unit spacing on every axis).
enum class DistanceUnits { mm, pixels };

// Overlap metrics. Both masks empty counts as perfect agreement (1).
double iou(const BinaryMask& p, const BinaryMask& g);
double dice(const BinaryMask& p, const BinaryMask& g);
double pixel_accuracy(const BinaryMask& p, const BinaryMask& g);

// Centres of foreground voxels with a background or out-of-bounds neighbour
// (4-neighbourhood for depth-1 masks, 6-neighbourhood otherwise), at
// index * spacing. Throws InputError on an empty mask.
PointSet extract_surface(const BinaryMask& m,
                         DistanceUnits units = DistanceUnits::mm);

// q-th percentile (0..100, linear interpolation between order statistics).
double percentile(std::vector<double> values, double q);

// Percentile of nearest-neighbour distances from each point of a to b.
double directed_percentile_distance(const PointSet& a, const PointSet& b,
                                    double q);

// max(h_q(P,G), h_q(G,P)) over the mask surfaces; directed distances come
// from an exact Euclidean distance transform. nullopt when exactly one mask is
// empty, 0 when both are.
std::optional<double> hausdorff_percentile(
    const BinaryMask& p, const BinaryMask& g, double q,
    DistanceUnits units = DistanceUnits::mm);
std::optional<double> hd95(const BinaryMask& p, const BinaryMask& g,
                           DistanceUnits units = DistanceUnits::mm);

struct MetricsRecord {
  double iou = 0.0;
  double dice = 0.0;
  double acc = 0.0;
  std::optional<double> hd95;  // nullopt: undefined (one mask empty)
  std::size_t n_pixels = 0;
  std::string patient_id;
  int slice_index = -1;
};

MetricsRecord evaluate_pair(const BinaryMask& p, const BinaryMask& g,
                            DistanceUnits units = DistanceUnits::mm);

enum class AggregationLevel { per_slice, per_patient };
std::string to_string(AggregationLevel level);
AggregationLevel parse_aggregation_level(const std::string& s);

struct MetricsSummary {
  AggregationLevel level = AggregationLevel::per_slice;
  double iou = 0.0;
  double dice = 0.0;
  double acc = 0.0;
  std::optional<double> hd95;
  std::size_t n_records = 0;
  std::size_t n_groups = 0;        // records (per_slice) or patients
  std::size_t hd95_undefined = 0;  // records excluded from the HD95 mean
};

// Mean of each metric over records (per_slice) or over per-patient means
// (per_patient, patients in order of first appearance).
MetricsSummary aggregate(const std::vector<MetricsRecord>& records,
                         AggregationLevel level);

// One plane of a (B,1,H,W) 0/1 tensor as a depth-1 mask.
BinaryMask mask_from_tensor(const Tensor& t, int n, Spacing spacing = {});

}  // namespace simseg
