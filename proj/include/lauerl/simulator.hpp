#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "lauerl/geometry.hpp"
#include "lauerl/rng.hpp"

namespace lauerl {

struct DetectorGeometry {
  double distance_cm = 5.0;  // crystal to detector plane
  double width_cm = 10.0;
  double height_cm = 10.0;
  int pixels_w = 1284;
  int pixels_h = 1284;
  double pinhole_frac = 0.10;  // mask radius as fraction of image size
};

// White-beam band in Angstrom. Default lower edge from a 50 kV tube
// (12.398 / 50 keV), upper edge bounds the index enumeration.
struct WavelengthBand {
  double lambda_min = 0.25;
  double lambda_max = 2.5;
};

struct Spot {
  double x_px = 0.0;  // continuous detector pixel coordinates
  double y_px = 0.0;
  int h = 0, k = 0, l = 0;  // lowest in-band order; (0,0,0) marks a spurious spot
  double intensity = 0.0;
};

// Table-driven randomization ranges; lattice fields are interpreted per
// crystal system (a range plus c range where applicable).
struct RandomizationConfig {
  double distance_min_cm = 4.0, distance_max_cm = 6.0;
  int spots_min = 30, spots_max = 60;
  double lat_a_min = 3.0, lat_a_max = 15.0;
  double lat_c_min = 3.0, lat_c_max = 15.0;
  double spot_shift_sigma_px = 1.0;
  double spot_removal_fraction = 0.25;
  double spurious_min = 0.0, spurious_max = 0.1;
  std::vector<int> space_group_pool;  // nonempty -> per-episode space-group draw

  void validate() const;
  static RandomizationConfig for_system(CrystalSystem system);
};

struct Observation {
  static constexpr int kSize = 84;
  std::vector<float> values;  // row-major, values[y*kSize + x]

  Observation() : values(kSize * kSize, 0.0f) {}
  float& at(int y, int x) { return values[y * kSize + x]; }
  float at(int y, int x) const { return values[y * kSize + x]; }
};

struct BinaryCanvas {
  int width = 0, height = 0;
  std::vector<std::uint8_t> values;  // row-major

  BinaryCanvas() = default;
  BinaryCanvas(int w, int h) : width(w), height(h), values(size_t(w) * h, 0) {}
  std::uint8_t& at(int y, int x) { return values[size_t(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return values[size_t(y) * width + x]; }
};

// Back-reflection spot positions for crystal orientation M (detector frame:
// beam along -z through the pinhole, detector plane at z = +distance).
// Co-linear harmonics merge into one spot carrying the lowest in-band order;
// intensity is sum over in-band allowed harmonics m of 1/(m^2 |G1|^2).
std::vector<Spot> compute_spots(const CrystalSpec& spec, const Matrix3& M,
                                const DetectorGeometry& det, const WavelengthBand& band);

// The n highest-intensity spots, ties broken by (h,k,l) lexicographic order.
std::vector<Spot> select_spots(std::vector<Spot> spots, int n);

// Gaussian position jitter, uniform removal of round(fraction*n) spots, and
// uniformly placed spurious spots with a count fraction drawn from the
// configured range. Spots jittered off the canvas are dropped.
std::vector<Spot> perturb_spots(std::vector<Spot> spots, const RandomizationConfig& cfg,
                                const DetectorGeometry& det, Rng& rng);

// Binary canvas with a disc of radius 10 px stamped at each spot, centers
// rounded to the nearest pixel.
BinaryCanvas render_canvas(const std::vector<Spot>& spots, const DetectorGeometry& det);

// Area-weighted box-filter downsample to kSize x kSize (exact average, so a
// constant canvas stays constant).
std::vector<float> box_downsample(const BinaryCanvas& canvas);

// Separable Gaussian blur, zero padding at the borders.
void gaussian_blur_inplace(std::vector<float>& img, int size, double sigma);

// Zeroes the disc of radius pinhole_frac * kSize around the image center.
void apply_pinhole(Observation& obs, double pinhole_frac);

// Full rendering path: canvas -> box filter -> Gaussian blur (sigma 1) ->
// pinhole mask -> clip to [0, 1].
Observation render_observation(const std::vector<Spot>& spots, const DetectorGeometry& det);

// Debug dump (x_px, y_px, h, k, l, intensity) with a header row.
void write_spots_csv(std::ostream& os, const std::vector<Spot>& spots);

constexpr int kSpotStampRadiusPx = 10;
constexpr double kGaussianBlurSigma = 1.0;
constexpr int kMaxMillerIndex = 12;

}  // namespace lauerl
