#include "lauerl/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lauerl {

void RandomizationConfig::validate() const {
  if (distance_min_cm <= 0 || distance_max_cm < distance_min_cm)
    throw std::invalid_argument("randomization: bad distance range");
  if (spots_min < 0 || spots_max < spots_min)
    throw std::invalid_argument("randomization: bad spot-count range");
  if (lat_a_min <= 0 || lat_a_max < lat_a_min || lat_c_min <= 0 || lat_c_max < lat_c_min)
    throw std::invalid_argument("randomization: bad lattice range");
  if (spot_removal_fraction < 0 || spot_removal_fraction > 1)
    throw std::invalid_argument("randomization: removal fraction outside [0,1]");
  if (spurious_min < 0 || spurious_max < spurious_min || spurious_max > 1)
    throw std::invalid_argument("randomization: bad spurious range");
  if (spot_shift_sigma_px < 0)
    throw std::invalid_argument("randomization: negative shift sigma");
}

RandomizationConfig RandomizationConfig::for_system(CrystalSystem system) {
  RandomizationConfig cfg;
  switch (system) {
    case CrystalSystem::cubic:
      cfg.spots_min = 30;
      cfg.spots_max = 60;
      cfg.lat_a_min = 3.0;
      cfg.lat_a_max = 15.0;
      cfg.lat_c_min = 3.0;
      cfg.lat_c_max = 15.0;
      break;
    case CrystalSystem::hexagonal:
      cfg.spots_min = 40;
      cfg.spots_max = 90;
      cfg.lat_a_min = 4.0;
      cfg.lat_a_max = 7.0;
      cfg.lat_c_min = 8.0;
      cfg.lat_c_max = 11.0;
      break;
    case CrystalSystem::tetragonal:
      cfg.spots_min = 60;
      cfg.spots_max = 120;
      cfg.lat_a_min = 3.0;
      cfg.lat_a_max = 6.0;
      cfg.lat_c_min = 12.0;
      cfg.lat_c_max = 15.0;
      break;
  }
  return cfg;
}

namespace {

struct PrimitiveHkl {
  std::int8_t h, k, l;
  std::int8_t m_max;  // largest harmonic keeping all indices <= kMaxMillerIndex
};

const std::vector<PrimitiveHkl>& primitive_hkl_list() {
  static const std::vector<PrimitiveHkl> list = [] {
    std::vector<PrimitiveHkl> out;
    const int n = kMaxMillerIndex;
    for (int h = -n; h <= n; ++h)
      for (int k = -n; k <= n; ++k)
        for (int l = -n; l <= n; ++l) {
          if (h == 0 && k == 0 && l == 0) continue;
          const int g = std::gcd(std::gcd(std::abs(h), std::abs(k)), std::abs(l));
          if (g != 1) continue;
          const int m = std::max({std::abs(h), std::abs(k), std::abs(l)});
          out.push_back({static_cast<std::int8_t>(h), static_cast<std::int8_t>(k),
                         static_cast<std::int8_t>(l), static_cast<std::int8_t>(n / m)});
        }
    return out;
  }();
  return list;
}

}  // namespace

std::vector<Spot> compute_spots(const CrystalSpec& spec, const Matrix3& M,
                                const DetectorGeometry& det, const WavelengthBand& band) {
  if (!(band.lambda_min > 0.0 && band.lambda_max > band.lambda_min))
    throw std::invalid_argument("compute_spots: bad wavelength band");
  const Matrix3 MB = M * reciprocal_basis(spec.lattice);  // throws on degenerate cell
  const double L = det.distance_cm;

  std::vector<Spot> spots;
  spots.reserve(256);
  for (const PrimitiveHkl& p : primitive_hkl_list()) {
    const Vector3 G1 = MB * Vector3(p.h, p.k, p.l);
    const double g = G1.norm();
    const double gz = G1.z() / g;
    // Backscattered rays need g_z/|G| > 1/sqrt(2); enumeration prunes at > 0.
    if (gz <= 1e-9) continue;
    const double lambda1 = 4.0 * kPi * gz / g;  // Bragg wavelength of order 1
    const int m_lo = std::max(1, static_cast<int>(std::ceil(lambda1 / band.lambda_max - 1e-12)));
    const int m_hi =
        std::min<int>(p.m_max, static_cast<int>(std::floor(lambda1 / band.lambda_min + 1e-12)));
    if (m_lo > m_hi) continue;

    double intensity = 0.0;
    int first_m = 0;
    for (int m = m_lo; m <= m_hi; ++m) {
      if (!reflection_allowed(spec, m * p.h, m * p.k, m * p.l)) continue;
      intensity += 1.0 / (double(m) * m * g * g);
      if (first_m == 0) first_m = m;
    }
    if (first_m == 0) continue;

    // k_out ~ k_in + G/|k|; the direction is harmonic-independent.
    const Vector3 k_out = Vector3(0, 0, -1) + G1 * (lambda1 / (2.0 * kPi));
    if (k_out.z() <= 1e-9) continue;
    const double x_cm = L * k_out.x() / k_out.z();
    const double y_cm = L * k_out.y() / k_out.z();
    const double x_px = (x_cm / det.width_cm + 0.5) * det.pixels_w;
    const double y_px = (y_cm / det.height_cm + 0.5) * det.pixels_h;
    if (x_px < 0.0 || x_px >= det.pixels_w || y_px < 0.0 || y_px >= det.pixels_h) continue;

    Spot s;
    s.x_px = x_px;
    s.y_px = y_px;
    s.h = first_m * p.h;
    s.k = first_m * p.k;
    s.l = first_m * p.l;
    s.intensity = intensity;
    spots.push_back(s);
  }
  return spots;
}

std::vector<Spot> select_spots(std::vector<Spot> spots, int n) {
  if (n < 0) throw std::invalid_argument("select_spots: negative count");
  std::sort(spots.begin(), spots.end(), [](const Spot& a, const Spot& b) {
    if (a.intensity != b.intensity) return a.intensity > b.intensity;
    return std::tie(a.h, a.k, a.l) < std::tie(b.h, b.k, b.l);
  });
  if (static_cast<size_t>(n) < spots.size()) spots.resize(n);
  return spots;
}

std::vector<Spot> perturb_spots(std::vector<Spot> spots, const RandomizationConfig& cfg,
                                const DetectorGeometry& det, Rng& rng) {
  cfg.validate();
  const size_t n_in = spots.size();

  // Fixed draw order: jitter, removal, spurious placement.
  if (cfg.spot_shift_sigma_px > 0.0) {
    std::vector<Spot> kept;
    kept.reserve(spots.size());
    for (Spot s : spots) {
      s.x_px += rng.normal(0.0, cfg.spot_shift_sigma_px);
      s.y_px += rng.normal(0.0, cfg.spot_shift_sigma_px);
      if (s.x_px >= 0.0 && s.x_px < det.pixels_w && s.y_px >= 0.0 && s.y_px < det.pixels_h)
        kept.push_back(s);
    }
    spots.swap(kept);
  }

  const int n_remove = static_cast<int>(std::lround(cfg.spot_removal_fraction * spots.size()));
  for (int i = 0; i < n_remove; ++i) {
    const int j = rng.uniform_int(0, static_cast<int>(spots.size()) - 1);
    spots.erase(spots.begin() + j);
  }

  const double frac = rng.uniform(cfg.spurious_min, cfg.spurious_max);
  const int n_spurious = static_cast<int>(std::lround(frac * n_in));
  for (int i = 0; i < n_spurious; ++i) {
    Spot s;
    s.x_px = rng.uniform() * det.pixels_w;
    s.y_px = rng.uniform() * det.pixels_h;
    s.h = s.k = s.l = 0;
    s.intensity = 1.0;
    spots.push_back(s);
  }
  return spots;
}

BinaryCanvas render_canvas(const std::vector<Spot>& spots, const DetectorGeometry& det) {
  BinaryCanvas canvas(det.pixels_w, det.pixels_h);
  const int r = kSpotStampRadiusPx;
  const int r2 = r * r;
  for (const Spot& s : spots) {
    const int cx = static_cast<int>(std::lround(s.x_px - 0.5));
    const int cy = static_cast<int>(std::lround(s.y_px - 0.5));
    const int y0 = std::max(0, cy - r), y1 = std::min(det.pixels_h - 1, cy + r);
    const int x0 = std::max(0, cx - r), x1 = std::min(det.pixels_w - 1, cx + r);
    for (int y = y0; y <= y1; ++y) {
      const int dy2 = (y - cy) * (y - cy);
      for (int x = x0; x <= x1; ++x)
        if ((x - cx) * (x - cx) + dy2 <= r2) canvas.at(y, x) = 1;
    }
  }
  return canvas;
}

namespace {

// 1-D overlap weights of output cell j against source pixels, normalized to
// sum to one.
struct ResampleRow {
  int first = 0;
  std::vector<double> w;
};

std::vector<ResampleRow> resample_weights(int src, int dst) {
  std::vector<ResampleRow> rows(dst);
  const double s = static_cast<double>(src) / dst;
  for (int j = 0; j < dst; ++j) {
    const double x0 = j * s, x1 = (j + 1) * s;
    const int k0 = static_cast<int>(std::floor(x0));
    const int k1 = std::min(src - 1, static_cast<int>(std::ceil(x1)) - 1);
    rows[j].first = k0;
    double total = 0.0;
    for (int k = k0; k <= k1; ++k) {
      const double w = std::min<double>(k + 1, x1) - std::max<double>(k, x0);
      rows[j].w.push_back(w);
      total += w;
    }
    for (double& w : rows[j].w) w /= total;
  }
  return rows;
}

}  // namespace

std::vector<float> box_downsample(const BinaryCanvas& canvas) {
  const int out = Observation::kSize;
  const auto wx = resample_weights(canvas.width, out);
  const auto wy = resample_weights(canvas.height, out);

  // Horizontal pass: tmp[y][j].
  std::vector<double> tmp(static_cast<size_t>(canvas.height) * out, 0.0);
  for (int y = 0; y < canvas.height; ++y) {
    const std::uint8_t* row = &canvas.values[size_t(y) * canvas.width];
    double* trow = &tmp[size_t(y) * out];
    for (int j = 0; j < out; ++j) {
      const ResampleRow& rw = wx[j];
      double acc = 0.0;
      for (size_t i = 0; i < rw.w.size(); ++i) acc += rw.w[i] * row[rw.first + i];
      trow[j] = acc;
    }
  }
  // Vertical pass.
  std::vector<float> result(static_cast<size_t>(out) * out, 0.0f);
  for (int i = 0; i < out; ++i) {
    const ResampleRow& rw = wy[i];
    for (int j = 0; j < out; ++j) {
      double acc = 0.0;
      for (size_t t = 0; t < rw.w.size(); ++t) acc += rw.w[t] * tmp[size_t(rw.first + t) * out + j];
      result[size_t(i) * out + j] = static_cast<float>(acc);
    }
  }
  return result;
}

void gaussian_blur_inplace(std::vector<float>& img, int size, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int d = -radius; d <= radius; ++d) {
    kernel[d + radius] = std::exp(-0.5 * d * d / (sigma * sigma));
    total += kernel[d + radius];
  }
  for (double& k : kernel) k /= total;

  std::vector<float> tmp(img.size());
  // Horizontal, zero padding.
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        const int xx = x + d;
        if (xx >= 0 && xx < size) acc += kernel[d + radius] * img[size_t(y) * size + xx];
      }
      tmp[size_t(y) * size + x] = static_cast<float>(acc);
    }
  // Vertical.
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        const int yy = y + d;
        if (yy >= 0 && yy < size) acc += kernel[d + radius] * tmp[size_t(yy) * size + x];
      }
      img[size_t(y) * size + x] = static_cast<float>(acc);
    }
}

void apply_pinhole(Observation& obs, double pinhole_frac) {
  const int n = Observation::kSize;
  const double r = pinhole_frac * n;
  const double cx = n / 2.0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cx;
      if (dx * dx + dy * dy <= r * r) obs.at(y, x) = 0.0f;
    }
}

Observation render_observation(const std::vector<Spot>& spots, const DetectorGeometry& det) {
  const BinaryCanvas canvas = render_canvas(spots, det);
  Observation obs;
  obs.values = box_downsample(canvas);
  gaussian_blur_inplace(obs.values, Observation::kSize, kGaussianBlurSigma);
  apply_pinhole(obs, det.pinhole_frac);
  for (float& v : obs.values) v = std::clamp(v, 0.0f, 1.0f);
  return obs;
}

void write_spots_csv(std::ostream& os, const std::vector<Spot>& spots) {
  os << "x_px,y_px,h,k,l,intensity\n";
  for (const Spot& s : spots)
    os << s.x_px << ',' << s.y_px << ',' << s.h << ',' << s.k << ',' << s.l << ','
       << s.intensity << '\n';
}

}  // namespace lauerl
