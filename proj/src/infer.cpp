#include "lauerl/infer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lauerl {

using nn::Mat;
using nn::Vec;

Observation apply_dihedral(const Observation& obs, Dihedral t) {
  const int n = Observation::kSize;
  Observation out;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      float v = 0;
      switch (t) {
        case Dihedral::identity:
          v = obs.at(y, x);
          break;
        case Dihedral::mirror_x:
          v = obs.at(n - 1 - y, x);
          break;
        case Dihedral::mirror_y:
          v = obs.at(y, n - 1 - x);
          break;
        case Dihedral::rotate180:
          v = obs.at(n - 1 - y, n - 1 - x);
          break;
        case Dihedral::transpose:
          v = obs.at(x, y);
          break;
        case Dihedral::anti_transpose:
          v = obs.at(n - 1 - x, n - 1 - y);
          break;
      }
      out.at(y, x) = v;
    }
  return out;
}

Action conjugate_action(const Action& a, Dihedral t) {
  switch (t) {
    case Dihedral::identity:
      return a;
    case Dihedral::mirror_x:
      return {-a[0], a[1]};
    case Dihedral::mirror_y:
      return {a[0], -a[1]};
    case Dihedral::rotate180:
      return {-a[0], -a[1]};
    case Dihedral::transpose:
      return {a[1], a[0]};
    case Dihedral::anti_transpose:
      return {-a[1], -a[0]};
  }
  return a;
}

Action tta_action(const PolicyFn& policy, const Observation& obs,
                  const std::vector<Dihedral>& transforms) {
  if (transforms.empty()) throw std::invalid_argument("tta_action: no transforms");
  Action mean{0.0, 0.0};
  for (Dihedral t : transforms) {
    const Action mapped = conjugate_action(policy(apply_dihedral(obs, t)), t);
    mean[0] += mapped[0];
    mean[1] += mapped[1];
  }
  for (double& v : mean) v = std::clamp(v / transforms.size(), -1.0, 1.0);
  return mean;
}

Action tta_action(const AgentNets& nets, const Observation& obs,
                  const std::vector<Dihedral>& transforms) {
  return tta_action(deterministic_policy(nets), obs, transforms);
}

Action ensemble_action(const std::vector<PolicyFn>& policies, const Observation& obs) {
  if (policies.empty()) throw std::invalid_argument("ensemble_action: no agents");
  Action mean{0.0, 0.0};
  for (const PolicyFn& p : policies) {
    const Action a = p(obs);
    mean[0] += a[0];
    mean[1] += a[1];
  }
  for (double& v : mean) v = std::clamp(v / policies.size(), -1.0, 1.0);
  return mean;
}

// ---------------------------------------------------------------------------
// Classifier

void Classifier::init(std::uint64_t seed) {
  Rng master(seed);
  Rng r_enc = master.fork(1), r_head = master.fork(2);
  encoder.init(r_enc);
  head.init(nn::kFeatureDim, 4, 1.0, r_head);
}

std::vector<nn::TensorView<float>> Classifier::views() {
  auto out = nn::encoder_views(encoder, "encoder");
  auto v = [](const std::string& n, auto& m) {
    return nn::TensorView<float>{n, m.data(), m.rows(), m.cols()};
  };
  out.push_back(v("head.W", head.W));
  out.push_back(v("head.b", head.b));
  return out;
}

namespace {

Mat<float> softmax_cols(const Mat<float>& logits) {
  Mat<float> p = logits;
  for (int j = 0; j < p.cols(); ++j) {
    const float m = p.col(j).maxCoeff();
    p.col(j) = (p.col(j).array() - m).exp();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

struct HeadGrads {
  Mat<float> W;
  Vec<float> b;
};

// One cross-entropy minibatch pass; returns (loss, accuracy).
std::pair<double, double> classifier_pass(Classifier& clf, const Mat<float>& obs,
                                          const std::vector<int>& labels, bool update,
                                          nn::Adam<float>* opt_all, double /*lr*/) {
  const int n = static_cast<int>(obs.cols());
  nn::EncoderNet<float>::Cache ec;
  const Mat<float> feat = clf.encoder.forward(obs, ec);
  const Mat<float> logits = clf.head.forward(feat);
  const Mat<float> probs = softmax_cols(logits);

  double loss = 0;
  int correct = 0;
  for (int j = 0; j < n; ++j) {
    loss -= std::log(std::max(probs(labels[j], j), 1e-12f));
    int argmax = 0;
    probs.col(j).maxCoeff(&argmax);
    correct += argmax == labels[j];
  }
  loss /= n;

  if (update) {
    Mat<float> dlogits = probs;
    for (int j = 0; j < n; ++j) dlogits(labels[j], j) -= 1.0f;
    dlogits /= static_cast<float>(n);
    nn::EncoderNet<float>::Grads eg;
    eg.init_like(clf.encoder);
    eg.set_zero();
    Mat<float> dW = Mat<float>::Zero(clf.head.W.rows(), clf.head.W.cols());
    Vec<float> db = Vec<float>::Zero(clf.head.b.size());
    const Mat<float> dfeat = clf.head.backward(feat, dlogits, dW, db);
    clf.encoder.backward(ec, dfeat, eg);

    auto params = clf.views();
    auto grads = nn::encoder_grad_views<float>(eg);
    grads.push_back({"head.W", dW.data(), dW.rows(), dW.cols()});
    grads.push_back({"head.b", db.data(), db.rows(), db.cols()});
    opt_all->step(params, grads);
  }
  return {loss, static_cast<double>(correct) / n};
}

Mat<float> gather_obs(const std::vector<ClassifierSample>& data, const std::vector<int>& idx,
                      int begin, int count) {
  Mat<float> out(nn::kObsSize * nn::kObsSize, count);
  for (int j = 0; j < count; ++j)
    std::copy(data[idx[begin + j]].obs.values.begin(), data[idx[begin + j]].obs.values.end(),
              out.col(j).data());
  return out;
}

std::vector<int> gather_labels(const std::vector<ClassifierSample>& data,
                               const std::vector<int>& idx, int begin, int count) {
  std::vector<int> out(count);
  for (int j = 0; j < count; ++j) out[j] = data[idx[begin + j]].label;
  return out;
}

void fit(Classifier& clf, const std::vector<ClassifierSample>& data,
         const std::vector<int>& train_idx, const std::vector<int>& val_idx,
         const ClassifierTrainConfig& cfg, Rng& rng, FoldMetrics* metrics) {
  nn::Adam<float> opt;
  opt.lr = cfg.lr;
  opt.init(clf.views());
  std::vector<int> order = train_idx;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates shuffle on the training order.
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(0, i)]);
    double train_loss = 0;
    int batches = 0;
    for (int b = 0; b + 1 <= static_cast<int>(order.size()); b += cfg.batch_size) {
      const int count = std::min<int>(cfg.batch_size, static_cast<int>(order.size()) - b);
      const Mat<float> obs = gather_obs(data, order, b, count);
      const auto labels = gather_labels(data, order, b, count);
      train_loss += classifier_pass(clf, obs, labels, true, &opt, cfg.lr).first;
      ++batches;
    }
    if (metrics) {
      metrics->epoch_train_loss.push_back(batches ? train_loss / batches : 0.0);
      double val_loss = 0, val_acc = 0;
      int val_batches = 0;
      for (int b = 0; b < static_cast<int>(val_idx.size()); b += cfg.batch_size) {
        const int count = std::min<int>(cfg.batch_size, static_cast<int>(val_idx.size()) - b);
        const Mat<float> obs = gather_obs(data, val_idx, b, count);
        const auto labels = gather_labels(data, val_idx, b, count);
        const auto [l, a] = classifier_pass(clf, obs, labels, false, nullptr, cfg.lr);
        val_loss += l * count;
        val_acc += a * count;
        ++val_batches;
      }
      const double denom = std::max<size_t>(val_idx.size(), 1);
      metrics->epoch_val_loss.push_back(val_loss / denom);
      metrics->epoch_val_accuracy.push_back(val_acc / denom);
    }
  }
}

}  // namespace

OrientationClass classify(const Classifier& clf, const Observation& obs) {
  nn::EncoderNet<float>::Cache ec;
  Mat<float> in(nn::kObsSize * nn::kObsSize, 1);
  std::copy(obs.values.begin(), obs.values.end(), in.data());
  const Mat<float> feat = clf.encoder.forward(in, ec);
  const Mat<float> probs = softmax_cols(clf.head.forward(feat));
  OrientationClass out;
  int argmax = 0;
  probs.col(0).maxCoeff(&argmax);
  out.label = argmax;
  for (int i = 0; i < 4; ++i) out.probabilities(i) = probs(i, 0);
  return out;
}

Classifier train_classifier(const std::vector<ClassifierSample>& data,
                            const ClassifierTrainConfig& cfg, std::uint64_t seed,
                            CvReport* report) {
  if (cfg.folds < 2) throw std::invalid_argument("train_classifier: need at least 2 folds");
  std::array<int, 4> counts{0, 0, 0, 0};
  for (const auto& s : data) {
    if (s.label < 0 || s.label > 3) throw std::invalid_argument("train_classifier: bad label");
    counts[s.label] += 1;
  }
  for (int c = 0; c < 4; ++c)
    if (counts[c] == 0)
      throw std::invalid_argument("train_classifier: class " + std::to_string(c) +
                                  " absent from dataset");

  Rng master(seed);
  Rng shuffle_rng = master.fork(1);
  std::vector<int> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i)
    std::swap(idx[i], idx[shuffle_rng.uniform_int(0, i)]);

  if (report) {
    report->folds.clear();
    for (int f = 0; f < cfg.folds; ++f) {
      const int lo = static_cast<int>(idx.size()) * f / cfg.folds;
      const int hi = static_cast<int>(idx.size()) * (f + 1) / cfg.folds;
      std::vector<int> val(idx.begin() + lo, idx.begin() + hi);
      std::vector<int> tr;
      tr.insert(tr.end(), idx.begin(), idx.begin() + lo);
      tr.insert(tr.end(), idx.begin() + hi, idx.end());
      Classifier fold_clf;
      fold_clf.init(master.fork(100 + f).seed());
      Rng fold_rng = master.fork(200 + f);
      FoldMetrics fm;
      fit(fold_clf, data, tr, val, cfg, fold_rng, &fm);
      report->folds.push_back(std::move(fm));
    }
  }

  Classifier clf;
  clf.init(master.fork(2).seed());
  Rng fit_rng = master.fork(3);
  fit(clf, data, idx, {}, cfg, fit_rng, nullptr);
  return clf;
}

Matrix3 tilted_orientation(const Vector3& crystal_axis, double tilt_deg, double beta_deg,
                           double roll_deg) {
  const Matrix3 align = align_axis_to(crystal_axis, Vector3(0, 0, 1));
  const double beta = deg_to_rad(beta_deg);
  const Vector3 tilt_axis(std::cos(beta), std::sin(beta), 0.0);
  const double a = deg_to_rad(tilt_deg);
  Matrix3 ax;
  ax << 0, -tilt_axis.z(), tilt_axis.y(), tilt_axis.z(), 0, -tilt_axis.x(), -tilt_axis.y(),
      tilt_axis.x(), 0;
  const Matrix3 tilt = Matrix3::Identity() + std::sin(a) * ax + (1 - std::cos(a)) * ax * ax;
  return rotation_matrix(Axis::z, roll_deg) * tilt * align;
}

std::vector<ClassifierSample> make_classifier_dataset(const CrystalSpec& spec,
                                                      const DetectorGeometry& det,
                                                      const WavelengthBand& band, int n_spots,
                                                      int per_class, double tolerance_deg,
                                                      Rng& rng) {
  const TargetSet all26 = target_set(spec, TargetMode::all_cubic_high_symmetry);
  std::array<std::vector<Vector3>, 4> families;  // index 1..3
  for (const Vector3& v : all26.axes) {
    const int nz = (std::abs(v.x()) > 1e-9) + (std::abs(v.y()) > 1e-9) + (std::abs(v.z()) > 1e-9);
    families[nz].push_back(v);  // 1 -> <001>, 2 -> <101>, 3 -> <111>
  }
  std::array<TargetSet, 4> family_sets;
  for (int k = 1; k <= 3; ++k) family_sets[k] = TargetSet{families[k], all26.mode};

  const Vector3 beam(0, 0, -1);
  auto label_of = [&](const Matrix3& M) {
    for (int k = 1; k <= 3; ++k)
      if (angular_distance_deg(M, family_sets[k], beam) <= tolerance_deg) return k;
    return 0;
  };

  std::vector<ClassifierSample> out;
  out.reserve(4 * per_class);
  for (int k = 0; k < 4; ++k) {
    int made = 0;
    while (made < per_class) {
      Matrix3 M;
      if (k == 0) {
        // Haar-uniform rotation via a normalized random quaternion.
        Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        q.normalize();
        M = q.toRotationMatrix();
        if (label_of(M) != 0) continue;
      } else {
        const auto& fam = families[k];
        const Vector3 axis = fam[rng.uniform_int(0, static_cast<int>(fam.size()) - 1)];
        // Uniform over the spherical cap of half-angle tolerance.
        const double cos_tilt = rng.uniform(std::cos(deg_to_rad(tolerance_deg)), 1.0);
        const double tilt = rad_to_deg(std::acos(std::clamp(cos_tilt, -1.0, 1.0)));
        M = tilted_orientation(axis, tilt, rng.uniform(0, 360), rng.uniform(0, 360));
        if (label_of(M) != k) continue;  // numerical edge of the cap
      }
      ClassifierSample s;
      s.label = label_of(M);
      s.obs = render_observation(select_spots(compute_spots(spec, M, det, band), n_spots), det);
      out.push_back(std::move(s));
      ++made;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hough fine alignment

HoughSpace hough_transform(const BinaryCanvas& canvas, double angle_step_deg,
                           double rho_step_px) {
  HoughSpace space;
  space.angle_step_deg = angle_step_deg;
  space.rho_step_px = rho_step_px;
  const double cx = canvas.width / 2.0, cy = canvas.height / 2.0;
  space.rho_max = std::hypot(cx, cy);
  const int n_angles = static_cast<int>(std::lround(180.0 / angle_step_deg));
  const int n_rho = static_cast<int>(std::ceil(2.0 * space.rho_max / rho_step_px)) + 1;
  space.acc = Eigen::MatrixXi::Zero(n_angles, n_rho);

  std::vector<double> cos_t(n_angles), sin_t(n_angles);
  for (int a = 0; a < n_angles; ++a) {
    const double t = deg_to_rad(a * angle_step_deg);
    cos_t[a] = std::cos(t);
    sin_t[a] = std::sin(t);
  }
  for (int y = 0; y < canvas.height; ++y)
    for (int x = 0; x < canvas.width; ++x) {
      if (!canvas.at(y, x)) continue;
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      for (int a = 0; a < n_angles; ++a) {
        const double rho = dx * cos_t[a] + dy * sin_t[a];
        const int bin = static_cast<int>((rho + space.rho_max) / rho_step_px);
        space.acc(a, std::clamp(bin, 0, n_rho - 1)) += 1;
      }
    }
  return space;
}

HoughLine strongest_line_near(const HoughSpace& space, double center_angle_deg,
                              double window_deg) {
  const int n_angles = static_cast<int>(space.acc.rows());
  HoughLine best;
  best.votes = -1;
  for (int a = 0; a < n_angles; ++a) {
    const double angle = a * space.angle_step_deg;
    double diff = std::abs(angle - center_angle_deg);
    diff = std::min(diff, 180.0 - diff);
    if (diff > window_deg) continue;
    for (int r = 0; r < space.acc.cols(); ++r) {
      if (space.acc(a, r) > best.votes) {
        best.votes = space.acc(a, r);
        best.angle_deg = angle;
        best.rho_px = (r + 0.5) * space.rho_step_px - space.rho_max;
      }
    }
  }
  return best;
}

namespace {

struct LineOffsets {
  double p_vertical_px = 0.0;    // x-offset of the near-vertical zone line
  double p_horizontal_px = 0.0;  // y-offset of the near-horizontal zone line
  HoughLine vertical, horizontal;
};

LineOffsets measure_center_lines(const BinaryCanvas& canvas, double threshold) {
  const HoughSpace space = hough_transform(canvas);
  const long global_max = space.acc.maxCoeff();
  LineOffsets out;
  out.vertical = strongest_line_near(space, 0.0, 15.0);
  out.horizontal = strongest_line_near(space, 90.0, 15.0);
  if (out.vertical.votes < threshold * global_max ||
      out.horizontal.votes < threshold * global_max)
    throw std::runtime_error("hough_fine_align: no central zone line above the accumulator threshold");
  const double av = deg_to_rad(out.vertical.angle_deg);
  const double ah = deg_to_rad(out.horizontal.angle_deg);
  out.p_vertical_px = out.vertical.rho_px / std::cos(av);  // x at y = 0
  out.p_horizontal_px = out.horizontal.rho_px / std::sin(ah);  // y at x = 0
  return out;
}

}  // namespace

FineAlignCalibration calibrate_fine_align(const CrystalSpec& spec, const DetectorGeometry& det,
                                          const WavelengthBand& band, int n_spots,
                                          double accumulator_threshold) {
  const Matrix3 C = AlignmentEnv::lab_to_detector();
  const Matrix3 B = align_axis_to(Vector3(0, 0, 1), Vector3(1, 0, 0));
  auto canvas_at = [&](double dtheta, double dphi) {
    const Matrix3 M = C * rotation_matrix(Axis::y, dtheta) * rotation_matrix(Axis::z, dphi) * B;
    return render_canvas(select_spots(compute_spots(spec, M, det, band), n_spots), det);
  };

  const double px_to_cm = det.width_cm / det.pixels_w;
  double su_theta = 0, suu_theta = 0, su_phi = 0, suu_phi = 0;
  for (double delta : {-4.0, -3.0, -2.0, 2.0, 3.0, 4.0}) {
    const LineOffsets t = measure_center_lines(canvas_at(delta, 0.0), accumulator_threshold);
    const double u_t = std::atan(t.p_horizontal_px * px_to_cm / (2.0 * det.distance_cm));
    su_theta += u_t * (-delta);  // correction undoing the offset
    suu_theta += u_t * u_t;
    const LineOffsets p = measure_center_lines(canvas_at(0.0, delta), accumulator_threshold);
    const double u_p = std::atan(p.p_vertical_px * px_to_cm / (2.0 * det.distance_cm));
    su_phi += u_p * (-delta);
    suu_phi += u_p * u_p;
  }
  const double k_theta = su_theta / suu_theta;
  const double k_phi = su_phi / suu_phi;
  FineAlignCalibration cal;
  cal.k1 = 0.5 * (std::abs(k_theta) + std::abs(k_phi));
  cal.sign_theta = k_theta >= 0 ? 1.0 : -1.0;
  cal.sign_phi = k_phi >= 0 ? 1.0 : -1.0;
  return cal;
}

FineAlignResult hough_fine_align(const BinaryCanvas& canvas, const DetectorGeometry& det,
                                 const FineAlignCalibration& calibration,
                                 double accumulator_threshold) {
  const LineOffsets lines = measure_center_lines(canvas, accumulator_threshold);
  const double px_to_cm = det.width_cm / det.pixels_w;
  FineAlignResult out;
  out.vertical = lines.vertical;
  out.horizontal = lines.horizontal;
  const double u_t = std::atan(lines.p_horizontal_px * px_to_cm / (2.0 * det.distance_cm));
  const double u_p = std::atan(lines.p_vertical_px * px_to_cm / (2.0 * det.distance_cm));
  out.dtheta_deg = calibration.sign_theta * calibration.k1 * u_t;
  out.dphi_deg = calibration.sign_phi * calibration.k1 * u_p;
  return out;
}

}  // namespace lauerl
