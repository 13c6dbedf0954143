#pragma once

#include <array>
#include <optional>
#include <vector>

#include "lauerl/trainer.hpp"

namespace lauerl {

// The six image transformations used for test-time action averaging, with
// action conjugation rules mapping a prediction on the transformed image
// back into the original frame. All six are involutions.
enum class Dihedral {
  identity,
  mirror_x,   // flips the image y-axis: negates the theta component
  mirror_y,   // flips the image x-axis: negates the phi component
  rotate180,  // negates both
  transpose,  // swaps the components
  anti_transpose,
};

inline const std::array<Dihedral, 6>& all_dihedral() {
  static const std::array<Dihedral, 6> all = {
      Dihedral::identity,  Dihedral::mirror_x,  Dihedral::mirror_y,
      Dihedral::rotate180, Dihedral::transpose, Dihedral::anti_transpose};
  return all;
}

Observation apply_dihedral(const Observation& obs, Dihedral t);

// Maps an action predicted on the transformed observation back to the
// original frame.
Action conjugate_action(const Action& predicted, Dihedral t);

// Mean of back-mapped per-transform predictions, clipped to [-1, 1].
Action tta_action(const PolicyFn& policy, const Observation& obs,
                  const std::vector<Dihedral>& transforms);
Action tta_action(const AgentNets& nets, const Observation& obs,
                  const std::vector<Dihedral>& transforms);

// Mean of the agents' deterministic actions, clipped.
Action ensemble_action(const std::vector<PolicyFn>& policies, const Observation& obs);

// ---------------------------------------------------------------------------
// Supervised end-of-episode classification: class 0 = other, 1/2/3 = within
// tolerance of the <001>/<101>/<111> family.

struct OrientationClass {
  int label = 0;
  Eigen::Vector4d probabilities = Eigen::Vector4d::Zero();
};

struct Classifier {
  nn::EncoderNet<float> encoder;
  nn::Linear<float> head;  // feature -> 4 logits

  void init(std::uint64_t seed);
  std::vector<nn::TensorView<float>> views();
};

OrientationClass classify(const Classifier& clf, const Observation& obs);

struct ClassifierSample {
  Observation obs;
  int label = 0;
};

struct ClassifierTrainConfig {
  int folds = 5;
  int epochs = 8;
  int batch_size = 64;
  double lr = 1e-3;
};

struct FoldMetrics {
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_loss;
  std::vector<double> epoch_val_accuracy;
};

struct CvReport {
  std::vector<FoldMetrics> folds;
};

// K-fold cross validation followed by a final fit on the full dataset.
// Throws if any of the four classes is absent.
Classifier train_classifier(const std::vector<ClassifierSample>& data,
                            const ClassifierTrainConfig& cfg, std::uint64_t seed,
                            CvReport* report = nullptr);

// Balanced simulated dataset; labels follow the angular-distance rule and are
// validated against it. Class samples are drawn per family within the
// tolerance cap, class 0 uniformly outside it.
std::vector<ClassifierSample> make_classifier_dataset(const CrystalSpec& spec,
                                                      const DetectorGeometry& det,
                                                      const WavelengthBand& band, int n_spots,
                                                      int per_class, double tolerance_deg,
                                                      Rng& rng);

// Orientation fixture used by the dataset generator and the fine-alignment
// tests: target axis on the beam, tilted away by tilt_deg along azimuth
// beta_deg, then rolled about the beam by roll_deg (detector frame).
Matrix3 tilted_orientation(const Vector3& crystal_axis, double tilt_deg, double beta_deg,
                           double roll_deg);

// ---------------------------------------------------------------------------
// Hough-transform fine alignment

struct HoughSpace {
  double angle_step_deg = 0.5;
  double rho_step_px = 2.0;
  double rho_max = 0.0;
  Eigen::MatrixXi acc;  // (angle bins) x (rho bins)
};

HoughSpace hough_transform(const BinaryCanvas& canvas, double angle_step_deg = 0.5,
                           double rho_step_px = 2.0);

struct HoughLine {
  double angle_deg = 0.0;  // normal direction of the line, [0, 180)
  double rho_px = 0.0;     // signed distance from the image center
  long votes = 0;
};

// Strongest line with normal within +-window of center_angle (mod 180).
HoughLine strongest_line_near(const HoughSpace& space, double center_angle_deg,
                              double window_deg);

// Delta = k1 * atan(p / 2L) with per-axis signs fixed by regression on
// simulator-generated offset/line-shift pairs.
struct FineAlignCalibration {
  double k1 = 0.0;  // degrees per radian of atan(p / 2L)
  double sign_theta = 1.0, sign_phi = 1.0;
};

FineAlignCalibration calibrate_fine_align(const CrystalSpec& spec, const DetectorGeometry& det,
                                          const WavelengthBand& band, int n_spots,
                                          double accumulator_threshold = 0.6);

struct FineAlignResult {
  double dtheta_deg = 0.0;
  double dphi_deg = 0.0;
  HoughLine vertical, horizontal;
};

// Corrections recentring a near-aligned pattern; throws std::runtime_error
// when no zone line clears the accumulator threshold (ambiguous pattern).
FineAlignResult hough_fine_align(const BinaryCanvas& canvas, const DetectorGeometry& det,
                                 const FineAlignCalibration& calibration,
                                 double accumulator_threshold = 0.6);

}  // namespace lauerl
