#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gsal/dataset.hpp"
#include "gsal/model.hpp"
#include "gsal/partition.hpp"
#include "gsal/saliency.hpp"
#include "gsal/train.hpp"

namespace gsal {

// Euclidean distance between two raw maps.
double interpretation_loss(const SaliencyMap& m_hat, const SaliencyMap& m_star);
double interpretation_loss(std::span<const double> m_hat, std::span<const double> m_star);

// lhs = ||d||^2 - ||kappa d||^2 and rhs = sum_S |S| Var(d restricted to S) for d = m_hat - m_star,
// evaluated independently. Inputs may hold several planes of height*width values.
struct Prop2Gap {
  double lhs = 0.0;
  double rhs = 0.0;
  double relative_error() const;
};
Prop2Gap prop2_gap(std::span<const double> m_hat, std::span<const double> m_star, const Partition& part);
Prop2Gap prop2_gap(const SaliencyMap& m_hat, const SaliencyMap& m_star, const Partition& part);

struct StabilityEstimate {
  double mean = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};
// Mean and max of ||a_i - b_i|| over paired maps of the same images under two models.
StabilityEstimate empirical_stability(std::span<const SaliencyMap> a, std::span<const SaliencyMap> b);

// Min-max scaling to [0,1]; a constant input maps to zeros.
std::vector<double> minmax_normalize(std::span<const double> values);
// SSIM of two maps already in [0,1]: 11x11 Gaussian window (sigma 1.5), valid positions only,
// C1 = 0.01^2, C2 = 0.03^2. Maps smaller than the window use one global window.
double ssim_normalized(std::span<const double> a, std::span<const double> b, std::size_t height, std::size_t width);
// SSIM after min-max normalising each map.
double ssim(const SaliencyMap& a, const SaliencyMap& b);

// maps[m][i] is the map of image i under model m. Mean over model pairs and images of the L2 distance.
double mean_pairwise_distance(const std::vector<std::vector<SaliencyMap>>& maps);
// 100 / (1 + mean pairwise distance), in percent.
double mege(const std::vector<std::vector<SaliencyMap>>& maps);

// Pixel indices by descending map value; equal values keep linear index order.
std::vector<std::size_t> morf_order(const SaliencyMap& map);

struct Curve {
  std::vector<double> x;
  std::vector<double> y;
  double auc() const;  // trapezoid rule
};

enum class FidelityMode { Deletion, Insertion };
// Predicted-class probability as the top-ranked pixels (all channels) are replaced by
// baseline_value (deletion) or restored onto an all-baseline image (insertion).
Curve deletion_insertion(const Model& model, const Image& img, const SaliencyMap& map, FidelityMode mode,
                         double step_fraction, double baseline_value = 0.0);

double pearson(std::span<const double> x, std::span<const double> y);
// Correlation between the mean map value of random pixel subsets and the score drop when
// the subset is set to baseline_value.
double mu_fidelity(const Model& model, const Image& img, const SaliencyMap& map, std::size_t subset_size,
                   std::size_t n_subsets, double baseline_value, std::uint64_t seed,
                   ScoreKind score = ScoreKind::Probability);

// Harmonic fill of the masked pixels (4-neighbour Laplace, Jacobi until the largest update is
// below tol), then N(0, noise_sigma^2) noise on the filled pixels.
Image road_impute(const Image& img, std::span<const char> mask, double noise_sigma, std::uint64_t seed,
                  double tol = 1e-4);

struct AccuracyCurve {
  std::vector<double> fractions;
  std::vector<double> accuracy;
};
AccuracyCurve road_curve(const Model& model, const Dataset& ds, std::span<const SaliencyMap> maps,
                         std::span<const double> fractions, std::uint64_t seed, double noise_sigma = 0.01);
// Masked pixels take the per-image channel mean; a fresh model is trained per fraction.
Image roar_mask(const Image& img, const SaliencyMap& map, double fraction);
AccuracyCurve roar_curve(const TrainConfig& cfg, const Dataset& train_set, std::span<const SaliencyMap> train_maps,
                         const Dataset& test_set, std::span<const SaliencyMap> test_maps,
                         std::span<const double> fractions,
                         std::optional<std::vector<LayerSpec>> layers = std::nullopt);

// Number of pixels masked at a fraction of d.
std::size_t masked_count(double fraction, std::size_t d);

struct MetricReport {
  std::map<std::string, double> scalars;
  std::map<std::string, Curve> curves;
  std::map<std::string, std::string> metadata;

  // Rejects non-finite scalars and curves whose abscissae are not strictly increasing.
  void add_scalar(const std::string& name, double value);
  void add_curve(const std::string& name, Curve curve);

  std::string to_json() const;
  // Header "config,seed,metric,x,y"; scalars have an empty x.
  std::string to_csv() const;
};

}  // namespace gsal
