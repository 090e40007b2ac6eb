// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "contamlab/rng.hpp"

namespace contamlab {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Orthonormal feature dictionary. Column j of `columns` is the feature
/// direction m_j; the first `n_core` indices are core features, the rest are
/// background features.
struct FeatureDictionary {
  int d = 0;
  int d0 = 0;
  int n_core = 0;
  std::uint64_t seed = 0;
  std::vector<int> core_indices;
  std::vector<int> bg_indices;
  Eigen::MatrixXd columns;  // d x d0

  int n_bg() const { return d0 - n_core; }
  bool is_core(int j) const { return j < n_core; }
};

/// Builds d0 = n_core + n_bg orthonormal directions in R^d by orthonormalizing
/// a seeded Gaussian matrix. Throws ConfigError when d < d0 or d0 < 2.
FeatureDictionary build_dictionary(int d, int n_core, int n_bg, std::uint64_t seed);

struct OrthonormalityError {
  double max_norm_deviation = 0.0;  // max_j | ||m_j|| - 1 |
  double max_cross_product = 0.0;   // max_{i != j} |<m_i, m_j>|
};
OrthonormalityError orthonormality_error(const FeatureDictionary& dict);

enum class LawKind { Uniform };

/// Per-coordinate law of a latent weight z_j.
struct FeatureLaw {
  LawKind kind = LawKind::Uniform;
  double lo = 0.0;
  double hi = 1.0;

  /// E[z^p] for p >= 1.
  double moment(int p) const;
  double variance() const;
  double sample(Rng& rng) const;
};

struct FeatureMoments {
  double mu1 = 0.0;
  double mu2 = 0.0;
  double mu3 = 0.0;
  double variance = 0.0;
};

/// ID laws for every feature, OOD laws for the background block, and the
/// cached moments of the ID laws.
struct FeatureDistribution {
  int n_core = 0;
  std::vector<FeatureLaw> id_laws;      // length d0
  std::vector<FeatureLaw> ood_bg_laws;  // length d0 - n_core, indexed from n_core
  std::vector<FeatureMoments> moments;  // ID moments, length d0

  int d0() const { return static_cast<int>(id_laws.size()); }
  /// Recomputes `moments` from `id_laws` and checks supports.
  void refresh();
};

/// Uniform[0,1] for every ID coordinate and uniform[-1,0] for OOD background.
FeatureDistribution default_distribution(const FeatureDictionary& dict);

enum class Regime { ID, OOD };
enum class CoreMode { Linear, Nonlinear };

const char* to_string(Regime r);
const char* to_string(CoreMode m);

/// Class-conditional core geometry for the nonlinear (hyperball) variant: the
/// core block of z lies on the sphere of radius r_y.
struct NonlinearCoreSpec {
  double radius_neg = 1.0;
  double radius_pos = 2.0;
  std::string mode = "sphere-surface";

  double radius(int y) const { return y > 0 ? radius_pos : radius_neg; }
  void validate() const;
};

struct LatentSample {
  Eigen::VectorXd z;
  int y = 1;
};

struct Example {
  Eigen::VectorXd x;
  int y = 1;
  Eigen::VectorXd z;
};

LatentSample sample_latent(const FeatureDistribution& dist, Regime regime, Rng& rng);
LatentSample sample_latent_nonlinear(const NonlinearCoreSpec& spec, const FeatureDistribution& dist,
                                     Regime regime, Rng& rng);

/// Linear-mode synthesis: x = sum_core y z_j m_j + sum_bg z_j m_j.
Example synthesize(const FeatureDictionary& dict, const LatentSample& latent,
                   CoreMode mode = CoreMode::Linear);

/// Row-major batch. `coords` holds the dictionary coordinates <x, m_j> of
/// every example; `x` is materialized only when requested.
struct Batch {
  Eigen::MatrixXd x;       // n x d (empty if not materialized)
  Eigen::MatrixXd coords;  // n x d0
  Eigen::MatrixXd z;       // n x d0
  Eigen::VectorXd y;       // n, entries +-1

  int size() const { return static_cast<int>(y.size()); }
  Example example(int i) const;
};

/// Everything needed to draw data: dictionary, laws and core geometry.
struct DataModel {
  FeatureDictionary dict;
  FeatureDistribution dist;
  CoreMode mode = CoreMode::Linear;
  NonlinearCoreSpec nonlinear;

  /// n i.i.d. examples with uniformly random labels.
  Batch sample(Regime regime, int n, Rng& rng, bool materialize_x = true) const;
  /// n examples all carrying label y.
  Batch sample_class(Regime regime, int y, int n, Rng& rng, bool materialize_x = true) const;
  /// Recomputes x from coords.
  void materialize(Batch& batch) const;
};

Batch sample_batch(const FeatureDictionary& dict, const FeatureDistribution& dist, Regime regime,
                   int n, Rng& rng, CoreMode mode = CoreMode::Linear,
                   const NonlinearCoreSpec& nonlinear = {});

}  // namespace contamlab
