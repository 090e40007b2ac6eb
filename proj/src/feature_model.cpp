// SPDX-License-Identifier: Apache-2.0
#include "contamlab/feature_model.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace contamlab {

FeatureDictionary build_dictionary(int d, int n_core, int n_bg, std::uint64_t seed) {
  const int d0 = n_core + n_bg;
  if (n_core < 0 || n_bg < 0 || d0 < 2) {
    std::ostringstream os;
    os << "dictionary needs at least two features (n_core=" << n_core << ", n_bg=" << n_bg << ")";
    throw ConfigError(os.str());
  }
  if (d < d0) {
    std::ostringstream os;
    os << "ambient dimension d=" << d << " is smaller than the number of features d0=" << d0;
    throw ConfigError(os.str());
  }

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd gauss(d, d0);
  // Column-major fill order is part of the determinism contract.
  for (int j = 0; j < d0; ++j)
    for (int i = 0; i < d; ++i) gauss(i, j) = normal(rng);

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d0);
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (int j = 0; j < d0; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);

  FeatureDictionary dict;
  dict.d = d;
  dict.d0 = d0;
  dict.n_core = n_core;
  dict.seed = seed;
  dict.core_indices.resize(n_core);
  std::iota(dict.core_indices.begin(), dict.core_indices.end(), 0);
  dict.bg_indices.resize(n_bg);
  std::iota(dict.bg_indices.begin(), dict.bg_indices.end(), n_core);
  dict.columns = std::move(q);
  return dict;
}

OrthonormalityError orthonormality_error(const FeatureDictionary& dict) {
  OrthonormalityError err;
  const Eigen::MatrixXd gram = dict.columns.transpose() * dict.columns;
  for (int i = 0; i < gram.rows(); ++i) {
    err.max_norm_deviation = std::max(err.max_norm_deviation, std::abs(std::sqrt(gram(i, i)) - 1.0));
    for (int j = 0; j < gram.cols(); ++j)
      if (i != j) err.max_cross_product = std::max(err.max_cross_product, std::abs(gram(i, j)));
  }
  return err;
}

double FeatureLaw::moment(int p) const {
  switch (kind) {
    case LawKind::Uniform:
      // (hi^{p+1} - lo^{p+1}) / ((p+1)(hi - lo))
      if (hi == lo) return std::pow(lo, p);
      return (std::pow(hi, p + 1) - std::pow(lo, p + 1)) / ((p + 1) * (hi - lo));
  }
  return 0.0;
}

double FeatureLaw::variance() const {
  switch (kind) {
    case LawKind::Uniform:
      return (hi - lo) * (hi - lo) / 12.0;
  }
  return 0.0;
}

double FeatureLaw::sample(Rng& rng) const {
  switch (kind) {
    case LawKind::Uniform:
      return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
  return 0.0;
}

void FeatureDistribution::refresh() {
  const int n = d0();
  if (n_core < 0 || n_core > n) throw ConfigError("distribution core count out of range");
  if (static_cast<int>(ood_bg_laws.size()) != n - n_core)
    throw ConfigError("OOD law count must equal the number of background features");
  for (int j = 0; j < n; ++j) {
    const auto& law = id_laws[j];
    if (law.lo > law.hi || law.lo < 0.0 || law.hi > 1.0) {
      std::ostringstream os;
      os << "ID law of feature " << j << " must have support inside [0,1]";
      throw ConfigError(os.str());
    }
  }
  for (std::size_t j = 0; j < ood_bg_laws.size(); ++j) {
    const auto& law = ood_bg_laws[j];
    if (law.lo > law.hi || law.lo < -1.0 || law.hi > 0.0) {
      std::ostringstream os;
      os << "OOD law of background feature " << n_core + static_cast<int>(j)
         << " must have support inside [-1,0]";
      throw ConfigError(os.str());
    }
  }
  moments.resize(n);
  for (int j = 0; j < n; ++j) {
    moments[j] = {id_laws[j].moment(1), id_laws[j].moment(2), id_laws[j].moment(3),
                  id_laws[j].variance()};
  }
}

FeatureDistribution default_distribution(const FeatureDictionary& dict) {
  FeatureDistribution dist;
  dist.n_core = dict.n_core;
  dist.id_laws.assign(dict.d0, FeatureLaw{LawKind::Uniform, 0.0, 1.0});
  dist.ood_bg_laws.assign(dict.n_bg(), FeatureLaw{LawKind::Uniform, -1.0, 0.0});
  dist.refresh();
  return dist;
}

const char* to_string(Regime r) { return r == Regime::ID ? "id" : "ood"; }
const char* to_string(CoreMode m) { return m == CoreMode::Linear ? "linear" : "nonlinear"; }

void NonlinearCoreSpec::validate() const {
  if (!(radius_neg > 0.0) || !(radius_pos > 0.0))
    throw ConfigError("hyperball radii must be strictly positive");
  if (radius_neg == radius_pos) throw ConfigError("hyperball radii of the two classes must differ");
  if (mode != "sphere-surface") throw ConfigError("unsupported hyperball mode '" + mode + "'");
}

namespace {

int draw_label(Rng& rng) { return std::bernoulli_distribution(0.5)(rng) ? 1 : -1; }

void fill_background(const FeatureDistribution& dist, Regime regime, Rng& rng,
                     Eigen::VectorXd& z) {
  for (int j = dist.n_core; j < dist.d0(); ++j) {
    const FeatureLaw& law =
        regime == Regime::ID ? dist.id_laws[j] : dist.ood_bg_laws[j - dist.n_core];
    z[j] = law.sample(rng);
  }
}

void fill_linear(const FeatureDistribution& dist, Regime regime, Rng& rng, Eigen::VectorXd& z) {
  z.resize(dist.d0());
  for (int j = 0; j < dist.n_core; ++j) z[j] = dist.id_laws[j].sample(rng);
  fill_background(dist, regime, rng, z);
}

void fill_nonlinear(const NonlinearCoreSpec& spec, const FeatureDistribution& dist, Regime regime,
                    int y, Rng& rng, Eigen::VectorXd& z) {
  z.resize(dist.d0());
  std::normal_distribution<double> normal(0.0, 1.0);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (int j = 0; j < dist.n_core; ++j) {
      z[j] = normal(rng);
      norm2 += z[j] * z[j];
    }
  } while (norm2 == 0.0);
  const double scale = spec.radius(y) / std::sqrt(norm2);
  for (int j = 0; j < dist.n_core; ++j) z[j] *= scale;
  fill_background(dist, regime, rng, z);
}

// Dictionary coordinates <x, m_j> of a latent sample.
void signed_coords(const Eigen::VectorXd& z, int y, int n_core, CoreMode mode,
                   Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out) {
  out = z.transpose();
  if (mode == CoreMode::Linear) out.head(n_core) *= static_cast<double>(y);
}

}  // namespace

LatentSample sample_latent(const FeatureDistribution& dist, Regime regime, Rng& rng) {
  LatentSample s;
  s.y = draw_label(rng);
  fill_linear(dist, regime, rng, s.z);
  return s;
}

LatentSample sample_latent_nonlinear(const NonlinearCoreSpec& spec, const FeatureDistribution& dist,
                                     Regime regime, Rng& rng) {
  if (dist.n_core < 2) throw ConfigError("nonlinear core sampling needs at least two core features");
  LatentSample s;
  s.y = draw_label(rng);
  fill_nonlinear(spec, dist, regime, s.y, rng, s.z);
  return s;
}

Example synthesize(const FeatureDictionary& dict, const LatentSample& latent, CoreMode mode) {
  if (latent.z.size() != dict.d0) {
    std::ostringstream os;
    os << "latent vector has length " << latent.z.size() << ", dictionary expects " << dict.d0;
    throw std::invalid_argument(os.str());
  }
  Eigen::RowVectorXd coords(dict.d0);
  signed_coords(latent.z, latent.y, dict.n_core, mode, coords);
  Example ex;
  ex.x = dict.columns * coords.transpose();
  ex.y = latent.y;
  ex.z = latent.z;
  return ex;
}

Example Batch::example(int i) const {
  Example ex;
  if (x.size() > 0) ex.x = x.row(i).transpose();
  ex.y = static_cast<int>(y[i]);
  ex.z = z.row(i).transpose();
  return ex;
}

namespace {

template <class LabelFn>
Batch draw_batch(const DataModel& model, Regime regime, int n, Rng& rng, bool materialize_x,
                 LabelFn&& label) {
  if (n < 1) throw std::invalid_argument("batch size must be at least 1");
  const auto& dist = model.dist;
  const int d0 = dist.d0();
  Batch b;
  b.coords.resize(n, d0);
  b.z.resize(n, d0);
  b.y.resize(n);
  Eigen::VectorXd z(d0);
  for (int i = 0; i < n; ++i) {
    const int y = label(rng);
    if (model.mode == CoreMode::Linear)
      fill_linear(dist, regime, rng, z);
    else
      fill_nonlinear(model.nonlinear, dist, regime, y, rng, z);
    b.y[i] = y;
    b.z.row(i) = z.transpose();
    signed_coords(z, y, dist.n_core, model.mode, b.coords.row(i));
  }
  if (materialize_x) model.materialize(b);
  return b;
}

}  // namespace

Batch DataModel::sample(Regime regime, int n, Rng& rng, bool materialize_x) const {
  if (mode == CoreMode::Nonlinear && dist.n_core < 2)
    throw ConfigError("nonlinear core sampling needs at least two core features");
  return draw_batch(*this, regime, n, rng, materialize_x, draw_label);
}

Batch DataModel::sample_class(Regime regime, int y, int n, Rng& rng, bool materialize_x) const {
  if (y != 1 && y != -1) throw std::invalid_argument("label must be +1 or -1");
  return draw_batch(*this, regime, n, rng, materialize_x, [y](Rng&) { return y; });
}

void DataModel::materialize(Batch& batch) const {
  batch.x.noalias() = batch.coords * dict.columns.transpose();
}

Batch sample_batch(const FeatureDictionary& dict, const FeatureDistribution& dist, Regime regime,
                   int n, Rng& rng, CoreMode mode, const NonlinearCoreSpec& nonlinear) {
  DataModel model{dict, dist, mode, nonlinear};
  return model.sample(regime, n, rng);
}

}  // namespace contamlab
