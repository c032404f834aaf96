#include "hstack/core.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

namespace hstack {

LpdMatrix::LpdMatrix(Matrix v, std::vector<std::string> ids)
    : values(std::move(v)), obs_ids(std::move(ids)) {
  if (obs_ids.empty()) {
    obs_ids.reserve(values.rows());
    for (Eigen::Index i = 0; i < values.rows(); ++i)
      obs_ids.push_back(std::to_string(i + 1));
  }
}

FeatureSet make_cell_features(const std::vector<long>& labels) {
  FeatureSet fs;
  std::set<long> uniq(labels.begin(), labels.end());
  fs.cell_labels.assign(uniq.begin(), uniq.end());
  std::map<long, int> index;
  for (std::size_t j = 0; j < fs.cell_labels.size(); ++j)
    index[fs.cell_labels[j]] = static_cast<int>(j);
  fs.cells.resize(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i)
    fs.cells(static_cast<Eigen::Index>(i)) = index[labels[i]];
  fs.features.resize(static_cast<Eigen::Index>(labels.size()), 0);
  return fs;
}

FeatureSet make_empty_features(Eigen::Index n) {
  FeatureSet fs;
  fs.features.resize(n, 0);
  return fs;
}

bool is_simplex(const Matrix& w, double tol) {
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    if (std::abs(w.row(i).sum() - 1.0) > tol) return false;
    for (Eigen::Index k = 0; k < w.cols(); ++k)
      if (!(w(i, k) >= 0.0 && w(i, k) <= 1.0)) return false;
  }
  return true;
}

namespace {

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double sample_sd(const Vector& c) {
  if (c.size() < 2) return 0.0;
  const double mean = c.mean();
  return std::sqrt((c.array() - mean).square().sum() /
                   static_cast<double>(c.size() - 1));
}

}  // namespace

FeatureSet rectify_features(const Matrix& x, const RectifyOptions& opts) {
  const Eigen::Index n = x.rows(), d = x.cols();
  if (n < 1) throw ValidationError("empty_input", "rectify_features: n must be >= 1");
  FeatureSet fs;
  if (opts.medians) {
    if (opts.medians->size() != d)
      throw ValidationError("dimension_mismatch",
                            "rectify_features: medians has wrong length");
    fs.medians = *opts.medians;
  } else {
    fs.medians.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      std::vector<double> col(x.col(j).data(), x.col(j).data() + n);
      fs.medians(j) = median_of(std::move(col));
    }
  }
  fs.features.resize(n, 2 * d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const Vector centred = x.col(j).array() - fs.medians(j);
    fs.features.col(2 * j) = centred.cwiseMax(0.0);
    fs.features.col(2 * j + 1) = (-centred).cwiseMax(0.0);
  }
  fs.constant_column.assign(static_cast<std::size_t>(2 * d), false);
  fs.scales = Vector::Ones(2 * d);
  for (Eigen::Index m = 0; m < 2 * d; ++m)
    fs.constant_column[m] = fs.features.col(m).isZero(0.0);

  if (opts.standardize || opts.scales) {
    if (opts.scales) {
      if (opts.scales->size() != 2 * d)
        throw ValidationError("dimension_mismatch",
                              "rectify_features: scales has wrong length");
      fs.scales = *opts.scales;
    } else {
      for (Eigen::Index m = 0; m < 2 * d; ++m) {
        const double sd = sample_sd(fs.features.col(m));
        fs.scales(m) = sd > 0.0 ? sd : 1.0;
        if (sd == 0.0) fs.constant_column[m] = true;
      }
    }
    for (Eigen::Index m = 0; m < 2 * d; ++m)
      fs.features.col(m) /= fs.scales(m);
    fs.standardized = true;
  }
  return fs;
}

void validate_lpd(const LpdMatrix& lpd) {
  if (lpd.n() < 1 || lpd.K() < 1)
    throw ValidationError("empty_input",
                          "lpd matrix must have at least one row and column");
  if (static_cast<Eigen::Index>(lpd.obs_ids.size()) != lpd.n()) {
    std::ostringstream os;
    os << "lpd has " << lpd.n() << " rows but " << lpd.obs_ids.size()
       << " observation ids";
    throw ValidationError("dimension_mismatch", os.str());
  }
  for (Eigen::Index i = 0; i < lpd.n(); ++i)
    for (Eigen::Index k = 0; k < lpd.K(); ++k)
      if (!std::isfinite(lpd.values(i, k))) {
        std::ostringstream os;
        os << "non-finite log density " << lpd.values(i, k) << " at (i=" << i + 1
           << ", k=" << k + 1 << ")";
        throw ValidationError("non_finite", os.str());
      }
}

std::pair<LpdMatrix, FeatureSet> validate(const LpdMatrix& lpd,
                                          const FeatureSet& feats) {
  validate_lpd(lpd);
  const bool has_cells = feats.has_cells();
  const Eigen::Index fn = feats.n();
  const bool empty_feats = !has_cells && feats.features.size() == 0 &&
                           feats.features.rows() == 0;
  if (!empty_feats && fn != lpd.n()) {
    std::ostringstream os;
    os << "lpd has n=" << lpd.n() << " observations but features have n=" << fn;
    throw ValidationError("dimension_mismatch", os.str());
  }
  if (has_cells && feats.features.cols() > 0 &&
      feats.features.rows() != feats.cells.size()) {
    std::ostringstream os;
    os << "cell index has n=" << feats.cells.size()
       << " entries but feature matrix has n=" << feats.features.rows();
    throw ValidationError("dimension_mismatch", os.str());
  }
  for (Eigen::Index i = 0; i < feats.features.rows(); ++i)
    for (Eigen::Index m = 0; m < feats.features.cols(); ++m)
      if (!std::isfinite(feats.features(i, m))) {
        std::ostringstream os;
        os << "non-finite feature at (i=" << i + 1 << ", m=" << m + 1 << ")";
        throw ValidationError("non_finite", os.str());
      }
  if (!feats.group_of_feature.empty() &&
      static_cast<Eigen::Index>(feats.group_of_feature.size()) !=
          feats.features.cols())
    throw ValidationError("dimension_mismatch",
                          "group_of_feature length differs from feature count");

  FeatureSet out = feats;
  if (empty_feats) out.features.resize(lpd.n(), 0);
  if (has_cells) {
    // Drop labels that no observation uses so cells cover 0..J-1.
    std::set<int> used(feats.cells.data(), feats.cells.data() + feats.cells.size());
    for (int c : used)
      if (c < 0 || (feats.num_cells() > 0 && c >= feats.num_cells())) {
        std::ostringstream os;
        os << "cell index " << c << " outside the label table";
        throw ValidationError("bad_cell", os.str());
      }
    std::vector<long> labels;
    std::map<int, int> remap;
    for (int c : used) {
      remap[c] = static_cast<int>(labels.size());
      labels.push_back(feats.num_cells() > 0 ? feats.cell_labels[c] : c);
    }
    for (Eigen::Index i = 0; i < out.cells.size(); ++i)
      out.cells(i) = remap[out.cells(i)];
    out.cell_labels = std::move(labels);
  }
  return {lpd, std::move(out)};
}

Matrix design_matrix(const FeatureSet& feats) {
  const Eigen::Index n = feats.n();
  const Eigen::Index J = feats.has_cells() ? feats.num_cells() : 0;
  const Eigen::Index M = feats.features.cols();
  Matrix X = Matrix::Zero(n, J + M);
  if (J > 0)
    for (Eigen::Index i = 0; i < n; ++i) X(i, feats.cells(i)) = 1.0;
  if (M > 0) X.rightCols(M) = feats.features;
  return X;
}

MixtureLikelihood::MixtureLikelihood(const Matrix& lpd, Vector row_weights)
    : pi_(std::move(row_weights)) {
  const Eigen::Index n = lpd.rows();
  if (pi_.size() == 0) pi_ = Vector::Ones(n);
  if (pi_.size() != n)
    throw ValidationError("dimension_mismatch",
                          "row weights length differs from lpd rows");
  row_max_ = lpd.rowwise().maxCoeff();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!std::isfinite(row_max_(i))) {
      std::ostringstream os;
      os << "observation " << i + 1
         << " has zero density under every model (log of zero mixture)";
      throw ValidationError("zero_mixture", os.str());
    }
  dens_ = (lpd.colwise() - row_max_).array().exp().matrix();
  offset_ = pi_.dot(row_max_);
}

double MixtureLikelihood::value(const Matrix& eta) const {
  const Eigen::Index n = dens_.rows(), K = dens_.cols();
  double total = offset_;
  Vector e(K);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (pi_(i) == 0.0) continue;
    double m = 0.0;
    for (Eigen::Index k = 0; k + 1 < K; ++k) m = std::max(m, eta(i, k));
    double z = std::exp(-m), mix = dens_(i, K - 1) * z;
    for (Eigen::Index k = 0; k + 1 < K; ++k) {
      const double ek = std::exp(eta(i, k) - m);
      z += ek;
      mix += ek * dens_(i, k);
    }
    total += pi_(i) * std::log(mix / z);
  }
  return total;
}

double MixtureLikelihood::value_and_gradient(const Matrix& eta,
                                             Matrix& grad) const {
  const Eigen::Index n = dens_.rows(), K = dens_.cols();
  grad.resize(n, K - 1);
  double total = offset_;
  Vector e(K);
  for (Eigen::Index i = 0; i < n; ++i) {
    double m = 0.0;
    for (Eigen::Index k = 0; k + 1 < K; ++k) m = std::max(m, eta(i, k));
    for (Eigen::Index k = 0; k + 1 < K; ++k) e(k) = std::exp(eta(i, k) - m);
    e(K - 1) = std::exp(-m);
    const double z = e.sum();
    double mix = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) mix += e(k) * dens_(i, k);
    total += pi_(i) * std::log(mix / z);
    // d/d eta_k = responsibility_k - weight_k
    for (Eigen::Index k = 0; k + 1 < K; ++k)
      grad(i, k) = pi_(i) * (e(k) * dens_(i, k) / mix - e(k) / z);
  }
  return total;
}

Matrix MixtureLikelihood::row_hessian(const Matrix& eta, Eigen::Index i) const {
  const Eigen::Index K = dens_.cols();
  double m = 0.0;
  for (Eigen::Index k = 0; k + 1 < K; ++k) m = std::max(m, eta(i, k));
  Vector e(K);
  for (Eigen::Index k = 0; k + 1 < K; ++k) e(k) = std::exp(eta(i, k) - m);
  e(K - 1) = std::exp(-m);
  const Vector w = e / e.sum();
  Vector r = e.cwiseProduct(dens_.row(i).transpose());
  r /= r.sum();
  const Vector rh = r.head(K - 1), wh = w.head(K - 1);
  Matrix h = Matrix(rh.asDiagonal()) - rh * rh.transpose() -
             Matrix(wh.asDiagonal()) + wh * wh.transpose();
  return pi_(i) * h;
}

}  // namespace hstack
