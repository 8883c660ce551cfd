#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tbfa/common.hpp"

namespace tbfa {

// Ordered collection of N matrices with a shared d_c x d_r shape.  Labels are
// optional benchmark bookkeeping (clean vs. injected-outlier family).
struct MatrixDataset {
  Index d_c = 0, d_r = 0;
  std::vector<Matrix> observations;
  std::vector<std::string> labels;  // empty, or one tag per observation

  Index n() const { return static_cast<Index>(observations.size()); }

  void validate() const {
    for (const Matrix& x : observations) {
      require_dims(x.rows() == d_c && x.cols() == d_r,
                   "MatrixDataset: observation shape mismatch");
      require(x.allFinite(), "MatrixDataset: non-finite entry");
    }
    require_dims(labels.empty() || labels.size() == observations.size(),
                 "MatrixDataset: label count mismatch");
  }
};

// Column-major reshape of every observation to a (d_c*d_r) x 1 matrix; the
// vectorized covariance of the model is then Sigma_r (x) Sigma_c, which is
// what the vector-data (t)FA comparisons operate on.
inline MatrixDataset vectorized(const MatrixDataset& ds) {
  MatrixDataset out;
  out.d_c = ds.d_c * ds.d_r;
  out.d_r = 1;
  out.observations.reserve(ds.observations.size());
  for (const Matrix& x : ds.observations) {
    out.observations.emplace_back(
        Eigen::Map<const Matrix>(x.data(), x.size(), 1));
  }
  out.labels = ds.labels;
  return out;
}

}  // namespace tbfa
