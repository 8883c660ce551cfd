#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tbfa/common.hpp"
#include "tbfa/dataset.hpp"
#include "tbfa/distributions.hpp"
#include "tbfa/linalg.hpp"
#include "tbfa/params.hpp"
#include "tbfa/rng.hpp"
#include "tbfa/special_functions.hpp"

namespace tbfa {

// Which loading entries count as free coordinates.  Triangular frees the
// on-and-below-diagonal entries (the frame identify() produces); Corner frees
// everything except the (1,1) entry; Full frees all entries (useful for
// information-equality checks, where no identification is imposed).
enum class LoadingMask { Triangular, Corner, Full };

enum class CoordKind { Mean, LoadCol, UniqueCol, LoadRow, UniqueRow, Dof };

struct Coordinate {
  CoordKind kind;
  Index i = 0;  // row index (or diagonal index for uniquenesses)
  Index j = 0;  // column index (loadings and mean only)
};

// Ordered free-coordinate set: vec(W) column-major, then the column side
// (loading entries column-major, then uniquenesses), the row side, and nu.
struct ParamLayout {
  Index d_c = 0, d_r = 0, q_c = 0, q_r = 0;
  LoadingMask mask = LoadingMask::Triangular;
  bool fix_first_uniqueness = true;  // psi_c(1) pinned by the scale convention
  bool include_dof = true;
  std::vector<Coordinate> coords;

  Index size() const { return static_cast<Index>(coords.size()); }

  static bool loading_free(LoadingMask mask, Index i, Index j) {
    switch (mask) {
      case LoadingMask::Triangular: return i >= j;
      case LoadingMask::Corner: return !(i == 0 && j == 0);
      case LoadingMask::Full: return true;
    }
    return true;
  }

  static ParamLayout make(const TbfaParams& p,
                          LoadingMask mask = LoadingMask::Triangular,
                          bool fix_first_uniqueness = true) {
    ParamLayout out;
    out.d_c = p.d_c();
    out.d_r = p.d_r();
    out.q_c = p.q_c();
    out.q_r = p.q_r();
    out.mask = mask;
    out.fix_first_uniqueness = fix_first_uniqueness;
    out.include_dof = !p.gaussian;
    for (Index j = 0; j < out.d_r; ++j)
      for (Index i = 0; i < out.d_c; ++i)
        out.coords.push_back({CoordKind::Mean, i, j});
    for (Index j = 0; j < out.q_c; ++j)
      for (Index i = 0; i < out.d_c; ++i)
        if (loading_free(mask, i, j))
          out.coords.push_back({CoordKind::LoadCol, i, j});
    for (Index i = fix_first_uniqueness ? 1 : 0; i < out.d_c; ++i)
      out.coords.push_back({CoordKind::UniqueCol, i, 0});
    for (Index j = 0; j < out.q_r; ++j)
      for (Index i = 0; i < out.d_r; ++i)
        if (loading_free(mask, i, j))
          out.coords.push_back({CoordKind::LoadRow, i, j});
    for (Index i = 0; i < out.d_r; ++i)
      out.coords.push_back({CoordKind::UniqueRow, i, 0});
    if (out.include_dof) out.coords.push_back({CoordKind::Dof, 0, 0});
    return out;
  }

  std::string label(Index k) const {
    const Coordinate& c = coords[static_cast<std::size_t>(k)];
    const auto pair = [](Index a, Index b) {
      const Index ra = a + 1, rb = b + 1;
      if (ra <= 9 && rb <= 9) return std::to_string(ra) + std::to_string(rb);
      return std::to_string(ra) + "," + std::to_string(rb);
    };
    switch (c.kind) {
      case CoordKind::Mean: return "w" + pair(c.i, c.j);
      case CoordKind::LoadCol: return "c" + pair(c.i, c.j);
      case CoordKind::UniqueCol: return "psi_c" + std::to_string(c.i + 1);
      case CoordKind::LoadRow: return "r" + pair(c.i, c.j);
      case CoordKind::UniqueRow: return "psi_r" + std::to_string(c.i + 1);
      case CoordKind::Dof: return "nu";
    }
    return "?";
  }
};

// Read and write single free coordinates; used by the finite-difference
// oracles and the repetition studies that compare estimates to a truth vector.
inline double coordinate_value(const TbfaParams& p, const Coordinate& c) {
  switch (c.kind) {
    case CoordKind::Mean: return p.W(c.i, c.j);
    case CoordKind::LoadCol: return p.C(c.i, c.j);
    case CoordKind::UniqueCol: return p.psi_c(c.i);
    case CoordKind::LoadRow: return p.R(c.i, c.j);
    case CoordKind::UniqueRow: return p.psi_r(c.i);
    case CoordKind::Dof: return p.nu;
  }
  return 0.0;
}

inline void set_coordinate(TbfaParams& p, const Coordinate& c, double value) {
  switch (c.kind) {
    case CoordKind::Mean: p.W(c.i, c.j) = value; break;
    case CoordKind::LoadCol: p.C(c.i, c.j) = value; break;
    case CoordKind::UniqueCol: p.psi_c(c.i) = value; break;
    case CoordKind::LoadRow: p.R(c.i, c.j) = value; break;
    case CoordKind::UniqueRow: p.psi_r(c.i) = value; break;
    case CoordKind::Dof: p.nu = value; break;
  }
}

inline Vector pack_coordinates(const TbfaParams& p, const ParamLayout& layout) {
  Vector out(layout.size());
  for (Index k = 0; k < layout.size(); ++k)
    out(k) = coordinate_value(p, layout.coords[static_cast<std::size_t>(k)]);
  return out;
}

namespace detail {

// Every coordinate derivative of Sigma is a symmetric seed:
//   loading entry (i,j): e_i l_j' + l_j e_i'   (l_j = j-th loading column)
//   uniqueness i:        e_i e_i'
// All traces below are evaluated through these seeds without forming them.

// tr(M Sigma_dot) for symmetric M, with ml = M * loading.
inline double seed_trace(const Coordinate& c, const Matrix& m,
                         const Matrix& ml) {
  if (c.kind == CoordKind::LoadCol || c.kind == CoordKind::LoadRow)
    return 2.0 * ml(c.i, c.j);
  return m(c.i, c.i);
}

// tr(Sigma_dot^a M Sigma_dot^b Y) for symmetric M, Y on one side, with
// ml = M*loading, yl = Y*loading, lml = loading'*M*loading, lyl likewise.
inline double seed_pair_trace(const Coordinate& a, const Coordinate& b,
                              const Matrix& m, const Matrix& ml,
                              const Matrix& lml, const Matrix& y,
                              const Matrix& yl, const Matrix& lyl) {
  const bool a_load =
      a.kind == CoordKind::LoadCol || a.kind == CoordKind::LoadRow;
  const bool b_load =
      b.kind == CoordKind::LoadCol || b.kind == CoordKind::LoadRow;
  if (a_load && b_load)
    return ml(b.i, a.j) * yl(a.i, b.j) + ml(a.i, b.j) * yl(b.i, a.j) +
           lml(a.j, b.j) * y(a.i, b.i) + m(a.i, b.i) * lyl(a.j, b.j);
  if (a_load && !b_load)
    return ml(b.i, a.j) * y(b.i, a.i) + m(a.i, b.i) * yl(b.i, a.j);
  if (!a_load && b_load)
    return m(a.i, b.i) * yl(a.i, b.j) + ml(a.i, b.j) * y(b.i, a.i);
  return m(a.i, b.i) * y(a.i, b.i);
}

// tr(Sigma_dot_c^a T Sigma_dot_r^b T') with T = Sigma_c^{-1} A Sigma_r^{-1}
// and ct = C'T, tr_ = T*R, ctr = C'T*R.
inline double seed_cross_trace(const Coordinate& a, const Coordinate& b,
                               const Matrix& t, const Matrix& ct,
                               const Matrix& tr_, const Matrix& ctr) {
  const bool a_load = a.kind == CoordKind::LoadCol;
  const bool b_load = b.kind == CoordKind::LoadRow;
  if (a_load && b_load)
    return 2.0 * (ct(a.j, b.i) * tr_(a.i, b.j) + t(a.i, b.i) * ctr(a.j, b.j));
  if (!a_load && b_load) return 2.0 * t(a.i, b.i) * tr_(a.i, b.j);
  if (a_load && !b_load) return 2.0 * ct(a.j, b.i) * t(a.i, b.i);
  return t(a.i, b.i) * t(a.i, b.i);
}

// tr(Sigma_ddot^{ab} M): the second seed derivative is nonzero only for two
// loading entries in the same column, where it is e_i e_{i'}' + e_{i'} e_i'.
inline double seed_second_trace(const Coordinate& a, const Coordinate& b,
                                const Matrix& m) {
  const bool loads = (a.kind == CoordKind::LoadCol || a.kind == CoordKind::LoadRow) &&
                     a.kind == b.kind;
  if (loads && a.j == b.j) return 2.0 * m(a.i, b.i);
  return 0.0;
}

inline int coord_group(CoordKind k) {
  switch (k) {
    case CoordKind::Mean: return 0;
    case CoordKind::LoadCol:
    case CoordKind::UniqueCol: return 1;
    case CoordKind::LoadRow:
    case CoordKind::UniqueRow: return 2;
    case CoordKind::Dof: return 3;
  }
  return -1;
}

struct DenseInverses {
  Matrix g_c, g_r;    // Sigma_c^{-1}, Sigma_r^{-1}
  Matrix h_c, h_r;    // G_c C, G_r R
  Matrix k_c, k_r;    // C' G_c C, R' G_r R

  explicit DenseInverses(const TbfaParams& p) {
    Matrix sc = p.C * p.C.transpose();
    sc += Matrix(p.psi_c.asDiagonal());
    Matrix sr = p.R * p.R.transpose();
    sr += Matrix(p.psi_r.asDiagonal());
    g_c = factorize_spd(sc).inverse();
    g_r = factorize_spd(sr).inverse();
    h_c = g_c * p.C;
    h_r = g_r * p.R;
    k_c = p.C.transpose() * h_c;
    k_r = p.R.transpose() * h_r;
  }

  double trace(const Coordinate& c) const {
    if (c.kind == CoordKind::LoadCol || c.kind == CoordKind::UniqueCol)
      return seed_trace(c, g_c, h_c);
    return seed_trace(c, g_r, h_r);
  }
};

inline void check_layout(const ParamLayout& layout, const TbfaParams& p) {
  require_dims(layout.d_c == p.d_c() && layout.d_r == p.d_r() &&
                   layout.q_c == p.q_c() && layout.q_r == p.q_r() &&
                   layout.include_dof == !p.gaussian,
               "parameter layout does not match the parameter shapes");
}

}  // namespace detail

// Gradient of the observed-data log-likelihood over the layout's coordinates.
inline Vector score_vector(const TbfaParams& p, const MatrixDataset& data,
                           const ParamLayout& layout) {
  p.validate();
  detail::check_layout(layout, p);
  require_dims(p.d_c() == data.d_c && p.d_r() == data.d_r,
               "score_vector: parameter/data shape mismatch");
  const Index d_c = p.d_c(), d_r = p.d_r();
  const double big_d = static_cast<double>(d_c * d_r);
  const double n_real = static_cast<double>(data.n());
  const detail::DenseInverses inv(p);

  Matrix s_mean = Matrix::Zero(d_c, d_r);   // sum w_n G_c A_n G_r
  Matrix p_acc = Matrix::Zero(d_c, d_c);    // sum w_n G_c A_n Sigma_r^{-1} A_n' G_c
  Matrix q_acc = Matrix::Zero(d_r, d_r);    // row-side mirror
  double s_nu = 0.0;
  for (const Matrix& x : data.observations) {
    const Matrix a = x - p.W;
    const Matrix v_c = inv.g_c * a;        // G_c A
    const Matrix v_r = a * inv.g_r;        // A G_r
    const Matrix t = v_c * inv.g_r;        // G_c A G_r
    const double delta = (v_c.array() * v_r.array()).sum();
    const double w = p.gaussian ? 1.0 : (p.nu + big_d) / (p.nu + delta);
    s_mean.noalias() += w * t;
    p_acc.noalias() += w * (t * v_c.transpose());
    q_acc.noalias() += w * (t.transpose() * v_r);
    if (!p.gaussian)
      s_nu += 0.5 * (digamma(0.5 * (p.nu + big_d)) - digamma(0.5 * p.nu) +
                     std::log(p.nu) + 1.0 - std::log(p.nu + delta) - w);
  }
  const Matrix pc = p_acc * p.C;
  const Matrix qr = q_acc * p.R;

  Vector score(layout.size());
  for (Index k = 0; k < layout.size(); ++k) {
    const Coordinate& c = layout.coords[static_cast<std::size_t>(k)];
    switch (c.kind) {
      case CoordKind::Mean: score(k) = s_mean(c.i, c.j); break;
      case CoordKind::LoadCol:
        score(k) = -(n_real * d_r * inv.h_c(c.i, c.j) - pc(c.i, c.j));
        break;
      case CoordKind::UniqueCol:
        score(k) = -0.5 * (n_real * d_r * inv.g_c(c.i, c.i) - p_acc(c.i, c.i));
        break;
      case CoordKind::LoadRow:
        score(k) = -(n_real * d_c * inv.h_r(c.i, c.j) - qr(c.i, c.j));
        break;
      case CoordKind::UniqueRow:
        score(k) = -0.5 * (n_real * d_c * inv.g_r(c.i, c.i) - q_acc(c.i, c.i));
        break;
      case CoordKind::Dof: score(k) = s_nu; break;
    }
  }
  return score;
}

inline Vector score_vector(const TbfaParams& p, const MatrixDataset& data) {
  return score_vector(p, data, ParamLayout::make(p));
}

struct FisherInfo {
  ParamLayout layout;
  Matrix matrix;
};

// Expected information for N observations, assembled from the closed-form
// blocks.  The mean block is exactly N*(nu+D)/(nu+D+2) * (Sigma_r^{-1} (x)
// Sigma_c^{-1}); all mean/covariance and mean/dof cross blocks vanish.
inline FisherInfo fisher_information(const TbfaParams& p, Index n,
                                     const ParamLayout& layout) {
  p.validate();
  detail::check_layout(layout, p);
  require(n >= 1, "fisher_information: need a positive count");
  const Index d_c = p.d_c(), d_r = p.d_r();
  const double big_d = static_cast<double>(d_c * d_r);
  const double n_real = static_cast<double>(n);
  const double nu = p.nu;
  const detail::DenseInverses inv(p);

  const Index np = layout.size();
  std::vector<double> t(static_cast<std::size_t>(np), 0.0);
  for (Index k = 0; k < np; ++k) {
    const Coordinate& c = layout.coords[static_cast<std::size_t>(k)];
    if (detail::coord_group(c.kind) == 1 || detail::coord_group(c.kind) == 2)
      t[static_cast<std::size_t>(k)] = inv.trace(c);
  }

  Matrix info = Matrix::Zero(np, np);
  for (Index a = 0; a < np; ++a) {
    const Coordinate& ca = layout.coords[static_cast<std::size_t>(a)];
    const int ga = detail::coord_group(ca.kind);
    for (Index b = a; b < np; ++b) {
      const Coordinate& cb = layout.coords[static_cast<std::size_t>(b)];
      const int gb = detail::coord_group(cb.kind);
      double value = 0.0;
      if (ga == 0 && gb == 0) {
        const double factor =
            p.gaussian ? 1.0 : (nu + big_d) / (nu + big_d + 2.0);
        value = n_real * factor * inv.g_c(ca.i, cb.i) * inv.g_r(ca.j, cb.j);
      } else if (ga == 1 && gb == 1) {
        const double pair = detail::seed_pair_trace(
            ca, cb, inv.g_c, inv.h_c, inv.k_c, inv.g_c, inv.h_c, inv.k_c);
        value = p.gaussian
                    ? 0.5 * n_real * d_r * pair
                    : n_real * d_r / (2.0 * (nu + big_d + 2.0)) *
                          ((nu + big_d) * pair -
                           d_r * t[static_cast<std::size_t>(a)] *
                               t[static_cast<std::size_t>(b)]);
      } else if (ga == 2 && gb == 2) {
        const double pair = detail::seed_pair_trace(
            ca, cb, inv.g_r, inv.h_r, inv.k_r, inv.g_r, inv.h_r, inv.k_r);
        value = p.gaussian
                    ? 0.5 * n_real * d_c * pair
                    : n_real * d_c / (2.0 * (nu + big_d + 2.0)) *
                          ((nu + big_d) * pair -
                           d_c * t[static_cast<std::size_t>(a)] *
                               t[static_cast<std::size_t>(b)]);
      } else if (ga == 1 && gb == 2) {
        const double factor =
            p.gaussian ? 0.5 : nu / (2.0 * (nu + big_d + 2.0));
        value = n_real * factor * t[static_cast<std::size_t>(a)] *
                t[static_cast<std::size_t>(b)];
      } else if ((ga == 1 || ga == 2) && gb == 3) {
        const double side = ga == 1 ? static_cast<double>(d_r)
                                    : static_cast<double>(d_c);
        value = -n_real * side / ((nu + big_d) * (nu + big_d + 2.0)) *
                t[static_cast<std::size_t>(a)];
      } else if (ga == 3 && gb == 3) {
        value = n_real * (0.25 * trigamma(0.5 * nu) -
                          0.25 * trigamma(0.5 * (nu + big_d)) -
                          big_d * (nu + big_d + 4.0) /
                              (2.0 * nu * (nu + big_d) * (nu + big_d + 2.0)));
      }
      // Mean cross blocks stay zero.
      info(a, b) = value;
      info(b, a) = value;
    }
  }
  return {layout, std::move(info)};
}

inline FisherInfo fisher_information(const TbfaParams& p, Index n) {
  return fisher_information(p, n, ParamLayout::make(p));
}

// Hessian of the observed-data log-likelihood at the given data, over the
// layout's coordinates.
inline Matrix observed_hessian(const TbfaParams& p, const MatrixDataset& data,
                               const ParamLayout& layout) {
  p.validate();
  detail::check_layout(layout, p);
  require_dims(p.d_c() == data.d_c && p.d_r() == data.d_r,
               "observed_hessian: parameter/data shape mismatch");
  const Index d_c = p.d_c(), d_r = p.d_r();
  const double big_d = static_cast<double>(d_c * d_r);
  const double n_real = static_cast<double>(data.n());
  const double nu = p.nu;
  const detail::DenseInverses inv(p);
  const Index np = layout.size();

  std::vector<Coordinate> coords = layout.coords;
  Matrix hess = Matrix::Zero(np, np);

  // Data-independent part of the covariance-covariance blocks.
  for (Index a = 0; a < np; ++a) {
    const Coordinate& ca = coords[static_cast<std::size_t>(a)];
    const int ga = detail::coord_group(ca.kind);
    if (ga != 1 && ga != 2) continue;
    for (Index b = a; b < np; ++b) {
      const Coordinate& cb = coords[static_cast<std::size_t>(b)];
      if (detail::coord_group(cb.kind) != ga) continue;
      const bool col_side = ga == 1;
      const Matrix& g = col_side ? inv.g_c : inv.g_r;
      const Matrix& h = col_side ? inv.h_c : inv.h_r;
      const Matrix& kk = col_side ? inv.k_c : inv.k_r;
      const double side = col_side ? static_cast<double>(d_r)
                                   : static_cast<double>(d_c);
      const double value =
          n_real * 0.5 * side *
          (detail::seed_pair_trace(ca, cb, g, h, kk, g, h, kk) -
           detail::seed_second_trace(ca, cb, g));
      hess(a, b) += value;
      if (b != a) hess(b, a) += value;
    }
  }

  std::vector<double> m_c(static_cast<std::size_t>(np), 0.0);
  for (const Matrix& x : data.observations) {
    const Matrix a_res = x - p.W;
    const Matrix v_c = inv.g_c * a_res;   // G_c A
    const Matrix v_r = a_res * inv.g_r;   // A G_r
    const Matrix t = v_c * inv.g_r;       // G_c A G_r
    const double delta = (v_c.array() * v_r.array()).sum();
    const double w = p.gaussian ? 1.0 : (nu + big_d) / (nu + delta);
    const double rec = p.gaussian ? 0.0 : 1.0 / (nu + delta);
    const double v_nu =
        p.gaussian ? 0.0 : (delta - big_d) / ((nu + delta) * (nu + delta));

    const Matrix p_n = t * v_c.transpose();   // G_c A Sigma_r^{-1} A' G_c
    const Matrix q_n = t.transpose() * v_r;   // row-side mirror
    const Matrix pl = p_n * p.C;
    const Matrix lpl = p.C.transpose() * pl;
    const Matrix ql = q_n * p.R;
    const Matrix lql = p.R.transpose() * ql;
    const Matrix ct = p.C.transpose() * t;    // C'T
    const Matrix tr_ = t * p.R;               // TR
    const Matrix ctr = ct * p.R;              // C'TR

    // Per-coordinate first-derivative pieces m_i = tr(Sigma_dot P_n) (column
    // side) or tr(Sigma_dot Q_n) (row side).
    for (Index k = 0; k < np; ++k) {
      const Coordinate& c = coords[static_cast<std::size_t>(k)];
      const int g = detail::coord_group(c.kind);
      if (g == 1)
        m_c[static_cast<std::size_t>(k)] = detail::seed_trace(c, p_n, pl);
      else if (g == 2)
        m_c[static_cast<std::size_t>(k)] = detail::seed_trace(c, q_n, ql);
    }

    for (Index a = 0; a < np; ++a) {
      const Coordinate& ca = coords[static_cast<std::size_t>(a)];
      const int ga = detail::coord_group(ca.kind);
      for (Index b = a; b < np; ++b) {
        const Coordinate& cb = coords[static_cast<std::size_t>(b)];
        const int gb = detail::coord_group(cb.kind);
        double value = 0.0;
        if (ga == 0 && gb == 0) {
          value = 2.0 * w * rec * t(ca.i, ca.j) * t(cb.i, cb.j) -
                  w * inv.g_c(ca.i, cb.i) * inv.g_r(ca.j, cb.j);
        } else if (ga == 0 && gb == 1) {
          // d/dtheta_c of the mean score: the seed enters G Sigma_dot G A G_r.
          double entry;
          if (cb.kind == CoordKind::LoadCol)
            entry = inv.g_c(ca.i, cb.i) * ct(cb.j, ca.j) +
                    inv.h_c(ca.i, cb.j) * t(cb.i, ca.j);
          else
            entry = inv.g_c(ca.i, cb.i) * t(cb.i, ca.j);
          value = w * rec * m_c[static_cast<std::size_t>(b)] * t(ca.i, ca.j) -
                  w * entry;
        } else if (ga == 0 && gb == 2) {
          double entry;
          if (cb.kind == CoordKind::LoadRow)
            entry = t(ca.i, cb.i) * inv.h_r(ca.j, cb.j) +
                    tr_(ca.i, cb.j) * inv.g_r(cb.i, ca.j);
          else
            entry = t(ca.i, cb.i) * inv.g_r(cb.i, ca.j);
          value = w * rec * m_c[static_cast<std::size_t>(b)] * t(ca.i, ca.j) -
                  w * entry;
        } else if (ga == 0 && gb == 3) {
          value = v_nu * t(ca.i, ca.j);
        } else if (ga == 1 && gb == 1) {
          const double s_ab =
              detail::seed_pair_trace(ca, cb, inv.g_c, inv.h_c, inv.k_c, p_n,
                                      pl, lpl) +
              detail::seed_pair_trace(ca, cb, p_n, pl, lpl, inv.g_c, inv.h_c,
                                      inv.k_c);
          value = 0.5 * w * rec * m_c[static_cast<std::size_t>(a)] *
                      m_c[static_cast<std::size_t>(b)] +
                  0.5 * w * (detail::seed_second_trace(ca, cb, p_n) - s_ab);
        } else if (ga == 1 && gb == 2) {
          value = 0.5 * w *
                  (rec * m_c[static_cast<std::size_t>(a)] *
                       m_c[static_cast<std::size_t>(b)] -
                   detail::seed_cross_trace(ca, cb, t, ct, tr_, ctr));
        } else if (ga == 1 && gb == 3) {
          value = 0.5 * v_nu * m_c[static_cast<std::size_t>(a)];
        } else if (ga == 2 && gb == 2) {
          const double s_ab =
              detail::seed_pair_trace(ca, cb, inv.g_r, inv.h_r, inv.k_r, q_n,
                                      ql, lql) +
              detail::seed_pair_trace(ca, cb, q_n, ql, lql, inv.g_r, inv.h_r,
                                      inv.k_r);
          value = 0.5 * w * rec * m_c[static_cast<std::size_t>(a)] *
                      m_c[static_cast<std::size_t>(b)] +
                  0.5 * w * (detail::seed_second_trace(ca, cb, q_n) - s_ab);
        } else if (ga == 2 && gb == 3) {
          value = 0.5 * v_nu * m_c[static_cast<std::size_t>(a)];
        } else if (ga == 3 && gb == 3) {
          value = 0.5 * (0.5 * trigamma(0.5 * (nu + big_d)) -
                         0.5 * trigamma(0.5 * nu) + 1.0 / nu - rec - v_nu);
        }
        hess(a, b) += value;
        if (b != a) hess(b, a) += value;
      }
    }
  }
  return hess;
}

inline Matrix observed_hessian(const TbfaParams& p, const MatrixDataset& data) {
  return observed_hessian(p, data, ParamLayout::make(p));
}

struct StandardErrors {
  ParamLayout layout;
  std::vector<std::string> labels;
  Vector values;
};

// Asymptotic standard errors: square roots of the diagonal of the inverse
// information matrix on the layout's free coordinates.  Expects params in
// identified form when the default layout is used.
inline StandardErrors standard_errors(const TbfaParams& p, Index n,
                                      const ParamLayout& layout) {
  const FisherInfo info = fisher_information(p, n, layout);
  const Index np = layout.size();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(info.matrix);
  require(eig.info() == Eigen::Success,
          "standard_errors: eigendecomposition failed");
  const double max_eig = eig.eigenvalues().cwiseAbs().maxCoeff();
  const double floor = 1e-10 * std::max(max_eig, 1.0);
  std::string null_report;
  for (Index k = 0; k < np; ++k) {
    if (eig.eigenvalues()(k) > floor) continue;
    const Vector dir = eig.eigenvectors().col(k).cwiseAbs();
    const double top = dir.maxCoeff();
    std::string names;
    for (Index j = 0; j < np; ++j)
      if (dir(j) >= 0.3 * top)
        names += (names.empty() ? "" : ", ") + layout.label(j);
    null_report += (null_report.empty() ? "" : "; ") + names;
  }
  if (!null_report.empty())
    throw NumericalError(
        "standard_errors: information matrix is singular on the constrained "
        "set; null directions involve: " +
        null_report);

  const Matrix cov = eig.eigenvectors() *
                     eig.eigenvalues().cwiseInverse().asDiagonal() *
                     eig.eigenvectors().transpose();
  StandardErrors out;
  out.layout = layout;
  out.values = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.labels.reserve(static_cast<std::size_t>(np));
  for (Index k = 0; k < np; ++k) out.labels.push_back(layout.label(k));
  return out;
}

inline StandardErrors standard_errors(const TbfaParams& p, Index n) {
  return standard_errors(p, n, ParamLayout::make(p));
}

struct IdentityReport {
  std::array<double, 8> relative_errors{};  // identities (a) through (h)
};

// Monte Carlo check of the eight moment identities behind the information
// matrix: scalar moments of delta, the weighted second moment of vec(X - W),
// and the three weighted quadratic-form products against random covariance
// seed derivatives.  Returns |mc - closed| / |closed| for each.
inline IdentityReport verify_expectation_identities(const TbfaParams& p,
                                                    Index sample_count,
                                                    RngStream& rng) {
  p.validate();
  require(!p.gaussian, "verify_expectation_identities: needs finite nu");
  require(sample_count >= 10000,
          "verify_expectation_identities: need at least 1e4 draws");
  const Index d_c = p.d_c(), d_r = p.d_r();
  const double big_d = static_cast<double>(d_c * d_r);
  const double nu = p.nu;
  const detail::DenseInverses inv(p);
  const CovFactorization f_c = factorize_spd(inv.g_c.inverse());
  const CovFactorization f_r = factorize_spd(inv.g_r.inverse());

  // Random seed-derivative coordinates on each side (loadings and
  // uniquenesses equally likely per entry).
  const ParamLayout full = ParamLayout::make(p, LoadingMask::Full, false);
  std::vector<Coordinate> col_coords, row_coords;
  for (const Coordinate& c : full.coords) {
    if (detail::coord_group(c.kind) == 1) col_coords.push_back(c);
    if (detail::coord_group(c.kind) == 2) row_coords.push_back(c);
  }
  const auto pick = [&rng](const std::vector<Coordinate>& v) {
    return v[static_cast<std::size_t>(rng.uniform(0.0, 1.0) *
                                      static_cast<double>(v.size())) %
             v.size()];
  };
  const Coordinate ci = pick(col_coords), cj = pick(col_coords);
  const Coordinate rk = pick(row_coords), rs = pick(row_coords);

  double acc_a = 0.0, acc_b = 0.0, acc_c = 0.0;
  Matrix acc_d = Matrix::Zero(d_c * d_r, d_c * d_r);
  Matrix acc_e = Matrix::Zero(d_c * d_r, d_c * d_r);
  double acc_f = 0.0, acc_g = 0.0, acc_h = 0.0;
  for (Index s = 0; s < sample_count; ++s) {
    const Matrix x = sample_mt(p.W, f_c, f_r, nu, rng);
    const Matrix a = x - p.W;
    const Matrix v_c = inv.g_c * a;
    const Matrix v_r = a * inv.g_r;
    const Matrix t = v_c * inv.g_r;
    const double delta = (v_c.array() * v_r.array()).sum();
    const double r1 = 1.0 / (nu + delta);
    const Matrix p_n = t * v_c.transpose();
    const Matrix q_n = t.transpose() * v_r;
    const Matrix pl = p_n * p.C;
    const Matrix ql = q_n * p.R;
    const double quad_i = detail::seed_trace(ci, p_n, pl);
    const double quad_j = detail::seed_trace(cj, p_n, pl);
    const double quad_k = detail::seed_trace(rk, q_n, ql);
    const double quad_s = detail::seed_trace(rs, q_n, ql);
    const Vector eps = vec(a);

    acc_a += r1;
    acc_b += r1 * delta;
    acc_c += nu * nu * r1 * r1;
    acc_d.noalias() += r1 * (eps * eps.transpose());
    acc_e.noalias() += r1 * r1 * (eps * eps.transpose());
    acc_f += r1 * r1 * quad_k * quad_i;
    acc_g += r1 * r1 * quad_i * quad_j;
    acc_h += r1 * r1 * quad_k * quad_s;
  }
  const double count = static_cast<double>(sample_count);
  const double pair1 = (nu + big_d);
  const double pair2 = (nu + big_d) * (nu + big_d + 2.0);

  const double t_i = inv.trace(ci), t_j = inv.trace(cj);
  const double u_k = inv.trace(rk), u_s = inv.trace(rs);
  const double gg_ij = detail::seed_pair_trace(ci, cj, inv.g_c, inv.h_c,
                                               inv.k_c, inv.g_c, inv.h_c,
                                               inv.k_c);
  const double gg_ks = detail::seed_pair_trace(rk, rs, inv.g_r, inv.h_r,
                                               inv.k_r, inv.g_r, inv.h_r,
                                               inv.k_r);

  const Matrix sig_kron = kronecker(inv.g_r.inverse(), inv.g_c.inverse());
  const double cf_f = (big_d * u_k * t_i + 2.0 * u_k * t_i) / pair2;
  const double cf_g = (d_r * d_r * t_i * t_j + 2.0 * d_r * gg_ij) / pair2;
  const double cf_h = (d_c * d_c * u_k * u_s + 2.0 * d_c * gg_ks) / pair2;

  const auto rel = [](double mc, double cf) {
    return std::abs(mc - cf) / std::max(std::abs(cf), 1e-300);
  };
  IdentityReport report;
  report.relative_errors[0] = rel(acc_a / count, 1.0 / pair1);
  report.relative_errors[1] = rel(acc_b / count, big_d / pair1);
  report.relative_errors[2] = rel(acc_c / count, nu * (nu + 2.0) / pair2);
  report.relative_errors[3] =
      (acc_d / count - sig_kron / pair1).norm() / (sig_kron / pair1).norm();
  report.relative_errors[4] =
      (acc_e / count - sig_kron / pair2).norm() / (sig_kron / pair2).norm();
  report.relative_errors[5] = rel(acc_f / count, cf_f);
  report.relative_errors[6] = rel(acc_g / count, cf_g);
  report.relative_errors[7] = rel(acc_h / count, cf_h);
  return report;
}

}  // namespace tbfa
