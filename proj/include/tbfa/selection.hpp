#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "tbfa/common.hpp"
#include "tbfa/dataset.hpp"
#include "tbfa/estimation.hpp"
#include "tbfa/params.hpp"

namespace tbfa {

// -2 * loglik + D * ln N with D the free-parameter count of the fitted model
// (nu excluded when the fit was gaussian).  Constant likelihood terms are kept
// so values compare across the t and gaussian families.
inline double bic(const FitResult& fit, const MatrixDataset& data) {
  data.validate();
  const TbfaParams& p = fit.params;
  const double d_free = static_cast<double>(
      free_param_count(p.d_c(), p.d_r(), p.q_c(), p.q_r(), p.gaussian));
  return -2.0 * fit.log_likelihood() +
         d_free * std::log(static_cast<double>(data.n()));
}

struct SelectionCell {
  Index q_c = 0, q_r = 0;
  double bic = std::numeric_limits<double>::quiet_NaN();
  double loglik = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  double nu_hat = std::numeric_limits<double>::quiet_NaN();
  bool fitted = false;        // at least one restart produced a result
  std::string diagnostic;     // last failure message when !fitted
};

struct SelectionReport {
  std::vector<SelectionCell> grid;  // (q_c, q_r) lexicographic order
  Index best_q_c = 0, best_q_r = 0;

  const SelectionCell& cell(Index q_c, Index q_r) const {
    for (const SelectionCell& c : grid)
      if (c.q_c == q_c && c.q_r == q_r) return c;
    throw DomainError("SelectionReport: cell not in grid");
  }
  const SelectionCell& best() const { return cell(best_q_c, best_q_r); }
};

// Fits every (q_c, q_r) cell in the inclusive ranges, three random restarts
// per cell keeping the best likelihood, and picks the BIC-minimizing cell.
// Ties go to the smaller free-parameter count, then lexicographic order.
inline SelectionReport grid_select(const MatrixDataset& data,
                                   std::pair<Index, Index> q_c_range,
                                   std::pair<Index, Index> q_r_range,
                                   const FitConfig& config) {
  data.validate();
  config.validate();
  require(q_c_range.first <= q_c_range.second &&
              q_r_range.first <= q_r_range.second,
          "grid_select: empty range");
  require(q_c_range.first >= 0 && q_r_range.first >= 0 &&
              q_c_range.second <= max_factors(data.d_c) &&
              q_r_range.second <= max_factors(data.d_r),
          "grid_select: range outside the admissible factor counts");
  require(!config.init.has_value(),
          "grid_select: a fixed initialization cannot serve every cell");

  constexpr int kRestarts = 3;
  const RngStream master(config.seed);
  SelectionReport report;
  for (Index q_c = q_c_range.first; q_c <= q_c_range.second; ++q_c) {
    for (Index q_r = q_r_range.first; q_r <= q_r_range.second; ++q_r) {
      SelectionCell cell;
      cell.q_c = q_c;
      cell.q_r = q_r;
      const RngStream cell_stream =
          master.child(static_cast<std::uint64_t>(q_c) * 1024 +
                       static_cast<std::uint64_t>(q_r));
      for (int restart = 0; restart < kRestarts; ++restart) {
        FitConfig local = config;
        local.seed =
            cell_stream.child(static_cast<std::uint64_t>(restart)).seed();
        FitResult fit;
        try {
          fit = tbfa::fit(data, q_c, q_r, local);
        } catch (const std::exception& e) {
          cell.diagnostic = e.what();
          continue;
        }
        const double ll = fit.log_likelihood();
        const bool better =
            !cell.fitted || (fit.converged && !cell.converged) ||
            (fit.converged == cell.converged && ll > cell.loglik);
        if (better) {
          cell.loglik = ll;
          cell.converged = fit.converged;
          cell.nu_hat = fit.params.gaussian
                            ? std::numeric_limits<double>::infinity()
                            : fit.params.nu;
          cell.bic = bic(fit, data);
        }
        cell.fitted = true;
      }
      report.grid.push_back(cell);
    }
  }

  // Prefer converged cells; fall back to unconverged fits only when nothing
  // converged at all.  Ties break to fewer free parameters, then (q_c, q_r).
  const SelectionCell* best = nullptr;
  for (int pass = 0; pass < 2 && best == nullptr; ++pass) {
    const bool need_conv = pass == 0;
    for (const SelectionCell& c : report.grid) {
      if (!c.fitted || (need_conv && !c.converged)) continue;
      if (best == nullptr) {
        best = &c;
        continue;
      }
      if (c.bic < best->bic) {
        best = &c;
      } else if (c.bic == best->bic) {
        const Index dc_c = free_param_count(data.d_c, data.d_r, c.q_c, c.q_r,
                                            config.gaussian_mode);
        const Index dc_b = free_param_count(data.d_c, data.d_r, best->q_c,
                                            best->q_r, config.gaussian_mode);
        if (dc_c < dc_b ||
            (dc_c == dc_b && std::make_pair(c.q_c, c.q_r) <
                                 std::make_pair(best->q_c, best->q_r)))
          best = &c;
      }
    }
  }
  if (best == nullptr) {
    std::string diag = "grid_select: every cell failed to fit";
    for (const SelectionCell& c : report.grid)
      diag += "\n  (" + std::to_string(c.q_c) + "," + std::to_string(c.q_r) +
              "): " + (c.diagnostic.empty() ? "no result" : c.diagnostic);
    throw ConvergenceError(diag);
  }
  report.best_q_c = best->q_c;
  report.best_q_r = best->q_r;
  return report;
}

}  // namespace tbfa
