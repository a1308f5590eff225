#include "lungsim/treesolve.hpp"

#include <cmath>
#include <string>

#include "lungsim/errors.hpp"

namespace lungsim {

TreeLinearSolver::TreeLinearSolver(std::span<const int> parent, std::span<const int> order)
    : parent_(parent.begin(), parent.end()), order_(order.begin(), order.end()) {
  const std::size_t n = parent_.size();
  if (order_.size() != n) throw SolverError("tree solver: order/parent size mismatch");
  m_.resize(n);
  psi_.resize(n);
  inv_pivot_.resize(n);
  phi_.resize(n);
  acc_.resize(n);
}

void TreeLinearSolver::factor(std::span<const double> d, std::span<const double> o,
                              std::span<const double> m) {
  const std::size_t n = parent_.size();
  std::fill(acc_.begin(), acc_.end(), 0.0);
  for (std::size_t k = 0; k < n; ++k) m_[k] = m[k];
  for (int k : order_) {
    const std::size_t ku = static_cast<std::size_t>(k);
    double pivot = d[ku] - acc_[ku];  // children already eliminated
    if (!(std::abs(pivot) > 1e-300) || !std::isfinite(pivot))
      throw SolverError("structurally singular system at node " + std::to_string(k));
    inv_pivot_[ku] = 1.0 / pivot;
    int pa = parent_[ku];
    if (pa >= 0) {
      psi_[ku] = o[ku] * inv_pivot_[ku];
      acc_[static_cast<std::size_t>(pa)] += m_[ku] * psi_[ku];
    } else {
      psi_[ku] = 0.0;
    }
  }
}

void TreeLinearSolver::solve(std::span<const double> b, std::span<double> x) const {
  const std::size_t n = parent_.size();
  std::fill(acc_.begin(), acc_.end(), 0.0);
  for (int k : order_) {
    const std::size_t ku = static_cast<std::size_t>(k);
    phi_[ku] = (b[ku] - acc_[ku]) * inv_pivot_[ku];
    int pa = parent_[ku];
    if (pa >= 0) acc_[static_cast<std::size_t>(pa)] += m_[ku] * phi_[ku];
  }
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const std::size_t ku = static_cast<std::size_t>(*it);
    int pa = parent_[ku];
    x[ku] = pa >= 0 ? phi_[ku] - psi_[ku] * x[static_cast<std::size_t>(pa)] : phi_[ku];
  }
}

}  // namespace lungsim
