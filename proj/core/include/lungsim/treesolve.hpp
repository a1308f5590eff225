#pragma once

#include <span>
#include <vector>

namespace lungsim {

// Direct solver for linear systems whose sparsity graph is a rooted tree:
// row k reads  d[k] x_k + o[k] x_parent(k) + sum_c m[c] x_c = b[k]
// over the children c of k, with x of the (virtual) parent of the root fixed
// at zero. Elimination runs leaves-to-root, back-substitution root-to-leaves;
// the tree ordering produces no fill, so factor and solve are both O(n).
// The symbolic structure is fixed at construction; factor() refreshes the
// numeric sweep and may be reused for any number of right-hand sides.
class TreeLinearSolver {
 public:
  // `parent[k]` is the parent node of k, -1 for the root. `order` must list
  // children before parents (a post-order).
  TreeLinearSolver(std::span<const int> parent, std::span<const int> order);

  // Throws SolverError naming the offending node when a pivot vanishes
  // (structurally singular system, e.g. a node with no remaining coupling).
  void factor(std::span<const double> d, std::span<const double> o, std::span<const double> m);

  void solve(std::span<const double> b, std::span<double> x) const;

  int size() const { return static_cast<int>(parent_.size()); }

 private:
  std::vector<int> parent_;
  std::vector<int> order_;
  std::vector<double> m_;    // child coefficient, copied at factor time
  std::vector<double> psi_;  // x_k = phi_k - psi_k x_parent
  std::vector<double> inv_pivot_;
  mutable std::vector<double> phi_;
  mutable std::vector<double> acc_;
};

}  // namespace lungsim
