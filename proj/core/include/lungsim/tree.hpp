#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lungsim {

enum class Lobe : std::uint8_t { LUL = 0, LLL, RUL, RML, RLL };
inline constexpr int kNumLobes = 5;

const char* lobe_label(Lobe l);
std::optional<Lobe> lobe_from_label(const std::string& s);

// One reduced-dimensional airway element. Geometry is fixed after tree
// construction; only the `collapsible` flag is assigned in a second pass.
struct AirwayGeom {
  int id = 0;
  int parent = -1;  // -1 for the root
  int generation = 0;
  double length = 0;          // m
  double radius = 0;          // m
  double wall_thickness = 0;  // m
  double wall_modulus = 0;    // Pa
  double supplied_area = 0;   // m2, > 0 on leaves only
  Lobe lobe = Lobe::LUL;
  bool collapsible = false;
  double height = 0;  // m, ventral-to-dorsal midpoint coordinate

  bool operator==(const AirwayGeom&) const = default;
};

// Immutable binary airway tree with one terminal unit per leaf. Construction
// validates the structural invariants (single root, 0/2 children, generation
// increments, positive dimensions, supplied area on leaves).
class AirwayTree {
 public:
  explicit AirwayTree(std::vector<AirwayGeom> elements);

  int n_elements() const { return static_cast<int>(elems_.size()); }
  int n_units() const { return static_cast<int>(leaves_.size()); }
  int root() const { return root_; }

  const AirwayGeom& geom(int e) const { return elems_[static_cast<std::size_t>(e)]; }
  const std::vector<AirwayGeom>& elements() const { return elems_; }

  int parent(int e) const { return elems_[static_cast<std::size_t>(e)].parent; }
  bool is_leaf(int e) const { return children_[static_cast<std::size_t>(e)][0] < 0; }
  // {-1,-1} for leaves.
  const std::array<int, 2>& children(int e) const { return children_[static_cast<std::size_t>(e)]; }

  std::span<const int> leaves() const { return leaves_; }
  int unit_of_leaf(int e) const { return unit_of_leaf_[static_cast<std::size_t>(e)]; }
  int leaf_of_unit(int u) const { return leaves_[static_cast<std::size_t>(u)]; }

  // Unit whose internal pressure acts as the external load on element e:
  // the leaf reached by descending first-child links (the element's own unit
  // for leaves).
  int nearest_unit(int e) const { return nearest_unit_[static_cast<std::size_t>(e)]; }

  // Children listed before parents; root last.
  std::span<const int> post_order() const { return post_order_; }

  int max_generation() const { return max_generation_; }
  int count_collapsible() const;

  bool same_structure(const AirwayTree& other) const { return elems_ == other.elems_; }

 private:
  std::vector<AirwayGeom> elems_;
  std::vector<std::array<int, 2>> children_;
  std::vector<int> leaves_;        // leaf element ids, ascending; index = unit id
  std::vector<int> unit_of_leaf_;  // element id -> unit id or -1
  std::vector<int> nearest_unit_;
  std::vector<int> post_order_;
  int root_ = -1;
  int max_generation_ = 0;
};

struct TreeConfig {
  double length_ratio = 0.8;            // daughter/parent
  double diameter_ratio_major = 0.86;   // larger daughter
  double diameter_ratio_minor = 0.68;   // smaller daughter
  double root_length = 0.10;            // m
  double root_radius = 0.009;           // m
  double min_length = 1.2e-3;           // m, recursion stops below this
  double min_diameter = 0.4e-3;         // m
  int max_generation = 17;
  std::uint64_t asymmetry_seed = 0;
  double collapsible_fraction = 0.0;    // used by the synthetic density marker
  double height_extent = 0.25;          // m, ventral-to-dorsal lung size

  // Wall defaults are engineering choices, not literature values; override
  // per generation if measured data are available.
  double wall_modulus = 6.0e4;                    // Pa
  double wall_thickness_fraction = 0.1;           // h_w = fraction * diameter
  std::vector<double> wall_modulus_by_generation; // optional override table

  void validate() const;  // throws ConfigError
};

// Grows a binary tree by recursive halving of length/diameter until one of
// the termination rules fires (child shorter than min_length, child thinner
// than min_diameter, or generation budget exhausted). A branch becomes a
// leaf if either prospective child would violate a rule, which keeps the
// tree strictly binary. Deterministic for a fixed seed.
AirwayTree build_tree(const TreeConfig& config);

// Marks airways lying in dense (poorly aerated) regions as collapsible and
// propagates the flag to every distal descendant. `unit_density` holds one
// CT-style density in [-1000, 100] per terminal unit; an airway's region
// density is that of its nearest unit.
AirwayTree mark_collapsible(const AirwayTree& tree, std::span<const double> unit_density,
                            double threshold = -300.0);

// Synthetic stand-in for image-derived densities: a ventral-to-dorsal
// gradient calibrated so that roughly `collapsible_fraction` of the height
// range lies above the marking threshold, plus seeded jitter.
double synthetic_density(double z_fraction, double collapsible_fraction, std::uint64_t seed,
                         std::uint64_t id);
std::vector<double> synthetic_unit_densities(const AirwayTree& tree, double collapsible_fraction,
                                             std::uint64_t seed, double height_extent);
AirwayTree mark_collapsible_synthetic(const AirwayTree& tree, double collapsible_fraction,
                                      std::uint64_t seed, double height_extent);

// Line-oriented text format, one element per line. Round-trips bit-exactly.
void save_tree(const AirwayTree& tree, const std::string& path);
AirwayTree load_tree(const std::string& path);

}  // namespace lungsim
