#include "lungsim/tree.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "lungsim/csv.hpp"
#include "lungsim/errors.hpp"
#include "lungsim/rng.hpp"

namespace lungsim {

const char* lobe_label(Lobe l) {
  switch (l) {
    case Lobe::LUL: return "LUL";
    case Lobe::LLL: return "LLL";
    case Lobe::RUL: return "RUL";
    case Lobe::RML: return "RML";
    case Lobe::RLL: return "RLL";
  }
  return "LUL";
}

std::optional<Lobe> lobe_from_label(const std::string& s) {
  for (int i = 0; i < kNumLobes; ++i) {
    Lobe l = static_cast<Lobe>(i);
    if (s == lobe_label(l)) return l;
  }
  return std::nullopt;
}

AirwayTree::AirwayTree(std::vector<AirwayGeom> elements) : elems_(std::move(elements)) {
  const int n = static_cast<int>(elems_.size());
  if (n == 0) throw ConfigError("airway tree must contain at least one element");

  children_.assign(static_cast<std::size_t>(n), {-1, -1});
  for (int e = 0; e < n; ++e) {
    const AirwayGeom& g = elems_[static_cast<std::size_t>(e)];
    if (g.id != e)
      throw ConfigError("element ids must be dense 0..n-1 (element " + std::to_string(e) +
                        " has id " + std::to_string(g.id) + ")");
    if (!(g.length > 0 && g.radius > 0 && g.wall_thickness > 0))
      throw ConfigError("element " + std::to_string(e) + ": non-positive geometry");
    if (g.parent < 0) {
      if (root_ >= 0)
        throw ConfigError("multiple roots (elements " + std::to_string(root_) + " and " +
                          std::to_string(e) + ")");
      root_ = e;
      if (g.generation != 0) throw ConfigError("root generation must be 0");
    } else {
      if (g.parent >= n)
        throw ConfigError("element " + std::to_string(e) + ": parent " +
                          std::to_string(g.parent) + " does not exist");
      if (g.parent >= e)
        throw ConfigError("element " + std::to_string(e) +
                          ": parents must be declared before children");
      const AirwayGeom& p = elems_[static_cast<std::size_t>(g.parent)];
      if (g.generation != p.generation + 1)
        throw ConfigError("element " + std::to_string(e) +
                          ": generation must be parent generation + 1");
      auto& ch = children_[static_cast<std::size_t>(g.parent)];
      if (ch[0] < 0)
        ch[0] = e;
      else if (ch[1] < 0)
        ch[1] = e;
      else
        throw ConfigError("element " + std::to_string(g.parent) + " has more than 2 children");
    }
    max_generation_ = std::max(max_generation_, g.generation);
  }
  if (root_ < 0) throw ConfigError("airway tree has no root");

  unit_of_leaf_.assign(static_cast<std::size_t>(n), -1);
  for (int e = 0; e < n; ++e) {
    const auto& ch = children_[static_cast<std::size_t>(e)];
    if ((ch[0] < 0) != (ch[1] < 0))
      throw ConfigError("element " + std::to_string(e) + " has exactly one child; tree must be binary");
    if (ch[0] < 0) {
      if (!(elems_[static_cast<std::size_t>(e)].supplied_area > 0))
        throw ConfigError("leaf element " + std::to_string(e) + " needs supplied_area > 0");
      unit_of_leaf_[static_cast<std::size_t>(e)] = static_cast<int>(leaves_.size());
      leaves_.push_back(e);
    }
  }

  // Reachability doubles as a cycle check: every element must be reached
  // from the root exactly once.
  post_order_.reserve(static_cast<std::size_t>(n));
  std::vector<std::pair<int, int>> stack;  // (element, next child slot)
  stack.emplace_back(root_, 0);
  while (!stack.empty()) {
    auto& [e, slot] = stack.back();
    const auto& ch = children_[static_cast<std::size_t>(e)];
    if (slot < 2 && ch[slot] >= 0) {
      int c = ch[slot];
      ++slot;
      stack.emplace_back(c, 0);
    } else {
      post_order_.push_back(e);
      stack.pop_back();
    }
  }
  if (static_cast<int>(post_order_.size()) != n)
    throw ConfigError("tree contains elements unreachable from the root");

  nearest_unit_.assign(static_cast<std::size_t>(n), -1);
  for (int e : post_order_) {
    const auto& ch = children_[static_cast<std::size_t>(e)];
    nearest_unit_[static_cast<std::size_t>(e)] =
        ch[0] < 0 ? unit_of_leaf_[static_cast<std::size_t>(e)]
                  : nearest_unit_[static_cast<std::size_t>(ch[0])];
  }
}

int AirwayTree::count_collapsible() const {
  int c = 0;
  for (const auto& g : elems_) c += g.collapsible ? 1 : 0;
  return c;
}

void TreeConfig::validate() const {
  auto in_unit = [](double r) { return r > 0 && r <= 1.0; };
  if (!in_unit(length_ratio) || !in_unit(diameter_ratio_major) || !in_unit(diameter_ratio_minor))
    throw ConfigError("tree ratios must lie in (0, 1]");
  if (!(min_length > 0 && min_diameter > 0))
    throw ConfigError("min_length and min_diameter must be positive");
  if (!(root_length > 0 && root_radius > 0))
    throw ConfigError("root dimensions must be positive");
  if (max_generation < 0) throw ConfigError("max_generation must be >= 0");
  if (collapsible_fraction < 0 || collapsible_fraction > 1)
    throw ConfigError("collapsible_fraction must lie in [0, 1]");
  if (!(height_extent > 0)) throw ConfigError("height_extent must be positive");
  if (!(wall_modulus > 0) || !(wall_thickness_fraction > 0))
    throw ConfigError("wall parameters must be positive");

  // Reject configurations whose recursion cannot terminate at a sane size
  // before doing any work. The slowest-shrinking path is governed by the
  // major diameter ratio and the length ratio.
  auto generations_until = [](double start, double limit, double ratio) {
    if (ratio >= 1.0) return std::numeric_limits<int>::max();
    if (start < limit) return 0;
    return static_cast<int>(std::ceil(std::log(limit / start) / std::log(ratio)));
  };
  int g_len = generations_until(root_length, min_length, length_ratio);
  int g_dia = generations_until(2 * root_radius, min_diameter, diameter_ratio_major);
  int g_star = std::min({g_len, g_dia, max_generation});
  if (g_star > 22)
    throw ConfigError("tree configuration does not terminate below 2^22 elements; "
                      "tighten the ratios, the minimum sizes, or max_generation");
}

namespace {

// Ventral-to-dorsal height bands per lobe, as fractions of height_extent.
// Supine orientation: upper lobes ventral, lower lobes dorsal.
constexpr std::array<std::array<double, 2>, kNumLobes> kLobeBands{{
    {0.00, 0.55},  // LUL
    {0.45, 1.00},  // LLL
    {0.00, 0.55},  // RUL
    {0.25, 0.70},  // RML
    {0.45, 1.00},  // RLL
}};

double element_height(std::uint64_t seed, int id, Lobe lobe, double extent) {
  const auto& band = kLobeBands[static_cast<std::size_t>(lobe)];
  rng::Stream s(seed, static_cast<std::uint64_t>(id), /*tag=*/1);
  return extent * s.uniform(band[0], band[1]);
}

double wall_modulus_for(const TreeConfig& cfg, int generation) {
  const auto& table = cfg.wall_modulus_by_generation;
  if (table.empty()) return cfg.wall_modulus;
  std::size_t idx = std::min(static_cast<std::size_t>(generation), table.size() - 1);
  return table[idx];
}

}  // namespace

AirwayTree build_tree(const TreeConfig& config) {
  config.validate();
  constexpr double pi = std::numbers::pi;

  struct Pending {
    int parent;
    int generation;
    double length;
    double radius;
  };

  std::vector<AirwayGeom> elems;
  std::vector<Pending> queue;
  queue.push_back({-1, 0, config.root_length, config.root_radius});

  // Breadth-first construction assigns ids with parents before children.
  for (std::size_t head = 0; head < queue.size(); ++head) {
    Pending p = queue[head];
    AirwayGeom g;
    g.id = static_cast<int>(elems.size());
    g.parent = p.parent;
    g.generation = p.generation;
    g.length = p.length;
    g.radius = p.radius;
    g.wall_thickness = config.wall_thickness_fraction * 2 * p.radius;
    g.wall_modulus = wall_modulus_for(config, p.generation);
    elems.push_back(g);

    double child_len = p.length * config.length_ratio;
    double child_d_major = 2 * p.radius * config.diameter_ratio_major;
    double child_d_minor = 2 * p.radius * config.diameter_ratio_minor;
    bool stop = p.generation + 1 > config.max_generation ||
                child_len < config.min_length ||
                child_d_minor < config.min_diameter ||
                child_d_major < config.min_diameter;
    if (stop) continue;

    // The seed only decides which side carries the major daughter.
    rng::Stream s(config.asymmetry_seed, static_cast<std::uint64_t>(g.id), /*tag=*/0);
    bool major_first = s.uniform01() < 0.5;
    double r0 = (major_first ? child_d_major : child_d_minor) / 2;
    double r1 = (major_first ? child_d_minor : child_d_major) / 2;
    queue.push_back({g.id, p.generation + 1, child_len, r0});
    queue.push_back({g.id, p.generation + 1, child_len, r1});
  }

  // Lobe assignment: the five subtrees hanging off the first three
  // branching levels (two on the left, three on the right). Trunk elements
  // inherit the lobe of their first-child path.
  const int n = static_cast<int>(elems.size());
  std::vector<std::array<int, 2>> children(static_cast<std::size_t>(n), {-1, -1});
  for (int e = 0; e < n; ++e) {
    int pa = elems[static_cast<std::size_t>(e)].parent;
    if (pa < 0) continue;
    auto& ch = children[static_cast<std::size_t>(pa)];
    (ch[0] < 0 ? ch[0] : ch[1]) = e;
  }
  std::vector<int> lobe_root(kNumLobes, -1);
  {
    auto child = [&](int e, int k) { return e < 0 ? -1 : children[static_cast<std::size_t>(e)][k]; };
    int left = child(0, 0), right = child(0, 1);
    lobe_root[static_cast<int>(Lobe::LUL)] = child(left, 0);
    lobe_root[static_cast<int>(Lobe::LLL)] = child(left, 1);
    lobe_root[static_cast<int>(Lobe::RUL)] = child(right, 0);
    int right_lower = child(right, 1);
    lobe_root[static_cast<int>(Lobe::RML)] = child(right_lower, 0);
    lobe_root[static_cast<int>(Lobe::RLL)] = child(right_lower, 1);
  }
  std::vector<Lobe> lobe(static_cast<std::size_t>(n), Lobe::LUL);
  std::vector<bool> assigned(static_cast<std::size_t>(n), false);
  for (int li = 0; li < kNumLobes; ++li) {
    int r = lobe_root[static_cast<std::size_t>(li)];
    if (r < 0) continue;
    std::vector<int> stack{r};
    while (!stack.empty()) {
      int e = stack.back();
      stack.pop_back();
      lobe[static_cast<std::size_t>(e)] = static_cast<Lobe>(li);
      assigned[static_cast<std::size_t>(e)] = true;
      for (int c : children[static_cast<std::size_t>(e)])
        if (c >= 0) stack.push_back(c);
    }
  }
  for (int e = n - 1; e >= 0; --e) {
    if (assigned[static_cast<std::size_t>(e)]) continue;
    int c0 = children[static_cast<std::size_t>(e)][0];
    lobe[static_cast<std::size_t>(e)] =
        (c0 >= 0 && assigned[static_cast<std::size_t>(c0)]) ? lobe[static_cast<std::size_t>(c0)]
                                                            : Lobe::LUL;
    // children carry higher ids than parents, so a reverse sweep suffices
  }

  for (int e = 0; e < n; ++e) {
    auto& g = elems[static_cast<std::size_t>(e)];
    g.lobe = lobe[static_cast<std::size_t>(e)];
    g.height = element_height(config.asymmetry_seed, e, g.lobe, config.height_extent);
    if (children[static_cast<std::size_t>(e)][0] < 0)
      g.supplied_area = pi * g.radius * g.radius;
  }

  return AirwayTree(std::move(elems));
}

AirwayTree mark_collapsible(const AirwayTree& tree, std::span<const double> unit_density,
                            double threshold) {
  if (static_cast<int>(unit_density.size()) != tree.n_units())
    throw ConfigError("density map needs one value per terminal unit (" +
                      std::to_string(tree.n_units()) + "), got " +
                      std::to_string(unit_density.size()));
  for (std::size_t u = 0; u < unit_density.size(); ++u) {
    double d = unit_density[u];
    if (!(d >= -1000.0 && d <= 100.0))
      throw ConfigError("unit " + std::to_string(u) + ": density " + std::to_string(d) +
                        " outside the physical range [-1000, 100]");
  }

  std::vector<AirwayGeom> elems = tree.elements();
  // Seed flags from region density, then propagate root-to-leaf: everything
  // distal to a collapsible airway is collapsible as well. Ids are ordered
  // parents-first, so one forward sweep settles the propagation.
  for (int e = 0; e < tree.n_elements(); ++e) {
    int u = tree.nearest_unit(e);
    bool dense = unit_density[static_cast<std::size_t>(u)] > threshold;
    int pa = tree.parent(e);
    bool inherited = pa >= 0 && elems[static_cast<std::size_t>(pa)].collapsible;
    elems[static_cast<std::size_t>(e)].collapsible = dense || inherited;
  }
  return AirwayTree(std::move(elems));
}

double synthetic_density(double z_fraction, double collapsible_fraction, std::uint64_t seed,
                         std::uint64_t id) {
  double z = std::clamp(z_fraction, 0.0, 1.0);
  double base = -1000.0;
  if (collapsible_fraction >= 1.0) {
    base = -150.0;
  } else if (collapsible_fraction > 0.0 && z > 0.0) {
    // Exponent chosen so the gradient crosses the -300 marking threshold at
    // height fraction 1 - collapsible_fraction.
    double k = std::log(700.0 / 950.0) / std::log(1.0 - collapsible_fraction);
    base = -1000.0 + 950.0 * std::pow(z, k);
  }
  rng::Stream s(seed, id, /*tag=*/2);
  return std::clamp(base + s.uniform(-40.0, 40.0), -1000.0, 0.0);
}

std::vector<double> synthetic_unit_densities(const AirwayTree& tree, double collapsible_fraction,
                                             std::uint64_t seed, double height_extent) {
  std::vector<double> d(static_cast<std::size_t>(tree.n_units()));
  for (int u = 0; u < tree.n_units(); ++u) {
    double z = tree.geom(tree.leaf_of_unit(u)).height / height_extent;
    d[static_cast<std::size_t>(u)] =
        synthetic_density(z, collapsible_fraction, seed, static_cast<std::uint64_t>(u));
  }
  return d;
}

AirwayTree mark_collapsible_synthetic(const AirwayTree& tree, double collapsible_fraction,
                                      std::uint64_t seed, double height_extent) {
  return mark_collapsible(tree,
                          synthetic_unit_densities(tree, collapsible_fraction, seed, height_extent));
}

static const std::vector<std::string> kTreeHeader{
    "id", "parent", "generation", "length_m", "radius_m", "wall_thickness_m",
    "wall_modulus_pa", "supplied_area_m2", "lobe", "collapsible", "height_m"};

void save_tree(const AirwayTree& tree, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  for (std::size_t i = 0; i < kTreeHeader.size(); ++i)
    out << (i ? "," : "") << kTreeHeader[i];
  out << '\n';
  for (const AirwayGeom& g : tree.elements()) {
    out << g.id << ',';
    if (g.parent >= 0) out << g.parent;
    out << ',' << g.generation << ',' << csv::format_double(g.length) << ','
        << csv::format_double(g.radius) << ',' << csv::format_double(g.wall_thickness) << ','
        << csv::format_double(g.wall_modulus) << ',' << csv::format_double(g.supplied_area) << ','
        << lobe_label(g.lobe) << ',' << (g.collapsible ? 1 : 0) << ','
        << csv::format_double(g.height) << '\n';
  }
  if (!out) throw ParseError(path + ": write failed");
}

AirwayTree load_tree(const std::string& path) {
  csv::Table t = csv::read_table(path, kTreeHeader);

  // First pass collects declared ids so that forward references and missing
  // parents are reported by id rather than as a generic failure.
  std::vector<long> ids;
  ids.reserve(t.rows.size());
  for (const auto& r : t.rows) ids.push_back(csv::parse_long(t, r, 0, "id"));

  std::vector<AirwayGeom> elems(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    AirwayGeom g;
    long id = ids[i];
    if (id != static_cast<long>(i))
      throw ParseError(path + ":" + std::to_string(r.line) + ": ids must be dense and ordered (got " +
                       std::to_string(id) + ", expected " + std::to_string(i) + ")");
    g.id = static_cast<int>(id);
    const std::string& parent_field = r.fields[1];
    if (parent_field.empty()) {
      g.parent = -1;
    } else {
      long pa = csv::parse_long(t, r, 1, "parent");
      if (pa < 0 || pa >= static_cast<long>(ids.size()) || pa >= id)
        throw ParseError(path + ":" + std::to_string(r.line) + ": element " + std::to_string(id) +
                         " references missing or later-declared parent id " + std::to_string(pa));
      g.parent = static_cast<int>(pa);
    }
    g.generation = static_cast<int>(csv::parse_long(t, r, 2, "generation"));
    g.length = csv::parse_double(t, r, 3, "length_m");
    g.radius = csv::parse_double(t, r, 4, "radius_m");
    g.wall_thickness = csv::parse_double(t, r, 5, "wall_thickness_m");
    g.wall_modulus = csv::parse_double(t, r, 6, "wall_modulus_pa");
    g.supplied_area = csv::parse_double(t, r, 7, "supplied_area_m2");
    auto lobe = lobe_from_label(r.fields[8]);
    if (!lobe)
      throw ParseError(path + ":" + std::to_string(r.line) + ": field 'lobe': unknown label '" +
                       r.fields[8] + "'");
    g.lobe = *lobe;
    long coll = csv::parse_long(t, r, 9, "collapsible");
    if (coll != 0 && coll != 1)
      throw ParseError(path + ":" + std::to_string(r.line) + ": field 'collapsible': expected 0 or 1");
    g.collapsible = coll == 1;
    g.height = csv::parse_double(t, r, 10, "height_m");
    elems[i] = g;
  }
  try {
    return AirwayTree(std::move(elems));
  } catch (const ConfigError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace lungsim
