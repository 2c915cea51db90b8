#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

namespace convar {

/// Tolerance for vertex coincidence tests, in km.
inline constexpr double kGeomTolerance = 1e-9;

using Point = Eigen::Vector2d;
/// Counter-clockwise vertex list, no repeated closing vertex.
using Polygon = std::vector<Point>;

struct Site {
  std::string id;
  Point coord;
};

/// Station layout. Ids are unique and coordinates finite (checked on construction).
class StationSet {
 public:
  StationSet() = default;
  explicit StationSet(std::vector<Site> sites);

  Eigen::Index size() const { return static_cast<Eigen::Index>(sites_.size()); }
  const Site& operator[](Eigen::Index i) const { return sites_[static_cast<std::size_t>(i)]; }
  const std::vector<Site>& sites() const { return sites_; }
  /// N x 2 coordinate matrix.
  Eigen::MatrixX2d coords() const;
  /// Index of `id`, or -1.
  Eigen::Index index_of(const std::string& id) const;

 private:
  std::vector<Site> sites_;
};

struct Cell {
  /// Exact cell for bounded cells. Unbounded cells store the cell clipped to
  /// the site bounding box expanded by 25% per side.
  Polygon polygon;
  bool bounded = false;
  /// Scalar area |A_i| used as quadrature weight. Exact polygon area for
  /// bounded cells; neighbour-averaged (or clipped fallback) for unbounded ones.
  double area = 0.0;
  /// True when `area` came from the clipped polygon rather than neighbour averaging.
  bool clipped_fallback = false;
  std::vector<int> neighbors;
};

struct Tessellation {
  std::vector<Cell> cells;

  Eigen::VectorXd areas() const;
};

struct Region {
  Polygon boundary;

  /// Validates simplicity and positive area; orients counter-clockwise.
  explicit Region(Polygon boundary);
  double area() const;
};

struct ArealWeights {
  Eigen::VectorXd weights;
  /// Set when the region does not intersect any cell.
  bool disjoint = false;
};

Tessellation build_tessellation(const StationSet& sites);

ArealWeights areal_weights(const Tessellation& tess, const Region& region);

/// Signed shoelace area (positive for counter-clockwise order).
template <typename Scalar>
Scalar signed_area(const std::vector<Eigen::Matrix<Scalar, 2, 1>>& poly) {
  Scalar a(0);
  const std::size_t n = poly.size();
  for (std::size_t k = 0; k < n; ++k) {
    const auto& p = poly[k];
    const auto& q = poly[(k + 1) % n];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return a / Scalar(2);
}

template <typename Scalar>
Scalar polygon_area(const std::vector<Eigen::Matrix<Scalar, 2, 1>>& poly) {
  using std::abs;
  return abs(signed_area(poly));
}

/// Keep the part of `poly` where (p - origin) . normal <= 0. Works for any
/// simple subject polygon; non-convex subjects may gain zero-area bridges,
/// which leave the area unchanged.
Polygon clip_half_plane(const Polygon& poly, const Point& origin, const Point& normal);

/// Intersect an arbitrary simple polygon with a convex counter-clockwise polygon.
Polygon clip_to_convex(const Polygon& subject, const Polygon& convex);

bool point_in_polygon(const Point& p, const Polygon& poly, double tol = kGeomTolerance);

/// Symmetric matrix of Euclidean distances between the rows of `coords`.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> distance_matrix(
    const Eigen::MatrixBase<Derived>& coords) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = coords.rows();
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = Scalar(0);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = (coords.row(i) - coords.row(j)).norm();
    }
  }
  return d;
}

inline Eigen::MatrixXd distance_matrix(const StationSet& sites) { return distance_matrix(sites.coords()); }

}  // namespace convar
