#include "convar/geometry.hpp"

#include "convar/error.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_set>

namespace convar {

StationSet::StationSet(std::vector<Site> sites) : sites_(std::move(sites)) {
  std::unordered_set<std::string> seen;
  for (const auto& s : sites_) {
    if (!std::isfinite(s.coord.x()) || !std::isfinite(s.coord.y())) {
      throw ValidationError("station '" + s.id + "' has non-finite coordinates");
    }
    if (!seen.insert(s.id).second) throw ValidationError("duplicate station id '" + s.id + "'");
  }
}

Eigen::MatrixX2d StationSet::coords() const {
  Eigen::MatrixX2d c(size(), 2);
  for (Eigen::Index i = 0; i < size(); ++i) c.row(i) = sites_[static_cast<std::size_t>(i)].coord.transpose();
  return c;
}

Eigen::Index StationSet::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < sites_.size(); ++i) {
    if (sites_[i].id == id) return static_cast<Eigen::Index>(i);
  }
  return -1;
}

Eigen::VectorXd Tessellation::areas() const {
  Eigen::VectorXd a(static_cast<Eigen::Index>(cells.size()));
  for (std::size_t i = 0; i < cells.size(); ++i) a(static_cast<Eigen::Index>(i)) = cells[i].area;
  return a;
}

namespace {

double cross(const Point& a, const Point& b) { return a.x() * b.y() - a.y() * b.x(); }

bool segments_intersect(const Point& p1, const Point& p2, const Point& q1, const Point& q2) {
  auto orient = [](const Point& a, const Point& b, const Point& c) {
    const double v = cross(b - a, c - a);
    if (std::abs(v) < kGeomTolerance * kGeomTolerance) return 0;
    return v > 0 ? 1 : -1;
  };
  auto on_segment = [](const Point& a, const Point& b, const Point& c) {
    return std::min(a.x(), b.x()) - kGeomTolerance <= c.x() && c.x() <= std::max(a.x(), b.x()) + kGeomTolerance &&
           std::min(a.y(), b.y()) - kGeomTolerance <= c.y() && c.y() <= std::max(a.y(), b.y()) + kGeomTolerance;
  };
  const int o1 = orient(p1, p2, q1), o2 = orient(p1, p2, q2), o3 = orient(q1, q2, p1), o4 = orient(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(p1, p2, q1)) return true;
  if (o2 == 0 && on_segment(p1, p2, q2)) return true;
  if (o3 == 0 && on_segment(q1, q2, p1)) return true;
  if (o4 == 0 && on_segment(q1, q2, p2)) return true;
  return false;
}

Polygon box_polygon(const Point& lo, const Point& hi) {
  return {Point(lo.x(), lo.y()), Point(hi.x(), lo.y()), Point(hi.x(), hi.y()), Point(lo.x(), hi.y())};
}

// Cell of site i inside `box`, as the intersection of bisector half-planes.
Polygon voronoi_cell(const Eigen::MatrixX2d& coords, Eigen::Index i, const Polygon& box) {
  Polygon cell = box;
  const Point si = coords.row(i).transpose();
  for (Eigen::Index j = 0; j < coords.rows() && !cell.empty(); ++j) {
    if (j == i) continue;
    const Point sj = coords.row(j).transpose();
    cell = clip_half_plane(cell, 0.5 * (si + sj), sj - si);
  }
  return cell;
}

}  // namespace

Polygon clip_half_plane(const Polygon& poly, const Point& origin, const Point& normal) {
  Polygon out;
  const std::size_t n = poly.size();
  if (n == 0) return out;
  out.reserve(n + 2);
  for (std::size_t k = 0; k < n; ++k) {
    const Point& p = poly[k];
    const Point& q = poly[(k + 1) % n];
    const double fp = (p - origin).dot(normal);
    const double fq = (q - origin).dot(normal);
    const bool in_p = fp <= 0.0;
    const bool in_q = fq <= 0.0;
    if (in_p) out.push_back(p);
    if (in_p != in_q) {
      const double t = fp / (fp - fq);
      out.push_back(p + t * (q - p));
    }
  }
  // Drop consecutive duplicates introduced by vertices lying on the line.
  Polygon clean;
  clean.reserve(out.size());
  for (const auto& v : out) {
    if (clean.empty() || (v - clean.back()).norm() > kGeomTolerance) clean.push_back(v);
  }
  while (clean.size() > 1 && (clean.front() - clean.back()).norm() <= kGeomTolerance) clean.pop_back();
  if (clean.size() < 3) clean.clear();
  return clean;
}

Polygon clip_to_convex(const Polygon& subject, const Polygon& convex) {
  Polygon out = subject;
  const std::size_t n = convex.size();
  for (std::size_t k = 0; k < n && !out.empty(); ++k) {
    const Point& a = convex[k];
    const Point& b = convex[(k + 1) % n];
    const Point edge = b - a;
    // Outward normal of a counter-clockwise edge.
    out = clip_half_plane(out, a, Point(edge.y(), -edge.x()));
  }
  return out;
}

bool point_in_polygon(const Point& p, const Polygon& poly, double tol) {
  const std::size_t n = poly.size();
  bool inside = false;
  for (std::size_t k = 0, l = n - 1; k < n; l = k++) {
    const Point& a = poly[k];
    const Point& b = poly[l];
    // On-boundary counts as inside.
    const Point ab = b - a;
    const double len = ab.norm();
    if (len > 0.0) {
      const double t = std::clamp((p - a).dot(ab) / (len * len), 0.0, 1.0);
      if ((a + t * ab - p).norm() <= tol) return true;
    }
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (p.x() < x) inside = !inside;
    }
  }
  return inside;
}

Region::Region(Polygon b) : boundary(std::move(b)) {
  const std::size_t n = boundary.size();
  if (n < 3) throw ValidationError("region needs at least 3 vertices");
  for (const auto& v : boundary) {
    if (!std::isfinite(v.x()) || !std::isfinite(v.y())) throw ValidationError("region has non-finite vertex");
  }
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b2 = a + 1; b2 < n; ++b2) {
      const bool adjacent = b2 == a + 1 || (a == 0 && b2 == n - 1);
      if (adjacent) continue;
      if (segments_intersect(boundary[a], boundary[(a + 1) % n], boundary[b2], boundary[(b2 + 1) % n])) {
        throw ValidationError("region boundary is self-intersecting (edges " + std::to_string(a) + " and " +
                              std::to_string(b2) + ")");
      }
    }
  }
  const double s = signed_area(boundary);
  if (std::abs(s) <= kGeomTolerance) throw ValidationError("region has zero area");
  if (s < 0) std::reverse(boundary.begin(), boundary.end());
}

double Region::area() const { return polygon_area(boundary); }

Tessellation build_tessellation(const StationSet& sites) {
  const Eigen::Index n = sites.size();
  if (n < 3) throw ValidationError("tessellation needs at least 3 sites, got " + std::to_string(n));
  const Eigen::MatrixX2d coords = sites.coords();

  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if ((coords.row(i) - coords.row(j)).norm() <= kGeomTolerance) {
        throw ValidationError("sites '" + sites[i].id + "' and '" + sites[j].id + "' have identical coordinates");
      }
    }
  }

  const Point lo = coords.colwise().minCoeff().transpose();
  const Point hi = coords.colwise().maxCoeff().transpose();
  const double extent = std::max((hi - lo).maxCoeff(), 1.0);
  {
    // Collinearity: every site on the line through the two most distant ones.
    Eigen::Index a = 0, b = 1;
    double best = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double d = (coords.row(i) - coords.row(j)).norm();
        if (d > best) best = d, a = i, b = j;
      }
    }
    const Point pa = coords.row(a).transpose();
    const Point dir = (Point(coords.row(b).transpose()) - pa).normalized();
    bool collinear = true;
    for (Eigen::Index i = 0; i < n && collinear; ++i) {
      collinear = std::abs(cross(dir, Point(coords.row(i).transpose()) - pa)) <= kGeomTolerance * extent;
    }
    if (collinear) {
      std::string ids;
      for (Eigen::Index i = 0; i < n; ++i) ids += (i ? ", " : "") + sites[i].id;
      throw ValidationError("sites are collinear: " + ids);
    }
  }

  const Point centre = 0.5 * (lo + hi);
  const double half = 1e3 * extent;
  const Polygon far_box = box_polygon(centre - Point(half, half), centre + Point(half, half));
  const Point margin = 0.25 * (hi - lo);
  const Polygon clip_box = box_polygon(lo - margin, hi + margin);

  Tessellation tess;
  tess.cells.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Cell& cell = tess.cells[static_cast<std::size_t>(i)];
    const Polygon full = voronoi_cell(coords, i, far_box);
    const double touch = half * (1.0 - 1e-9);
    cell.bounded = std::none_of(full.begin(), full.end(), [&](const Point& v) {
      return std::abs(v.x() - centre.x()) >= touch || std::abs(v.y() - centre.y()) >= touch;
    });

    std::set<int> nb;
    for (std::size_t k = 0; k < full.size(); ++k) {
      const Point& p = full[k];
      const Point& q = full[(k + 1) % full.size()];
      if ((q - p).norm() <= kGeomTolerance * extent) continue;
      const Point mid = 0.5 * (p + q);
      if (std::abs(mid.x() - centre.x()) >= touch || std::abs(mid.y() - centre.y()) >= touch) continue;
      Eigen::Index best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double d = (Point(coords.row(j).transpose()) - mid).norm();
        if (d < best_d) best_d = d, best = j;
      }
      nb.insert(static_cast<int>(best));
    }
    cell.neighbors.assign(nb.begin(), nb.end());

    if (cell.bounded) {
      cell.polygon = full;
      cell.area = polygon_area(full);
    } else {
      cell.polygon = clip_to_convex(full, clip_box);
    }
  }

  // Unbounded cells: mean area of resolved neighbours, propagated outward.
  std::vector<bool> resolved(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < tess.cells.size(); ++i) resolved[i] = tess.cells[i].bounded;
  for (bool progress = true; progress;) {
    progress = false;
    std::vector<std::pair<std::size_t, double>> updates;
    for (std::size_t i = 0; i < tess.cells.size(); ++i) {
      if (resolved[i]) continue;
      double sum = 0.0;
      int count = 0;
      for (int j : tess.cells[i].neighbors) {
        if (resolved[static_cast<std::size_t>(j)]) sum += tess.cells[static_cast<std::size_t>(j)].area, ++count;
      }
      if (count > 0) updates.emplace_back(i, sum / count);
    }
    for (const auto& [i, a] : updates) {
      tess.cells[i].area = a;
      resolved[i] = true;
      progress = true;
    }
  }
  for (std::size_t i = 0; i < tess.cells.size(); ++i) {
    if (!resolved[i]) {
      tess.cells[i].area = polygon_area(tess.cells[i].polygon);
      tess.cells[i].clipped_fallback = true;
    }
  }
  return tess;
}

ArealWeights areal_weights(const Tessellation& tess, const Region& region) {
  ArealWeights out;
  out.weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(tess.cells.size()));
  const double total = region.area();
  for (std::size_t j = 0; j < tess.cells.size(); ++j) {
    const Polygon piece = clip_to_convex(region.boundary, tess.cells[j].polygon);
    if (!piece.empty()) out.weights(static_cast<Eigen::Index>(j)) = polygon_area(piece) / total;
  }
  out.disjoint = out.weights.sum() <= 0.0;
  return out;
}

}  // namespace convar
