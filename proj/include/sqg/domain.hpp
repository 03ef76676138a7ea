#pragma once

#include <variant>

#include "sqg/types.hpp"

namespace sqg {

struct Box {
  Vector lo;
  Vector hi;
};

struct Ball {
  Vector center;
  double radius = 1.0;
};

/// Compact convex feasible set for the upper-level variable. Only boxes and
/// Euclidean balls are supported; both admit a closed-form projection.
class UpperDomain {
 public:
  static UpperDomain box(Vector lo, Vector hi);
  static UpperDomain ball(Vector center, double radius);
  /// [lo, hi]^dim
  static UpperDomain cube(std::size_t dim, double lo, double hi);

  std::size_t dim() const;
  bool is_box() const { return std::holds_alternative<Box>(kind_); }
  const Box& as_box() const { return std::get<Box>(kind_); }
  const Ball& as_ball() const { return std::get<Ball>(kind_); }

  Vector project(ConstSpan point) const;
  void project_inplace(MutSpan point) const;
  bool contains(ConstSpan point, double tol = 0.0) const;
  std::string describe() const;

 private:
  explicit UpperDomain(std::variant<Box, Ball> kind) : kind_(std::move(kind)) {}
  void check_dim(std::size_t n) const;

  std::variant<Box, Ball> kind_;
};

/// The set of points whose closed rho-ball stays inside `base`.
struct InteriorizedDomain {
  UpperDomain base;
  double margin = 0.0;
  UpperDomain shrunk;
};

InteriorizedDomain interiorize(const UpperDomain& domain, double rho);

/// eta^{-1} (theta - Proj(theta - eta * g)).
Vector gradient_mapping(const UpperDomain& domain, ConstSpan theta, ConstSpan g, double eta);

}  // namespace sqg
