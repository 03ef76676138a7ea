#include "sqg/domain.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sqg {

double dot(ConstSpan a, ConstSpan b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(ConstSpan a) { return std::sqrt(dot(a, a)); }

double distance(ConstSpan a, ConstSpan b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return std::sqrt(s);
}

bool all_finite(ConstSpan a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

UpperDomain UpperDomain::box(Vector lo, Vector hi) {
  if (lo.empty() || lo.size() != hi.size()) {
    throw InvalidArgument("box bounds must be nonempty and of equal length");
  }
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (!(lo[i] < hi[i])) {
      std::ostringstream os;
      os << "box requires lo < hi, violated at coordinate " << i << " (" << lo[i] << ", " << hi[i]
         << ")";
      throw InvalidArgument(os.str());
    }
  }
  return UpperDomain(Box{std::move(lo), std::move(hi)});
}

UpperDomain UpperDomain::ball(Vector center, double radius) {
  if (center.empty()) throw InvalidArgument("ball center must be nonempty");
  if (!(radius > 0.0)) throw InvalidArgument("ball radius must be positive");
  return UpperDomain(Ball{std::move(center), radius});
}

UpperDomain UpperDomain::cube(std::size_t dim, double lo, double hi) {
  return box(Vector(dim, lo), Vector(dim, hi));
}

std::size_t UpperDomain::dim() const {
  return is_box() ? as_box().lo.size() : as_ball().center.size();
}

void UpperDomain::check_dim(std::size_t n) const {
  if (n != dim()) {
    std::ostringstream os;
    os << "point has dimension " << n << " but the domain has dimension " << dim();
    throw InvalidArgument(os.str());
  }
}

void UpperDomain::project_inplace(MutSpan point) const {
  check_dim(point.size());
  if (is_box()) {
    const Box& b = as_box();
    for (std::size_t i = 0; i < point.size(); ++i) point[i] = std::clamp(point[i], b.lo[i], b.hi[i]);
    return;
  }
  const Ball& b = as_ball();
  const double r = distance(point, b.center);
  if (r <= b.radius) return;
  const double scale = b.radius / r;
  for (std::size_t i = 0; i < point.size(); ++i) {
    point[i] = b.center[i] + scale * (point[i] - b.center[i]);
  }
}

Vector UpperDomain::project(ConstSpan point) const {
  Vector out(point.begin(), point.end());
  project_inplace(out);
  return out;
}

bool UpperDomain::contains(ConstSpan point, double tol) const {
  check_dim(point.size());
  if (is_box()) {
    const Box& b = as_box();
    for (std::size_t i = 0; i < point.size(); ++i) {
      if (point[i] < b.lo[i] - tol || point[i] > b.hi[i] + tol) return false;
    }
    return true;
  }
  const Ball& b = as_ball();
  return distance(point, b.center) <= b.radius + tol;
}

std::string UpperDomain::describe() const {
  std::ostringstream os;
  if (is_box()) {
    const Box& b = as_box();
    os << "Box[";
    for (std::size_t i = 0; i < b.lo.size(); ++i) {
      os << (i ? ", " : "") << "[" << b.lo[i] << ", " << b.hi[i] << "]";
    }
    os << "]";
  } else {
    const Ball& b = as_ball();
    os << "Ball(dim=" << b.center.size() << ", radius=" << b.radius << ")";
  }
  return os.str();
}

InteriorizedDomain interiorize(const UpperDomain& domain, double rho) {
  if (!(rho >= 0.0)) throw InvalidArgument("interiorization margin must be nonnegative");
  if (domain.is_box()) {
    const Box& b = domain.as_box();
    Vector lo = b.lo, hi = b.hi;
    for (std::size_t i = 0; i < lo.size(); ++i) {
      if (!(hi[i] - lo[i] > 2.0 * rho)) {
        std::ostringstream os;
        os << "interiorizing " << domain.describe() << " by rho=" << rho
           << " leaves an empty set: coordinate " << i << " has width " << (hi[i] - lo[i])
           << " <= 2*rho";
        throw ConfigError(os.str());
      }
      lo[i] += rho;
      hi[i] -= rho;
    }
    return {domain, rho, UpperDomain::box(std::move(lo), std::move(hi))};
  }
  const Ball& b = domain.as_ball();
  if (!(b.radius > rho)) {
    std::ostringstream os;
    os << "interiorizing " << domain.describe() << " by rho=" << rho
       << " leaves an empty set: radius " << b.radius << " <= rho";
    throw ConfigError(os.str());
  }
  return {domain, rho, UpperDomain::ball(b.center, b.radius - rho)};
}

Vector gradient_mapping(const UpperDomain& domain, ConstSpan theta, ConstSpan g, double eta) {
  if (!(eta > 0.0)) throw InvalidArgument("gradient mapping requires eta > 0");
  if (theta.size() != g.size()) throw InvalidArgument("theta and g dimensions differ");
  Vector step(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) step[i] = theta[i] - eta * g[i];
  domain.project_inplace(step);
  for (std::size_t i = 0; i < theta.size(); ++i) step[i] = (theta[i] - step[i]) / eta;
  return step;
}

}  // namespace sqg
