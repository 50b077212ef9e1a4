#include "geoflow/autodiff/tape.hpp"

#include <cassert>
#include <cmath>

namespace geoflow::autodiff {

Var Tape::variable(double value) {
  nodes_.push_back({{0, 0}, {0.0, 0.0}, 0});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), value);
}

Var Tape::constant(double value) { return variable(value); }

Var Tape::unary(const Var& a, double value, double da) {
  assert(a.tape() == this);
  nodes_.push_back({{a.node(), 0}, {da, 0.0}, 1});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), value);
}

Var Tape::binary(const Var& a, const Var& b, double value, double da, double db) {
  assert(a.tape() == this && b.tape() == this);
  nodes_.push_back({{a.node(), b.node()}, {da, db}, 2});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), value);
}

std::vector<double> Tape::adjoints(const Var& output) const {
  std::vector<double> bar(nodes_.size(), 0.0);
  bar[output.node()] = 1.0;
  for (std::size_t i = output.node() + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    const double b = bar[i];
    if (b == 0.0) continue;
    for (std::uint8_t k = 0; k < n.arity; ++k) bar[n.parent[k]] += b * n.partial[k];
  }
  return bar;
}

namespace {
Tape& tape_of(const Var& v) { return *v.tape(); }
}  // namespace

Var operator+(const Var& a, const Var& b) { return tape_of(a).binary(a, b, a.value() + b.value(), 1.0, 1.0); }
Var operator-(const Var& a, const Var& b) { return tape_of(a).binary(a, b, a.value() - b.value(), 1.0, -1.0); }
Var operator*(const Var& a, const Var& b) {
  return tape_of(a).binary(a, b, a.value() * b.value(), b.value(), a.value());
}
Var operator/(const Var& a, const Var& b) {
  const double inv = 1.0 / b.value();
  return tape_of(a).binary(a, b, a.value() * inv, inv, -a.value() * inv * inv);
}
Var operator-(const Var& a) { return tape_of(a).unary(a, -a.value(), -1.0); }

Var operator+(const Var& a, double b) { return tape_of(a).unary(a, a.value() + b, 1.0); }
Var operator+(double a, const Var& b) { return b + a; }
Var operator-(const Var& a, double b) { return tape_of(a).unary(a, a.value() - b, 1.0); }
Var operator-(double a, const Var& b) { return tape_of(b).unary(b, a - b.value(), -1.0); }
Var operator*(const Var& a, double b) { return tape_of(a).unary(a, a.value() * b, b); }
Var operator*(double a, const Var& b) { return b * a; }
Var operator/(const Var& a, double b) { return tape_of(a).unary(a, a.value() / b, 1.0 / b); }
Var operator/(double a, const Var& b) {
  const double inv = 1.0 / b.value();
  return tape_of(b).unary(b, a * inv, -a * inv * inv);
}

Var tanh(const Var& a) {
  const double t = std::tanh(a.value());
  return tape_of(a).unary(a, t, 1.0 - t * t);
}
Var exp(const Var& a) {
  const double e = std::exp(a.value());
  return tape_of(a).unary(a, e, e);
}
Var log(const Var& a) { return tape_of(a).unary(a, std::log(a.value()), 1.0 / a.value()); }
Var sqrt(const Var& a) {
  const double s = std::sqrt(a.value());
  return tape_of(a).unary(a, s, 0.5 / s);
}
Var sin(const Var& a) { return tape_of(a).unary(a, std::sin(a.value()), std::cos(a.value())); }
Var cos(const Var& a) { return tape_of(a).unary(a, std::cos(a.value()), -std::sin(a.value())); }
Var square(const Var& a) { return tape_of(a).unary(a, a.value() * a.value(), 2.0 * a.value()); }
Var sigmoid(const Var& a) {
  const double s = 1.0 / (1.0 + std::exp(-a.value()));
  return tape_of(a).unary(a, s, s * (1.0 - s));
}

}  // namespace geoflow::autodiff
