#pragma once

#include "geoflow/common.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace geoflow::autodiff {

class Tape;

/// Scalar recorded on a tape. Cheap to copy; only valid while its tape is alive.
class Var {
 public:
  Var() = default;

  double value() const { return value_; }
  std::uint32_t node() const { return node_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t node, double value) : tape_(tape), node_(node), value_(value) {}

  Tape* tape_ = nullptr;
  std::uint32_t node_ = 0;
  double value_ = 0.0;
};

/// Append-only Wengert list. Each node stores up to two parents and the local partial
/// derivatives with respect to them, so the reverse sweep is a single pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(double value);
  Var constant(double value);

  Var unary(const Var& a, double value, double da);
  Var binary(const Var& a, const Var& b, double value, double da, double db);

  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from `output`; returns adjoints of every node.
  std::vector<double> adjoints(const Var& output) const;

 private:
  struct Node {
    std::uint32_t parent[2];
    double partial[2];
    std::uint8_t arity;
  };
  std::vector<Node> nodes_;
};

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);

Var operator+(const Var& a, double b);
Var operator+(double a, const Var& b);
Var operator-(const Var& a, double b);
Var operator-(double a, const Var& b);
Var operator*(const Var& a, double b);
Var operator*(double a, const Var& b);
Var operator/(const Var& a, double b);
Var operator/(double a, const Var& b);

Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);

}  // namespace geoflow::autodiff
