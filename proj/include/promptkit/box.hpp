#pragma once

#include <array>
#include <utility>

namespace promptkit {

/// Corner-form box in normalized image coordinates.
struct BoxXYXY {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  static BoxXYXY from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
  std::array<double, 4> to_array() const { return {x1, y1, x2, y2}; }

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  std::pair<double, double> center() const { return {0.5 * (x1 + x2), 0.5 * (y1 + y2)}; }

  /// Finite and ordered (x1 <= x2, y1 <= y2).
  bool ordered() const;
  /// ordered() and every coordinate in [0, 1].
  bool valid() const;

  bool operator==(const BoxXYXY&) const = default;
};

}  // namespace promptkit
