#pragma once

#include <utility>

namespace dcav {

/// Temporal segment as normalized (center, length) within [0, 1].
struct Segment {
  double center = 0.5;
  double length = 1.0;

  double start() const { return center - length / 2; }
  double end() const { return center + length / 2; }
  bool operator==(const Segment&) const = default;
};

/// c = (s+e)/2/duration, l = (e−s)/duration.
Segment normalize_segment(double start, double end, double duration);
/// Inverse of normalize_segment, returning (start, end) in seconds.
std::pair<double, double> denormalize_segment(const Segment& s, double duration);

/// Interval IoU of [c−l/2, c+l/2] clamped to [0, 1].
double tiou(const Segment& a, const Segment& b);

}  // namespace dcav
