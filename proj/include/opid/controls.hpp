#pragma once

#include <filesystem>
#include <string>

#include "opid/linalg.hpp"

namespace opid {

/// Per-channel box [lower, upper]. Zero must lie strictly inside.
class AdmissibleBox {
 public:
  AdmissibleBox(Vec lower, Vec upper);
  static AdmissibleBox symmetric(int channels, double bound = 1.0);

  int channels() const { return static_cast<int>(lower_.size()); }
  const Vec& lower() const { return lower_; }
  const Vec& upper() const { return upper_; }
  bool contains(const Vec& value, double tol = 0.0) const;

 private:
  Vec lower_;
  Vec upper_;
};

/// Piecewise-constant control on a uniform partition of [0, T]. Row i of
/// `values` holds the channel values on segment i.
class ControlSignal {
 public:
  ControlSignal(Mat values, double horizon);

  static ControlSignal constant(const Vec& value, double horizon,
                                int segments = 1);
  static ControlSignal zero(int channels, double horizon, int segments = 1);

  int segments() const { return static_cast<int>(values_.rows()); }
  int channels() const { return static_cast<int>(values_.cols()); }
  double horizon() const { return horizon_; }
  double segment_width() const { return horizon_ / segments(); }
  const Mat& values() const { return values_; }

  /// Segment containing t. Segments are right-open; t = T maps to the last.
  int segment_index(double t) const;
  Vec eval(double t) const;
  double l2_norm() const;

  bool operator==(const ControlSignal& other) const {
    return horizon_ == other.horizon_ && values_.rows() == other.values_.rows() &&
           values_.cols() == other.values_.cols() && values_ == other.values_;
  }

 private:
  Mat values_;
  double horizon_;
};

ControlSignal project(const ControlSignal& signal, const AdmissibleBox& box);

/// CSV with header `t_start,t_end,u0,...` and one row per segment. Values
/// are written with 17 significant digits so a read-back is exact.
void write_control_csv(const ControlSignal& signal,
                       const std::filesystem::path& path);
ControlSignal read_control_csv(const std::filesystem::path& path);
std::string control_to_csv(const ControlSignal& signal);
ControlSignal control_from_csv(const std::string& text);

}  // namespace opid
