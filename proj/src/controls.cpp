#include "opid/controls.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace opid {

AdmissibleBox::AdmissibleBox(Vec lower, Vec upper)
    : lower_(std::move(lower)), upper_(std::move(upper)) {
  if (lower_.size() != upper_.size()) {
    throw DimensionError("AdmissibleBox: lower and upper differ in length");
  }
  for (Eigen::Index i = 0; i < lower_.size(); ++i) {
    if (!(lower_(i) < 0.0 && 0.0 < upper_(i))) {
      throw DomainError("AdmissibleBox: zero must be interior on channel " +
                        std::to_string(i));
    }
  }
}

AdmissibleBox AdmissibleBox::symmetric(int channels, double bound) {
  return AdmissibleBox(Vec::Constant(channels, -bound), Vec::Constant(channels, bound));
}

bool AdmissibleBox::contains(const Vec& value, double tol) const {
  if (value.size() != lower_.size()) return false;
  return ((value - lower_).array() >= -tol).all() &&
         ((upper_ - value).array() >= -tol).all();
}

ControlSignal::ControlSignal(Mat values, double horizon)
    : values_(std::move(values)), horizon_(horizon) {
  if (values_.rows() < 1) throw DomainError("ControlSignal: needs >= 1 segment");
  if (!(horizon_ > 0.0) || !std::isfinite(horizon_)) {
    throw DomainError("ControlSignal: horizon must be positive");
  }
  require_finite(values_, "ControlSignal");
}

ControlSignal ControlSignal::constant(const Vec& value, double horizon,
                                      int segments) {
  Mat v(segments, value.size());
  for (int i = 0; i < segments; ++i) v.row(i) = value.transpose();
  return ControlSignal(std::move(v), horizon);
}

ControlSignal ControlSignal::zero(int channels, double horizon, int segments) {
  return ControlSignal(Mat::Zero(segments, channels), horizon);
}

int ControlSignal::segment_index(double t) const {
  if (t < 0.0 || t > horizon_) {
    throw DomainError("ControlSignal::eval: t outside [0, T]");
  }
  const int s = static_cast<int>(std::floor(t / horizon_ * segments()));
  return std::min(s, segments() - 1);
}

Vec ControlSignal::eval(double t) const {
  return values_.row(segment_index(t)).transpose();
}

double ControlSignal::l2_norm() const {
  return std::sqrt(values_.squaredNorm() * segment_width());
}

ControlSignal project(const ControlSignal& signal, const AdmissibleBox& box) {
  if (box.channels() != signal.channels()) {
    throw DimensionError("project: box and signal channel counts differ");
  }
  Mat v = signal.values();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    v.row(i) = v.row(i)
                   .cwiseMax(box.lower().transpose())
                   .cwiseMin(box.upper().transpose());
  }
  return ControlSignal(std::move(v), signal.horizon());
}

namespace {

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

std::string control_to_csv(const ControlSignal& signal) {
  std::ostringstream out;
  out << "t_start,t_end";
  for (int c = 0; c < signal.channels(); ++c) out << ",u" << c;
  out << '\n';
  const double w = signal.segment_width();
  for (int s = 0; s < signal.segments(); ++s) {
    const double t1 = (s + 1 == signal.segments()) ? signal.horizon() : (s + 1) * w;
    out << format_double(s * w) << ',' << format_double(t1);
    for (int c = 0; c < signal.channels(); ++c) {
      out << ',' << format_double(signal.values()(s, c));
    }
    out << '\n';
  }
  return out.str();
}

ControlSignal control_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("t_start,t_end", 0) != 0) {
    throw DomainError("control csv: missing header");
  }
  std::vector<std::vector<double>> rows;
  std::vector<std::pair<double, double>> spans;
  double horizon = 0.0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> fields;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        fields.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw DomainError("control csv: bad number '" + cell + "'");
      }
    }
    if (fields.size() < 3) throw DomainError("control csv: row has no channels");
    horizon = fields[1];
    spans.emplace_back(fields[0], fields[1]);
    rows.emplace_back(fields.begin() + 2, fields.end());
    if (rows.back().size() != rows.front().size()) {
      throw DomainError("control csv: ragged rows");
    }
  }
  if (rows.empty()) throw DomainError("control csv: no segments");
  const double w = horizon / static_cast<double>(rows.size());
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (std::abs(spans[i].first - i * w) > 1e-9 * std::abs(horizon) ||
        std::abs(spans[i].second - (i + 1) * w) > 1e-9 * std::abs(horizon)) {
      throw DomainError("control csv: segments do not form a uniform partition");
    }
  }
  Mat v(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) v(i, j) = rows[i][j];
  }
  return ControlSignal(std::move(v), horizon);
}

void write_control_csv(const ControlSignal& signal,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << control_to_csv(signal);
}

ControlSignal read_control_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return control_from_csv(buf.str());
}

}  // namespace opid
