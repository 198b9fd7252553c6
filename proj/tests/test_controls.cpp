#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "opid/controls.hpp"

using namespace opid;

TEST(AdmissibleBox, ZeroMustBeInterior) {
  Vec lo(2), hi(2);
  lo << -1.0, 0.0;
  hi << 1.0, 2.0;
  EXPECT_THROW(AdmissibleBox(lo, hi), DomainError);
  EXPECT_THROW(AdmissibleBox(Vec::Constant(1, -1.0), Vec::Constant(2, 1.0)), DimensionError);
  const AdmissibleBox box = AdmissibleBox::symmetric(2, 0.5);
  Vec v(2);
  v << 0.5, -0.25;
  EXPECT_TRUE(box.contains(v));
  v(0) = 0.6;
  EXPECT_FALSE(box.contains(v));
}

TEST(ControlSignal, SegmentLookup) {
  Mat v(4, 1);
  v << 1.0, 2.0, 3.0, 4.0;
  const ControlSignal u(v, 2.0);
  EXPECT_DOUBLE_EQ(u.segment_width(), 0.5);
  EXPECT_EQ(u.segment_index(0.0), 0);
  EXPECT_EQ(u.segment_index(0.5), 1);
  EXPECT_EQ(u.segment_index(2.0), 3);
  EXPECT_DOUBLE_EQ(u.eval(1.2)(0), 3.0);
  EXPECT_THROW(u.eval(2.5), DomainError);
}

TEST(ControlSignal, L2NormOfPiecewiseConstant) {
  Mat v(2, 2);
  v << 1.0, 2.0, -3.0, 0.0;
  const ControlSignal u(v, 4.0);
  // int |u|^2 = 2 * (1 + 4) + 2 * 9
  EXPECT_NEAR(u.l2_norm(), std::sqrt(28.0), 1e-14);
}

TEST(ControlSignal, RejectsInvalid) {
  EXPECT_THROW(ControlSignal(Mat(0, 1), 1.0), DomainError);
  EXPECT_THROW(ControlSignal(Mat::Zero(2, 1), -1.0), DomainError);
}

TEST(Project, ClampsIntoBox) {
  Mat v(3, 1);
  v << -5.0, 0.3, 7.0;
  const ControlSignal p = project(ControlSignal(v, 1.0), AdmissibleBox::symmetric(1, 1.0));
  EXPECT_DOUBLE_EQ(p.values()(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(p.values()(1, 0), 0.3);
  EXPECT_DOUBLE_EQ(p.values()(2, 0), 1.0);
}

TEST(ControlCsv, RoundTripIsExact) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat v(7, 3);
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 3; ++j) v(i, j) = u(rng);
  }
  const ControlSignal sig(v, M_PI);
  const std::string text = control_to_csv(sig);
  EXPECT_EQ(text.substr(0, text.find('\n')), "t_start,t_end,u0,u1,u2");
  const ControlSignal back = control_from_csv(text);
  EXPECT_TRUE(back == sig);
  EXPECT_EQ(control_to_csv(back), text);

  const auto path = std::filesystem::temp_directory_path() / "opid_control_roundtrip.csv";
  write_control_csv(sig, path);
  EXPECT_TRUE(read_control_csv(path) == sig);
  std::filesystem::remove(path);
}

TEST(ControlCsv, MalformedInput) {
  EXPECT_ANY_THROW(control_from_csv("bogus\n"));
  EXPECT_ANY_THROW(control_from_csv("t_start,t_end,u0\n0,0.5,1\n0.7,1,2\n"));
}
