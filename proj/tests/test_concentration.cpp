/* Copyright (c) 2026 The robustgd Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "robustgd/concentration.hpp"

using namespace robustgd;

namespace {

TrialTable run(std::vector<std::size_t> dims, std::vector<std::size_t> widths, std::vector<Distribution> dists,
               std::size_t trials = 30, std::uint64_t seed = 1, unsigned threads = 2) {
  TrialGrid g{std::move(dims), std::move(widths), std::move(dists), trials, seed};
  return spectral_norm_trials(g, threads);
}

}  // namespace

TEST(Quantile, Type7) {
  const std::vector<double> xs{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(quantile_sorted(xs, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile_sorted(xs, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile_sorted(xs, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(quantile_sorted(xs, 0.9), 3.7);
}

TEST(Wilson, KnownIntervals) {
  const Interval zero = wilson_interval(0, 10);
  EXPECT_DOUBLE_EQ(zero.low, 0.0);
  EXPECT_NEAR(zero.high, 0.277532, 1e-6);
  const Interval half = wilson_interval(5, 10);
  EXPECT_NEAR(half.low, 0.236593, 1e-6);
  EXPECT_NEAR(half.high, 0.763407, 1e-6);
}

TEST(FitLine, ExactLineAndPropagatedError) {
  const std::vector<double> x{0, 1, 2, 3};
  const std::vector<double> y{1, 3, 5, 7};
  LineFit f = fit_line(x, y);
  EXPECT_NEAR(f.slope, 2.0, 1e-14);
  EXPECT_NEAR(f.intercept, 1.0, 1e-14);
  EXPECT_NEAR(f.slope_se, 0.0, 1e-14);
  // equal errors s: slope error is s / sqrt(Sxx), Sxx = 5
  f = fit_line(x, y, {0.1, 0.1, 0.1, 0.1});
  EXPECT_NEAR(f.slope_se, 0.1 / std::sqrt(5.0), 1e-14);
  EXPECT_THROW(fit_line({1, 1}, {0, 1}), Error);
  EXPECT_THROW(fit_line({1}, {0}), Error);
}

TEST(Trials, SingleRowIsAVectorNorm) {
  const TrialTable t = run({1}, {10000}, {Distribution::Laplace});
  const QuantileRow& q = t.cell(1, 10000, Distribution::Laplace);
  EXPECT_GE(q.ratio, 0.9);
  EXPECT_LE(q.ratio, 1.1);
  EXPECT_NEAR(q.ratio, q.median / 101.0, 1e-12);
}

TEST(Trials, SquareGaussianIsTwiceRootM) {
  const TrialTable t = run({100}, {100}, {Distribution::Gaussian});
  const double r = t.cell(100, 100, Distribution::Gaussian).median / 10.0;
  EXPECT_GE(r, 1.9);
  EXPECT_LE(r, 2.1);
}

TEST(Trials, MedianGrowsWithWidthAndLaplaceHasHeavierTail) {
  const TrialTable t = run({20}, {50, 200, 800}, {Distribution::Laplace, Distribution::Gaussian}, 60);
  for (Distribution dist : {Distribution::Laplace, Distribution::Gaussian}) {
    EXPECT_LT(t.cell(20, 50, dist).median, t.cell(20, 200, dist).median);
    EXPECT_LT(t.cell(20, 200, dist).median, t.cell(20, 800, dist).median);
  }
  for (std::size_t m : {50, 200, 800}) {
    const QuantileRow& q = t.cell(20, m, Distribution::Laplace);
    EXPECT_LE(q.median, q.p90);
    EXPECT_LE(q.p90, q.p99);
    EXPECT_GT(q.median_se, 0.0);
    EXPECT_LT(t.cell(20, m, Distribution::Gaussian).median, q.p99);
  }
  EXPECT_EQ(t.samples.size(), 2u * 3u * 60u);
}

TEST(Trials, DeterministicAcrossThreadCounts) {
  const TrialTable a = run({5, 10}, {20, 40}, {Distribution::Laplace}, 30, 7, 1);
  const TrialTable b = run({5, 10}, {20, 40}, {Distribution::Laplace}, 30, 7, 4);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t k = 0; k < a.samples.size(); ++k) EXPECT_EQ(a.samples[k].norm, b.samples[k].norm);
  const TrialTable c = run({5, 10}, {20, 40}, {Distribution::Laplace}, 30, 8, 1);
  EXPECT_NE(a.samples[0].norm, c.samples[0].norm);
}

TEST(Trials, GridValidation) {
  EXPECT_THROW(run({5}, {20}, {Distribution::Laplace}, 29), Error);
  EXPECT_THROW(run({}, {20}, {Distribution::Laplace}), Error);
  EXPECT_THROW(run({0}, {20}, {Distribution::Laplace}), Error);
}

TEST(Scaling, SlopeInWidthIsAboutOneHalfForWideMatrices) {
  const TrialTable t = run({4}, {400, 1600, 6400}, {Distribution::Gaussian}, 30);
  const ScalingFit f = fit_scaling(t, Distribution::Gaussian, ScalingFit::Axis::Width, 4, {400, 1600, 6400});
  EXPECT_NEAR(f.fit.slope, 0.5, 0.05);
  EXPECT_GT(f.fit.slope_se, 0.0);
}

TEST(EventRate, DimensionOneClearsTheBound) {
  const EventRate e = lower_bound_event_rate(1, 100, 10000, 3);
  EXPECT_NEAR(e.bound, 0.5 * std::exp(-std::sqrt(2.0)), 1e-15);
  EXPECT_GE(e.frequency, e.bound);
  EXPECT_TRUE(e.consistent);
  EXPECT_LE(e.ci.low, e.frequency);
  EXPECT_GE(e.ci.high, e.frequency);
}

TEST(EventRate, RefusesUnderPoweredRuns) {
  // exp(-sqrt 2 * 5) * 10^4 is about 8.5
  EXPECT_THROW(lower_bound_event_rate(5, 100, 10000, 1), Error);
  EXPECT_THROW(lower_bound_event_rate(0, 100, 10000, 1), Error);
}

TEST(Csv, Headers) {
  const TrialTable t = run({2}, {10, 20}, {Distribution::Laplace});
  std::ostringstream s, q;
  write_samples_csv(s, t);
  EXPECT_EQ(s.str().substr(0, s.str().find('\n')), "d,m,dist,trial,spectral_norm");
  TrialGrid g{{2}, {10, 20}, {Distribution::Laplace}, 30, 1};
  write_summary_csv(q, t, fit_all(t, g));
  std::istringstream lines(q.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) ++n;
  EXPECT_EQ(n, 1u + 2u + 1u);
}
