#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cthgr/dsp.hpp"
#include "cthgr/synthetic.hpp"

using namespace cthgr;

namespace {

// analytic |H| of the bilinear first-order low-pass: 1/sqrt(1 + (tan(w/2)/K)^2)
double analytic_lowpass_gain(double freq_hz, double cutoff_hz, double fs) {
  const double k = std::tan(M_PI * cutoff_hz / fs);
  const double t = std::tan(M_PI * freq_hz / fs) / k;
  return 1.0 / std::sqrt(1.0 + t * t);
}

}  // namespace

TEST(Butterworth, CoefficientsAtOneHz2048) {
  const auto c = butterworth_coeffs(1.0, 2048.0);
  EXPECT_NEAR(c.b0, 1.53163e-3, 1e-8);
  EXPECT_DOUBLE_EQ(c.b0, c.b1);
  EXPECT_NEAR(c.a1, -0.996937, 1e-6);
}

TEST(Butterworth, UnityDcGain) {
  EXPECT_NEAR(butterworth_gain_at(0.0, 1.0, 2048.0), 1.0, 1e-12);
  // steady state on a constant input
  std::vector<double> x(20000, 0.7);
  const auto y = butterworth_lowpass(x, 1.0, 2048.0);
  EXPECT_NEAR(y.back(), 0.7, 1e-9);
}

TEST(Butterworth, ZeroNyquistGain) {
  EXPECT_NEAR(butterworth_gain_at(1024.0, 1.0, 2048.0), 0.0, 1e-12);
  std::vector<double> x(20000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i % 2 == 0) ? 1.0 : -1.0;
  const auto y = butterworth_lowpass(x, 1.0, 2048.0);
  EXPECT_NEAR(y.back(), 0.0, 1e-9);
}

TEST(Butterworth, MagnitudeAtTenHzMatchesAnalytic) {
  const double a = butterworth_gain_at(10.0, 1.0, 2048.0);
  const double b = analytic_lowpass_gain(10.0, 1.0, 2048.0);
  EXPECT_NEAR(a, b, 1e-9);
}

TEST(Butterworth, RejectsCutoffAtOrAboveNyquist) {
  std::vector<double> x(8, 0.0);
  EXPECT_THROW(butterworth_lowpass(x, 1024.0, 2048.0), Error);
  EXPECT_THROW(butterworth_lowpass(x, 2000.0, 2048.0), Error);
}

TEST(Butterworth, LinearityCausalZeroState) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uni(-1, 1);
  std::vector<double> x(512), y(512), mix(512);
  const double a = 1.3, b = -0.4;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = uni(rng);
    y[i] = uni(rng);
    mix[i] = a * x[i] + b * y[i];
  }
  const auto fx = butterworth_lowpass(x, 5.0, 2048.0);
  const auto fy = butterworth_lowpass(y, 5.0, 2048.0);
  const auto fm = butterworth_lowpass(mix, 5.0, 2048.0);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(fm[i], a * fx[i] + b * fy[i], 1e-9);
}

TEST(Butterworth, ZeroPhaseConstantStaysConstant) {
  std::vector<double> x(20000, 0.3);
  const auto y = butterworth_lowpass(x, 1.0, 2048.0, FilterMode::ZeroPhase);
  EXPECT_NEAR(y[y.size() / 2], 0.3, 1e-6);
}

TEST(Envelope, ZeroSignalStaysZero) {
  PreprocessConfig cfg;
  std::vector<double> x(100, 0.0);
  for (double v : envelope(x, cfg, 2048.0)) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Envelope, SignInvariantWhenRectified) {
  PreprocessConfig cfg;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0, 1);
  std::vector<double> x(256), neg(256);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = g(rng);
    neg[i] = -x[i];
  }
  EXPECT_EQ(envelope(x, cfg, 2048.0), envelope(neg, cfg, 2048.0));
}

TEST(Envelope, ImpulseDecaysGeometrically) {
  PreprocessConfig cfg;  // fc = 1 Hz
  std::vector<double> x(64, 0.0);
  x[0] = 1.0;
  const auto y = envelope(x, cfg, 2048.0);
  const auto c = butterworth_coeffs(1.0, 2048.0);
  for (std::size_t i = 2; i + 1 < y.size(); ++i)
    EXPECT_NEAR(y[i + 1] / y[i], -c.a1, 1e-12);
  EXPECT_NEAR(-c.a1, 0.996937, 1e-6);
  for (double v : y) EXPECT_GE(v, 0.0);  // non-negative in causal rectified mode
}

// ---------------------------------------------------------------------
// mu-law

TEST(MuLaw, FixedPointsExact) {
  EXPECT_DOUBLE_EQ(mu_law(0.0, 255.0), 0.0);
  EXPECT_DOUBLE_EQ(mu_law(1.0, 255.0), 1.0);
  EXPECT_DOUBLE_EQ(mu_law(-1.0, 255.0), -1.0);
}

TEST(MuLaw, HalfInputKnownValue) {
  // high-precision evaluation: ln(1 + 255*0.5) / ln(256)
  const double expect = std::log(128.5) / std::log(256.0);
  EXPECT_NEAR(mu_law(0.5, 255.0), expect, 1e-15);
  EXPECT_NEAR(mu_law(0.5, 255.0), 0.875703, 1e-6);
}

TEST(MuLaw, DomainError) {
  EXPECT_THROW(mu_law(1.5, 255.0), Error);
  EXPECT_THROW(mu_law(-1.0001, 255.0), Error);
  EXPECT_THROW(mu_law(0.5, 0.0), Error);
}

TEST(MuLaw, OddIncreasingOnto) {
  const double mu = 255.0;
  double prev = -1.0 - 1e-9;
  for (int i = 0; i <= 2000; ++i) {
    const double x = -1.0 + 2.0 * i / 2000.0;
    const double y = mu_law(x, mu);
    EXPECT_NEAR(y, -mu_law(-x, mu), 1e-12);  // odd
    EXPECT_GT(y, prev);                       // strictly increasing
    EXPECT_LE(std::abs(y), 1.0 + 1e-12);      // into [-1, 1]
    prev = y;
  }
  EXPECT_DOUBLE_EQ(mu_law(-1.0, mu), -1.0);  // onto: endpoints reached
  EXPECT_DOUBLE_EQ(mu_law(1.0, mu), 1.0);
}

// ---------------------------------------------------------------------
// windowing

TEST(Windowing, CountFormulaExamples) {
  EXPECT_EQ(window_count(2048, 256, 32), 57u);
  EXPECT_EQ(window_count(100, 256, 32), 0u);
  EXPECT_EQ(window_count(10, 1, 1), 10u);
}

TEST(Windowing, CountFormulaMatchesEnumeration) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> run_d(0, 3000), w_d(1, 600), s_d(1, 100);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t run = run_d(rng), w = w_d(rng), s = s_d(rng);
    std::size_t brute = 0;
    for (std::size_t start = 0; start + w <= run; start += s) ++brute;
    EXPECT_EQ(window_count(run, w, s), brute) << "run=" << run << " W=" << w << " skip=" << s;
  }
}

TEST(Windowing, DefaultSkipPairs) {
  EXPECT_EQ(default_skip_for(64), 32u);
  EXPECT_EQ(default_skip_for(128), 32u);
  EXPECT_EQ(default_skip_for(256), 32u);
  EXPECT_EQ(default_skip_for(512), 64u);
}

namespace {

Recording tiny_recording(const std::vector<int>& labels, const std::vector<int>& reps,
                         std::size_t n_horizontal = 4) {
  Recording rec;
  rec.subject_id = "t";
  rec.layout.n_horizontal = n_horizontal;
  rec.channels = rec.layout.channels();
  rec.samples = labels.size();
  rec.gesture_label = labels;
  rec.repetition = reps;
  rec.signal.resize(rec.samples * rec.channels);
  for (std::size_t t = 0; t < rec.samples; ++t)
    for (std::size_t c = 0; c < rec.channels; ++c)
      rec.signal[t * rec.channels + c] = static_cast<float>(t) + 0.001f * static_cast<float>(c);
  rec.validate();
  return rec;
}

}  // namespace

TEST(Windowing, SegmentNeverCrossesBoundaries) {
  // adversarial run structure: labels/repetitions change at odd offsets
  std::vector<int> labels, reps;
  auto run = [&](int l, int r, int n) {
    for (int i = 0; i < n; ++i) {
      labels.push_back(l);
      reps.push_back(r);
    }
  };
  run(1, 1, 7);
  run(1, 2, 5);  // same label, new repetition: still a boundary
  run(2, 2, 4);
  run(3, 1, 3);
  auto rec = tiny_recording(labels, reps);
  WindowSpec spec{4, 2};
  const auto batch = segment(rec, spec);
  // runs of 7,5,4,3 with W=4, skip=2 -> 2+1+1+0 windows
  EXPECT_EQ(batch.count, 4u);
  EXPECT_EQ(batch.labels, (std::vector<int>{1, 1, 2, 2}));
  EXPECT_EQ(batch.fold_key, (std::vector<int>{1, 2, 2, 2}));
  // time index embedded in the signal: check windows align to run offsets
  const std::size_t cs = batch.n_ch * batch.n_cv;
  EXPECT_FLOAT_EQ(batch.window(0)[0], 0.0f);
  EXPECT_FLOAT_EQ(batch.window(1)[0], 2.0f);
  EXPECT_FLOAT_EQ(batch.window(2)[0], 7.0f);
  EXPECT_FLOAT_EQ(batch.window(3)[0], 12.0f);
  // label constant within each window by construction of the fixture
  for (std::size_t i = 0; i < batch.count; ++i)
    for (std::size_t t = 0; t < batch.window_len; ++t)
      EXPECT_LT(batch.window(i)[t * cs], 1e6);
}

TEST(Windowing, SegmentRejectsRestSamples) {
  auto rec = tiny_recording({1, 0, 1}, {1, 0, 1});
  EXPECT_THROW(segment(rec, WindowSpec{1, 1}), Error);
}

TEST(Windowing, SampleLayoutIsTimeHorizVert) {
  // flat channel c = v * n_ch + h; window layout [t][h][v]
  auto rec = tiny_recording({1, 1}, {1, 1});
  const auto batch = segment(rec, WindowSpec{2, 1});
  ASSERT_EQ(batch.count, 1u);
  const std::size_t n_ch = batch.n_ch, n_cv = batch.n_cv;
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t h = 0; h < n_ch; ++h)
      for (std::size_t v = 0; v < n_cv; ++v)
        EXPECT_FLOAT_EQ(batch.window(0)[(t * n_ch + h) * n_cv + v],
                        rec.at(t, v * n_ch + h));
}

TEST(Windowing, InstantaneousFramesNeedNoPatching) {
  auto rec = tiny_recording({1, 1, 1, 1, 1, 1, 1, 1, 1, 1}, {1, 1, 1, 1, 1, 1, 1, 1, 1, 1});
  const auto batch = segment(rec, WindowSpec{1, 1});
  EXPECT_EQ(batch.count, 10u);
  EXPECT_EQ(batch.window_len, 1u);
}

// ---------------------------------------------------------------------
// normalization

TEST(Normalize, TrainOnlyStatisticsAndClipping) {
  auto rec = tiny_recording({1, 1, 1, 1}, {1, 1, 1, 1});
  auto batch = segment(rec, WindowSpec{1, 1});
  // windows 0..1 as "train": per-channel max from them only
  const auto mx = channel_abs_max(batch, {0, 1});
  const auto norm = mu_law_normalize(batch, mx, 255.0);
  const std::size_t cs = batch.n_ch * batch.n_cv;
  for (std::size_t c = 0; c < cs; ++c) {
    // train max is the value at t=1; window 3 exceeds it and must clip to 1
    EXPECT_NEAR(norm.window(3)[c], 1.0f, 1e-6);
    EXPECT_LE(std::abs(norm.window(0)[c]), 1.0f);
  }
}

TEST(Normalize, ZeroChannelStaysZero) {
  WindowBatch b;
  b.count = 1;
  b.window_len = 2;
  b.n_ch = 1;
  b.n_cv = 1;
  b.samples = {0.0f, 0.0f};
  b.labels = {1};
  b.fold_key = {1};
  const auto norm = mu_law_normalize(b, channel_abs_max(b), 255.0);
  EXPECT_FLOAT_EQ(norm.samples[0], 0.0f);
  EXPECT_FLOAT_EQ(norm.samples[1], 0.0f);
}
