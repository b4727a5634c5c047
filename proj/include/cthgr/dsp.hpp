#pragma once

// Preprocessing chain: rectify + first-order Butterworth low-pass envelope,
// mu-law companding, and window segmentation that never crosses a gesture or
// repetition boundary.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cthgr/common.hpp"
#include "cthgr/recording.hpp"

namespace cthgr {

enum class FilterMode { Causal, ZeroPhase };

inline FilterMode filter_mode_from_string(const std::string& s) {
  if (s == "causal") return FilterMode::Causal;
  if (s == "zero-phase") return FilterMode::ZeroPhase;
  throw Error("unknown filter mode: " + s);
}

inline std::string to_string(FilterMode m) {
  return m == FilterMode::Causal ? "causal" : "zero-phase";
}

struct PreprocessConfig {
  double mu = 255.0;
  double cutoff_hz = 1.0;
  bool rectify = true;
  FilterMode filter_mode = FilterMode::Causal;

  void validate(double sampling_rate_hz) const {
    require(mu > 0, "preprocess: mu must be positive");
    require(cutoff_hz > 0 && cutoff_hz < sampling_rate_hz / 2,
            "preprocess: cutoff must lie below the Nyquist frequency");
  }
};

// Bilinear-transform coefficients of the first-order low-pass prototype with
// pre-warped corner: K = tan(pi*fc/fs), b0 = b1 = K/(1+K), a1 = (K-1)/(1+K).
struct ButterworthCoeffs {
  double b0, b1, a1;
};

inline ButterworthCoeffs butterworth_coeffs(double cutoff_hz, double sampling_rate_hz) {
  require(cutoff_hz > 0 && cutoff_hz < sampling_rate_hz / 2,
          "butterworth: cutoff must lie below the Nyquist frequency");
  const double k = std::tan(M_PI * cutoff_hz / sampling_rate_hz);
  return {k / (1.0 + k), k / (1.0 + k), (k - 1.0) / (1.0 + k)};
}

// |H(e^{jw})| evaluated from the difference-equation coefficients.
inline double butterworth_gain_at(double freq_hz, double cutoff_hz, double sampling_rate_hz) {
  const auto c = butterworth_coeffs(cutoff_hz, sampling_rate_hz);
  const double w = 2.0 * M_PI * freq_hz / sampling_rate_hz;
  const double nr = c.b0 + c.b1 * std::cos(w), ni = -c.b1 * std::sin(w);
  const double dr = 1.0 + c.a1 * std::cos(w), di = -c.a1 * std::sin(w);
  return std::sqrt((nr * nr + ni * ni) / (dr * dr + di * di));
}

namespace detail {
template <typename T>
inline void butterworth_forward(const T* x, T* y, std::size_t n, const ButterworthCoeffs& c) {
  double x_prev = 0.0, y_prev = 0.0;  // zero initial state
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = static_cast<double>(x[i]);
    const double yi = c.b0 * xi + c.b1 * x_prev - c.a1 * y_prev;
    y[i] = static_cast<T>(yi);
    x_prev = xi;
    y_prev = yi;
  }
}
}  // namespace detail

template <typename T>
inline std::vector<T> butterworth_lowpass(const std::vector<T>& x, double cutoff_hz,
                                          double sampling_rate_hz,
                                          FilterMode mode = FilterMode::Causal) {
  const auto c = butterworth_coeffs(cutoff_hz, sampling_rate_hz);
  std::vector<T> y(x.size());
  detail::butterworth_forward(x.data(), y.data(), x.size(), c);
  if (mode == FilterMode::ZeroPhase) {
    std::vector<T> rev(y.rbegin(), y.rend());
    detail::butterworth_forward(rev.data(), y.data(), rev.size(), c);
    std::reverse(y.begin(), y.end());
  }
  return y;
}

template <typename T>
inline std::vector<T> envelope(const std::vector<T>& channel, const PreprocessConfig& cfg,
                               double sampling_rate_hz) {
  cfg.validate(sampling_rate_hz);
  if (!cfg.rectify) return butterworth_lowpass(channel, cfg.cutoff_hz, sampling_rate_hz,
                                               cfg.filter_mode);
  std::vector<T> rect(channel.size());
  for (std::size_t i = 0; i < rect.size(); ++i) rect[i] = std::abs(channel[i]);
  return butterworth_lowpass(rect, cfg.cutoff_hz, sampling_rate_hz, cfg.filter_mode);
}

// Applies the per-channel envelope in place over all channels of a recording.
inline Recording envelope_recording(const Recording& rec, const PreprocessConfig& cfg) {
  Recording out = rec;
  std::vector<float> chan(rec.samples);
  for (std::size_t c = 0; c < rec.channels; ++c) {
    for (std::size_t t = 0; t < rec.samples; ++t) chan[t] = rec.at(t, c);
    const auto env = envelope(chan, cfg, rec.layout.sampling_rate_hz);
    for (std::size_t t = 0; t < rec.samples; ++t) out.signal[t * rec.channels + c] = env[t];
  }
  return out;
}

// F(x) = sign(x) * ln(1 + mu|x|) / ln(1 + mu); domain [-1, 1].
template <typename T>
inline T mu_law(T x, double mu) {
  require(mu > 0, "mu_law: mu must be positive");
  const double xd = static_cast<double>(x);
  require(std::abs(xd) <= 1.0 + 1e-12, "mu_law: input outside [-1, 1]");
  if (xd == 0.0) return T(0);
  const double s = xd > 0 ? 1.0 : -1.0;
  return static_cast<T>(s * std::log1p(mu * std::abs(xd)) / std::log1p(mu));
}

// ---------------------------------------------------------------------
// windowing

struct WindowSpec {
  std::size_t window_len = 64;  // W; 1 | 64 | 128 | 256 | 512
  std::size_t skip = 32;        // hop between window starts

  void validate() const {
    require(window_len >= 1, "window: W must be >= 1");
    require(skip >= 1, "window: skip must be >= 1");
  }
};

// Default skip per §-style presets: 32 for W in {1, 64, 128, 256}, 64 for 512.
inline std::size_t default_skip_for(std::size_t window_len) {
  return window_len == 512 ? 64 : 32;
}

inline std::size_t window_count(std::size_t run_len, std::size_t window_len, std::size_t skip) {
  if (run_len < window_len) return 0;
  return (run_len - window_len) / skip + 1;
}

struct WindowBatch {
  std::size_t count = 0;  // n
  std::size_t window_len = 0;
  std::size_t n_ch = 0;  // horizontal channels
  std::size_t n_cv = 0;  // vertical channels
  std::vector<float> samples;  // [n][W][n_ch][n_cv]
  std::vector<int> labels;     // [n]
  std::vector<int> fold_key;   // repetition id per window

  std::size_t window_size() const { return window_len * n_ch * n_cv; }
  const float* window(std::size_t i) const { return samples.data() + i * window_size(); }
  float* window_mut(std::size_t i) { return samples.data() + i * window_size(); }
};

// Segments rest-free recordings. Within each maximal run of constant
// (label, repetition) windows start at offsets 0, skip, 2*skip, ...
// Window samples are laid out [t][h][v] with the recording's flat channel
// c = v * n_ch + h.
inline WindowBatch segment(const Recording& rec, const WindowSpec& spec) {
  spec.validate();
  const std::size_t n_ch = rec.layout.n_horizontal;
  const std::size_t n_cv = rec.layout.n_vertical;
  WindowBatch batch;
  batch.window_len = spec.window_len;
  batch.n_ch = n_ch;
  batch.n_cv = n_cv;

  std::size_t run_start = 0;
  while (run_start < rec.samples) {
    require(rec.gesture_label[run_start] != 0,
            "segment: rest samples present; call remove_rest first");
    std::size_t run_end = run_start + 1;
    while (run_end < rec.samples && rec.gesture_label[run_end] == rec.gesture_label[run_start] &&
           rec.repetition[run_end] == rec.repetition[run_start])
      ++run_end;
    const std::size_t run_len = run_end - run_start;
    const std::size_t n_windows = window_count(run_len, spec.window_len, spec.skip);
    for (std::size_t wi = 0; wi < n_windows; ++wi) {
      const std::size_t t0 = run_start + wi * spec.skip;
      for (std::size_t t = 0; t < spec.window_len; ++t)
        for (std::size_t h = 0; h < n_ch; ++h)
          for (std::size_t v = 0; v < n_cv; ++v)
            batch.samples.push_back(rec.at(t0 + t, v * n_ch + h));
      batch.labels.push_back(rec.gesture_label[run_start]);
      batch.fold_key.push_back(rec.repetition[run_start]);
      ++batch.count;
    }
    run_start = run_end;
  }
  return batch;
}

// ---------------------------------------------------------------------
// normalization (mu-law with explicit scaling statistics)

// Per-channel max |value| over the windows listed in `index` (all windows
// when empty). Used so scaling statistics can come from the training fold
// only.
inline std::vector<float> channel_abs_max(const WindowBatch& batch,
                                          const std::vector<std::size_t>& index = {}) {
  std::vector<float> mx(batch.n_ch * batch.n_cv, 0.0f);
  auto scan = [&](std::size_t wi) {
    const float* w = batch.window(wi);
    for (std::size_t t = 0; t < batch.window_len; ++t)
      for (std::size_t c = 0; c < batch.n_ch * batch.n_cv; ++c)
        mx[c] = std::max(mx[c], std::abs(w[t * batch.n_ch * batch.n_cv + c]));
  };
  if (index.empty())
    for (std::size_t i = 0; i < batch.count; ++i) scan(i);
  else
    for (std::size_t i : index) scan(i);
  return mx;
}

// Scales each channel by the supplied per-channel max, clips to [-1, 1]
// (values beyond the statistics' range can occur on held-out data), then
// applies mu-law. Channels with zero max are left at zero.
inline WindowBatch mu_law_normalize(const WindowBatch& batch, const std::vector<float>& chan_max,
                                    double mu) {
  require(chan_max.size() == batch.n_ch * batch.n_cv, "mu_law_normalize: statistics shape");
  WindowBatch out = batch;
  const std::size_t cs = batch.n_ch * batch.n_cv;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const float m = chan_max[i % cs];
    if (m <= 0.0f) {
      out.samples[i] = 0.0f;
      continue;
    }
    float x = out.samples[i] / m;
    x = std::min(1.0f, std::max(-1.0f, x));
    out.samples[i] = mu_law(x, mu);
  }
  return out;
}

}  // namespace cthgr
