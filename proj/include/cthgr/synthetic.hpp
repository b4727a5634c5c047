#pragma once

// Deterministic synthetic HD-sEMG generator. Each gesture class modulates a
// distinct spatial subset of channels; the temporal activity is a sum of
// simulated motor units (sparse spike trains convolved with short band-limited
// waveforms), so the data exercises both the classification and the
// decomposition paths.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "cthgr/common.hpp"
#include "cthgr/recording.hpp"

namespace cthgr {

struct SynthSpec {
  int n_classes = 4;
  int repetitions = 5;
  std::size_t n_horizontal = 8;  // 4 | 8 | 16 (channels = n_horizontal * 8)
  double sampling_rate_hz = 2048.0;
  std::size_t samples_per_run = 640;  // gesture run length per (class, repetition)
  std::size_t rest_gap = 64;          // rest samples before each run
  double noise_level = 0.05;          // additive white-noise sigma
  int motor_units_per_class = 3;
  double isi_mean = 55.0;   // inter-spike interval, samples
  double isi_jitter = 10.0;
  std::size_t muap_len = 16;
  std::uint64_t seed = 0;
  // optional [n_classes][channels] activation maps; auto-generated when empty
  std::vector<std::vector<float>> activation_maps;

  void validate() const {
    require(n_classes >= 2, "synth: need at least 2 classes");
    require(n_classes <= kMaxGestureLabel, "synth: too many classes");
    require(repetitions >= 1 && repetitions <= kMaxRepetition, "synth: repetitions in 1..5");
    require(n_horizontal == 4 || n_horizontal == 8 || n_horizontal == 16,
            "synth: n_horizontal must be 4, 8 or 16");
    require(samples_per_run >= muap_len, "synth: run shorter than a waveform");
    require(noise_level >= 0, "synth: negative noise level");
    if (!activation_maps.empty()) {
      require(activation_maps.size() == static_cast<std::size_t>(n_classes),
              "synth: one activation map per class required");
      for (const auto& m : activation_maps)
        require(m.size() == n_horizontal * 8, "synth: activation map channel count");
    }
  }
};

namespace detail {

// Smooth bump over the horizontal columns, circularly centered per class.
inline std::vector<std::vector<float>> default_activation_maps(int n_classes,
                                                               std::size_t n_horizontal) {
  const std::size_t n_cv = 8;
  std::vector<std::vector<float>> maps(n_classes, std::vector<float>(n_horizontal * n_cv));
  const double sigma = static_cast<double>(n_horizontal) / (2.0 * n_classes) + 0.35;
  for (int c = 0; c < n_classes; ++c) {
    const double center = (c + 0.5) * static_cast<double>(n_horizontal) / n_classes;
    for (std::size_t h = 0; h < n_horizontal; ++h) {
      double d = std::abs(static_cast<double>(h) + 0.5 - center);
      d = std::min(d, n_horizontal - d);  // circular distance
      const float w = static_cast<float>(std::exp(-0.5 * d * d / (sigma * sigma)));
      for (std::size_t v = 0; v < n_cv; ++v) maps[c][v * n_horizontal + h] = w;
    }
  }
  return maps;
}

// Damped sinusoid, zero-mean-ish and band limited by construction.
inline std::vector<double> random_muap_waveform(std::mt19937_64& rng, std::size_t len) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double cycles = 1.0 + 1.5 * uni(rng);
  const double phase = 2.0 * M_PI * uni(rng);
  const double decay = 0.18 + 0.12 * uni(rng);
  std::vector<double> w(len);
  for (std::size_t k = 0; k < len; ++k) {
    const double t = static_cast<double>(k) / len;
    w[k] = std::sin(2.0 * M_PI * cycles * t + phase) * std::exp(-decay * k) *
           std::sin(M_PI * t);  // taper to zero at both ends
  }
  return w;
}

}  // namespace detail

inline Recording synthesize_dataset(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n_cv = 8;
  const std::size_t channels = spec.n_horizontal * n_cv;
  const auto maps = spec.activation_maps.empty()
                        ? detail::default_activation_maps(spec.n_classes, spec.n_horizontal)
                        : spec.activation_maps;

  std::mt19937_64 rng(mix_seed(spec.seed, 0xda7a5e7));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  Recording rec;
  rec.subject_id = "synthetic";
  rec.layout.n_horizontal = spec.n_horizontal;
  rec.layout.n_vertical = n_cv;
  rec.layout.sampling_rate_hz = spec.sampling_rate_hz;
  rec.channels = channels;

  auto emit_rest = [&](std::size_t n) {
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t c = 0; c < channels; ++c)
        rec.signal.push_back(static_cast<float>(spec.noise_level * gauss(rng)));
      rec.gesture_label.push_back(0);
      rec.repetition.push_back(0);
    }
  };

  for (int rep = 1; rep <= spec.repetitions; ++rep) {
    for (int cls = 1; cls <= spec.n_classes; ++cls) {
      emit_rest(spec.rest_gap);

      // shared temporal drive: sum of simulated motor units
      std::vector<double> drive(spec.samples_per_run, 0.0);
      for (int mu = 0; mu < spec.motor_units_per_class; ++mu) {
        const auto wav = detail::random_muap_waveform(rng, spec.muap_len);
        const double gain = 0.6 + 0.9 * uni(rng);
        double t = uni(rng) * spec.isi_mean;  // random initial phase
        while (t < static_cast<double>(spec.samples_per_run)) {
          const auto t0 = static_cast<std::size_t>(t);
          for (std::size_t k = 0; k < wav.size() && t0 + k < drive.size(); ++k)
            drive[t0 + k] += gain * wav[k];
          t += spec.isi_mean + spec.isi_jitter * (2.0 * uni(rng) - 1.0);
        }
      }

      const auto& map = maps[cls - 1];
      for (std::size_t t = 0; t < spec.samples_per_run; ++t) {
        for (std::size_t c = 0; c < channels; ++c) {
          double x = map[c] * drive[t];
          if (spec.noise_level > 0) x += spec.noise_level * gauss(rng);
          rec.signal.push_back(static_cast<float>(x));
        }
        rec.gesture_label.push_back(cls);
        rec.repetition.push_back(rep);
      }
    }
  }
  rec.samples = rec.gesture_label.size();
  rec.validate();
  return rec;
}

}  // namespace cthgr
