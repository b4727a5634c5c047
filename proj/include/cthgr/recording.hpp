#pragma once

// Canonical annotated HD-sEMG recordings. On disk a recording is a pair of
// files: "<subject>.emg" holding the f32 signal matrix and "<subject>.json"
// holding annotations, layout and the .emg checksum.
//
// Channel indexing is 0-based row-major over (vertical row, horizontal
// column) of the combined electrode arrangement: flat index c = v * n_h + h.
// Subsetting by "every 2nd / 4th flat index" therefore halves / quarters the
// horizontal channel count while the 8 vertical rows stay intact.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cthgr/common.hpp"
#include "cthgr/io.hpp"

namespace cthgr {

constexpr int kMaxGestureLabel = 66;
constexpr int kMaxRepetition = 5;

struct GridLayout {
  std::size_t n_horizontal = 16;  // 4 | 8 | 16
  std::size_t n_vertical = 8;     // fixed
  double sampling_rate_hz = 2048.0;

  std::size_t channels() const { return n_horizontal * n_vertical; }

  void validate() const {
    require(n_vertical == 8, "layout: n_vertical must be 8");
    require(n_horizontal == 4 || n_horizontal == 8 || n_horizontal == 16,
            "layout: n_horizontal must be 4, 8 or 16");
    require(sampling_rate_hz > 0, "layout: sampling rate must be positive");
  }
};

struct Recording {
  std::vector<float> signal;  // [T x C] row-major, millivolts
  std::size_t samples = 0;    // T
  std::size_t channels = 0;   // C
  std::vector<int> gesture_label;  // [T], 0 = rest
  std::vector<int> repetition;     // [T], 0 = rest
  std::string subject_id;
  GridLayout layout;

  float at(std::size_t t, std::size_t c) const { return signal[t * channels + c]; }

  void validate() const {
    layout.validate();
    require(channels == layout.channels(),
            "recording: channel count " + std::to_string(channels) +
                " does not match layout " + std::to_string(layout.channels()));
    require(signal.size() == samples * channels, "recording: signal size mismatch");
    require(gesture_label.size() == samples,
            "recording: label vector length does not match signal rows");
    require(repetition.size() == samples,
            "recording: repetition vector length does not match signal rows");
    for (std::size_t t = 0; t < samples; ++t) {
      const int g = gesture_label[t], r = repetition[t];
      require(g >= 0 && g <= kMaxGestureLabel,
              "recording: gesture label " + std::to_string(g) + " out of range at sample " +
                  std::to_string(t));
      require(r >= 0 && r <= kMaxRepetition,
              "recording: repetition " + std::to_string(r) + " out of range at sample " +
                  std::to_string(t));
      require((g == 0) == (r == 0),
              "recording: rest samples must carry label 0 and repetition 0 (sample " +
                  std::to_string(t) + ")");
    }
  }
};

namespace paths {
inline std::string sidecar_for(const std::string& emg_path) {
  std::filesystem::path p(emg_path);
  p.replace_extension(".json");
  return p.string();
}
}  // namespace paths

inline void write_recording(const Recording& rec, const std::string& emg_path) {
  rec.validate();
  BinaryWriter w;
  w.magic("EMG1");
  w.u32(static_cast<std::uint32_t>(rec.samples));
  w.u32(static_cast<std::uint32_t>(rec.channels));
  w.f32_array(rec.signal.data(), rec.signal.size());
  w.save(emg_path);

  nlohmann::json j;
  j["format_version"] = 1;
  j["subject_id"] = rec.subject_id;
  j["layout"] = {{"n_horizontal", rec.layout.n_horizontal},
                 {"n_vertical", rec.layout.n_vertical},
                 {"sampling_rate_hz", rec.layout.sampling_rate_hz}};
  j["labels"] = rec.gesture_label;
  j["repetitions"] = rec.repetition;
  j["crc32"] = crc32_hex(crc32_of(w.data().data(), w.data().size()));
  std::ofstream out(paths::sidecar_for(emg_path), std::ios::trunc);
  require(out.good(), "cannot create sidecar for " + emg_path);
  out << j.dump(2) << "\n";
}

inline Recording load_recording(const std::string& emg_path) {
  auto bytes = read_file_bytes(emg_path);
  const std::string crc = crc32_hex(crc32_of(bytes.data(), bytes.size()));
  BinaryReader r(std::move(bytes));
  r.expect_magic("EMG1", emg_path);
  Recording rec;
  rec.samples = r.u32();
  rec.channels = r.u32();
  rec.signal = r.f32_array(rec.samples * rec.channels);

  const std::string sidecar = paths::sidecar_for(emg_path);
  std::ifstream in(sidecar);
  require(in.good(), "missing sidecar: " + sidecar);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed sidecar " + sidecar + ": " + e.what());
  }
  try {
    require(j.at("format_version").get<int>() == 1, "unsupported recording format version");
    rec.subject_id = j.at("subject_id").get<std::string>();
    const auto& lo = j.at("layout");
    rec.layout.n_horizontal = lo.at("n_horizontal").get<std::size_t>();
    rec.layout.n_vertical = lo.at("n_vertical").get<std::size_t>();
    rec.layout.sampling_rate_hz = lo.at("sampling_rate_hz").get<double>();
    rec.gesture_label = j.at("labels").get<std::vector<int>>();
    rec.repetition = j.at("repetitions").get<std::vector<int>>();
    const std::string want = j.at("crc32").get<std::string>();
    require(want == crc, "checksum failure for " + emg_path + " (sidecar says " + want +
                             ", file is " + crc + ")");
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed sidecar " + sidecar + ": " + e.what());
  }
  rec.validate();
  return rec;
}

// Keep exactly the samples whose gesture label is nonzero, order preserved.
inline Recording remove_rest(const Recording& rec) {
  Recording out;
  out.subject_id = rec.subject_id;
  out.layout = rec.layout;
  out.channels = rec.channels;
  std::size_t kept = 0;
  for (std::size_t t = 0; t < rec.samples; ++t)
    if (rec.gesture_label[t] != 0) ++kept;
  out.samples = kept;
  out.signal.reserve(kept * rec.channels);
  out.gesture_label.reserve(kept);
  out.repetition.reserve(kept);
  for (std::size_t t = 0; t < rec.samples; ++t) {
    if (rec.gesture_label[t] == 0) continue;
    out.signal.insert(out.signal.end(), rec.signal.begin() + t * rec.channels,
                      rec.signal.begin() + (t + 1) * rec.channels);
    out.gesture_label.push_back(rec.gesture_label[t]);
    out.repetition.push_back(rec.repetition[t]);
  }
  return out;
}

enum class ChannelMode { Full, Half, Quarter };

inline ChannelMode channel_mode_from_string(const std::string& s) {
  if (s == "full") return ChannelMode::Full;
  if (s == "half") return ChannelMode::Half;
  if (s == "quarter") return ChannelMode::Quarter;
  throw Error("unknown channel mode: " + s);
}

inline std::string to_string(ChannelMode m) {
  switch (m) {
    case ChannelMode::Full: return "full";
    case ChannelMode::Half: return "half";
    default: return "quarter";
  }
}

// full -> all 128 channels, half -> flat indices = 0 (mod 2),
// quarter -> flat indices = 0 (mod 4). Requires the full grid pair.
inline Recording select_channels(const Recording& rec, ChannelMode mode) {
  require(rec.layout.n_horizontal == 16 && rec.channels == 128,
          "select_channels requires the full 128-channel recording (already subset?)");
  if (mode == ChannelMode::Full) return rec;
  const std::size_t stride = mode == ChannelMode::Half ? 2 : 4;
  Recording out;
  out.subject_id = rec.subject_id;
  out.layout = rec.layout;
  out.layout.n_horizontal = 16 / stride;
  out.channels = rec.channels / stride;
  out.samples = rec.samples;
  out.gesture_label = rec.gesture_label;
  out.repetition = rec.repetition;
  out.signal.resize(out.samples * out.channels);
  for (std::size_t t = 0; t < rec.samples; ++t)
    for (std::size_t c = 0; c < out.channels; ++c)
      out.signal[t * out.channels + c] = rec.signal[t * rec.channels + c * stride];
  return out;
}

// ---------------------------------------------------------------------
// dataset manifest

struct ManifestEntry {
  std::string subject_id;
  std::string emg_path;  // relative to the manifest file
  std::size_t channels = 0;
  std::size_t duration_samples = 0;
  std::string crc32;
};

struct Manifest {
  int format_version = 1;
  std::vector<ManifestEntry> subjects;
};

inline void write_manifest(const Manifest& m, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = m.format_version;
  auto& arr = j["subjects"] = nlohmann::json::array();
  for (const auto& e : m.subjects)
    arr.push_back({{"subject_id", e.subject_id},
                   {"emg_path", e.emg_path},
                   {"channels", e.channels},
                   {"duration_samples", e.duration_samples},
                   {"crc32", e.crc32}});
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), "cannot create manifest: " + path);
  out << j.dump(2) << "\n";
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open manifest: " + path);
  nlohmann::json j;
  try {
    in >> j;
    Manifest m;
    m.format_version = j.at("format_version").get<int>();
    require(m.format_version == 1, "unsupported manifest version");
    for (const auto& e : j.at("subjects")) {
      ManifestEntry me;
      me.subject_id = e.at("subject_id").get<std::string>();
      me.emg_path = e.at("emg_path").get<std::string>();
      me.channels = e.at("channels").get<std::size_t>();
      me.duration_samples = e.at("duration_samples").get<std::size_t>();
      me.crc32 = e.at("crc32").get<std::string>();
      m.subjects.push_back(std::move(me));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest " + path + ": " + e.what());
  }
}

// Checks that every listed file exists, matches its checksum, and loads as a
// valid recording. Returns problems instead of throwing so callers can list
// them all at once.
inline std::vector<std::string> validate_manifest(const Manifest& m,
                                                  const std::string& manifest_path) {
  std::vector<std::string> problems;
  const auto base = std::filesystem::path(manifest_path).parent_path();
  for (const auto& e : m.subjects) {
    const std::string emg = (base / e.emg_path).string();
    try {
      const auto bytes = read_file_bytes(emg);
      const std::string crc = crc32_hex(crc32_of(bytes.data(), bytes.size()));
      if (crc != e.crc32) {
        problems.push_back(e.subject_id + ": checksum mismatch for " + emg);
        continue;
      }
      const Recording rec = load_recording(emg);
      if (rec.channels != e.channels)
        problems.push_back(e.subject_id + ": channel count mismatch");
      if (rec.samples != e.duration_samples)
        problems.push_back(e.subject_id + ": duration mismatch");
    } catch (const std::exception& ex) {
      problems.push_back(e.subject_id + ": " + ex.what());
    }
  }
  return problems;
}

}  // namespace cthgr
