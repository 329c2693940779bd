#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sbid/common.hpp"
#include "sbid/filterbank.hpp"

namespace sbid {

// All binary layouts here are little-endian; the code assumes a little-endian
// host (checked at startup by the CLI) and writes native byte order.

struct WavData {
  std::vector<real> samples;
  uint32_t sample_rate = 0;
};

namespace detail {

template <typename T>
T read_le(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace detail

// Mono 16-bit PCM or 32-bit IEEE float. Anything else is rejected so that a
// caller never silently identifies the wrong channel.
inline WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("wav: cannot open " + path);
  char tag[5] = {0};
  in.read(tag, 4);
  if (std::strncmp(tag, "RIFF", 4) != 0) throw io_error("wav: not a RIFF file: " + path);
  detail::read_le<uint32_t>(in);
  in.read(tag, 4);
  if (std::strncmp(tag, "WAVE", 4) != 0) throw io_error("wav: not a WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  std::vector<char> data;
  bool have_fmt = false, have_data = false;
  while (in.read(tag, 4)) {
    const uint32_t chunk_size = detail::read_le<uint32_t>(in);
    if (std::strncmp(tag, "fmt ", 4) == 0) {
      format = detail::read_le<uint16_t>(in);
      channels = detail::read_le<uint16_t>(in);
      sample_rate = detail::read_le<uint32_t>(in);
      detail::read_le<uint32_t>(in);  // byte rate
      detail::read_le<uint16_t>(in);  // block align
      bits = detail::read_le<uint16_t>(in);
      if (chunk_size > 16) in.seekg(chunk_size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::strncmp(tag, "data", 4) == 0) {
      data.resize(chunk_size);
      in.read(data.data(), chunk_size);
      have_data = true;
    } else {
      in.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
  }
  if (!have_fmt || !have_data) throw io_error("wav: missing fmt or data chunk: " + path);
  if (channels != 1)
    throw config_error("wav: only mono input is supported (" + std::to_string(channels) +
                       " channels in " + path + ")");

  WavData out;
  out.sample_rate = sample_rate;
  if (format == 1 && bits == 16) {
    const size_t n = data.size() / 2;
    out.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      int16_t s;
      std::memcpy(&s, data.data() + 2 * i, 2);
      out.samples[i] = static_cast<real>(s) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    const size_t n = data.size() / 4;
    out.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      float s;
      std::memcpy(&s, data.data() + 4 * i, 4);
      out.samples[i] = static_cast<real>(s);
    }
  } else {
    throw config_error("wav: unsupported format (need 16-bit PCM or 32-bit float): " + path);
  }
  return out;
}

inline void write_wav_float32(const std::string& path, const std::vector<real>& samples,
                              uint32_t sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("wav: cannot write " + path);
  const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 4);
  out.write("RIFF", 4);
  detail::write_le<uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  detail::write_le<uint32_t>(out, 16);
  detail::write_le<uint16_t>(out, 3);  // IEEE float
  detail::write_le<uint16_t>(out, 1);  // mono
  detail::write_le<uint32_t>(out, sample_rate);
  detail::write_le<uint32_t>(out, sample_rate * 4);
  detail::write_le<uint16_t>(out, 4);
  detail::write_le<uint16_t>(out, 32);
  out.write("data", 4);
  detail::write_le<uint32_t>(out, data_bytes);
  for (real v : samples) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  }
  if (!out) throw io_error("wav: short write to " + path);
}

// CSV emission. %.17g keeps doubles round-trippable and the output stable for
// byte-identical reruns.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw io_error("csv: cannot write " + path);
    for (size_t i = 0; i < header.size(); ++i) {
      if (i) out_ << ',';
      out_ << header[i];
    }
    out_ << '\n';
  }

  void row(const std::vector<real>& values) {
    char buf[32];
    for (size_t i = 0; i < values.size(); ++i) {
      if (i) out_ << ',';
      std::snprintf(buf, sizeof(buf), "%.17g", values[i]);
      out_ << buf;
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

inline void frames_to_csv(const std::string& path, const std::vector<SubbandFrame>& frames) {
  CsvWriter csv(path, {"block_index", "bin", "re", "im"});
  for (const auto& f : frames) {
    for (Eigen::Index k = 0; k < f.bins.size(); ++k) {
      csv.row({static_cast<real>(f.block_index), static_cast<real>(k), f.bins[k].real(),
               f.bins[k].imag()});
    }
  }
}

}  // namespace sbid
