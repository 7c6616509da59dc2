#include "tparn/wav_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace tparn {

namespace {

struct ChunkHeader {
  char id[4];
  std::uint32_t size;
};

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

void write_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open wav file: " + path);

  char riff[4], wave[4];
  in.read(riff, 4);
  read_u32(in);
  in.read(wave, 4);
  if (!in || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  std::vector<char> payload;
  bool have_fmt = false, have_data = false;

  while (in && !(have_fmt && have_data)) {
    ChunkHeader hdr{};
    in.read(hdr.id, 4);
    hdr.size = read_u32(in);
    if (!in) break;
    if (std::memcmp(hdr.id, "fmt ", 4) == 0) {
      std::vector<char> fmt(hdr.size);
      in.read(fmt.data(), hdr.size);
      if (hdr.size < 16) throw std::runtime_error("malformed fmt chunk: " + path);
      std::memcpy(&format, fmt.data(), 2);
      std::memcpy(&channels, fmt.data() + 2, 2);
      std::memcpy(&sample_rate, fmt.data() + 4, 4);
      std::memcpy(&bits, fmt.data() + 14, 2);
      if (format == 0xFFFE && hdr.size >= 26) std::memcpy(&format, fmt.data() + 24, 2);
      have_fmt = true;
    } else if (std::memcmp(hdr.id, "data", 4) == 0) {
      payload.resize(hdr.size);
      in.read(payload.data(), hdr.size);
      have_data = true;
    } else {
      in.seekg(hdr.size + (hdr.size & 1), std::ios::cur);
    }
  }
  if (!have_fmt || !have_data) throw std::runtime_error("missing fmt or data chunk: " + path);
  if (channels == 0) throw std::runtime_error("zero channels: " + path);

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frames = payload.size() / (bytes_per_sample * channels);
  Waveform w(channels, static_cast<long>(frames), static_cast<int>(sample_rate));

  if (format == 1 && bits == 16) {
    const auto* src = reinterpret_cast<const std::int16_t*>(payload.data());
    for (std::size_t i = 0; i < frames; ++i)
      for (int p = 0; p < channels; ++p) w.at(p, static_cast<long>(i)) = src[i * channels + p] / 32768.0;
  } else if (format == 3 && bits == 32) {
    const auto* src = reinterpret_cast<const float*>(payload.data());
    for (std::size_t i = 0; i < frames; ++i)
      for (int p = 0; p < channels; ++p) w.at(p, static_cast<long>(i)) = src[i * channels + p];
  } else {
    throw std::runtime_error("unsupported wav encoding (want PCM16 or float32): " + path);
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot create wav file: " + path);

  const std::uint16_t channels = static_cast<std::uint16_t>(w.channels);
  const std::uint32_t sample_rate = static_cast<std::uint32_t>(w.sample_rate);
  const std::uint32_t byte_rate = sample_rate * channels * 4;
  const std::uint16_t block_align = channels * 4;
  const std::uint32_t data_size = static_cast<std::uint32_t>(w.num_samples) * channels * 4;
  const std::uint32_t riff_size = 36 + data_size;
  const std::uint16_t fmt_float = 3, bits = 32;

  write_bytes(out, "RIFF", 4);
  write_bytes(out, &riff_size, 4);
  write_bytes(out, "WAVE", 4);
  write_bytes(out, "fmt ", 4);
  const std::uint32_t fmt_size = 16;
  write_bytes(out, &fmt_size, 4);
  write_bytes(out, &fmt_float, 2);
  write_bytes(out, &channels, 2);
  write_bytes(out, &sample_rate, 4);
  write_bytes(out, &byte_rate, 4);
  write_bytes(out, &block_align, 2);
  write_bytes(out, &bits, 2);
  write_bytes(out, "data", 4);
  write_bytes(out, &data_size, 4);

  std::vector<float> interleaved(static_cast<std::size_t>(w.num_samples) * channels);
  for (long i = 0; i < w.num_samples; ++i)
    for (int p = 0; p < channels; ++p)
      interleaved[static_cast<std::size_t>(i) * channels + p] = static_cast<float>(w.at(p, i));
  write_bytes(out, interleaved.data(), interleaved.size() * 4);
  if (!out) throw std::runtime_error("failed writing wav file: " + path);
}

}  // namespace tparn
