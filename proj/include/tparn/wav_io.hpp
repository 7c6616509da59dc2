#pragma once

#include <string>

#include "tparn/waveform.hpp"

namespace tparn {

/// Reads a RIFF/WAVE file (PCM16 or 32-bit float) into doubles in [-1, 1]
/// scale for PCM. Throws std::runtime_error on malformed files.
Waveform read_wav(const std::string& path);

/// Writes IEEE float32 WAV, interleaved channels.
void write_wav(const std::string& path, const Waveform& w);

}  // namespace tparn
