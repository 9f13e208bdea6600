#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace sidlab {

// Raw little-endian float32 files are the storage format for clips,
// spectrogram caches and parameter tensors. The host must be little-endian;
// checked once at startup of any I/O call.
void require_little_endian();

void write_f32(const std::filesystem::path& path, const std::vector<float>& data);
std::vector<float> read_f32(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace sidlab
