#include "sidlab/io.hpp"

#include <bit>
#include <fstream>

namespace sidlab {

void require_little_endian() {
    static_assert(sizeof(float) == 4, "float must be 32-bit");
    if constexpr (std::endian::native != std::endian::little) {
        throw std::runtime_error("raw f32 files require a little-endian host");
    }
}

void write_f32(const std::filesystem::path& path, const std::vector<float>& data) {
    require_little_endian();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<float> read_f32(const std::filesystem::path& path) {
    require_little_endian();
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    std::streamsize bytes = in.tellg();
    if (bytes % sizeof(float) != 0)
        throw std::runtime_error("file size not a multiple of 4: " + path.string());
    std::vector<float> data(static_cast<size_t>(bytes) / sizeof(float));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(data.data()), bytes);
    if (!in) throw std::runtime_error("read failed: " + path.string());
    return data;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    std::streamsize bytes = in.tellg();
    std::string text(static_cast<size_t>(bytes), '\0');
    in.seekg(0);
    in.read(text.data(), bytes);
    if (!in) throw std::runtime_error("read failed: " + path.string());
    return text;
}

}  // namespace sidlab
