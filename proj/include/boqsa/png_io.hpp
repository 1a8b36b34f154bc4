#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace boqsa {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 8-bit image, interleaved channels (1 = gray, 3 = RGB), row-major.
struct Image8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;
};

void write_png(const std::filesystem::path& path, const Image8& image);
/// Reads gray or RGB PNGs; `channels` selects the decoded layout.
Image8 read_png(const std::filesystem::path& path, std::size_t channels);

}  // namespace boqsa
