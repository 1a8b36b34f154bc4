#include "boqsa/png_io.hpp"

#include <png.h>

#include <cstring>

namespace boqsa {

namespace {

png_uint_32 format_for(std::size_t channels) {
    if (channels == 1) return PNG_FORMAT_GRAY;
    if (channels == 3) return PNG_FORMAT_RGB;
    throw std::invalid_argument("png: unsupported channel count " + std::to_string(channels));
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image8& image) {
    if (image.pixels.size() != image.width * image.height * image.channels) {
        throw std::invalid_argument("png: pixel buffer does not match image geometry");
    }
    png_image desc;
    std::memset(&desc, 0, sizeof(desc));
    desc.version = PNG_IMAGE_VERSION;
    desc.width = static_cast<png_uint_32>(image.width);
    desc.height = static_cast<png_uint_32>(image.height);
    desc.format = format_for(image.channels);
    if (!png_image_write_to_file(&desc, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
        const std::string message = desc.message;
        png_image_free(&desc);
        throw IoError("cannot write " + path.string() + ": " + message);
    }
}

Image8 read_png(const std::filesystem::path& path, std::size_t channels) {
    png_image desc;
    std::memset(&desc, 0, sizeof(desc));
    desc.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&desc, path.string().c_str())) {
        throw IoError("cannot read " + path.string() + ": " + desc.message);
    }
    desc.format = format_for(channels);
    Image8 out;
    out.width = desc.width;
    out.height = desc.height;
    out.channels = channels;
    out.pixels.resize(PNG_IMAGE_SIZE(desc));
    if (!png_image_finish_read(&desc, nullptr, out.pixels.data(), 0, nullptr)) {
        const std::string message = desc.message;
        png_image_free(&desc);
        throw IoError("corrupt image " + path.string() + ": " + message);
    }
    return out;
}

}  // namespace boqsa
