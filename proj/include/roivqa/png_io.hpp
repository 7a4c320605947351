#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "roivqa/error.hpp"

namespace roivqa {

/// 8-bit RGB image, row-major, 3 bytes per pixel, no padding.
struct ImageRGB8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    static ImageRGB8 filled(int w, int h, std::uint8_t r, std::uint8_t g,
                            std::uint8_t b) {
        ImageRGB8 img;
        img.width = w;
        img.height = h;
        img.pixels.resize(static_cast<std::size_t>(w) * h * 3);
        for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
            img.pixels[i] = r;
            img.pixels[i + 1] = g;
            img.pixels[i + 2] = b;
        }
        return img;
    }

    std::uint8_t* px(int x, int y) {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    const std::uint8_t* px(int x, int y) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }

    friend bool operator==(const ImageRGB8&, const ImageRGB8&) = default;
};

namespace detail {

inline void check_png(int ok, const png_image& image, const char* op) {
    if (!ok || (image.warning_or_error & PNG_IMAGE_ERROR)) {
        std::string msg = std::string(op) + " failed";
        if (image.message[0] != '\0') {
            msg += ": ";
            msg += image.message;
        }
        throw Error(msg);
    }
}

}  // namespace detail

inline ImageRGB8 decode_rgb8(const std::vector<std::uint8_t>& bytes) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    detail::check_png(
        png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()),
        image, "png decode");
    image.format = PNG_FORMAT_RGB;

    ImageRGB8 out;
    out.width = static_cast<int>(image.width);
    out.height = static_cast<int>(image.height);
    out.pixels.resize(PNG_IMAGE_SIZE(image));
    int ok = png_image_finish_read(&image, nullptr, out.pixels.data(), 0,
                                   nullptr);
    detail::check_png(ok, image, "png decode");
    return out;
}

inline std::vector<std::uint8_t> encode_rgb8(const ImageRGB8& img) {
    if (img.width <= 0 || img.height <= 0 ||
        img.pixels.size() !=
            static_cast<std::size_t>(img.width) * img.height * 3)
        throw Error("png encode: malformed image buffer");

    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGB;

    png_alloc_size_t size = 0;
    detail::check_png(png_image_write_to_memory(&image, nullptr, &size, 0,
                                                img.pixels.data(), 0, nullptr),
                      image, "png encode");
    std::vector<std::uint8_t> bytes(size);
    detail::check_png(png_image_write_to_memory(&image, bytes.data(), &size, 0,
                                                img.pixels.data(), 0, nullptr),
                      image, "png encode");
    bytes.resize(size);
    return bytes;
}

inline ImageRGB8 read_rgb8(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    detail::check_png(
        png_image_begin_read_from_file(&image, path.string().c_str()), image,
        "png read");
    image.format = PNG_FORMAT_RGB;

    ImageRGB8 out;
    out.width = static_cast<int>(image.width);
    out.height = static_cast<int>(image.height);
    out.pixels.resize(PNG_IMAGE_SIZE(image));
    int ok = png_image_finish_read(&image, nullptr, out.pixels.data(), 0,
                                   nullptr);
    detail::check_png(ok, image, "png read");
    return out;
}

inline void write_rgb8(const std::filesystem::path& path,
                       const ImageRGB8& img) {
    // Route through the memory encoder so file bytes are identical to what
    // encode_rgb8 produces; downstream byte-equality checks depend on that.
    const std::vector<std::uint8_t> bytes = encode_rgb8(img);
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw Error("png write: cannot open " + path.string());
    const std::size_t written = std::fwrite(bytes.data(), 1, bytes.size(), f);
    const int closed = std::fclose(f);
    if (written != bytes.size() || closed != 0)
        throw Error("png write: short write to " + path.string());
}

}  // namespace roivqa
