#pragma once

#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include <png.h>

#include "invgan/error.hpp"
#include "invgan/eval.hpp"

namespace invgan::tools {

namespace detail {

inline void write_png(const std::filesystem::path& path, int width, int height, int color_type, int channels,
                      const std::uint8_t* data)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp)
        throw FormatError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const auto stride = static_cast<std::size_t>(width) * channels;
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(data + y * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace detail

inline void write_png(const GrayImage& img, const std::filesystem::path& path)
{
    detail::write_png(path, img.width, img.height, PNG_COLOR_TYPE_GRAY, 1, img.pixels.data());
}

inline void write_png(const RgbImage& img, const std::filesystem::path& path)
{
    detail::write_png(path, img.width, img.height, PNG_COLOR_TYPE_RGB, 3, img.rgb.data());
}

} // namespace invgan::tools
