#pragma once

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "relume/image.hpp"

namespace relume {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.string().c_str(), mode));
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    return f;
}

inline std::uint8_t quantize(float v) {
    float q = std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f;
    return static_cast<std::uint8_t>(std::min(q, 255.0f));
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(mgr->jump, 1);
}

inline Image load_png(const std::filesystem::path& path) {
    auto f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png init failed for '" + path.string() + "'");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png init failed for '" + path.string() + "'");
    }
    std::vector<std::uint8_t> buf;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unreadable PNG '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported channel count in '" + path.string() + "'");
    }
    buf.resize(static_cast<std::size_t>(h) * w * channels);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y)
        rows[y] = buf.data() + static_cast<std::size_t>(y) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(static_cast<int>(h), static_cast<int>(w), channels);
    for (std::size_t i = 0; i < buf.size(); ++i)
        img.data[i] = static_cast<float>(buf[i]) / 255.0f;
    return img;
}

inline void save_png(const Image& img, const std::filesystem::path& path) {
    auto f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png init failed for '" + path.string() + "'");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png init failed for '" + path.string() + "'");
    }
    std::vector<std::uint8_t> buf(img.data.size());
    std::vector<png_bytep> rows(img.height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("cannot write PNG '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, img.width, img.height, 8, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t i = 0; i < img.data.size(); ++i) buf[i] = quantize(img.data[i]);
    for (int y = 0; y < img.height; ++y)
        rows[y] = buf.data() + static_cast<std::size_t>(y) * img.width * img.channels;
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Image load_jpeg(const std::filesystem::path& path) {
    auto f = open_file(path, "rb");
    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("unreadable JPEG '" + path.string() + "'");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    int w = static_cast<int>(cinfo.output_width);
    int h = static_cast<int>(cinfo.output_height);
    int c = cinfo.output_components;
    if (c != 1 && c != 3) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("unsupported channel count in '" + path.string() + "'");
    }
    Image img(h, w, c);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * c);
    JSAMPROW rowp = row.data();
    int y = 0;
    while (cinfo.output_scanline < cinfo.output_height) {
        jpeg_read_scanlines(&cinfo, &rowp, 1);
        for (std::size_t i = 0; i < row.size(); ++i)
            img.data[static_cast<std::size_t>(y) * w * c + i] = static_cast<float>(row[i]) / 255.0f;
        ++y;
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

inline void save_jpeg(const Image& img, const std::filesystem::path& path, int quality = 95) {
    auto f = open_file(path, "wb");
    jpeg_compress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        throw IoError("cannot write JPEG '" + path.string() + "'");
    }
    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, f.get());
    cinfo.image_width = img.width;
    cinfo.image_height = img.height;
    cinfo.input_components = img.channels;
    cinfo.in_color_space = img.channels == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * img.channels);
    JSAMPROW rowp = row.data();
    while (cinfo.next_scanline < cinfo.image_height) {
        std::size_t off = static_cast<std::size_t>(cinfo.next_scanline) * img.width * img.channels;
        for (std::size_t i = 0; i < row.size(); ++i) row[i] = quantize(img.data[off + i]);
        jpeg_write_scanlines(&cinfo, &rowp, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
}

inline std::string lower_ext(const std::filesystem::path& path) {
    std::string e = path.extension().string();
    for (char& ch : e) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return e;
}

} // namespace detail

/// Loads an 8-bit PNG or JPEG as floats in [0, 1]. Grayscale files come back
/// single-channel, everything else as RGB.
inline Image load_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw IoError("no such file '" + path.string() + "'");
    std::string ext = detail::lower_ext(path);
    if (ext == ".png") return detail::load_png(path);
    if (ext == ".jpg" || ext == ".jpeg") return detail::load_jpeg(path);
    throw IoError("unsupported image format '" + path.string() + "'");
}

/// Saves 8-bit PNG or JPEG depending on the extension. Values are clamped to
/// [0, 1] and quantized by rounding.
inline void save_image(const Image& img, const std::filesystem::path& path) {
    require(!img.empty(), "save_image: empty image");
    require(img.channels == 1 || img.channels == 3,
            "save_image: only 1- or 3-channel images supported");
    std::string ext = detail::lower_ext(path);
    if (ext == ".png") return detail::save_png(img, path);
    if (ext == ".jpg" || ext == ".jpeg") return detail::save_jpeg(img, path);
    throw IoError("unsupported image format '" + path.string() + "'");
}

} // namespace relume
