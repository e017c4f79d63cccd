#include "vtonlab/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "vtonlab/errors.hpp"

namespace vtonlab {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

fs::path temp_path_for(const fs::path& path) {
    fs::path tmp = path;
    tmp += ".tmp";
    return tmp;
}

}  // namespace

RawImage read_png_raw(const fs::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw IoError(path.string() + " is not a PNG");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed");
    }
    RawImage raw;
    std::vector<png_bytep> rows;
    std::vector<std::uint8_t> interleaved;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    raw.width = static_cast<int>(png_get_image_width(png, info));
    raw.height = static_cast<int>(png_get_image_height(png, info));
    raw.channels = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    interleaved.resize(stride * static_cast<std::size_t>(raw.height));
    rows.resize(static_cast<std::size_t>(raw.height));
    for (int y = 0; y < raw.height; ++y) rows[static_cast<std::size_t>(y)] = interleaved.data() + stride * static_cast<std::size_t>(y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    raw.samples.resize(static_cast<std::size_t>(raw.channels * raw.height * raw.width));
    for (int c = 0; c < raw.channels; ++c)
        for (int y = 0; y < raw.height; ++y)
            for (int x = 0; x < raw.width; ++x)
                raw.samples[static_cast<std::size_t>((c * raw.height + y) * raw.width + x)] =
                    rows[static_cast<std::size_t>(y)][x * raw.channels + c];
    return raw;
}

Tensor read_png(const fs::path& path, PngChannels channels) {
    const RawImage raw = read_png_raw(path);
    const std::int64_t h = raw.height, w = raw.width, hw = h * w;
    const int out_c = channels == PngChannels::rgb ? 3 : 1;
    Tensor out({out_c, h, w});
    for (int c = 0; c < out_c; ++c) {
        for (std::int64_t i = 0; i < hw; ++i) {
            double v;
            if (channels == PngChannels::rgb) {
                v = raw.samples[static_cast<std::size_t>((raw.channels == 1 ? 0 : c) * hw + i)];
            } else if (raw.channels == 1) {
                v = raw.samples[static_cast<std::size_t>(i)];
            } else {
                const double r = raw.samples[static_cast<std::size_t>(i)];
                const double g = raw.samples[static_cast<std::size_t>(hw + i)];
                const double b = raw.samples[static_cast<std::size_t>(2 * hw + i)];
                v = std::round(0.299 * r + 0.587 * g + 0.114 * b);
            }
            out[c * hw + i] = v / 255.0;
        }
    }
    return out;
}

std::vector<std::uint8_t> quantize_8bit(const Tensor& image) {
    std::vector<std::uint8_t> q(static_cast<std::size_t>(image.numel()));
    for (std::int64_t i = 0; i < image.numel(); ++i) {
        const double v = image[i];
        const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
        q[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(c * 255.0));
    }
    return q;
}

void write_png(const fs::path& path, const Tensor& image) {
    if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
        throw InvalidArgument("write_png expects (1|3, H, W), got " + shape_str(image.shape()));
    const int c = static_cast<int>(image.dim(0)), h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
    const auto q = quantize_8bit(image);
    std::vector<std::uint8_t> interleaved(static_cast<std::size_t>(c * h * w));
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h * w; ++i)
            interleaved[static_cast<std::size_t>(i * c + ch)] = q[static_cast<std::size_t>(ch * h * w + i)];

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = temp_path_for(path);
    {
        FilePtr fp(std::fopen(tmp.c_str(), "wb"));
        if (!fp) throw IoError("cannot write " + tmp.string());
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            png_destroy_write_struct(&png, &info);
            throw IoError("libpng initialisation failed");
        }
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw IoError("failed to encode " + path.string());
        }
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                     c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_set_compression_level(png, 6);
        png_write_info(png, info);
        for (int y = 0; y < h; ++y)
            png_write_row(png, interleaved.data() + static_cast<std::size_t>(y * w * c));
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    fs::rename(tmp, path);
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = temp_path_for(path);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

Tensor gray_to_rgb(const Tensor& image) {
    if (image.rank() != 3) throw InvalidArgument("gray_to_rgb expects (C, H, W)");
    if (image.dim(0) == 3) return image;
    const Tensor parts[] = {image, image, image};
    return concat(parts, 0);
}

Tensor hstack_images(std::span<const Tensor> images) {
    if (images.empty()) throw InvalidArgument("hstack of zero images");
    const std::int64_t h = images.front().dim(1);
    std::int64_t total_w = 0;
    for (const auto& im : images) {
        if (im.rank() != 3 || im.dim(0) != 3 || im.dim(1) != h)
            throw InvalidArgument("hstack needs RGB images of equal height");
        total_w += im.dim(2);
    }
    Tensor out({3, h, total_w});
    std::int64_t x0 = 0;
    for (const auto& im : images) {
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < im.dim(2); ++x) out.at(c, y, x0 + x) = im.at(c, y, x);
        x0 += im.dim(2);
    }
    return out;
}

Tensor vstack_images(std::span<const Tensor> images) {
    if (images.empty()) throw InvalidArgument("vstack of zero images");
    const std::int64_t w = images.front().dim(2);
    std::int64_t total_h = 0;
    for (const auto& im : images) {
        if (im.rank() != 3 || im.dim(0) != 3 || im.dim(2) != w)
            throw InvalidArgument("vstack needs RGB images of equal width");
        total_h += im.dim(1);
    }
    Tensor out({3, total_h, w});
    std::int64_t y0 = 0;
    for (const auto& im : images) {
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t y = 0; y < im.dim(1); ++y)
                for (std::int64_t x = 0; x < w; ++x) out.at(c, y0 + y, x) = im.at(c, y, x);
        y0 += im.dim(1);
    }
    return out;
}

}  // namespace vtonlab
