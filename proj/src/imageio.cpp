// SPDX-License-Identifier: Apache-2.0
#include "invdet/imageio.hpp"

#include <jpeglib.h>
#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace invdet::img {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

ImageU8 load_png_file(FILE* fp, const std::string& path) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png: allocation failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png: allocation failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png: failed to decode " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_16(png);
    png_read_update_info(png, info);

    ImageU8 out;
    out.w = static_cast<int>(png_get_image_width(png, info));
    out.h = static_cast<int>(png_get_image_height(png, info));
    out.c = static_cast<int>(png_get_channels(png, info));
    out.pixels.resize(static_cast<size_t>(out.w) * out.h * out.c);
    std::vector<png_bytep> rows(static_cast<size_t>(out.h));
    for (int y = 0; y < out.h; ++y)
        rows[static_cast<size_t>(y)] = out.pixels.data() + static_cast<size_t>(y) * out.w * out.c;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    jmp_buf jump;
};

void jpeg_error_exit_throwless(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    longjmp(mgr->jump, 1);
}

}  // namespace

ImageU8 load_image(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("load_image: cannot open " + path);
    unsigned char magic[4] = {0, 0, 0, 0};
    const size_t got = std::fread(magic, 1, 4, fp.get());
    std::rewind(fp.get());
    if (got >= 4 && magic[0] == 0x89 && magic[1] == 'P') return load_png_file(fp.get(), path);
    if (got >= 2 && magic[0] == 0xFF && magic[1] == 0xD8) {
        std::fseek(fp.get(), 0, SEEK_END);
        const long n = std::ftell(fp.get());
        std::rewind(fp.get());
        std::vector<uint8_t> buf(static_cast<size_t>(n));
        if (std::fread(buf.data(), 1, buf.size(), fp.get()) != buf.size())
            throw std::runtime_error("load_image: short read on " + path);
        return decode_jpeg(buf.data(), buf.size());
    }
    throw std::runtime_error("load_image: unsupported format for " + path);
}

void save_png(const ImageU8& image, const std::string& path) {
    if (image.w <= 0 || image.h <= 0 || image.c != 3)
        throw std::invalid_argument("save_png: expects a nonempty RGB image");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("save_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png: allocation failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png: allocation failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("save_png: failed to encode " + path);
    }
    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);  // pinned for byte-stable output
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.w), static_cast<png_uint_32>(image.h),
                 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(image.h));
    for (int y = 0; y < image.h; ++y)
        rows[static_cast<size_t>(y)] =
            const_cast<png_bytep>(image.pixels.data() + static_cast<size_t>(y) * image.w * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<uint8_t> encode_jpeg(const ImageU8& image, int quality) {
    if (image.c != 3) throw std::invalid_argument("encode_jpeg: expects RGB");
    if (quality < 1 || quality > 100) throw std::invalid_argument("encode_jpeg: quality out of range");
    jpeg_compress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit_throwless;
    unsigned char* mem = nullptr;
    unsigned long mem_size = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        if (mem) free(mem);
        throw std::runtime_error("encode_jpeg: encoder failure");
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &mem, &mem_size);
    cinfo.image_width = static_cast<JDIMENSION>(image.w);
    cinfo.image_height = static_cast<JDIMENSION>(image.h);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(
            image.pixels.data() + static_cast<size_t>(cinfo.next_scanline) * image.w * 3);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    std::vector<uint8_t> out(mem, mem + mem_size);
    free(mem);
    return out;
}

ImageU8 decode_jpeg(const uint8_t* data, size_t size) {
    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit_throwless;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error("decode_jpeg: decoder failure");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, const_cast<unsigned char*>(data), static_cast<unsigned long>(size));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    ImageU8 out;
    out.w = static_cast<int>(cinfo.output_width);
    out.h = static_cast<int>(cinfo.output_height);
    out.c = 3;
    out.pixels.resize(static_cast<size_t>(out.w) * out.h * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.pixels.data() + static_cast<size_t>(cinfo.output_scanline) * out.w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

Tensor to_tensor(const ImageU8& image) {
    if (image.w <= 0 || image.h <= 0) throw std::invalid_argument("to_tensor: empty image");
    if (image.c < 1 || image.c > 4) throw std::invalid_argument("to_tensor: unsupported channel count");
    Tensor out(3, image.h, image.w);
    for (int y = 0; y < image.h; ++y) {
        for (int x = 0; x < image.w; ++x) {
            float rgb[3];
            if (image.c <= 2) {
                const float g = image.at(y, x, 0) / 255.0f * 2.0f - 1.0f;
                rgb[0] = rgb[1] = rgb[2] = g;  // grayscale replicated, alpha dropped
            } else {
                for (int ch = 0; ch < 3; ++ch)
                    rgb[ch] = image.at(y, x, ch) / 255.0f * 2.0f - 1.0f;
            }
            for (int ch = 0; ch < 3; ++ch) out.at(ch, y, x) = rgb[ch];
        }
    }
    return out;
}

ImageU8 to_image_u8(const Tensor& x) {
    if (x.channels() != 3) throw std::invalid_argument("to_image_u8: expects 3 channels");
    ImageU8 out;
    out.w = x.width();
    out.h = x.height();
    out.c = 3;
    out.pixels.resize(static_cast<size_t>(out.w) * out.h * 3);
    for (int y = 0; y < out.h; ++y) {
        for (int xx = 0; xx < out.w; ++xx) {
            for (int ch = 0; ch < 3; ++ch) {
                float v = x.at(ch, y, xx);
                v = std::min(1.f, std::max(-1.f, v));
                const int q = static_cast<int>(std::lround((v + 1.f) * 0.5f * 255.f));
                out.pixels[(static_cast<size_t>(y) * out.w + xx) * 3 + ch] =
                    static_cast<uint8_t>(std::min(255, std::max(0, q)));
            }
        }
    }
    return out;
}

}  // namespace invdet::img
