#include "vhgnn/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <jpeglib.h>
#include <png.h>

#include "vhgnn/errors.hpp"

namespace vhgnn {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.empty()) throw DataError("image file is empty: " + path);
    return bytes;
}

float byte_to_unit(std::uint8_t b) { return static_cast<float>(b) / 255.f; }

std::uint8_t unit_to_byte(float v) {
    const float c = std::clamp(v, 0.f, 1.f);
    return static_cast<std::uint8_t>(std::lround(c * 255.f));
}

// --- PNG ------------------------------------------------------------------

Micrograph decode_png(std::span<const std::uint8_t> bytes, const std::string& origin) {
    png_image im;
    std::memset(&im, 0, sizeof im);
    im.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&im, bytes.data(), bytes.size())) {
        throw DataError("PNG decode failed for " + origin + ": " + im.message);
    }
    im.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(im));
    if (!png_image_finish_read(&im, nullptr, raw.data(), 0, nullptr)) {
        throw DataError("PNG decode failed for " + origin + ": " + im.message);
    }
    Micrograph out = make_micrograph(im.height, im.width);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = byte_to_unit(raw[i]);
    return out;
}

// --- JPEG -----------------------------------------------------------------

struct JpegErr {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX] = {0};
};

void jpeg_error_trap(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

Micrograph decode_jpeg(std::span<const std::uint8_t> bytes, const std::string& origin) {
    jpeg_decompress_struct cinfo;
    JpegErr err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_trap;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError("JPEG decode failed for " + origin + ": " + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    if (cinfo.jpeg_color_space != JCS_GRAYSCALE) cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    const std::size_t w = cinfo.output_width, h = cinfo.output_height;
    const std::size_t comps = cinfo.output_components;
    std::vector<std::uint8_t> row(w * comps);
    Micrograph out = make_micrograph(h, w);
    while (cinfo.output_scanline < cinfo.output_height) {
        const std::size_t y = cinfo.output_scanline;
        JSAMPROW rows[1] = {row.data()};
        jpeg_read_scanlines(&cinfo, rows, 1);
        for (std::size_t x = 0; x < w; ++x) {
            if (comps == 1) {
                const float g = byte_to_unit(row[x]);
                out.at(y, x, 0) = out.at(y, x, 1) = out.at(y, x, 2) = g;
            } else {
                out.at(y, x, 0) = byte_to_unit(row[x * comps + 0]);
                out.at(y, x, 1) = byte_to_unit(row[x * comps + 1]);
                out.at(y, x, 2) = byte_to_unit(row[x * comps + 2]);
            }
        }
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

// --- BMP ------------------------------------------------------------------

std::uint32_t rd_u32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
}
std::uint16_t rd_u16(const std::uint8_t* p) {
    return std::uint16_t(p[0]) | std::uint16_t(p[1]) << 8;
}

Micrograph decode_bmp(std::span<const std::uint8_t> b, const std::string& origin) {
    auto fail = [&](const std::string& why) -> Micrograph {
        throw DataError("BMP decode failed for " + origin + ": " + why);
    };
    if (b.size() < 54) return fail("file too small");
    const std::uint32_t data_offset = rd_u32(&b[10]);
    const std::uint32_t header_size = rd_u32(&b[14]);
    if (header_size < 40) return fail("unsupported header");
    const std::int32_t w = static_cast<std::int32_t>(rd_u32(&b[18]));
    const std::int32_t h_raw = static_cast<std::int32_t>(rd_u32(&b[22]));
    const bool top_down = h_raw < 0;
    const std::int32_t h = top_down ? -h_raw : h_raw;
    const std::uint16_t bpp = rd_u16(&b[28]);
    const std::uint32_t compression = rd_u32(&b[30]);
    if (w <= 0 || h <= 0) return fail("bad dimensions");
    if (compression != 0) return fail("only uncompressed BI_RGB supported");
    if (bpp != 8 && bpp != 24 && bpp != 32) {
        return fail("unsupported bit depth " + std::to_string(bpp));
    }

    const std::uint8_t* palette = nullptr;
    std::uint32_t palette_entries = 0;
    if (bpp == 8) {
        palette_entries = rd_u32(&b[46]);
        if (palette_entries == 0) palette_entries = 256;
        palette = &b[14 + header_size];
        if (14 + header_size + palette_entries * 4ull > b.size()) return fail("palette truncated");
    }

    const std::size_t bytes_per_px = bpp / 8;
    const std::size_t row_stride = ((static_cast<std::size_t>(w) * bytes_per_px + 3) / 4) * 4;
    if (data_offset + row_stride * static_cast<std::size_t>(h) > b.size()) {
        return fail("pixel data truncated");
    }

    Micrograph out = make_micrograph(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
    for (std::int32_t row = 0; row < h; ++row) {
        const std::int32_t y = top_down ? row : h - 1 - row; // rows stored bottom-up by default
        const std::uint8_t* src = &b[data_offset + static_cast<std::size_t>(row) * row_stride];
        for (std::int32_t x = 0; x < w; ++x) {
            std::uint8_t r, g, bl;
            if (bpp == 8) {
                const std::uint8_t idx = src[x];
                if (idx >= palette_entries) return fail("palette index out of range");
                const std::uint8_t* e = palette + idx * 4; // BGRA entries
                bl = e[0], g = e[1], r = e[2];
            } else {
                const std::uint8_t* p = src + x * bytes_per_px; // BGR(A)
                bl = p[0], g = p[1], r = p[2];
            }
            out.at(y, x, 0) = byte_to_unit(r);
            out.at(y, x, 1) = byte_to_unit(g);
            out.at(y, x, 2) = byte_to_unit(bl);
        }
    }
    return out;
}

} // namespace

Micrograph make_micrograph(std::size_t height, std::size_t width, float fill) {
    if (height == 0 || width == 0) throw DimensionError("micrograph dimensions must be positive");
    Micrograph m;
    m.height = height;
    m.width = width;
    m.data.assign(height * width * 3, fill);
    return m;
}

Micrograph decode_image(std::span<const std::uint8_t> bytes, const std::string& origin) {
    static const std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0) {
        return decode_png(bytes, origin);
    }
    if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
        return decode_jpeg(bytes, origin);
    }
    if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') {
        return decode_bmp(bytes, origin);
    }
    throw DataError("unrecognized image format for " + origin +
                    " (PNG, JPEG, and BMP are supported)");
}

Micrograph decode_image(const std::string& path) {
    const auto bytes = read_file(path);
    return decode_image(std::span<const std::uint8_t>(bytes.data(), bytes.size()), path);
}

void write_png(const std::string& path, const Micrograph& img) {
    std::vector<std::uint8_t> raw(img.data.size());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = unit_to_byte(img.data[i]);
    png_image im;
    std::memset(&im, 0, sizeof im);
    im.version = PNG_IMAGE_VERSION;
    im.width = static_cast<png_uint_32>(img.width);
    im.height = static_cast<png_uint_32>(img.height);
    im.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&im, path.c_str(), 0, raw.data(), 0, nullptr)) {
        throw DataError("PNG encode failed for " + path + ": " + im.message);
    }
}

void write_bmp(const std::string& path, const Micrograph& img) {
    const std::size_t w = img.width, h = img.height;
    const std::size_t row_stride = ((w * 3 + 3) / 4) * 4;
    const std::size_t pixel_bytes = row_stride * h;
    const std::uint32_t data_offset = 54;
    const std::uint32_t file_size = static_cast<std::uint32_t>(data_offset + pixel_bytes);

    std::vector<std::uint8_t> out(file_size, 0);
    auto wr_u32 = [&](std::size_t at, std::uint32_t v) {
        out[at] = v & 0xFF;
        out[at + 1] = (v >> 8) & 0xFF;
        out[at + 2] = (v >> 16) & 0xFF;
        out[at + 3] = (v >> 24) & 0xFF;
    };
    auto wr_u16 = [&](std::size_t at, std::uint16_t v) {
        out[at] = v & 0xFF;
        out[at + 1] = (v >> 8) & 0xFF;
    };
    out[0] = 'B';
    out[1] = 'M';
    wr_u32(2, file_size);
    wr_u32(10, data_offset);
    wr_u32(14, 40); // BITMAPINFOHEADER
    wr_u32(18, static_cast<std::uint32_t>(w));
    wr_u32(22, static_cast<std::uint32_t>(h));
    wr_u16(26, 1);
    wr_u16(28, 24);
    wr_u32(34, static_cast<std::uint32_t>(pixel_bytes));
    wr_u32(38, 2835); // 72 dpi
    wr_u32(42, 2835);
    for (std::size_t row = 0; row < h; ++row) {
        const std::size_t y = h - 1 - row;
        std::uint8_t* dst = out.data() + data_offset + row * row_stride;
        for (std::size_t x = 0; x < w; ++x) {
            dst[x * 3 + 0] = unit_to_byte(img.at(y, x, 2));
            dst[x * 3 + 1] = unit_to_byte(img.at(y, x, 1));
            dst[x * 3 + 2] = unit_to_byte(img.at(y, x, 0));
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f || !f.write(reinterpret_cast<const char*>(out.data()), out.size())) {
        throw DataError("cannot write BMP file: " + path);
    }
}

void write_jpeg(const std::string& path, const Micrograph& img, int quality) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw DataError("cannot write JPEG file: " + path);

    jpeg_compress_struct cinfo;
    JpegErr err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_trap;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        std::fclose(f);
        throw DataError("JPEG encode failed for " + path + ": " + err.message);
    }
    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, f);
    cinfo.image_width = static_cast<JDIMENSION>(img.width);
    cinfo.image_height = static_cast<JDIMENSION>(img.height);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);

    std::vector<std::uint8_t> row(img.width * 3);
    while (cinfo.next_scanline < cinfo.image_height) {
        const std::size_t y = cinfo.next_scanline;
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) row[x * 3 + c] = unit_to_byte(img.at(y, x, c));
        JSAMPROW rows[1] = {row.data()};
        jpeg_write_scanlines(&cinfo, rows, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    std::fclose(f);
}

void normalize_signed(Micrograph& img) {
    for (float& v : img.data) v = (v - 0.5f) / 0.5f;
}

Micrograph resize_bilinear(const Micrograph& img, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0) throw DimensionError("resize target must be positive");
    if (out_h == img.height && out_w == img.width) return img;

    Micrograph out = make_micrograph(out_h, out_w);
    const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        const double cy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
        const std::size_t y0 = static_cast<std::size_t>(cy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const float wy = static_cast<float>(cy - static_cast<double>(y0));
        for (std::size_t x = 0; x < out_w; ++x) {
            const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            const double cx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
            const std::size_t x0 = static_cast<std::size_t>(cx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const float wx = static_cast<float>(cx - static_cast<double>(x0));
            for (std::size_t c = 0; c < 3; ++c) {
                const float top = img.at(y0, x0, c) * (1.f - wx) + img.at(y0, x1, c) * wx;
                const float bot = img.at(y1, x0, c) * (1.f - wx) + img.at(y1, x1, c) * wx;
                out.at(y, x, c) = top * (1.f - wy) + bot * wy;
            }
        }
    }
    return out;
}

PatchGrid patchify(const Micrograph& img, std::size_t patch) {
    if (patch == 0) throw ConfigError("patch size must be positive");
    if (img.height % patch != 0 || img.width % patch != 0) {
        throw DataError("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        " is not divisible by patch size " + std::to_string(patch) +
                        "; resize the input first");
    }
    PatchGrid grid;
    grid.rows = img.height / patch;
    grid.cols = img.width / patch;
    grid.patch = patch;
    grid.features.resize(grid.num_patches() * grid.feature_dim());

    const std::size_t fd = grid.feature_dim();
    for (std::size_t pr = 0; pr < grid.rows; ++pr) {
        for (std::size_t pc = 0; pc < grid.cols; ++pc) {
            float* dst = grid.features.data() + (pr * grid.cols + pc) * fd;
            for (std::size_t py = 0; py < patch; ++py)
                for (std::size_t px = 0; px < patch; ++px)
                    for (std::size_t c = 0; c < 3; ++c)
                        *dst++ = img.at(pr * patch + py, pc * patch + px, c);
        }
    }
    return grid;
}

Micrograph unpatchify(const PatchGrid& grid) {
    if (grid.patch == 0 || grid.num_patches() == 0) {
        throw DimensionError("unpatchify: empty patch grid");
    }
    if (grid.features.size() != grid.num_patches() * grid.feature_dim()) {
        throw DimensionError("unpatchify: feature buffer does not match grid dimensions");
    }
    Micrograph img = make_micrograph(grid.rows * grid.patch, grid.cols * grid.patch);
    const std::size_t fd = grid.feature_dim();
    for (std::size_t pr = 0; pr < grid.rows; ++pr) {
        for (std::size_t pc = 0; pc < grid.cols; ++pc) {
            const float* src = grid.features.data() + (pr * grid.cols + pc) * fd;
            for (std::size_t py = 0; py < grid.patch; ++py)
                for (std::size_t px = 0; px < grid.patch; ++px)
                    for (std::size_t c = 0; c < 3; ++c)
                        img.at(pr * grid.patch + py, pc * grid.patch + px, c) = *src++;
        }
    }
    return img;
}

} // namespace vhgnn
