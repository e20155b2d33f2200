#include "lmk/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace lmk {

double bilinear_sample(const Image& img, double x, double y) {
    // clamp the continuous coordinate to the image rectangle first, so
    // out-of-range samples repeat the border pixel
    const double xc = std::clamp(x, 0.0, double(img.width - 1));
    const double yc = std::clamp(y, 0.0, double(img.height - 1));
    int x0 = int(std::floor(xc));
    int y0 = int(std::floor(yc));
    if (x0 > img.width - 2) x0 = img.width - 2;
    if (y0 > img.height - 2) y0 = img.height - 2;
    if (img.width == 1) x0 = 0;
    if (img.height == 1) y0 = 0;
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = xc - x0;
    const double fy = yc - y0;
    const double v00 = img.at(y0, x0), v01 = img.at(y0, x1);
    const double v10 = img.at(y1, x0), v11 = img.at(y1, x1);
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
           fy * ((1.0 - fx) * v10 + fx * v11);
}

void bilinear_sample_grad(const Image& img, double x, double y,
                          double& dvdx, double& dvdy) {
    const bool clamped_x = x < 0.0 || x > double(img.width - 1);
    const bool clamped_y = y < 0.0 || y > double(img.height - 1);
    const double xc = std::clamp(x, 0.0, double(img.width - 1));
    const double yc = std::clamp(y, 0.0, double(img.height - 1));
    int x0 = int(std::floor(xc));
    int y0 = int(std::floor(yc));
    if (x0 > img.width - 2) x0 = img.width - 2;
    if (y0 > img.height - 2) y0 = img.height - 2;
    if (img.width == 1) x0 = 0;
    if (img.height == 1) y0 = 0;
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = xc - x0;
    const double fy = yc - y0;
    const double v00 = img.at(y0, x0), v01 = img.at(y0, x1);
    const double v10 = img.at(y1, x0), v11 = img.at(y1, x1);
    dvdx = clamped_x ? 0.0 : (1.0 - fy) * (v01 - v00) + fy * (v11 - v10);
    dvdy = clamped_y ? 0.0 : (1.0 - fx) * (v10 - v00) + fx * (v11 - v01);
}

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

Image load_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    require(fp != nullptr, "cannot open image file: " + path);

    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error("png_create_info_struct failed");
    }
    std::vector<png_bytep> row_ptrs;
    std::vector<png_byte> buf;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("failed to decode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    // normalize every variant to 8-bit grayscale
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    const png_byte color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE) {
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
    png_read_update_info(png, info);

    const int h = int(png_get_image_height(png, info));
    const int w = int(png_get_image_width(png, info));
    const size_t stride = png_get_rowbytes(png, info);
    buf.resize(stride * size_t(h));
    row_ptrs.resize(h);
    for (int y = 0; y < h; ++y) row_ptrs[y] = buf.data() + stride * size_t(y);
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            img.at(y, x) = buf[stride * size_t(y) + x] / 255.0;
    return img;
}

void skip_pgm_ws(std::istream& in) {
    // whitespace and '#' comments between header tokens
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

Image load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open image file: " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    require(m0 == 'P' && (m1 == '2' || m1 == '5'), "not a PGM file: " + path);
    int w = 0, h = 0, maxval = 0;
    skip_pgm_ws(in);
    in >> w;
    skip_pgm_ws(in);
    in >> h;
    skip_pgm_ws(in);
    in >> maxval;
    require(w > 0 && h > 0, "bad PGM dimensions in " + path);
    require(maxval > 0 && maxval <= 255, "only 8-bit PGM supported: " + path);
    Image img(h, w);
    if (m1 == '5') {
        in.get();  // single whitespace after maxval
        std::vector<unsigned char> buf(size_t(w) * h);
        in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
        require(in.gcount() == std::streamsize(buf.size()),
                "truncated PGM: " + path);
        for (size_t i = 0; i < buf.size(); ++i)
            img.data[i] = buf[i] / double(maxval);
    } else {
        for (size_t i = 0; i < img.data.size(); ++i) {
            int v;
            in >> v;
            require(bool(in), "truncated PGM: " + path);
            img.data[i] = v / double(maxval);
        }
    }
    return img;
}

}  // namespace

Image load_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    require(probe.good(), "cannot open image file: " + path);
    unsigned char magic[2] = {0, 0};
    probe.read(reinterpret_cast<char*>(magic), 2);
    probe.close();
    if (magic[0] == 0x89 && magic[1] == 'P') return load_png(path);
    if (magic[0] == 'P' && (magic[1] == '2' || magic[1] == '5'))
        return load_pgm(path);
    throw Error("unsupported image format (expected PNG or PGM): " + path);
}

void save_png_gray8(const Image& img, const std::string& path) {
    require(img.width > 0 && img.height > 0, "cannot write empty image");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    require(fp != nullptr, "cannot write image file: " + path);
    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("failed to encode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(size_t(img.width));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double v = std::clamp(img.at(y, x), 0.0, 1.0);
            row[x] = png_byte(std::lround(v * 255.0));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

static const char kRawMagic[8] = {'L', 'M', 'K', '6', '4', 'R', 'A', 'W'};

void save_raw64(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write file: " + path);
    out.write(kRawMagic, 8);
    const uint32_t h = uint32_t(img.height), w = uint32_t(img.width);
    out.write(reinterpret_cast<const char*>(&h), 4);
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(img.data.data()),
              std::streamsize(img.data.size() * sizeof(double)));
    require(out.good(), "write failure: " + path);
}

Image load_raw64(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open file: " + path);
    char magic[8];
    in.read(magic, 8);
    require(in.gcount() == 8 && std::memcmp(magic, kRawMagic, 8) == 0,
            "bad raw64 magic in " + path);
    uint32_t h = 0, w = 0;
    in.read(reinterpret_cast<char*>(&h), 4);
    in.read(reinterpret_cast<char*>(&w), 4);
    require(h > 0 && w > 0 && h < (1u << 20) && w < (1u << 20),
            "bad raw64 dimensions in " + path);
    Image img{int(h), int(w)};
    in.read(reinterpret_cast<char*>(img.data.data()),
            std::streamsize(img.data.size() * sizeof(double)));
    require(in.gcount() == std::streamsize(img.data.size() * sizeof(double)),
            "truncated raw64 file: " + path);
    return img;
}

}  // namespace lmk
