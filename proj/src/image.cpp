#include "umg/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace umg {

GrayImage make_image(int width, int height, float fill) {
    GrayImage img;
    img.width = width;
    img.height = height;
    img.pix.assign(static_cast<size_t>(width) * height, fill);
    return img;
}

float quantize01(float v) {
    float c = std::min(1.0f, std::max(0.0f, v));
    return std::round(c * 255.0f) / 255.0f;
}

void quantize_image(GrayImage& img) {
    for (auto& v : img.pix) v = quantize01(v);
}

namespace {

GrayImage read_pgm(std::ifstream& is, const std::string& path) {
    auto next_token = [&]() -> std::string {
        std::string tok;
        for (;;) {
            int c = is.get();
            if (c == EOF) throw IoError("pgm: truncated header in " + path);
            if (c == '#') {
                while (c != '\n' && c != EOF) c = is.get();
                continue;
            }
            if (std::isspace(c)) {
                if (!tok.empty()) return tok;
                continue;
            }
            tok.push_back(static_cast<char>(c));
        }
    };
    const std::string magic = next_token();
    if (magic == "P2") throw IoError("pgm: ASCII (P2) format not supported: " + path);
    if (magic != "P5") throw IoError("pgm: bad magic '" + magic + "' in " + path);
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (w <= 0 || h <= 0) throw IoError("pgm: bad dimensions in " + path);
    if (maxval != 255) {
        throw IoError("pgm: unsupported depth (maxval " + std::to_string(maxval) + ") in " + path);
    }
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (is.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw IoError("pgm: truncated pixel data in " + path);
    }
    GrayImage img = make_image(w, h);
    for (size_t i = 0; i < raw.size(); ++i) img.pix[i] = static_cast<float>(raw[i]) / 255.0f;
    return img;
}

void write_pgm(const GrayImage& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os.good()) throw IoError("pgm: cannot open for writing: " + path);
    os << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.pix.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        float v = std::min(1.0f, std::max(0.0f, img.pix[i]));
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os.good()) throw IoError("pgm: write failed: " + path);
}

struct PngReadCloser {
    png_structp p = nullptr;
    png_infop info = nullptr;
    FILE* f = nullptr;
    ~PngReadCloser() {
        if (p) png_destroy_read_struct(&p, info ? &info : nullptr, nullptr);
        if (f) fclose(f);
    }
};

GrayImage read_png(const std::string& path) {
    PngReadCloser c;
    c.f = fopen(path.c_str(), "rb");
    if (!c.f) throw IoError("png: cannot open: " + path);
    c.p = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    c.info = png_create_info_struct(c.p);
    if (!c.p || !c.info) throw IoError("png: libpng init failed");
    if (setjmp(png_jmpbuf(c.p))) throw IoError("png: decode error in " + path);
    png_init_io(c.p, c.f);
    png_read_info(c.p, c.info);
    const int bit_depth = png_get_bit_depth(c.p, c.info);
    const int color_type = png_get_color_type(c.p, c.info);
    if (bit_depth == 16) throw IoError("png: 16-bit depth not supported: " + path);
    if (color_type != PNG_COLOR_TYPE_GRAY) {
        throw IoError("png: only 8-bit grayscale supported: " + path);
    }
    if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(c.p);
    png_read_update_info(c.p, c.info);
    const int w = static_cast<int>(png_get_image_width(c.p, c.info));
    const int h = static_cast<int>(png_get_image_height(c.p, c.info));
    GrayImage img = make_image(w, h);
    std::vector<unsigned char> row(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        png_read_row(c.p, row.data(), nullptr);
        for (int x = 0; x < w; ++x) img.at(x, y) = static_cast<float>(row[static_cast<size_t>(x)]) / 255.0f;
    }
    return img;
}

struct PngWriteCloser {
    png_structp p = nullptr;
    png_infop info = nullptr;
    FILE* f = nullptr;
    ~PngWriteCloser() {
        if (p) png_destroy_write_struct(&p, info ? &info : nullptr);
        if (f) fclose(f);
    }
};

void write_png(const GrayImage& img, const std::string& path) {
    PngWriteCloser c;
    c.f = fopen(path.c_str(), "wb");
    if (!c.f) throw IoError("png: cannot open for writing: " + path);
    c.p = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    c.info = png_create_info_struct(c.p);
    if (!c.p || !c.info) throw IoError("png: libpng init failed");
    if (setjmp(png_jmpbuf(c.p))) throw IoError("png: encode error for " + path);
    png_init_io(c.p, c.f);
    png_set_IHDR(c.p, c.info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(c.p, c.info);
    std::vector<unsigned char> row(static_cast<size_t>(img.width));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            float v = std::min(1.0f, std::max(0.0f, img.at(x, y)));
            row[static_cast<size_t>(x)] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
        png_write_row(c.p, row.data());
    }
    png_write_end(c.p, nullptr);
}

}  // namespace

GrayImage read_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is.good()) throw IoError("read_image: cannot open: " + path);
    char magic[2] = {0, 0};
    is.read(magic, 2);
    is.seekg(0);
    if (magic[0] == 'P') return read_pgm(is, path);
    if (static_cast<unsigned char>(magic[0]) == 0x89 && magic[1] == 'P') {
        is.close();
        return read_png(path);
    }
    throw IoError("read_image: unrecognized format: " + path);
}

void write_image(const GrayImage& img, const std::string& path) {
    if (img.empty()) throw IoError("write_image: empty image");
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0) {
        write_png(img, path);
    } else {
        write_pgm(img, path);
    }
}

Tensor image_tensor(const GrayImage& img) {
    std::vector<real> v(img.pix.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<real>(img.pix[i]);
    return Tensor({1, 1, img.height, img.width}, std::move(v));
}

Tensor image_batch(const std::vector<const GrayImage*>& imgs) {
    if (imgs.empty()) throw DimError("image_batch: empty batch");
    const int h = imgs[0]->height, w = imgs[0]->width;
    std::vector<real> v;
    v.reserve(imgs.size() * imgs[0]->pix.size());
    for (const GrayImage* img : imgs) {
        if (img->height != h || img->width != w) {
            throw DimError("image_batch: mixed image sizes");
        }
        for (float p : img->pix) v.push_back(static_cast<real>(p));
    }
    return Tensor({static_cast<int>(imgs.size()), 1, h, w}, std::move(v));
}

GrayImage tensor_to_image(const Tensor& t, int sample) {
    if (t.ndim() != 4 || t.dim(1) != 1) {
        throw DimError("tensor_to_image: expected [N,1,H,W], got " + shape_str(t.shape));
    }
    const int h = t.dim(2), w = t.dim(3);
    GrayImage img = make_image(w, h);
    const real* src = t.data().data() + static_cast<int64_t>(sample) * h * w;
    for (int i = 0; i < h * w; ++i) img.pix[static_cast<size_t>(i)] = static_cast<float>(src[i]);
    quantize_image(img);
    return img;
}

}  // namespace umg
