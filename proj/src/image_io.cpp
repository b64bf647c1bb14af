#include "gatn/image_io.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gatn/errors.hpp"

namespace gatn {
namespace {

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
    std::string tok;
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (!std::isspace(ch)) {
            break;
        } else {
            ch = in.get();
        }
    }
    while (ch != EOF && !std::isspace(ch)) {
        tok.push_back(static_cast<char>(ch));
        ch = in.get();
    }
    return tok;
}

} // namespace

void write_ppm(const Tensor4& image, const std::string& path) {
    if (image.n() != 1 || image.c() != 3) {
        throw ShapeError("write_ppm: expected a (1,3,h,w) image");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_ppm: cannot open " + path);
    out << "P6\n" << image.w() << " " << image.h() << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(image.w()) * 3);
    for (int i = 0; i < image.h(); ++i) {
        for (int j = 0; j < image.w(); ++j) {
            for (int c = 0; c < 3; ++c) {
                row[static_cast<std::size_t>(j) * 3 + c] = to_byte(image(0, c, i, j));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("write_ppm: short write to " + path);
}

Tensor4 read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_ppm: cannot open " + path);
    if (next_token(in) != "P6") throw IoError("read_ppm: not a P6 file: " + path);
    const int w = std::stoi(next_token(in));
    const int h = std::stoi(next_token(in));
    const int maxval = std::stoi(next_token(in));
    if (w <= 0 || h <= 0 || maxval != 255) {
        throw IoError("read_ppm: unsupported header in " + path);
    }
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw IoError("read_ppm: truncated pixel data in " + path);
    }
    Tensor4 img(1, 3, h, w);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            for (int c = 0; c < 3; ++c) {
                img(0, c, i, j) =
                    bytes[(static_cast<std::size_t>(i) * w + j) * 3 + c] / 255.0;
            }
        }
    }
    return img;
}

void write_pgm(const Tensor4& gray, const std::string& path) {
    if (gray.n() != 1 || gray.c() != 1) {
        throw ShapeError("write_pgm: expected a (1,1,h,w) map");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_pgm: cannot open " + path);
    out << "P5\n" << gray.w() << " " << gray.h() << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(gray.w()));
    for (int i = 0; i < gray.h(); ++i) {
        for (int j = 0; j < gray.w(); ++j) row[static_cast<std::size_t>(j)] = to_byte(gray(0, 0, i, j));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("write_pgm: short write to " + path);
}

Tensor4 normalize_minmax(const Tensor4& map) {
    Tensor4 out = map;
    const double lo = map.data.minCoeff();
    const double hi = map.data.maxCoeff();
    if (hi > lo) {
        out.data = (map.data - lo) / (hi - lo);
    } else {
        out.data.setZero();
    }
    return out;
}

} // namespace gatn
