#include "da4lg/ppm.hpp"

#include <fstream>

#include "da4lg/errors.hpp"

namespace da4lg {

namespace {

int read_pnm_int(std::istream& in) {
    // Skips whitespace and '#' comment lines, per the PNM grammar.
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF) throw LoadError("unexpected end of PNM header");
    int v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = in.get();
    }
    return v;
}

}  // namespace

ViewImage read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open image file " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '6') throw LoadError("not a binary PPM (P6) file: " + path);
    ViewImage img;
    img.width = read_pnm_int(in);
    img.height = read_pnm_int(in);
    int maxval = read_pnm_int(in);
    if (img.width <= 0 || img.height <= 0) throw LoadError("bad PPM dimensions in " + path);
    if (maxval != 255) throw LoadError("unsupported PPM maxval in " + path);
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size())
        throw LoadError("truncated PPM pixel data in " + path);
    return img;
}

void write_ppm(const std::string& path, const ViewImage& img) {
    if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw ShapeError("PPM pixel buffer does not match dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot open image file for writing " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

void write_pgm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& gray) {
    if (gray.size() != static_cast<std::size_t>(width) * height)
        throw ShapeError("PGM pixel buffer does not match dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot open image file for writing " + path);
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

}  // namespace da4lg
