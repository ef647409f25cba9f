#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace da4lg {

// Binary PPM (P6) RGB image, maxval 255, row-major, 3 bytes per pixel.
struct ViewImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width * height * 3

    std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

ViewImage read_ppm(const std::string& path);
void write_ppm(const std::string& path, const ViewImage& img);

// Binary PGM (P5) grayscale export for scalar maps.
void write_pgm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& gray);

}  // namespace da4lg
