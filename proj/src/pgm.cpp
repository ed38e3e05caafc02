#include "fvae/pgm.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>

#include "fvae/common.hpp"

namespace fvae {

void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const float* pixels) {
    if (width == 0 || height == 0) throw UsageError("PGM needs positive dimensions");
    std::string blob = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    blob.reserve(blob.size() + width * height);
    for (std::size_t i = 0; i < width * height; ++i) {
        float v = pixels[i];
        v = v < 0.0F ? 0.0F : (v > 1.0F ? 1.0F : v);
        blob.push_back(static_cast<char>(std::lround(v * 255.0F)));
    }
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) throw DataError("cannot write PGM: " + path);
    const std::size_t written = std::fwrite(blob.data(), 1, blob.size(), f);
    std::fclose(f);
    if (written != blob.size()) throw DataError("short write on PGM: " + path);
}

namespace {

// Skips whitespace and '#' comments between header tokens.
std::size_t skip_separators(const std::vector<std::uint8_t>& b, std::size_t pos) {
    while (pos < b.size()) {
        if (std::isspace(b[pos])) {
            ++pos;
        } else if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    return pos;
}

std::uint64_t read_number(const std::vector<std::uint8_t>& b, std::size_t* pos) {
    *pos = skip_separators(b, *pos);
    if (*pos >= b.size() || !std::isdigit(b[*pos])) {
        throw DataError("PGM: expected number at byte " + std::to_string(*pos));
    }
    std::uint64_t v = 0;
    while (*pos < b.size() && std::isdigit(b[*pos])) {
        v = v * 10 + (b[*pos] - '0');
        ++*pos;
    }
    return v;
}

}  // namespace

PgmImage parse_pgm(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
        throw DataError("PGM: missing P5 magic");
    }
    std::size_t pos = 2;
    PgmImage img;
    img.width = read_number(bytes, &pos);
    img.height = read_number(bytes, &pos);
    img.maxval = static_cast<std::uint32_t>(read_number(bytes, &pos));
    if (img.maxval == 0 || img.maxval > 255) {
        throw DataError("PGM: unsupported maxval " + std::to_string(img.maxval));
    }
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw DataError("PGM: expected single whitespace before raster");
    }
    ++pos;
    const std::size_t need = img.width * img.height;
    if (bytes.size() - pos != need) {
        throw DataError("PGM: raster size mismatch (expected " + std::to_string(need) +
                        " bytes, got " + std::to_string(bytes.size() - pos) + ")");
    }
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return img;
}

}  // namespace fvae
