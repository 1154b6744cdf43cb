#include "p3d/image.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "p3d/error.h"

namespace p3d {

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 2) throw ContractViolation("write_pgm expects [H,W], got " + shape_to_string(image.shape()));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
    std::string bytes(image.numel(), '\0');
    for (std::size_t i = 0; i < image.numel(); ++i) {
        const float v = std::clamp(image[i], 0.0f, 1.0f);
        bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(255.0f * v)));
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
    std::string tok;
    char c;
    while (in.get(c)) {
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(c);
    }
    return tok;
}

}  // namespace

Tensor read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path.string());
    if (header_token(in) != "P5") throw IoError("not a binary PGM image: " + path.string());
    std::size_t width = 0, height = 0, maxval = 0;
    try {
        width = std::stoul(header_token(in));
        height = std::stoul(header_token(in));
        maxval = std::stoul(header_token(in));
    } catch (const std::exception&) {
        throw IoError("malformed PGM header: " + path.string());
    }
    if (width == 0 || height == 0 || maxval != 255) throw IoError("unsupported PGM geometry in " + path.string());
    std::string bytes(width * height, '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw IoError("truncated image file: " + path.string());
    Tensor img({height, width});
    for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = static_cast<unsigned char>(bytes[i]) / 255.0f;
    return img;
}

}  // namespace p3d
