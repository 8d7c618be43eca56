#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gazedistill/grid.hpp"

namespace gazedistill {

/// 8-bit single-channel PNG. Masks map nonzero to 255 on write and
/// >= 128 to foreground on read.
void write_png_gray(const std::string& path, const Grid<std::uint8_t>& pixels);
Grid<std::uint8_t> read_png_gray(const std::string& path);

void write_mask_png(const std::string& path, const BinaryMask& mask);
BinaryMask read_mask_png(const std::string& path);

/// Images are stored quantized to 8 bits; values are clamped to [0,1].
void write_image_png(const std::string& path, const Image& image);
Image read_image_png(const std::string& path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
std::string read_file_text(const std::string& path);
void write_file_text(const std::string& path, const std::string& text);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);

}  // namespace gazedistill
