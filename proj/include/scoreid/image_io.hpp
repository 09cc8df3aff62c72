#pragma once

#include <filesystem>

#include "scoreid/image.hpp"

namespace scoreid {

/// Decodes a PNG or binary PGM (P5) page. Color is reduced to BT.601 luminance
/// and alpha is composited over white.
GrayImage load_page(const std::filesystem::path& path);

void save_png(const GrayImage& img, const std::filesystem::path& path);
void save_pgm(const GrayImage& img, const std::filesystem::path& path);

}  // namespace scoreid
