#pragma once

#include <string>
#include <vector>

#include "umg/tensor.hpp"

namespace umg {

// 8-bit grayscale raster held as floats k/255 in [0,1], row-major.
struct GrayImage {
    int width = 0, height = 0;
    std::vector<float> pix;

    float at(int x, int y) const { return pix[static_cast<size_t>(y) * width + x]; }
    float& at(int x, int y) { return pix[static_cast<size_t>(y) * width + x]; }
    bool empty() const { return width == 0 || height == 0; }
};

GrayImage make_image(int width, int height, float fill = 0);

/// Snap to the nearest representable 8-bit level k/255 (clamping to [0,1]).
float quantize01(float v);
void quantize_image(GrayImage& img);

/// PGM (P5, 8-bit) or PNG (8-bit grayscale), dispatched on magic bytes.
GrayImage read_image(const std::string& path);

/// Format chosen by extension: .pgm or .png. Write-then-read is bitwise
/// identity for PGM.
void write_image(const GrayImage& img, const std::string& path);

Tensor image_tensor(const GrayImage& img);
Tensor image_batch(const std::vector<const GrayImage*>& imgs);
GrayImage tensor_to_image(const Tensor& t, int sample);

}  // namespace umg
