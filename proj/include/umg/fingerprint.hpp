#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "umg/image.hpp"

namespace umg {

/// Zero-mean unit-variance, then rescaled so +-3 sigma spans [0,1].
/// Constant images map to 0.5. Idempotent to within clamping error.
GrayImage normalize_image(const GrayImage& img);

// Block-wise ridge orientation from least-squares gradient fit, smoothed with
// 3x3 block averaging in doubled-angle space. theta in [0, pi); quality is
// the gradient coherence in [0,1] (0 on flat blocks).
struct OrientationField {
    int block = 16;
    int bx = 0, by = 0;
    std::vector<float> theta;
    std::vector<float> quality;

    float theta_at(float x, float y) const;
    float quality_at(float x, float y) const;
};

OrientationField orientation_field(const GrayImage& img, int block = 16);

struct BinaryImage {
    int width = 0, height = 0;
    std::vector<uint8_t> v;
    uint8_t at(int x, int y) const { return v[static_cast<size_t>(y) * width + x]; }
    uint8_t& at(int x, int y) { return v[static_cast<size_t>(y) * width + x]; }
    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

/// Adaptive local-mean threshold; ridges (dark pixels) become foreground.
/// Blocks with zero orientation quality are masked to background.
BinaryImage binarize(const GrayImage& img, const OrientationField& orient);

/// Zhang-Suen thinning to a 1-pixel-wide 8-connected skeleton.
BinaryImage thin(const BinaryImage& b);

/// 0->1 transitions around the 8-neighbourhood: 1 = ridge ending,
/// 3 = bifurcation; out-of-bounds neighbours count as background.
int crossing_number(const BinaryImage& skel, int x, int y);

int count_components8(const BinaryImage& b);

struct Minutia {
    float x = 0, y = 0;
    float theta = 0;  // ridge direction in [0, 2pi)
    enum Kind { ending, bifurcation } kind = ending;
    float quality = 0;
};

std::vector<Minutia> extract_minutiae(const BinaryImage& skel, const OrientationField& orient,
                                      int min_border = 8, int min_ridge_len = 6);

constexpr int kPatchPad = 68;  // reflect margin so any rotated 96x96 crop fits

/// Rotates by -theta about (x, y) with bilinear interpolation over the
/// reflect-padded image, then crops size x size centered on the minutia; the
/// ridge direction maps to the patch +x axis. Values quantized to k/255.
GrayImage extract_patch(const GrayImage& img, const Minutia& m, int size = 96);

struct Patch {
    GrayImage img;
    Minutia origin;
};

struct PatchSet {
    std::string image_id;
    std::vector<Patch> patches;
};

/// Full per-image pipeline: normalize, orient, binarize, thin, extract,
/// crop. Minutiae ordered by quality (desc); max_patches 0 = unlimited.
PatchSet extract_patches(const GrayImage& img, const std::string& image_id, int max_patches = 0,
                         int size = 96);

// Sidecar format: one "x y theta kind quality" per line.
void save_minutiae(const std::vector<Minutia>& ms, const std::string& path);
std::vector<Minutia> load_minutiae(const std::string& path);

}  // namespace umg
