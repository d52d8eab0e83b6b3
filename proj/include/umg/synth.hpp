#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "umg/image.hpp"
#include "umg/manifest.hpp"

namespace umg {

// Statistics-level degradations standing in for physical spoof materials:
// texture changes (blur, speckle, occlusion blobs, contrast, ridge width)
// the style-transfer machinery can move between.
struct MaterialProfile {
    std::string id;
    float blur_sigma = 0;      // [0, 3]
    float speckle_amp = 0;     // [0, 0.4] multiplicative noise
    float blob_density = 0;    // [0, 2] occlusion blobs per 1000 px
    float contrast_gain = 1;   // [0.5, 2]
    float contrast_offset = 0; // [-0.15, 0.15]
    float ridge_thicken = 0;   // [0, 1] blend toward 3x3 grayscale dilation

    bool is_neutral() const;
};

struct SensorProfile {
    std::string id;
    float res_scale = 1;      // (0.5, 1]: effective resolution loss
    float gamma = 1;          // global contrast curve
    float noise_sigma = 0;    // additive per-impression noise
    uint64_t dot_seed = 0;    // fixed-pattern dot noise, constant per sensor
    float dot_density = 0;    // dots per pixel
};

std::vector<MaterialProfile> default_materials(int k);
std::vector<SensorProfile> default_sensors(int k);

// Analytic ridge-flow field: oriented stripes of a scalar phase field with
// 0-2 radial singularities. Exact orientation ground truth.
struct RidgeField {
    double beta = 0;  // base flow direction
    struct Singularity {
        double x, y, w, rho;
    };
    std::vector<Singularity> sings;

    void gradient(double x, double y, double& gx, double& gy) const;
    /// Ridge orientation in [0, pi): normal to the phase gradient.
    float theta(float x, float y) const;
};

struct PlantedMinutia {
    float x, y;
    float theta;  // ridge direction in [0, 2pi), ending convention
};

struct LivePrint {
    GrayImage img;
    RidgeField field;
    std::vector<PlantedMinutia> planted;  // endings cut into ridges
};

/// Deterministic function of (seed, sensor, size); size divisible by 16.
LivePrint gen_live_print(uint64_t seed, const SensorProfile& sensor, int size);

/// Identity/impression split: ridge structure and planted cut sites follow
/// identity_seed, phase jitter and sensor noise follow impression_seed.
LivePrint gen_live_print_impression(uint64_t identity_seed, uint64_t impression_seed,
                                    const SensorProfile& sensor, int size);

/// Applies the profile's degradations; an all-neutral profile returns the
/// input bitwise unchanged.
GrayImage apply_material_style(const GrayImage& img, const MaterialProfile& mat, uint64_t seed);

/// Parameter-wise linear blend; ratio 0 -> a, 1 -> b.
MaterialProfile mix_materials(const MaterialProfile& a, const MaterialProfile& b, float ratio);

struct DatasetConfig {
    std::string out_dir;
    uint64_t seed = 0;
    int n_subjects = 10;
    int impressions = 3;
    int image_size = 192;
    float test_fraction = 0.3f;
    std::vector<MaterialProfile> materials;
    std::vector<SensorProfile> sensors;
};

/// Writes PGM images plus manifest.csv under config.out_dir. The subject
/// split is disjoint; every (subject, sensor, impression) yields one live
/// image and one spoof image per material.
DatasetManifest gen_dataset(const DatasetConfig& config);

}  // namespace umg
