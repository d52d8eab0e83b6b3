#include "umg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "umg/rng.hpp"

namespace umg {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kRidgeFreq = 1.0 / 9.0;  // ~9 px ridge period
constexpr double kRidgeAmp = 0.33;
constexpr float kValleyLevel = 0.82f;

double wrap2pi(double a) {
    a = std::fmod(a, 2 * kPi);
    if (a < 0) a += 2 * kPi;
    return a;
}

}  // namespace

bool MaterialProfile::is_neutral() const {
    return blur_sigma == 0 && speckle_amp == 0 && blob_density == 0 && contrast_gain == 1 &&
           contrast_offset == 0 && ridge_thicken == 0;
}

std::vector<MaterialProfile> default_materials(int k) {
    // spaced along a blur/noise trade-off so every profile sits near the
    // span of its neighbours; adjacent ids differ by >=20% in >=2 params
    static const std::vector<MaterialProfile> table = {
        {"mat_a", 1.6f, 0.04f, 0.2f, 0.95f, 0.03f, 0.15f},
        {"mat_b", 1.0f, 0.10f, 0.5f, 1.10f, -0.02f, 0.35f},
        {"mat_c", 0.5f, 0.16f, 0.9f, 1.25f, 0.06f, 0.55f},
        {"mat_d", 0.1f, 0.22f, 1.4f, 1.45f, -0.06f, 0.75f},
        {"mat_e", 2.2f, 0.07f, 0.7f, 0.80f, -0.04f, 0.25f},
        {"mat_f", 0.3f, 0.28f, 0.3f, 1.60f, 0.08f, 0.45f},
    };
    if (k < 1 || k > static_cast<int>(table.size())) {
        throw ValueError("default_materials: supported range is 1.." +
                         std::to_string(table.size()));
    }
    return {table.begin(), table.begin() + k};
}

std::vector<SensorProfile> default_sensors(int k) {
    static const std::vector<SensorProfile> table = {
        {"sensor_a", 1.0f, 1.0f, 0.020f, 11ULL, 0.0008f},
        {"sensor_b", 0.78f, 1.35f, 0.045f, 22ULL, 0.0020f},
        {"sensor_c", 0.88f, 0.75f, 0.030f, 33ULL, 0.0012f},
    };
    if (k < 1 || k > static_cast<int>(table.size())) {
        throw ValueError("default_sensors: supported range is 1.." + std::to_string(table.size()));
    }
    return {table.begin(), table.begin() + k};
}

void RidgeField::gradient(double x, double y, double& gx, double& gy) const {
    gx = std::cos(beta);
    gy = std::sin(beta);
    for (const auto& s : sings) {
        const double dx = x - s.x, dy = y - s.y;
        const double r = std::sqrt(dx * dx + dy * dy + s.rho * s.rho);
        gx += s.w * dx / r;
        gy += s.w * dy / r;
    }
}

float RidgeField::theta(float x, float y) const {
    double gx, gy;
    gradient(x, y, gx, gy);
    double a = std::atan2(gy, gx) + kPi / 2;  // ridges run normal to the gradient
    while (a >= kPi) a -= kPi;
    while (a < 0) a += kPi;
    return static_cast<float>(a);
}

namespace {

double field_value(const RidgeField& f, double x, double y) {
    double v = std::cos(f.beta) * x + std::sin(f.beta) * y;
    for (const auto& s : f.sings) {
        const double dx = x - s.x, dy = y - s.y;
        v += s.w * std::sqrt(dx * dx + dy * dy + s.rho * s.rho);
    }
    return v;
}

// coarse bilinear noise grid, one lattice per derived seed
struct SmoothNoise {
    int n;
    int size;
    std::vector<double> grid;

    SmoothNoise(int cells, int image_size, uint64_t seed, double amp) : n(cells), size(image_size) {
        SeededRng rng(seed);
        grid.resize(static_cast<size_t>(n) * n);
        for (auto& v : grid) v = rng.uniform(-amp, amp);
    }

    double at(double x, double y) const {
        const double gx = std::clamp(x / size * (n - 1), 0.0, n - 1.0);
        const double gy = std::clamp(y / size * (n - 1), 0.0, n - 1.0);
        const int ix = std::min(static_cast<int>(gx), n - 2);
        const int iy = std::min(static_cast<int>(gy), n - 2);
        const double fx = gx - ix, fy = gy - iy;
        auto g = [&](int a, int b) { return grid[static_cast<size_t>(b) * n + a]; };
        return (1 - fy) * ((1 - fx) * g(ix, iy) + fx * g(ix + 1, iy)) +
               fy * ((1 - fx) * g(ix, iy + 1) + fx * g(ix + 1, iy + 1));
    }
};

GrayImage gaussian_blur(const GrayImage& img, float sigma) {
    if (sigma <= 0) return img;
    const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += kernel[static_cast<size_t>(i + radius)];
    }
    for (auto& k : kernel) k /= sum;
    auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi); };
    GrayImage tmp = make_image(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i) {
                acc += kernel[static_cast<size_t>(i + radius)] *
                       img.at(clampi(x + i, img.width - 1), y);
            }
            tmp.at(x, y) = static_cast<float>(acc);
        }
    }
    GrayImage out = make_image(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i) {
                acc += kernel[static_cast<size_t>(i + radius)] *
                       tmp.at(x, clampi(y + i, img.height - 1));
            }
            out.at(x, y) = static_cast<float>(acc);
        }
    }
    return out;
}

GrayImage resample_bilinear(const GrayImage& img, int w, int h) {
    GrayImage out = make_image(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double sx = (x + 0.5) * img.width / w - 0.5;
            const double sy = (y + 0.5) * img.height / h - 0.5;
            const int ix = std::clamp(static_cast<int>(std::floor(sx)), 0, img.width - 2);
            const int iy = std::clamp(static_cast<int>(std::floor(sy)), 0, img.height - 2);
            const double fx = std::clamp(sx - ix, 0.0, 1.0), fy = std::clamp(sy - iy, 0.0, 1.0);
            out.at(x, y) = static_cast<float>(
                (1 - fy) * ((1 - fx) * img.at(ix, iy) + fx * img.at(ix + 1, iy)) +
                fy * ((1 - fx) * img.at(ix, iy + 1) + fx * img.at(ix + 1, iy + 1)));
        }
    }
    return out;
}

void apply_sensor(GrayImage& img, const SensorProfile& sensor, uint64_t noise_seed) {
    if (sensor.res_scale < 1) {
        const int w = std::max(8, static_cast<int>(img.width * sensor.res_scale));
        const int h = std::max(8, static_cast<int>(img.height * sensor.res_scale));
        img = resample_bilinear(resample_bilinear(img, w, h), img.width, img.height);
    }
    if (sensor.gamma != 1) {
        for (auto& v : img.pix) v = std::pow(std::max(v, 0.0f), sensor.gamma);
    }
    if (sensor.noise_sigma > 0) {
        SeededRng rng(derive_seed(noise_seed, "sensor-noise"));
        for (auto& v : img.pix) v += static_cast<float>(rng.normal(0, sensor.noise_sigma));
    }
    if (sensor.dot_density > 0) {
        SeededRng rng(derive_seed(sensor.dot_seed, "fixed-pattern"));
        const int dots =
            static_cast<int>(sensor.dot_density * static_cast<float>(img.pix.size()));
        for (int i = 0; i < dots; ++i) {
            const int x = rng.uniform_int(img.width - 1);
            const int y = rng.uniform_int(img.height - 1);
            const float amp = rng.uniform() < 0.5 ? -0.09f : 0.09f;
            for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) img.at(x + dx, y + dy) += amp;
            }
        }
    }
    for (auto& v : img.pix) v = quantize01(v);
}

}  // namespace

LivePrint gen_live_print_impression(uint64_t identity_seed, uint64_t impression_seed,
                                    const SensorProfile& sensor, int size) {
    if (size % 16 != 0) throw ValueError("gen_live_print: size must be divisible by 16");
    LivePrint print;
    SeededRng id_rng(derive_seed(identity_seed, "ridge-identity"));

    print.field.beta = id_rng.uniform(0, kPi);
    const int n_sing = id_rng.uniform_int(3);
    for (int i = 0; i < n_sing; ++i) {
        RidgeField::Singularity s;
        s.x = id_rng.uniform(0.25, 0.75) * size;
        s.y = id_rng.uniform(0.25, 0.75) * size;
        s.w = (id_rng.uniform() < 0.5 ? -1 : 1) * id_rng.uniform(0.4, 0.9);
        s.rho = 8;
        print.field.sings.push_back(s);
    }

    SmoothNoise phase(6, size, derive_seed(impression_seed, "phase-jitter"), 1.1);
    GrayImage img = make_image(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double psi = field_value(print.field, x, y);
            img.at(x, y) = static_cast<float>(
                0.5 - kRidgeAmp * std::cos(2 * kPi * kRidgeFreq * psi + phase.at(x, y)));
        }
    }

    // cut short valley-coloured capsules into ridges; each cut plants a
    // ridge ending at both ends, pointing back along the surviving ridge
    const int n_cuts = 10 + id_rng.uniform_int(6);
    const double margin = 26;
    std::vector<std::pair<double, double>> sites;
    for (int c = 0; c < n_cuts; ++c) {
        double cx = 0, cy = 0;
        bool placed = false;
        for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
            cx = id_rng.uniform(margin, size - margin);
            cy = id_rng.uniform(margin, size - margin);
            // keep clear of other cuts and of degenerate flow regions where
            // the local ridge period is far from nominal
            double gx, gy;
            print.field.gradient(cx, cy, gx, gy);
            const double gmag = std::hypot(gx, gy);
            if (gmag < 0.65 || gmag > 1.45) continue;
            placed = true;
            for (auto& [sx, sy] : sites) {
                if (std::hypot(cx - sx, cy - sy) < 15) {
                    placed = false;
                    break;
                }
            }
        }
        if (!placed) continue;
        // snap the cut onto the nearest ridge centre (the pattern minimum
        // along the ridge normal), otherwise the capsule may erase a valley
        {
            const double th0 = print.field.theta(static_cast<float>(cx), static_cast<float>(cy));
            const double nx = -std::sin(th0), ny = std::cos(th0);
            double best_v = 1e9, best_off = 0;
            for (double off = -4.5; off <= 4.5; off += 0.25) {
                const int sx = static_cast<int>(std::lround(cx + off * nx));
                const int sy = static_cast<int>(std::lround(cy + off * ny));
                if (sx < 1 || sy < 1 || sx >= size - 1 || sy >= size - 1) continue;
                if (img.at(sx, sy) < best_v) {
                    best_v = img.at(sx, sy);
                    best_off = off;
                }
            }
            cx += best_off * nx;
            cy += best_off * ny;
        }
        sites.push_back({cx, cy});
        const double ridge_dir = print.field.theta(static_cast<float>(cx), static_cast<float>(cy));
        const double dx = std::cos(ridge_dir), dy = std::sin(ridge_dir);
        double gx, gy;
        print.field.gradient(cx, cy, gx, gy);
        const double local_period = 1.0 / (kRidgeFreq * std::max(0.5, std::hypot(gx, gy)));
        const double half_len = 4.0;
        const double width = 0.30 * local_period;  // covers the full ridge width
        const int x0 = static_cast<int>(cx - half_len - width - 2);
        const int x1 = static_cast<int>(cx + half_len + width + 2);
        const int y0 = static_cast<int>(cy - half_len - width - 2);
        const int y1 = static_cast<int>(cy + half_len + width + 2);
        // rounded capsule: distance to the centre segment, feathered rim.
        // Round ends leave no dark corners for the skeleton to bridge through.
        const double feather = 1.2;
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                if (x < 0 || x >= size || y < 0 || y >= size) continue;
                const double px = x - cx, py = y - cy;
                const double along = std::clamp(px * dx + py * dy, -half_len, half_len);
                const double dist = std::hypot(px - along * dx, py - along * dy);
                double t = 0;
                if (dist <= width) {
                    t = 1;
                } else if (dist <= width + feather) {
                    t = (width + feather - dist) / feather;
                }
                if (t > 0) {
                    const float blended =
                        static_cast<float>((1 - t) * img.at(x, y) + t * kValleyLevel);
                    img.at(x, y) = std::max(img.at(x, y), blended);
                }
            }
        }
        const double tip = half_len + width + 2.4;  // calibrated to the skeleton end
        // ground-truth angle follows the field at the tip, not at the cut
        // centre: the flow may curve over the capsule's length
        auto tip_theta = [&](double sign) {
            const double tx = cx + sign * tip * dx, ty = cy + sign * tip * dy;
            const double th = print.field.theta(static_cast<float>(tx), static_cast<float>(ty));
            const double cand_a = th, cand_b = th + kPi;
            const double ref = sign > 0 ? ridge_dir : ridge_dir + kPi;
            const double da = std::abs(std::remainder(cand_a - ref, 2 * kPi));
            const double db = std::abs(std::remainder(cand_b - ref, 2 * kPi));
            return wrap2pi(da <= db ? cand_a : cand_b);
        };
        print.planted.push_back({static_cast<float>(cx + tip * dx),
                                 static_cast<float>(cy + tip * dy),
                                 static_cast<float>(tip_theta(1))});
        print.planted.push_back({static_cast<float>(cx - tip * dx),
                                 static_cast<float>(cy - tip * dy),
                                 static_cast<float>(tip_theta(-1))});
    }

    apply_sensor(img, sensor, derive_seed(impression_seed, sensor.id));
    print.img = std::move(img);
    return print;
}

LivePrint gen_live_print(uint64_t seed, const SensorProfile& sensor, int size) {
    const uint64_t base = derive_seed(seed, sensor.id);
    return gen_live_print_impression(derive_seed(base, "identity"), derive_seed(base, "impression"),
                                     sensor, size);
}

GrayImage apply_material_style(const GrayImage& img, const MaterialProfile& mat, uint64_t seed) {
    if (mat.is_neutral()) return img;
    GrayImage out = img;

    if (mat.ridge_thicken > 0) {
        GrayImage eroded = make_image(out.width, out.height);
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                float m = 1;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = std::clamp(x + dx, 0, out.width - 1);
                        const int ny = std::clamp(y + dy, 0, out.height - 1);
                        m = std::min(m, out.at(nx, ny));
                    }
                }
                eroded.at(x, y) = m;
            }
        }
        const float t = std::min(mat.ridge_thicken, 1.0f);
        for (size_t i = 0; i < out.pix.size(); ++i) {
            out.pix[i] = (1 - t) * out.pix[i] + t * eroded.pix[i];
        }
    }

    if (mat.blur_sigma > 0) out = gaussian_blur(out, mat.blur_sigma);

    if (mat.speckle_amp > 0) {
        SeededRng rng(derive_seed(seed, "speckle"));
        for (auto& v : out.pix) {
            v *= static_cast<float>(1 + mat.speckle_amp * rng.normal());
        }
    }

    if (mat.blob_density > 0) {
        SeededRng rng(derive_seed(seed, "blobs"));
        const int blobs = static_cast<int>(mat.blob_density *
                                           static_cast<float>(out.pix.size()) / 1000.0f);
        for (int b = 0; b < blobs; ++b) {
            const double cx = rng.uniform(0, out.width);
            const double cy = rng.uniform(0, out.height);
            const double r = rng.uniform(3, 7);
            const int x0 = std::max(0, static_cast<int>(cx - r - 1));
            const int x1 = std::min(out.width - 1, static_cast<int>(cx + r + 1));
            const int y0 = std::max(0, static_cast<int>(cy - r - 1));
            const int y1 = std::min(out.height - 1, static_cast<int>(cy + r + 1));
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    const double d = std::hypot(x - cx, y - cy);
                    if (d >= r) continue;
                    const float t = static_cast<float>(1 - d / r);  // soft edge
                    out.at(x, y) = (1 - t) * out.at(x, y) + t * kValleyLevel;
                }
            }
        }
    }

    if (mat.contrast_gain != 1 || mat.contrast_offset != 0) {
        for (auto& v : out.pix) {
            v = (v - 0.5f) * mat.contrast_gain + 0.5f + mat.contrast_offset;
        }
    }

    for (auto& v : out.pix) v = quantize01(v);
    return out;
}

MaterialProfile mix_materials(const MaterialProfile& a, const MaterialProfile& b, float ratio) {
    if (!(ratio >= 0 && ratio <= 1)) throw ValueError("mix_materials: ratio outside [0,1]");
    if (ratio == 0) return a;
    if (ratio == 1) return b;
    MaterialProfile m;
    m.id = a.id + "+" + b.id;
    auto lerp = [ratio](float x, float y) { return (1 - ratio) * x + ratio * y; };
    m.blur_sigma = lerp(a.blur_sigma, b.blur_sigma);
    m.speckle_amp = lerp(a.speckle_amp, b.speckle_amp);
    m.blob_density = lerp(a.blob_density, b.blob_density);
    m.contrast_gain = lerp(a.contrast_gain, b.contrast_gain);
    m.contrast_offset = lerp(a.contrast_offset, b.contrast_offset);
    m.ridge_thicken = lerp(a.ridge_thicken, b.ridge_thicken);
    return m;
}

DatasetManifest gen_dataset(const DatasetConfig& config) {
    if (config.materials.size() < 2) throw ValueError("gen_dataset: need at least 2 materials");
    if (config.sensors.empty()) throw ValueError("gen_dataset: need at least 1 sensor");
    if (config.n_subjects < 2) throw ValueError("gen_dataset: need at least 2 subjects");

    namespace fs = std::filesystem;
    fs::create_directories(config.out_dir + "/live");
    for (const auto& m : config.materials) {
        fs::create_directories(config.out_dir + "/spoof/" + m.id);
    }

    // subject-disjoint split
    std::vector<int> subjects(static_cast<size_t>(config.n_subjects));
    for (int i = 0; i < config.n_subjects; ++i) subjects[static_cast<size_t>(i)] = i;
    SeededRng split_rng(derive_seed(config.seed, "subject-split"));
    split_rng.shuffle(subjects);
    const int n_train = std::max(
        1, std::min(config.n_subjects - 1,
                    static_cast<int>(std::lround(config.n_subjects * (1 - config.test_fraction)))));
    std::vector<std::string> split_of(static_cast<size_t>(config.n_subjects));
    for (int i = 0; i < config.n_subjects; ++i) {
        split_of[static_cast<size_t>(subjects[static_cast<size_t>(i)])] =
            i < n_train ? "train" : "test";
    }

    DatasetManifest manifest;
    manifest.base_dir = config.out_dir;
    for (int s = 0; s < config.n_subjects; ++s) {
        const uint64_t subject_seed = derive_seed(derive_seed(config.seed, "subject"),
                                                  static_cast<uint64_t>(s));
        for (const auto& sensor : config.sensors) {
            const uint64_t sensor_seed = derive_seed(subject_seed, sensor.id);
            const uint64_t identity = derive_seed(sensor_seed, "identity");
            for (int i = 0; i < config.impressions; ++i) {
                const std::string tag =
                    "s" + std::to_string(s) + "_i" + std::to_string(i) + "_" + sensor.id;
                LivePrint live = gen_live_print_impression(
                    identity, derive_seed(sensor_seed, static_cast<uint64_t>(i)), sensor,
                    config.image_size);
                const std::string live_rel = "live/" + tag + ".pgm";
                write_image(live.img, config.out_dir + "/" + live_rel);
                manifest.records.push_back({live_rel, Label::live, "", sensor.id,
                                            "subj" + std::to_string(s),
                                            split_of[static_cast<size_t>(s)], false});

                for (size_t mi = 0; mi < config.materials.size(); ++mi) {
                    const auto& mat = config.materials[mi];
                    // fresh impression per spoof so pixels differ from the live
                    LivePrint source = gen_live_print_impression(
                        identity,
                        derive_seed(sensor_seed, 1000 + static_cast<uint64_t>(i) * 64 + mi),
                        sensor, config.image_size);
                    GrayImage spoof = apply_material_style(
                        source.img, mat, derive_seed(sensor_seed, mat.id + std::to_string(i)));
                    const std::string rel = "spoof/" + mat.id + "/" + tag + ".pgm";
                    write_image(spoof, config.out_dir + "/" + rel);
                    manifest.records.push_back({rel, Label::spoof, mat.id, sensor.id,
                                                "subj" + std::to_string(s),
                                                split_of[static_cast<size_t>(s)], false});
                }
            }
        }
    }
    manifest.validate();
    save_manifest(manifest, config.out_dir + "/manifest.csv");
    return manifest;
}

}  // namespace umg
