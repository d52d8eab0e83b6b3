#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "umg/fingerprint.hpp"
#include "umg/rng.hpp"
#include "umg/synth.hpp"

using namespace umg;

namespace {

constexpr double kPi = std::numbers::pi;

// naive DFT power in the upper frequency band; independent of any FFT code
double highband_power(const GrayImage& img, int x0, int y0, int n) {
    double power = 0;
    for (int v = 0; v < n; ++v) {
        for (int u = 0; u < n; ++u) {
            const int fu = std::min(u, n - u), fv = std::min(v, n - v);
            if (fu + fv < n / 4) continue;  // low band excluded
            double re = 0, im = 0;
            for (int y = 0; y < n; ++y) {
                for (int x = 0; x < n; ++x) {
                    const double arg = -2 * kPi * (static_cast<double>(u) * x / n +
                                                   static_cast<double>(v) * y / n);
                    const double val = img.at(x0 + x, y0 + y);
                    re += val * std::cos(arg);
                    im += val * std::sin(arg);
                }
            }
            power += re * re + im * im;
        }
    }
    return power;
}

// per-image texture statistics used by the separability oracles
std::array<double, 3> texture_stats(const GrayImage& img) {
    double mean = 0;
    for (float v : img.pix) mean += v;
    mean /= static_cast<double>(img.pix.size());
    double var = 0;
    for (float v : img.pix) var += (v - mean) * (v - mean);
    var /= static_cast<double>(img.pix.size());
    double grad = 0;
    int n = 0;
    for (int y = 1; y < img.height - 1; ++y) {
        for (int x = 1; x < img.width - 1; ++x) {
            grad += std::abs(img.at(x + 1, y) - img.at(x - 1, y)) +
                    std::abs(img.at(x, y + 1) - img.at(x, y - 1));
            ++n;
        }
    }
    return {mean, std::sqrt(var), grad / n};
}

double dist3(const std::array<double, 3>& a, const std::array<double, 3>& b,
             const std::array<double, 3>& scale) {
    double s = 0;
    for (int i = 0; i < 3; ++i) {
        const double d = (a[i] - b[i]) / scale[i];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("gen_live_print: deterministic in (seed, profile)") {
    auto sensors = default_sensors(2);
    LivePrint a = gen_live_print(11, sensors[0], 96);
    LivePrint b = gen_live_print(11, sensors[0], 96);
    CHECK(a.img.pix == b.img.pix);  // bitwise
    CHECK(a.planted.size() == b.planted.size());
    LivePrint c = gen_live_print(12, sensors[0], 96);
    CHECK(a.img.pix != c.img.pix);
    LivePrint d = gen_live_print(11, sensors[1], 96);
    CHECK(a.img.pix != d.img.pix);
    CHECK_THROWS_AS(gen_live_print(1, sensors[0], 100), ValueError);  // not /16
}

TEST_CASE("gen_live_print: measured orientation matches the planted field") {
    auto sensor = default_sensors(1)[0];
    for (uint64_t seed : {21ULL, 22ULL}) {
        LivePrint lp = gen_live_print(seed, sensor, 192);
        OrientationField f = orientation_field(normalize_image(lp.img));
        double err = 0, wsum = 0;
        for (int by = 0; by < f.by; ++by) {
            for (int bx = 0; bx < f.bx; ++bx) {
                const float q = f.quality[static_cast<size_t>(by) * f.bx + bx];
                if (q < 0.2f) continue;
                const float x = (bx + 0.5f) * f.block, y = (by + 0.5f) * f.block;
                const double d = std::abs(std::remainder(
                    f.theta[static_cast<size_t>(by) * f.bx + bx] - lp.field.theta(x, y), kPi));
                err += q * std::abs(d);
                wsum += q;
            }
        }
        CHECK(err / wsum < 0.2);
    }
}

TEST_CASE("gen_live_print: a 256-px print yields at least 5 minutiae") {
    auto sensor = default_sensors(1)[0];
    LivePrint lp = gen_live_print(31, sensor, 256);
    PatchSet ps = extract_patches(lp.img, "p");
    CHECK(ps.patches.size() >= 5);
}

TEST_CASE("apply_material_style: neutral profile is the identity") {
    auto sensor = default_sensors(1)[0];
    GrayImage img = gen_live_print(41, sensor, 96).img;
    MaterialProfile neutral;
    neutral.id = "neutral";
    GrayImage out = apply_material_style(img, neutral, 99);
    CHECK(out.pix == img.pix);  // bitwise
}

TEST_CASE("apply_material_style: blur-only profile strictly reduces high-band power") {
    auto sensor = default_sensors(1)[0];
    GrayImage img = gen_live_print(42, sensor, 96).img;
    MaterialProfile blur;
    blur.id = "blur";
    blur.blur_sigma = 1.5f;
    GrayImage out = apply_material_style(img, blur, 7);
    const double before = highband_power(img, 16, 16, 32);
    const double after = highband_power(out, 16, 16, 32);
    CHECK(after < before);
}

TEST_CASE("apply_material_style: majority of minutiae survive the degradation") {
    auto sensor = default_sensors(1)[0];
    for (auto& mat : default_materials(4)) {
        int survived = 0, total = 0;
        for (uint64_t seed : {51ULL, 52ULL, 53ULL}) {
            LivePrint lp = gen_live_print(seed, sensor, 192);
            PatchSet base = extract_patches(lp.img, "b");
            GrayImage styled = apply_material_style(lp.img, mat, seed + 1);
            PatchSet after = extract_patches(styled, "a");
            for (auto& p : base.patches) {
                ++total;
                for (auto& q : after.patches) {
                    const double d = std::hypot(q.origin.x - p.origin.x, q.origin.y - p.origin.y);
                    if (d <= 5.0) {
                        ++survived;
                        break;
                    }
                }
            }
        }
        INFO("material ", mat.id, ": ", survived, "/", total);
        CHECK(static_cast<double>(survived) / total >= 0.6);
    }
}

TEST_CASE("materials are separable: statistics differ across profiles") {
    auto sensor = default_sensors(1)[0];
    auto mats = default_materials(4);
    // centroid distance between materials vs within-material spread
    std::vector<std::vector<std::array<double, 3>>> feats(mats.size());
    for (size_t mi = 0; mi < mats.size(); ++mi) {
        for (uint64_t seed = 60; seed < 72; ++seed) {
            GrayImage img = gen_live_print(seed, sensor, 96).img;
            feats[mi].push_back(texture_stats(apply_material_style(img, mats[mi], seed * 3 + mi)));
        }
    }
    std::array<double, 3> scale = {0, 0, 0};
    std::vector<std::array<double, 3>> centroids(mats.size(), {0, 0, 0});
    for (size_t mi = 0; mi < mats.size(); ++mi) {
        for (auto& f : feats[mi]) {
            for (int k = 0; k < 3; ++k) centroids[mi][k] += f[k] / feats[mi].size();
        }
    }
    for (int k = 0; k < 3; ++k) {
        double mn = 1e9, mx = -1e9;
        for (auto& c : centroids) {
            mn = std::min(mn, c[k]);
            mx = std::max(mx, c[k]);
        }
        scale[k] = std::max(mx - mn, 1e-6);
    }
    for (size_t a = 0; a < mats.size(); ++a) {
        double spread = 0;
        for (auto& f : feats[a]) spread += dist3(f, centroids[a], scale);
        spread /= feats[a].size();
        for (size_t b = a + 1; b < mats.size(); ++b) {
            const double between = dist3(centroids[a], centroids[b], scale);
            INFO(mats[a].id, " vs ", mats[b].id, ": between ", between, " spread ", spread);
            CHECK(between > 3 * spread);
        }
    }

    // nearest-centroid classification on held-out patch statistics
    int correct = 0, total = 0;
    for (size_t mi = 0; mi < mats.size(); ++mi) {
        for (uint64_t seed = 80; seed < 86; ++seed) {
            GrayImage img = gen_live_print(seed, sensor, 96).img;
            auto f = texture_stats(apply_material_style(img, mats[mi], seed * 5 + mi));
            size_t best = 0;
            double bd = 1e18;
            for (size_t c = 0; c < centroids.size(); ++c) {
                const double d = dist3(f, centroids[c], scale);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (best == mi) ++correct;
            ++total;
        }
    }
    CHECK(static_cast<double>(correct) / total >= 0.9);
}

TEST_CASE("mix_materials: endpoints exact, parameters blend linearly") {
    auto mats = default_materials(2);
    MaterialProfile a = mats[0], b = mats[1];
    a.blur_sigma = 2;
    b.blur_sigma = 4;
    CHECK(mix_materials(a, b, 0).id == a.id);
    CHECK(mix_materials(a, b, 0).blur_sigma == a.blur_sigma);
    CHECK(mix_materials(a, b, 1).blur_sigma == b.blur_sigma);
    CHECK(mix_materials(a, b, 0.5f).blur_sigma == doctest::Approx(3));
    CHECK_THROWS_AS(mix_materials(a, b, 1.5f), ValueError);
}

TEST_CASE("mix_materials: mixture statistics land between the pure clusters") {
    auto sensor = default_sensors(1)[0];
    auto mats = default_materials(2);
    MaterialProfile mix = mix_materials(mats[0], mats[1], 0.5f);
    std::array<double, 3> ca{0, 0, 0}, cb{0, 0, 0}, cm{0, 0, 0};
    const int n = 10;
    for (uint64_t seed = 90; seed < 90 + n; ++seed) {
        GrayImage img = gen_live_print(seed, sensor, 96).img;
        auto fa = texture_stats(apply_material_style(img, mats[0], seed));
        auto fb = texture_stats(apply_material_style(img, mats[1], seed));
        auto fm = texture_stats(apply_material_style(img, mix, seed));
        for (int k = 0; k < 3; ++k) {
            ca[k] += fa[k] / n;
            cb[k] += fb[k] / n;
            cm[k] += fm[k] / n;
        }
    }
    // project the mixture centroid onto the a->b axis
    double num = 0, den = 0;
    for (int k = 0; k < 3; ++k) {
        num += (cm[k] - ca[k]) * (cb[k] - ca[k]);
        den += (cb[k] - ca[k]) * (cb[k] - ca[k]);
    }
    const double t = num / den;
    CHECK(t > 0.0);
    CHECK(t < 1.0);
}

TEST_CASE("gen_dataset: counts, split hygiene, determinism") {
    namespace fs = std::filesystem;
    const std::string dir1 = "test_ds_a", dir2 = "test_ds_b";
    DatasetConfig cfg;
    cfg.out_dir = dir1;
    cfg.seed = 77;
    cfg.n_subjects = 10;
    cfg.impressions = 3;
    cfg.image_size = 96;
    cfg.materials = default_materials(4);
    cfg.sensors = default_sensors(1);
    DatasetManifest m = gen_dataset(cfg);

    int lives = 0, spoofs = 0;
    for (auto& r : m.records) (r.label == Label::live ? lives : spoofs)++;
    CHECK(lives == 30);
    CHECK(spoofs == 120);
    CHECK(m.records.size() == 150);

    std::set<std::string> train_subj, test_subj;
    for (auto& r : m.records) {
        (r.split == "train" ? train_subj : test_subj).insert(r.subject);
    }
    for (auto& s : train_subj) CHECK(test_subj.count(s) == 0);

    cfg.out_dir = dir2;
    DatasetManifest m2 = gen_dataset(cfg);
    REQUIRE(m.records.size() == m2.records.size());
    for (size_t i = 0; i < m.records.size(); ++i) {
        CHECK(m.records[i].path == m2.records[i].path);
        std::ifstream f1(dir1 + "/" + m.records[i].path, std::ios::binary);
        std::ifstream f2(dir2 + "/" + m2.records[i].path, std::ios::binary);
        std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        CHECK(b1 == b2);  // byte-for-byte identical images
    }
    // manifest files byte-identical too
    std::ifstream mf1(dir1 + "/manifest.csv"), mf2(dir2 + "/manifest.csv");
    std::string s1((std::istreambuf_iterator<char>(mf1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(mf2)), std::istreambuf_iterator<char>());
    // paths differ only in the directory prefix, which is not stored
    CHECK(s1 == s2);

    fs::remove_all(dir1);
    fs::remove_all(dir2);

    DatasetConfig bad = cfg;
    bad.materials = default_materials(1);
    CHECK_THROWS_AS(gen_dataset(bad), ValueError);
}
