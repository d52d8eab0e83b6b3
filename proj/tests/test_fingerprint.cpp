#include "doctest.h"

#include <cmath>
#include <numbers>

#include "umg/fingerprint.hpp"
#include "umg/rng.hpp"
#include "umg/synth.hpp"

using namespace umg;

namespace {

constexpr double kPi = std::numbers::pi;

double ang_gap_2pi(double a, double b) {
    double d = std::fmod(std::abs(a - b), 2 * kPi);
    return std::min(d, 2 * kPi - d);
}

double ang_gap_pi(double a, double b) {
    double d = std::abs(std::remainder(a - b, kPi));
    return d;
}

GrayImage oriented_ridges(int size, double angle, double period = 9) {
    GrayImage img = make_image(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            // ridges run along `angle`: intensity varies along the normal
            double u = x * std::cos(angle + kPi / 2) + y * std::sin(angle + kPi / 2);
            img.at(x, y) = static_cast<float>(0.5 - 0.35 * std::cos(2 * kPi * u / period));
        }
    }
    quantize_image(img);
    return img;
}

GrayImage rotated_copy(const GrayImage& img, double phi) {
    GrayImage out = make_image(img.width, img.height);
    const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;
    const double c = std::cos(-phi), s = std::sin(-phi);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            const double dx = x - cx, dy = y - cy;
            double sx = cx + c * dx - s * dy;
            double sy = cy + s * dx + c * dy;
            sx = std::clamp(sx, 0.0, img.width - 1.001);
            sy = std::clamp(sy, 0.0, img.height - 1.001);
            const int ix = static_cast<int>(sx), iy = static_cast<int>(sy);
            const double fx = sx - ix, fy = sy - iy;
            out.at(x, y) = static_cast<float>(
                (1 - fy) * ((1 - fx) * img.at(ix, iy) + fx * img.at(ix + 1, iy)) +
                fy * ((1 - fx) * img.at(ix, iy + 1) + fx * img.at(ix + 1, iy + 1)));
        }
    }
    return out;
}

OrientationField uniform_field(int w, int h, float theta) {
    OrientationField f;
    f.block = 16;
    f.bx = std::max(1, w / 16);
    f.by = std::max(1, h / 16);
    f.theta.assign(static_cast<size_t>(f.bx) * f.by, theta);
    f.quality.assign(static_cast<size_t>(f.bx) * f.by, 1.0f);
    return f;
}

}  // namespace

TEST_CASE("normalize_image: constant maps to 0.5, random textures center there") {
    GrayImage flat = make_image(64, 64, 0.73f);
    GrayImage out = normalize_image(flat);
    for (float v : out.pix) CHECK(v == 0.5f);

    SeededRng rng(17);
    for (int rep = 0; rep < 3; ++rep) {
        GrayImage img = make_image(64, 64);
        for (auto& v : img.pix) v = static_cast<float>(rng.uniform(0.2, 0.9));
        GrayImage n = normalize_image(img);
        double mean = 0;
        for (float v : n.pix) mean += v;
        mean /= static_cast<double>(n.pix.size());
        CHECK(mean == doctest::Approx(0.5).epsilon(0.1));  // +-0.05

        GrayImage twice = normalize_image(n);
        double max_diff = 0;
        for (size_t i = 0; i < n.pix.size(); ++i) {
            max_diff = std::max(max_diff, std::abs(static_cast<double>(n.pix[i] - twice.pix[i])));
        }
        CHECK(max_diff < 1e-3);
    }
    CHECK_THROWS_AS(normalize_image(GrayImage{}), ValueError);
}

TEST_CASE("orientation_field: sinusoid along x gives theta = pi/2") {
    // ridges vary along x -> gradient along x -> ridge direction is vertical
    GrayImage img = oriented_ridges(96, kPi / 2);
    OrientationField f = orientation_field(img);
    for (int b = 0; b < f.bx * f.by; ++b) {
        CHECK(f.quality[static_cast<size_t>(b)] > 0.5f);
        CHECK(ang_gap_pi(f.theta[static_cast<size_t>(b)], kPi / 2) < 0.05);
    }
}

TEST_CASE("orientation_field: rotating the image rotates the field") {
    const double base = 0.3, phi = 0.5;
    GrayImage img = oriented_ridges(128, base);
    GrayImage rot = rotated_copy(img, phi);
    OrientationField f = orientation_field(rot);
    // interior blocks only: rotation leaves border artifacts
    for (int by = 2; by < f.by - 2; ++by) {
        for (int bx = 2; bx < f.bx - 2; ++bx) {
            const size_t at = static_cast<size_t>(by) * f.bx + bx;
            if (f.quality[at] < 0.3f) continue;
            CHECK(ang_gap_pi(f.theta[at], base + phi) < 0.1);
        }
    }
}

TEST_CASE("orientation_field: constant image has all-zero quality") {
    GrayImage img = make_image(64, 64, 0.4f);
    OrientationField f = orientation_field(img);
    for (float q : f.quality) CHECK(q == 0.0f);
    CHECK_THROWS_AS(orientation_field(make_image(16, 16, 0.0f)), ValueError);
}

TEST_CASE("binarize: all-background stays background") {
    GrayImage img = make_image(64, 64, 0.6f);
    OrientationField f = orientation_field(img);
    BinaryImage b = binarize(img, f);
    for (uint8_t v : b.v) CHECK(v == 0);
}

TEST_CASE("thin: 5-px bar becomes a single 1-px line with two endpoints") {
    BinaryImage bar;
    bar.width = 60;
    bar.height = 40;
    bar.v.assign(60 * 40, 0);
    for (int y = 18; y < 23; ++y) {
        for (int x = 12; x < 48; ++x) bar.at(x, y) = 1;
    }
    BinaryImage skel = thin(bar);
    int endings = 0, px = 0;
    int min_x = 999, max_x = -1;
    for (int y = 0; y < skel.height; ++y) {
        for (int x = 0; x < skel.width; ++x) {
            if (!skel.at(x, y)) continue;
            ++px;
            min_x = std::min(min_x, x);
            max_x = std::max(max_x, x);
            int nbrs = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    if (skel.in_bounds(x + dx, y + dy) && skel.at(x + dx, y + dy)) ++nbrs;
                }
            }
            CHECK(nbrs <= 2);  // 1-px wide everywhere
            if (crossing_number(skel, x, y) == 1) ++endings;
        }
    }
    CHECK(endings == 2);
    CHECK(count_components8(skel) == 1);
    CHECK(px >= 25);            // spans most of the bar
    CHECK(max_x - min_x >= 25); // endpoints preserved up to small retraction
}

TEST_CASE("thin: preserves 8-connected component count on random blobs") {
    SeededRng rng(31);
    for (int rep = 0; rep < 50; ++rep) {
        BinaryImage img;
        img.width = 64;
        img.height = 64;
        img.v.assign(64 * 64, 0);
        const int blobs = 2 + rng.uniform_int(4);
        for (int b = 0; b < blobs; ++b) {
            const int cx = 8 + rng.uniform_int(48);
            const int cy = 8 + rng.uniform_int(48);
            const int r = 3 + rng.uniform_int(4);
            for (int y = cy - r; y <= cy + r; ++y) {
                for (int x = cx - r; x <= cx + r; ++x) {
                    if (!img.in_bounds(x, y)) continue;
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) img.at(x, y) = 1;
                }
            }
        }
        const int before = count_components8(img);
        const int after = count_components8(thin(img));
        CHECK(before == after);
    }
}

TEST_CASE("thin: empty input stays empty") {
    BinaryImage img;
    img.width = 32;
    img.height = 32;
    img.v.assign(32 * 32, 0);
    BinaryImage out = thin(img);
    for (uint8_t v : out.v) CHECK(v == 0);
}

TEST_CASE("crossing number: exact on all 256 3x3 neighbourhoods") {
    for (int mask = 0; mask < 256; ++mask) {
        BinaryImage img;
        img.width = 5;
        img.height = 5;
        img.v.assign(25, 0);
        img.at(2, 2) = 1;
        // bit i corresponds to neighbour P(2+i) clockwise from north
        const int off[8][2] = {{0, -1}, {1, -1}, {1, 0},  {1, 1},
                               {0, 1},  {-1, 1}, {-1, 0}, {-1, -1}};
        for (int i = 0; i < 8; ++i) {
            if (mask & (1 << i)) img.at(2 + off[i][0], 2 + off[i][1]) = 1;
        }
        // independent definition: count 0->1 transitions in the cycle
        int want = 0;
        for (int i = 0; i < 8; ++i) {
            const int a = (mask >> i) & 1;
            const int b = (mask >> ((i + 1) % 8)) & 1;
            if (!a && b) ++want;
        }
        CHECK(crossing_number(img, 2, 2) == want);
        // classification per the definition
        if (want == 1) CHECK(crossing_number(img, 2, 2) == 1);
        if (want == 3) CHECK(crossing_number(img, 2, 2) == 3);
    }
}

TEST_CASE("extract_minutiae: straight line yields exactly two endings") {
    BinaryImage img;
    img.width = 48;
    img.height = 48;
    img.v.assign(48 * 48, 0);
    for (int x = 12; x <= 35; ++x) img.at(x, 24) = 1;
    auto ms = extract_minutiae(img, uniform_field(48, 48, 0.0f));
    int endings = 0, bifs = 0;
    for (auto& m : ms) (m.kind == Minutia::ending ? endings : bifs)++;
    CHECK(endings == 2);
    CHECK(bifs == 0);
    // positions at the line's ends
    bool left = false, right = false;
    for (auto& m : ms) {
        if (std::abs(m.x - 12) <= 1 && std::abs(m.y - 24) <= 1) left = true;
        if (std::abs(m.x - 35) <= 1 && std::abs(m.y - 24) <= 1) right = true;
    }
    CHECK(left);
    CHECK(right);
}

TEST_CASE("extract_minutiae: Y skeleton yields exactly one bifurcation") {
    BinaryImage img;
    img.width = 48;
    img.height = 48;
    img.v.assign(48 * 48, 0);
    for (int k = 1; k <= 10; ++k) {
        img.at(24 - k, 24 - k) = 1;
        img.at(24 + k, 24 - k) = 1;
        img.at(24, 24 + k) = 1;
    }
    img.at(24, 24) = 1;
    auto ms = extract_minutiae(img, uniform_field(48, 48, float(kPi / 2)));
    int bifs = 0;
    for (auto& m : ms) {
        if (m.kind == Minutia::bifurcation) {
            ++bifs;
            CHECK(std::abs(m.x - 24) <= 1);
            CHECK(std::abs(m.y - 24) <= 1);
        }
    }
    CHECK(bifs == 1);
}

TEST_CASE("extract_patch: theta 0 is a plain axis-aligned crop") {
    SeededRng rng(5);
    GrayImage img = make_image(128, 128);
    for (auto& v : img.pix) v = quantize01(static_cast<float>(rng.uniform()));
    Minutia m;
    m.x = 60;
    m.y = 70;
    m.theta = 0;
    GrayImage p = extract_patch(img, m, 96);
    REQUIRE(p.width == 96);
    REQUIRE(p.height == 96);
    for (int r = 0; r < 96; ++r) {
        for (int c = 0; c < 96; ++c) {
            CHECK(p.at(c, r) == img.at(60 - 48 + c, 70 - 48 + r));  // bitwise
        }
    }
}

TEST_CASE("extract_patch: theta pi/2 equals exact 90-degree rotation then crop") {
    SeededRng rng(6);
    GrayImage img = make_image(144, 144);
    for (auto& v : img.pix) v = quantize01(static_cast<float>(rng.uniform()));
    Minutia m;
    m.x = 70;
    m.y = 71;
    m.theta = static_cast<float>(kPi / 2);
    GrayImage p = extract_patch(img, m, 96);
    // sampling rotation maps patch offset (dx, dy) to source (x - dy, y + dx)
    for (int r = 0; r < 96; ++r) {
        for (int c = 0; c < 96; ++c) {
            const int sx = 70 - (r - 48), sy = 71 + (c - 48);
            CHECK(std::abs(p.at(c, r) - img.at(sx, sy)) < 1e-6f);
        }
    }
}

TEST_CASE("extract_patch: orientation-canonicalizing under global rotation") {
    GrayImage img = oriented_ridges(192, 0.4);
    const double phi = 0.6;
    GrayImage rot = rotated_copy(img, phi);
    const double cx = (192 - 1) / 2.0;

    Minutia m0;
    m0.x = static_cast<float>(cx + 20);
    m0.y = static_cast<float>(cx - 10);
    m0.theta = 0.4f;
    // the same physical point in the rotated image
    const double dx = m0.x - cx, dy = m0.y - cx;
    Minutia m1;
    m1.x = static_cast<float>(cx + std::cos(phi) * dx - std::sin(phi) * dy);
    m1.y = static_cast<float>(cx + std::sin(phi) * dx + std::cos(phi) * dy);
    m1.theta = static_cast<float>(0.4 + phi);

    GrayImage p0 = extract_patch(img, m0, 96);
    GrayImage p1 = extract_patch(rot, m1, 96);
    double mean_abs = 0;
    for (size_t i = 0; i < p0.pix.size(); ++i) {
        mean_abs += std::abs(static_cast<double>(p0.pix[i]) - p1.pix[i]);
    }
    mean_abs /= static_cast<double>(p0.pix.size());
    CHECK(mean_abs < 0.05);
}

TEST_CASE("extract_patch: footprint outside padded bounds rejected") {
    GrayImage img = make_image(96, 96, 0.5f);
    Minutia m;
    m.x = -80;  // far outside even with reflect padding
    m.y = 48;
    m.theta = 0;
    CHECK_THROWS_AS(extract_patch(img, m, 96), ValueError);
}

TEST_CASE("planted endings recovered within 3 px / 15 degrees") {
    auto sensor = default_sensors(1)[0];
    int planted_n = 0, recovered = 0;
    for (uint64_t seed = 50; seed < 62; ++seed) {
        LivePrint lp = gen_live_print(seed, sensor, 256);
        GrayImage norm = normalize_image(lp.img);
        OrientationField orient = orientation_field(norm);
        BinaryImage skel = thin(binarize(norm, orient));
        auto ms = extract_minutiae(skel, orient);
        for (auto& p : lp.planted) {
            if (p.x < 12 || p.y < 12 || p.x > 244 || p.y > 244) continue;
            ++planted_n;
            for (auto& m : ms) {
                if (m.kind != Minutia::ending) continue;
                const double d = std::hypot(m.x - p.x, m.y - p.y);
                if (d <= 3.0 && ang_gap_2pi(m.theta, p.theta) <= 15 * kPi / 180) {
                    ++recovered;
                    break;
                }
            }
        }
    }
    CHECK(planted_n > 200);
    CHECK(static_cast<double>(recovered) / planted_n >= 0.8);
}

TEST_CASE("extract_patches: emits exactly 96x96 patches in [0,1], capped") {
    auto sensor = default_sensors(1)[0];
    LivePrint lp = gen_live_print(7, sensor, 192);
    PatchSet all = extract_patches(lp.img, "img7");
    CHECK(all.patches.size() >= 5);
    for (auto& p : all.patches) {
        CHECK(p.img.width == 96);
        CHECK(p.img.height == 96);
        for (float v : p.img.pix) {
            CHECK(v >= 0);
            CHECK(v <= 1);
        }
    }
    PatchSet capped = extract_patches(lp.img, "img7", 4);
    CHECK(capped.patches.size() == 4);
}

TEST_CASE("minutiae sidecar round trip") {
    std::vector<Minutia> ms;
    Minutia a;
    a.x = 10.5f;
    a.y = 20.25f;
    a.theta = 1.5f;
    a.kind = Minutia::bifurcation;
    a.quality = 0.75f;
    ms.push_back(a);
    save_minutiae(ms, "test_minutiae.txt");
    auto back = load_minutiae("test_minutiae.txt");
    REQUIRE(back.size() == 1);
    CHECK(back[0].x == a.x);
    CHECK(back[0].kind == Minutia::bifurcation);
    std::remove("test_minutiae.txt");
}
