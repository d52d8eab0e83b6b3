#include "umg/fingerprint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace umg {

namespace {

constexpr double kPi = std::numbers::pi;

int reflect_coord(int i, int extent) {
    while (i < 0 || i >= extent) {
        if (i < 0) i = -i;
        if (i >= extent) i = 2 * extent - 2 - i;
    }
    return i;
}

float sample_reflect(const GrayImage& img, int x, int y) {
    return img.at(reflect_coord(x, img.width), reflect_coord(y, img.height));
}

float bilinear_reflect(const GrayImage& img, double x, double y) {
    const int ix = static_cast<int>(std::floor(x));
    const int iy = static_cast<int>(std::floor(y));
    const double fx = x - ix, fy = y - iy;
    const double v00 = sample_reflect(img, ix, iy);
    const double v10 = sample_reflect(img, ix + 1, iy);
    const double v01 = sample_reflect(img, ix, iy + 1);
    const double v11 = sample_reflect(img, ix + 1, iy + 1);
    return static_cast<float>((1 - fy) * ((1 - fx) * v00 + fx * v10) +
                              fy * ((1 - fx) * v01 + fx * v11));
}

double wrap_angle_2pi(double a) {
    a = std::fmod(a, 2 * kPi);
    if (a < 0) a += 2 * kPi;
    return a;
}

double angular_gap(double a, double b) {
    double d = std::abs(wrap_angle_2pi(a) - wrap_angle_2pi(b));
    return std::min(d, 2 * kPi - d);
}

}  // namespace

GrayImage normalize_image(const GrayImage& img) {
    if (img.empty()) throw ValueError("normalize_image: empty image");
    double mean = 0;
    for (float v : img.pix) mean += v;
    mean /= static_cast<double>(img.pix.size());
    double var = 0;
    for (float v : img.pix) var += (v - mean) * (v - mean);
    var /= static_cast<double>(img.pix.size());
    const double sd = std::sqrt(var);
    GrayImage out = make_image(img.width, img.height, 0.5f);
    if (sd < 1e-6) return out;
    for (size_t i = 0; i < img.pix.size(); ++i) {
        double z = (img.pix[i] - mean) / sd;
        out.pix[i] = static_cast<float>(std::clamp(0.5 + z / 6.0, 0.0, 1.0));
    }
    return out;
}

float OrientationField::theta_at(float x, float y) const {
    // bilinear over block centers, in doubled-angle space
    const double gx = std::clamp(static_cast<double>(x) / block - 0.5, 0.0, bx - 1.0);
    const double gy = std::clamp(static_cast<double>(y) / block - 0.5, 0.0, by - 1.0);
    const int ix = std::min(static_cast<int>(gx), bx - 2 >= 0 ? bx - 2 : 0);
    const int iy = std::min(static_cast<int>(gy), by - 2 >= 0 ? by - 2 : 0);
    const double fx = gx - ix, fy = gy - iy;
    double c = 0, s = 0;
    for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
            const int jx = std::min(ix + dx, bx - 1);
            const int jy = std::min(iy + dy, by - 1);
            const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy);
            const double th = theta[static_cast<size_t>(jy) * bx + jx];
            c += w * std::cos(2 * th);
            s += w * std::sin(2 * th);
        }
    }
    double a = 0.5 * std::atan2(s, c);
    if (a < 0) a += kPi;
    return static_cast<float>(a);
}

float OrientationField::quality_at(float x, float y) const {
    const int jx = std::clamp(static_cast<int>(x) / block, 0, bx - 1);
    const int jy = std::clamp(static_cast<int>(y) / block, 0, by - 1);
    return quality[static_cast<size_t>(jy) * bx + jx];
}

OrientationField orientation_field(const GrayImage& img, int block) {
    if (img.width < 2 * block || img.height < 2 * block) {
        throw ValueError("orientation_field: image smaller than 2 blocks per side");
    }
    OrientationField f;
    f.block = block;
    f.bx = img.width / block;
    f.by = img.height / block;
    std::vector<double> raw_c(static_cast<size_t>(f.bx) * f.by, 0);
    std::vector<double> raw_s(static_cast<size_t>(f.bx) * f.by, 0);
    std::vector<float> raw_q(static_cast<size_t>(f.bx) * f.by, 0);

    auto px = [&](int x, int y) {
        return img.at(std::clamp(x, 0, img.width - 1), std::clamp(y, 0, img.height - 1));
    };
    for (int byi = 0; byi < f.by; ++byi) {
        for (int bxi = 0; bxi < f.bx; ++bxi) {
            double gxx = 0, gyy = 0, gxy = 0;
            for (int y = byi * block; y < (byi + 1) * block; ++y) {
                for (int x = bxi * block; x < (bxi + 1) * block; ++x) {
                    // Sobel
                    const double gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                                      (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
                    const double gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                                      (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
                    gxx += gx * gx;
                    gyy += gy * gy;
                    gxy += gx * gy;
                }
            }
            const size_t at = static_cast<size_t>(byi) * f.bx + bxi;
            const double energy = gxx + gyy;
            if (energy < 1e-9) continue;  // flat block: quality 0
            const double a = gxx - gyy, b = 2 * gxy;
            raw_c[at] = a;
            raw_s[at] = b;
            raw_q[at] = static_cast<float>(std::sqrt(a * a + b * b) / energy);
        }
    }

    f.theta.assign(raw_c.size(), 0.0f);
    f.quality.assign(raw_c.size(), 0.0f);
    for (int byi = 0; byi < f.by; ++byi) {
        for (int bxi = 0; bxi < f.bx; ++bxi) {
            double c = 0, s = 0, q = 0;
            int n = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int jx = bxi + dx, jy = byi + dy;
                    if (jx < 0 || jx >= f.bx || jy < 0 || jy >= f.by) continue;
                    const size_t at = static_cast<size_t>(jy) * f.bx + jx;
                    c += raw_c[at];
                    s += raw_s[at];
                    q += raw_q[at];
                    ++n;
                }
            }
            const size_t at = static_cast<size_t>(byi) * f.bx + bxi;
            if (c * c + s * s > 1e-18) {
                // gradient doubled angle -> ridge orientation is normal to it
                double ga = 0.5 * std::atan2(s, c);
                double th = ga + kPi / 2;
                while (th >= kPi) th -= kPi;
                while (th < 0) th += kPi;
                f.theta[at] = static_cast<float>(th);
            }
            f.quality[at] = static_cast<float>(q / std::max(n, 1));
        }
    }
    return f;
}

BinaryImage binarize(const GrayImage& img, const OrientationField& orient) {
    const int w = img.width, h = img.height;
    // integral image for 15x15 local means
    std::vector<double> integral(static_cast<size_t>(w + 1) * (h + 1), 0);
    for (int y = 0; y < h; ++y) {
        double row = 0;
        for (int x = 0; x < w; ++x) {
            row += img.at(x, y);
            integral[static_cast<size_t>(y + 1) * (w + 1) + x + 1] =
                integral[static_cast<size_t>(y) * (w + 1) + x + 1] + row;
        }
    }
    auto box_mean = [&](int x, int y, int r) {
        const int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r);
        const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
        const double sum = integral[static_cast<size_t>(y1 + 1) * (w + 1) + x1 + 1] -
                           integral[static_cast<size_t>(y0) * (w + 1) + x1 + 1] -
                           integral[static_cast<size_t>(y1 + 1) * (w + 1) + x0] +
                           integral[static_cast<size_t>(y0) * (w + 1) + x0];
        return sum / ((x1 - x0 + 1) * (y1 - y0 + 1));
    };
    BinaryImage out;
    out.width = w;
    out.height = h;
    out.v.assign(static_cast<size_t>(w) * h, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (orient.quality_at(static_cast<float>(x), static_cast<float>(y)) < 0.05f) continue;
            if (img.at(x, y) < box_mean(x, y, 7) - 0.02) out.at(x, y) = 1;
        }
    }
    return out;
}

namespace {

// neighbours clockwise from north: P2..P9
constexpr int kNbr[8][2] = {{0, -1}, {1, -1}, {1, 0},  {1, 1},
                            {0, 1},  {-1, 1}, {-1, 0}, {-1, -1}};

inline uint8_t nbr(const BinaryImage& b, int x, int y, int i) {
    const int nx = x + kNbr[i][0], ny = y + kNbr[i][1];
    return b.in_bounds(nx, ny) ? b.at(nx, ny) : 0;
}

}  // namespace

BinaryImage thin(const BinaryImage& input) {
    BinaryImage img = input;
    bool changed = true;
    std::vector<size_t> kill;
    while (changed) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            kill.clear();
            for (int y = 0; y < img.height; ++y) {
                for (int x = 0; x < img.width; ++x) {
                    if (!img.at(x, y)) continue;
                    int bsum = 0;
                    uint8_t p[8];
                    for (int i = 0; i < 8; ++i) {
                        p[i] = nbr(img, x, y, i);
                        bsum += p[i];
                    }
                    if (bsum < 2 || bsum > 6) continue;
                    int a = 0;
                    for (int i = 0; i < 8; ++i) {
                        if (!p[i] && p[(i + 1) % 8]) ++a;
                    }
                    if (a != 1) continue;
                    // p[0]=N p[2]=E p[4]=S p[6]=W
                    if (pass == 0) {
                        if ((p[0] & p[2] & p[4]) || (p[2] & p[4] & p[6])) continue;
                    } else {
                        if ((p[0] & p[2] & p[6]) || (p[0] & p[4] & p[6])) continue;
                    }
                    kill.push_back(static_cast<size_t>(y) * img.width + x);
                }
            }
            if (!kill.empty()) changed = true;
            for (size_t i : kill) img.v[i] = 0;
        }
    }
    return img;
}

int crossing_number(const BinaryImage& skel, int x, int y) {
    int cn = 0;
    for (int i = 0; i < 8; ++i) {
        if (!nbr(skel, x, y, i) && nbr(skel, x, y, (i + 1) % 8)) ++cn;
    }
    return cn;
}

int count_components8(const BinaryImage& b) {
    std::vector<uint8_t> seen(b.v.size(), 0);
    std::vector<std::pair<int, int>> stack;
    int count = 0;
    for (int y = 0; y < b.height; ++y) {
        for (int x = 0; x < b.width; ++x) {
            if (!b.at(x, y) || seen[static_cast<size_t>(y) * b.width + x]) continue;
            ++count;
            stack.push_back({x, y});
            seen[static_cast<size_t>(y) * b.width + x] = 1;
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                for (auto& d : kNbr) {
                    const int nx = cx + d[0], ny = cy + d[1];
                    if (!b.in_bounds(nx, ny) || !b.at(nx, ny)) continue;
                    if (seen[static_cast<size_t>(ny) * b.width + nx]) continue;
                    seen[static_cast<size_t>(ny) * b.width + nx] = 1;
                    stack.push_back({nx, ny});
                }
            }
        }
    }
    return count;
}

namespace {

struct Trace {
    int length = 0;
    double dir = 0;  // angle from start toward the traced ridge
    bool has_dir = false;
    bool hit_junction = false;  // ridge continues beyond the walk
};

// Walks from (x0,y0) along the skeleton, starting into the given first
// neighbour, for at most max_steps or until a junction/ending.
Trace trace_branch(const BinaryImage& skel, int x0, int y0, int first_nbr, int max_steps) {
    Trace t;
    int px = x0, py = y0;
    int cx = x0 + kNbr[first_nbr][0], cy = y0 + kNbr[first_nbr][1];
    int dir_x = cx, dir_y = cy;
    t.length = 1;
    for (int step = 1; step < max_steps; ++step) {
        // collect next candidates, excluding where we came from and pixels
        // still adjacent to the previous position (staircase duplicates)
        int cand_x[8], cand_y[8];
        int n_found = 0;
        for (auto& d : kNbr) {
            const int qx = cx + d[0], qy = cy + d[1];
            if (!skel.in_bounds(qx, qy) || !skel.at(qx, qy)) continue;
            if (qx == px && qy == py) continue;
            if (qx == x0 && qy == y0) continue;
            cand_x[n_found] = qx;
            cand_y[n_found] = qy;
            ++n_found;
        }
        int nx, ny;
        if (n_found == 1) {
            nx = cand_x[0];
            ny = cand_y[0];
        } else if (n_found == 2 && std::abs(cand_x[0] - cand_x[1]) <= 1 &&
                   std::abs(cand_y[0] - cand_y[1]) <= 1) {
            // thick-corner artifact: the two candidates touch each other and
            // rejoin; prefer the orthogonal step
            const int m0 = std::abs(cand_x[0] - cx) + std::abs(cand_y[0] - cy);
            const int pick = m0 == 1 ? 0 : 1;
            nx = cand_x[pick];
            ny = cand_y[pick];
        } else {
            t.hit_junction = n_found >= 2;
            break;
        }
        px = cx;
        py = cy;
        cx = nx;
        cy = ny;
        ++t.length;
        dir_x = cx;
        dir_y = cy;
    }
    t.dir = std::atan2(static_cast<double>(dir_y - y0), static_cast<double>(dir_x - x0));
    t.has_dir = true;
    return t;
}

double resolve_to_field(double trace_dir, float field_theta) {
    const double a = field_theta, b = field_theta + kPi;
    return angular_gap(trace_dir, a) <= angular_gap(trace_dir, b) ? a : wrap_angle_2pi(b);
}

}  // namespace

std::vector<Minutia> extract_minutiae(const BinaryImage& skel, const OrientationField& orient,
                                      int min_border, int min_ridge_len) {
    std::vector<Minutia> out;
    for (int y = 0; y < skel.height; ++y) {
        for (int x = 0; x < skel.width; ++x) {
            if (!skel.at(x, y)) continue;
            if (x < min_border || y < min_border || x >= skel.width - min_border ||
                y >= skel.height - min_border) {
                continue;
            }
            const int cn = crossing_number(skel, x, y);
            if (cn != 1 && cn != 3) continue;

            std::vector<int> branches;
            for (int i = 0; i < 8; ++i) {
                if (nbr(skel, x, y, i)) branches.push_back(i);
            }
            Minutia m;
            m.x = static_cast<float>(x);
            m.y = static_cast<float>(y);
            m.quality = orient.quality_at(m.x, m.y);
            const float field = orient.theta_at(m.x, m.y);

            if (cn == 1) {
                if (branches.empty()) continue;
                Trace t = trace_branch(skel, x, y, branches.front(), 4 * min_ridge_len);
                // islands shorter than min_ridge_len are spurious; so are
                // 1-2 px hairs hanging off a through-ridge junction
                const int need = t.hit_junction ? std::min(3, min_ridge_len) : min_ridge_len;
                if (t.length < need) continue;
                m.kind = Minutia::ending;
                m.theta = static_cast<float>(resolve_to_field(t.dir, field));
            } else {
                // CN==3 can report >3 neighbours in thick junctions; trace each
                std::vector<Trace> traces;
                for (int b : branches) {
                    traces.push_back(trace_branch(skel, x, y, b, 4 * min_ridge_len));
                }
                int long_branches = 0;
                for (auto& t : traces) {
                    if (t.length >= min_ridge_len || t.hit_junction) ++long_branches;
                }
                if (long_branches < 2) continue;
                m.kind = Minutia::bifurcation;
                // flow points between the two most mutually aligned branches
                double best_gap = 1e9;
                double bisector = traces.front().dir;
                for (size_t i = 0; i < traces.size(); ++i) {
                    for (size_t j = i + 1; j < traces.size(); ++j) {
                        const double gap = angular_gap(traces[i].dir, traces[j].dir);
                        if (gap < best_gap) {
                            best_gap = gap;
                            const double ci = std::cos(traces[i].dir) + std::cos(traces[j].dir);
                            const double si = std::sin(traces[i].dir) + std::sin(traces[j].dir);
                            bisector = std::atan2(si, ci);
                        }
                    }
                }
                m.theta = static_cast<float>(resolve_to_field(bisector, field));
            }
            out.push_back(m);
        }
    }

    // collapse clustered duplicates (thick junctions mark adjacent pixels)
    std::sort(out.begin(), out.end(), [](const Minutia& a, const Minutia& b) {
        if (a.quality != b.quality) return a.quality > b.quality;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });
    std::vector<Minutia> kept;
    for (const auto& m : out) {
        bool close = false;
        for (const auto& k : kept) {
            const float dx = m.x - k.x, dy = m.y - k.y;
            if (dx * dx + dy * dy < 3 * 3) {
                close = true;
                break;
            }
        }
        if (!close) kept.push_back(m);
    }
    std::sort(kept.begin(), kept.end(), [](const Minutia& a, const Minutia& b) {
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });
    return kept;
}

GrayImage extract_patch(const GrayImage& img, const Minutia& m, int size) {
    if (img.width < 2 || img.height < 2) throw ValueError("extract_patch: degenerate image");
    const double cx = m.x, cy = m.y;
    const double c = std::cos(m.theta), s = std::sin(m.theta);
    const int half = size / 2;
    // rotated footprint must stay inside the reflect-padded bounds
    const double extent = std::hypot(static_cast<double>(half), static_cast<double>(half)) + 1;
    if (cx - extent < -kPatchPad || cx + extent > img.width - 1 + kPatchPad ||
        cy - extent < -kPatchPad || cy + extent > img.height - 1 + kPatchPad) {
        throw ValueError("extract_patch: footprint outside padded bounds");
    }
    GrayImage patch = make_image(size, size);
    for (int r = 0; r < size; ++r) {
        for (int col = 0; col < size; ++col) {
            const double dx = col - half, dy = r - half;
            const double sx = cx + c * dx - s * dy;
            const double sy = cy + s * dx + c * dy;
            patch.at(col, r) = quantize01(bilinear_reflect(img, sx, sy));
        }
    }
    return patch;
}

PatchSet extract_patches(const GrayImage& img, const std::string& image_id, int max_patches,
                         int size) {
    PatchSet set;
    set.image_id = image_id;
    GrayImage norm = normalize_image(img);
    OrientationField orient = orientation_field(norm);
    BinaryImage skel = thin(binarize(norm, orient));
    std::vector<Minutia> ms = extract_minutiae(skel, orient);
    std::sort(ms.begin(), ms.end(), [](const Minutia& a, const Minutia& b) {
        if (a.quality != b.quality) return a.quality > b.quality;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });
    if (max_patches > 0 && static_cast<int>(ms.size()) > max_patches) {
        ms.resize(static_cast<size_t>(max_patches));
    }
    for (const auto& m : ms) {
        set.patches.push_back(Patch{extract_patch(norm, m, size), m});
    }
    return set;
}

void save_minutiae(const std::vector<Minutia>& ms, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os.good()) throw IoError("minutiae: cannot open for writing: " + path);
    for (const auto& m : ms) {
        os << m.x << ' ' << m.y << ' ' << m.theta << ' '
           << (m.kind == Minutia::ending ? "ending" : "bifurcation") << ' ' << m.quality << "\n";
    }
}

std::vector<Minutia> load_minutiae(const std::string& path) {
    std::ifstream is(path);
    if (!is.good()) throw IoError("minutiae: cannot open: " + path);
    std::vector<Minutia> out;
    std::string kind;
    Minutia m;
    while (is >> m.x >> m.y >> m.theta >> kind >> m.quality) {
        m.kind = kind == "bifurcation" ? Minutia::bifurcation : Minutia::ending;
        out.push_back(m);
    }
    return out;
}

}  // namespace umg
