#include "umg/networks.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "umg/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace umg {

namespace {

Tensor he_normal(std::vector<int> shape, int fan_in, SeededRng& rng) {
    std::vector<real> v(static_cast<size_t>(shape_numel(shape)));
    const double sd = std::sqrt(2.0 / fan_in);
    for (auto& x : v) x = static_cast<real>(rng.normal(0, sd));
    return Tensor(std::move(shape), std::move(v));
}

Conv make_conv(int out_ch, int in_ch, int k, SeededRng& rng) {
    Conv c;
    c.w = he_normal({out_ch, in_ch, k, k}, in_ch * k * k, rng);
    c.b = Tensor({out_ch}, real(0));
    return c;
}

constexpr int kEncChannels[4] = {16, 32, 64, 128};

}  // namespace

EncoderSpec build_encoder(uint64_t seed, EncoderMode mode, const std::string& checkpoint_path) {
    EncoderSpec e;
    e.mode = mode;
    SeededRng rng(derive_seed(seed, "encoder-init"));
    int in_ch = 1;
    for (int i = 0; i < 4; ++i) {
        e.blocks[static_cast<size_t>(i)] = make_conv(kEncChannels[i], in_ch, 3, rng);
        in_ch = kEncChannels[i];
    }
    if (mode == EncoderMode::desk_pretrained) {
        std::ifstream probe(checkpoint_path, std::ios::binary);
        if (!probe.good()) {
            throw IoError("build_encoder: desk-pretrained checkpoint missing: " + checkpoint_path);
        }
        probe.close();
        assign_params(e, to_map(load_checkpoint(checkpoint_path)), "enc");
    }
    return e;
}

DecoderSpec build_decoder(const EncoderSpec&, uint64_t seed) {
    DecoderSpec d;
    SeededRng rng(derive_seed(seed, "decoder-init"));
    const int chans[5] = {128, 64, 32, 16, 1};
    for (int i = 0; i < 4; ++i) {
        d.convs[static_cast<size_t>(i)] = make_conv(chans[i + 1], chans[i], 3, rng);
    }
    return d;
}

DiscriminatorSpec build_discriminator(uint64_t seed) {
    DiscriminatorSpec d;
    SeededRng rng(derive_seed(seed, "discriminator-init"));
    const int chans[4] = {1, 16, 32, 64};
    for (int i = 0; i < 3; ++i) {
        d.convs[static_cast<size_t>(i)] = make_conv(chans[i + 1], chans[i], 3, rng);
    }
    d.fc_w = he_normal({64, 1}, 64, rng);
    d.fc_b = Tensor({1}, real(0));
    return d;
}

DetectorSpec build_detector(uint64_t seed) {
    DetectorSpec d;
    SeededRng rng(derive_seed(seed, "detector-init"));
    d.stem = make_conv(16, 1, 3, rng);
    const int chans[4] = {16, 32, 64, 128};
    for (int i = 0; i < 3; ++i) {
        auto& blk = d.blocks[static_cast<size_t>(i)];
        blk.dw = he_normal({chans[i], 1, 3, 3}, 9, rng);
        blk.dwb = Tensor({chans[i]}, real(0));
        blk.pw = he_normal({chans[i + 1], chans[i], 1, 1}, chans[i], rng);
        blk.pwb = Tensor({chans[i + 1]}, real(0));
    }
    d.fc_w = he_normal({128, 2}, 128, rng);
    d.fc_b = Tensor({2}, real(0));
    return d;
}

// ------------------------------------------------------------------ params

std::vector<Tensor*> DecoderSpec::parameters() {
    std::vector<Tensor*> p;
    for (auto& c : convs) {
        p.push_back(&c.w);
        p.push_back(&c.b);
    }
    return p;
}

std::vector<const Tensor*> DecoderSpec::parameters() const {
    std::vector<const Tensor*> p;
    for (auto& c : convs) {
        p.push_back(&c.w);
        p.push_back(&c.b);
    }
    return p;
}

DecoderSpec DecoderSpec::bound(Tape& tape) const {
    DecoderSpec d = *this;
    for (auto& c : d.convs) {
        c.w = tape.leaf(c.w);
        c.b = tape.leaf(c.b);
    }
    return d;
}

std::vector<Tensor*> DiscriminatorSpec::parameters() {
    std::vector<Tensor*> p;
    for (auto& c : convs) {
        p.push_back(&c.w);
        p.push_back(&c.b);
    }
    p.push_back(&fc_w);
    p.push_back(&fc_b);
    return p;
}

std::vector<const Tensor*> DiscriminatorSpec::parameters() const {
    std::vector<const Tensor*> p;
    for (auto& c : convs) {
        p.push_back(&c.w);
        p.push_back(&c.b);
    }
    p.push_back(&fc_w);
    p.push_back(&fc_b);
    return p;
}

DiscriminatorSpec DiscriminatorSpec::bound(Tape& tape) const {
    DiscriminatorSpec d = *this;
    for (auto& c : d.convs) {
        c.w = tape.leaf(c.w);
        c.b = tape.leaf(c.b);
    }
    d.fc_w = tape.leaf(d.fc_w);
    d.fc_b = tape.leaf(d.fc_b);
    return d;
}

std::vector<Tensor*> DetectorSpec::parameters() {
    std::vector<Tensor*> p{&stem.w, &stem.b};
    for (auto& blk : blocks) {
        p.push_back(&blk.dw);
        p.push_back(&blk.dwb);
        p.push_back(&blk.pw);
        p.push_back(&blk.pwb);
    }
    p.push_back(&fc_w);
    p.push_back(&fc_b);
    return p;
}

std::vector<const Tensor*> DetectorSpec::parameters() const {
    std::vector<const Tensor*> p{&stem.w, &stem.b};
    for (auto& blk : blocks) {
        p.push_back(&blk.dw);
        p.push_back(&blk.dwb);
        p.push_back(&blk.pw);
        p.push_back(&blk.pwb);
    }
    p.push_back(&fc_w);
    p.push_back(&fc_b);
    return p;
}

DetectorSpec DetectorSpec::bound(Tape& tape) const {
    DetectorSpec d = *this;
    d.stem.w = tape.leaf(d.stem.w);
    d.stem.b = tape.leaf(d.stem.b);
    for (auto& blk : d.blocks) {
        blk.dw = tape.leaf(blk.dw);
        blk.dwb = tape.leaf(blk.dwb);
        blk.pw = tape.leaf(blk.pw);
        blk.pwb = tape.leaf(blk.pwb);
    }
    d.fc_w = tape.leaf(d.fc_w);
    d.fc_b = tape.leaf(d.fc_b);
    return d;
}

// ----------------------------------------------------------------- forward

std::array<Tensor, 4> encode_with_taps(const EncoderSpec& enc, const Tensor& img) {
    if (img.ndim() != 4 || img.dim(1) != 1) {
        throw DimError("encode_with_taps: expected [N,1,H,W], got " + shape_str(img.shape));
    }
    if (img.dim(2) % 8 != 0 || img.dim(3) % 8 != 0) {
        throw DimError("encode_with_taps: spatial dims must be divisible by 8, got " +
                       shape_str(img.shape));
    }
    std::array<Tensor, 4> taps;
    Tensor x = img;
    for (int i = 0; i < 4; ++i) {
        const Conv& c = enc.blocks[static_cast<size_t>(i)];
        x = relu(add_bias(conv2d(x, c.w, 1, Padding::reflect_px(1)), c.b));
        taps[static_cast<size_t>(i)] = x;
        if (i < 3) x = pool_max2(x);
    }
    return taps;
}

Tensor encode_deepest(const EncoderSpec& enc, const Tensor& img) {
    return encode_with_taps(enc, img)[3];
}

Tensor decode(const DecoderSpec& dec, const Tensor& feats) {
    if (feats.ndim() != 4 || feats.dim(1) != 128) {
        throw DimError("decode: expected [N,128,h,w], got " + shape_str(feats.shape));
    }
    Tensor x = feats;
    for (int i = 0; i < 3; ++i) {
        const Conv& c = dec.convs[static_cast<size_t>(i)];
        x = relu(add_bias(conv2d(x, c.w, 1, Padding::reflect_px(1)), c.b));
        x = upsample_nearest2(x);
    }
    const Conv& last = dec.convs[3];
    x = add_bias(conv2d(x, last.w, 1, Padding::reflect_px(1)), last.b);
    return sigmoid(x);
}

Tensor discriminate(const DiscriminatorSpec& disc, const Tensor& img) {
    if (img.ndim() != 4 || img.dim(1) != 1) {
        throw DimError("discriminate: expected [N,1,H,W], got " + shape_str(img.shape));
    }
    Tensor x = img;
    for (const Conv& c : disc.convs) {
        x = leaky_relu(add_bias(conv2d(x, c.w, 2, Padding::reflect_px(1)), c.b), real(0.2));
    }
    return sigmoid(dense(global_avg_pool(x), disc.fc_w, disc.fc_b));
}

Tensor detector_logits(const DetectorSpec& det, const Tensor& patches) {
    if (patches.ndim() != 4 || patches.dim(1) != 1) {
        throw DimError("detector_logits: expected [N,1,H,W], got " + shape_str(patches.shape));
    }
    Tensor x = relu(add_bias(conv2d(patches, det.stem.w, 2, Padding::reflect_px(1)), det.stem.b));
    for (const auto& blk : det.blocks) {
        x = relu(add_bias(conv2d_depthwise(x, blk.dw, 1, Padding::reflect_px(1)), blk.dwb));
        x = relu(add_bias(conv2d(x, blk.pw, 1, Padding::none()), blk.pwb));
        x = pool_max2(x);
    }
    return dense(global_avg_pool(x), det.fc_w, det.fc_b);
}

Tensor detector_forward(const DetectorSpec& det, const Tensor& patches) {
    return softmax_rows(detector_logits(det, patches));
}

real l2_norm_of_params(const std::vector<const Tensor*>& params) {
    real s = 0;
    for (const Tensor* t : params) {
        for (real v : t->data()) s += v * v;
    }
    return std::sqrt(s);
}

std::vector<const Tensor*> encoder_weights(const EncoderSpec& enc) {
    std::vector<const Tensor*> p;
    for (auto& c : enc.blocks) {
        p.push_back(&c.w);
        p.push_back(&c.b);
    }
    return p;
}

// -------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[4] = {'U', 'M', 'G', 'W'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_pod(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is.good()) throw IoError("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedParams& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os.good()) throw IoError("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, 4);
    write_pod(os, kVersion);
    write_pod(os, static_cast<uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        write_pod(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(os, static_cast<uint8_t>(t.ndim()));
        for (int d : t.shape) write_pod(os, static_cast<uint32_t>(d));
        for (real v : t.data()) write_pod(os, static_cast<float>(v));
    }
    if (!os.good()) throw IoError("checkpoint: write failed: " + path);
}

NamedParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is.good()) throw IoError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is.good() || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("checkpoint: bad magic in " + path);
    }
    if (read_pod<uint32_t>(is) != kVersion) throw IoError("checkpoint: unsupported version");
    const uint32_t count = read_pod<uint32_t>(is);
    NamedParams out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = read_pod<uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is.good()) throw IoError("checkpoint: truncated file");
        const uint8_t ndim = read_pod<uint8_t>(is);
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = static_cast<int>(read_pod<uint32_t>(is));
        std::vector<real> data(static_cast<size_t>(shape_numel(shape)));
        for (auto& v : data) v = static_cast<real>(read_pod<float>(is));
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return out;
}

namespace {

void put(NamedParams& out, const std::string& name, const Tensor& t) {
    out.emplace_back(name, t);
}

const Tensor& get(const std::map<std::string, Tensor>& m, const std::string& name,
                  const std::vector<int>& want_shape) {
    auto it = m.find(name);
    if (it == m.end()) throw IoError("checkpoint: missing parameter " + name);
    if (it->second.shape != want_shape) {
        throw IoError("checkpoint: parameter " + name + " has shape " +
                      shape_str(it->second.shape) + ", expected " + shape_str(want_shape));
    }
    return it->second;
}

}  // namespace

NamedParams named_params(const EncoderSpec& e, const std::string& prefix) {
    NamedParams out;
    for (int i = 0; i < 4; ++i) {
        put(out, prefix + ".conv" + std::to_string(i) + ".w", e.blocks[static_cast<size_t>(i)].w);
        put(out, prefix + ".conv" + std::to_string(i) + ".b", e.blocks[static_cast<size_t>(i)].b);
    }
    return out;
}

NamedParams named_params(const DecoderSpec& d, const std::string& prefix) {
    NamedParams out;
    for (int i = 0; i < 4; ++i) {
        put(out, prefix + ".conv" + std::to_string(i) + ".w", d.convs[static_cast<size_t>(i)].w);
        put(out, prefix + ".conv" + std::to_string(i) + ".b", d.convs[static_cast<size_t>(i)].b);
    }
    return out;
}

NamedParams named_params(const DiscriminatorSpec& d, const std::string& prefix) {
    NamedParams out;
    for (int i = 0; i < 3; ++i) {
        put(out, prefix + ".conv" + std::to_string(i) + ".w", d.convs[static_cast<size_t>(i)].w);
        put(out, prefix + ".conv" + std::to_string(i) + ".b", d.convs[static_cast<size_t>(i)].b);
    }
    put(out, prefix + ".fc.w", d.fc_w);
    put(out, prefix + ".fc.b", d.fc_b);
    return out;
}

NamedParams named_params(const DetectorSpec& d, const std::string& prefix) {
    NamedParams out;
    put(out, prefix + ".stem.w", d.stem.w);
    put(out, prefix + ".stem.b", d.stem.b);
    for (int i = 0; i < 3; ++i) {
        const auto& blk = d.blocks[static_cast<size_t>(i)];
        const std::string base = prefix + ".block" + std::to_string(i);
        put(out, base + ".dw", blk.dw);
        put(out, base + ".dwb", blk.dwb);
        put(out, base + ".pw", blk.pw);
        put(out, base + ".pwb", blk.pwb);
    }
    put(out, prefix + ".fc.w", d.fc_w);
    put(out, prefix + ".fc.b", d.fc_b);
    return out;
}

void assign_params(EncoderSpec& e, const std::map<std::string, Tensor>& m,
                   const std::string& prefix) {
    for (int i = 0; i < 4; ++i) {
        auto& c = e.blocks[static_cast<size_t>(i)];
        c.w = get(m, prefix + ".conv" + std::to_string(i) + ".w", c.w.shape);
        c.b = get(m, prefix + ".conv" + std::to_string(i) + ".b", c.b.shape);
    }
}

void assign_params(DecoderSpec& d, const std::map<std::string, Tensor>& m,
                   const std::string& prefix) {
    for (int i = 0; i < 4; ++i) {
        auto& c = d.convs[static_cast<size_t>(i)];
        c.w = get(m, prefix + ".conv" + std::to_string(i) + ".w", c.w.shape);
        c.b = get(m, prefix + ".conv" + std::to_string(i) + ".b", c.b.shape);
    }
}

void assign_params(DiscriminatorSpec& d, const std::map<std::string, Tensor>& m,
                   const std::string& prefix) {
    for (int i = 0; i < 3; ++i) {
        auto& c = d.convs[static_cast<size_t>(i)];
        c.w = get(m, prefix + ".conv" + std::to_string(i) + ".w", c.w.shape);
        c.b = get(m, prefix + ".conv" + std::to_string(i) + ".b", c.b.shape);
    }
    d.fc_w = get(m, prefix + ".fc.w", d.fc_w.shape);
    d.fc_b = get(m, prefix + ".fc.b", d.fc_b.shape);
}

void assign_params(DetectorSpec& d, const std::map<std::string, Tensor>& m,
                   const std::string& prefix) {
    d.stem.w = get(m, prefix + ".stem.w", d.stem.w.shape);
    d.stem.b = get(m, prefix + ".stem.b", d.stem.b.shape);
    for (int i = 0; i < 3; ++i) {
        auto& blk = d.blocks[static_cast<size_t>(i)];
        const std::string base = prefix + ".block" + std::to_string(i);
        blk.dw = get(m, base + ".dw", blk.dw.shape);
        blk.dwb = get(m, base + ".dwb", blk.dwb.shape);
        blk.pw = get(m, base + ".pw", blk.pw.shape);
        blk.pwb = get(m, base + ".pwb", blk.pwb.shape);
    }
    d.fc_w = get(m, prefix + ".fc.w", d.fc_w.shape);
    d.fc_b = get(m, prefix + ".fc.b", d.fc_b.shape);
}

std::map<std::string, Tensor> to_map(const NamedParams& p) {
    std::map<std::string, Tensor> m;
    for (const auto& [k, v] : p) m.emplace(k, v);
    return m;
}

}  // namespace umg
