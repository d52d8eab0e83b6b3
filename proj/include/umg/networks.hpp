#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "umg/ops.hpp"

namespace umg {

struct Conv {
    Tensor w;  // OIHW
    Tensor b;  // [O]
};

enum class EncoderMode { seeded_random, desk_pretrained };

// Frozen feature extractor: four conv3x3+relu blocks (reflect padding),
// channels 1->16->32->64->128, max-pool between blocks. Taps are the relu
// outputs; tap 3 is the deepest feature f(x). Weights never join a tape.
struct EncoderSpec {
    std::array<Conv, 4> blocks;
    EncoderMode mode = EncoderMode::seeded_random;
};

// Mirror of the encoder with nearest upsampling in place of pooling,
// reflection padding, a final 1-channel conv + sigmoid, and no
// normalization layers anywhere.
struct DecoderSpec {
    std::array<Conv, 4> convs;  // 128->64->32->16->1
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    DecoderSpec bound(Tape& tape) const;
};

// DC-GAN style probability head: three stride-2 conv3x3 (16/32/64) with
// leaky-relu 0.2, global average pooling, dense, sigmoid.
struct DiscriminatorSpec {
    std::array<Conv, 3> convs;
    Tensor fc_w, fc_b;  // [64,1], [1]
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    DiscriminatorSpec bound(Tape& tape) const;
};

// Compact depthwise-separable classifier over 96x96 patches with a 2-unit
// softmax head: (liveness, spoofness).
struct DetectorSpec {
    struct DsBlock {
        Tensor dw, dwb;  // depthwise [C,1,3,3]
        Tensor pw, pwb;  // pointwise [O,C,1,1]
    };
    Conv stem;  // 1->16, stride 2
    std::array<DsBlock, 3> blocks;  // 16->32, 32->64, 64->128
    Tensor fc_w, fc_b;  // [128,2], [2]
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    DetectorSpec bound(Tape& tape) const;
};

EncoderSpec build_encoder(uint64_t seed, EncoderMode mode = EncoderMode::seeded_random,
                          const std::string& checkpoint_path = "");
DecoderSpec build_decoder(const EncoderSpec& enc, uint64_t seed);
DiscriminatorSpec build_discriminator(uint64_t seed);
DetectorSpec build_detector(uint64_t seed);

/// Activations of the four taps for a [N,1,H,W] batch; H, W divisible by 8.
std::array<Tensor, 4> encode_with_taps(const EncoderSpec& enc, const Tensor& img);

/// Deepest tap only: f(img).
Tensor encode_deepest(const EncoderSpec& enc, const Tensor& img);

/// [N,128,h,w] features -> [N,1,8h,8w] image in [0,1].
Tensor decode(const DecoderSpec& dec, const Tensor& feats);

/// [N,1,H,W] image -> [N,1] probability of "real".
Tensor discriminate(const DiscriminatorSpec& disc, const Tensor& img);

/// Raw 2-class logits.
Tensor detector_logits(const DetectorSpec& det, const Tensor& patches);

/// Softmax pair per patch; column 1 is spoofness.
Tensor detector_forward(const DetectorSpec& det, const Tensor& patches);

real l2_norm_of_params(const std::vector<const Tensor*>& params);
std::vector<const Tensor*> encoder_weights(const EncoderSpec& enc);

// --- checkpoint container: "UMGW", version, named float32-LE blobs ---
using NamedParams = std::vector<std::pair<std::string, Tensor>>;
void save_checkpoint(const std::string& path, const NamedParams& params);
NamedParams load_checkpoint(const std::string& path);

NamedParams named_params(const EncoderSpec& e, const std::string& prefix);
NamedParams named_params(const DecoderSpec& d, const std::string& prefix);
NamedParams named_params(const DiscriminatorSpec& d, const std::string& prefix);
NamedParams named_params(const DetectorSpec& d, const std::string& prefix);

// Loads by name; throws IoError on a missing or mis-shaped entry.
void assign_params(EncoderSpec& e, const std::map<std::string, Tensor>& m, const std::string& prefix);
void assign_params(DecoderSpec& d, const std::map<std::string, Tensor>& m, const std::string& prefix);
void assign_params(DiscriminatorSpec& d, const std::map<std::string, Tensor>& m, const std::string& prefix);
void assign_params(DetectorSpec& d, const std::map<std::string, Tensor>& m, const std::string& prefix);
std::map<std::string, Tensor> to_map(const NamedParams& p);

}  // namespace umg
