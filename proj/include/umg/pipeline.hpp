#pragma once

#include <optional>
#include <string>
#include <vector>

#include "umg/fingerprint.hpp"
#include "umg/manifest.hpp"
#include "umg/networks.hpp"
#include "umg/style.hpp"

namespace umg {

struct PatchGroup {
    std::string name;  // material id, or "live"
    std::vector<GrayImage> patches;
    std::vector<std::string> source_ids;  // parallel to patches
};

struct PatchPoolOptions {
    int cap_per_image = 8;
    int size = 96;
};

/// Patches for every record matching (split, label), grouped by material
/// (one group named "live" for live records). 96x96 records are taken as
/// single patches directly; larger images run the minutiae pipeline.
std::vector<PatchGroup> collect_patch_groups(const DatasetManifest& m, const std::string& split,
                                             Label label, const PatchPoolOptions& opt);

struct TrainSettings {
    int batch = 8;
    real lr = real(1e-4);  // Adam, both decoder and discriminator
    int epochs = 10;
    int steps_per_epoch = 0;  // 0: pool size / batch
};

struct StepLog {
    real total_g, l_c, l_s, l_adv_g, l_d;
};

struct UmgModel {
    EncoderSpec enc;
    DecoderSpec dec;
    DiscriminatorSpec disc;
    StyleLossConfig cfg;
    std::vector<StepLog> log;
    int steps_trained = 0;
};

enum class UmgRole { spoof, live };

/// Alternating decoder/discriminator training over style-transfer pairs:
/// spoof models draw (content, style) from distinct material groups, live
/// models pair live patches. Deterministic given the seed.
UmgModel train_umg(const std::vector<PatchGroup>& groups, UmgRole role, const StyleLossConfig& cfg,
                   const TrainSettings& ts, uint64_t seed,
                   const EncoderSpec* frozen_encoder = nullptr);

void save_umg_model(const UmgModel& m, const std::string& path);
UmgModel load_umg_model(const std::string& path);

/// g((1-alpha) f(c) + alpha AdaIN(f(c), f(s))), quantized to 8-bit levels.
GrayImage synthesize_pair(const UmgModel& m, const GrayImage& content, const GrayImage& style,
                          real alpha);

/// Batched synthesis; output i depends only on pair i (batching is a speed
/// detail, results are identical to one-at-a-time calls).
std::vector<GrayImage> synthesize_batch(const UmgModel& m,
                                        const std::vector<const GrayImage*>& contents,
                                        const std::vector<const GrayImage*>& styles, real alpha);

struct SynthesisPlan {
    int n_synth = 0;
    real alpha = real(0.5);
    uint64_t seed = 0;
};

struct ProvenanceRow {
    std::string out_path;
    std::string content_id, style_id;
    std::string material_a, material_b;
    real alpha;
    uint64_t seed;
};

struct SynthSet {
    Label label = Label::spoof;
    std::vector<GrayImage> patches;
    std::vector<std::string> materials;  // per patch; "a+b" for cross-material
    std::vector<ProvenanceRow> prov;
    bool untrained_model = false;  // provenance flag for zero-step models
};

/// Cross-material synthesis: every pair samples two distinct material
/// groups (uniform over ordered pairs, with replacement).
SynthSet synthesize_spoof_set(const UmgModel& m, const std::vector<PatchGroup>& material_groups,
                              const SynthesisPlan& plan);

/// Live-to-live synthesis from one pool.
SynthSet synthesize_live_set(const UmgModel& m, const PatchGroup& live_group,
                             const SynthesisPlan& plan);

/// Writes the set's patches as PGMs and returns the manifest fragment
/// (train split, synthetic flag, given sensor id). Provenance lands next to
/// the images as <prefix>_provenance.csv.
DatasetManifest materialize_synth_set(const SynthSet& set, const std::string& out_dir,
                                      const std::string& prefix, const std::string& sensor);

void save_provenance(const std::vector<ProvenanceRow>& rows, const std::string& path);
std::vector<ProvenanceRow> load_provenance(const std::string& path);

/// Merges real records with synthetic fragments. Path spaces must be
/// disjoint; synthetic records may not sit in the test split.
DatasetManifest augment(const DatasetManifest& real_manifest,
                        const std::vector<DatasetManifest>& synthetic_sets);

struct CrossSensorCounts {
    int n_live = 5000;
    int n_spoof = 5000;
};

/// Trains a live-only UMG on the target-sensor style pool and transfers
/// source live and spoof patches into the target style. Labels and spoof
/// material ids pass through. Returns the synthetic-only training manifest.
DatasetManifest cross_sensor_synthesize(const std::vector<GrayImage>& target_lives,
                                        const std::vector<std::string>& target_live_ids,
                                        const std::string& target_sensor,
                                        const DatasetManifest& source_manifest,
                                        const CrossSensorCounts& counts, uint64_t seed,
                                        const std::string& out_dir, const StyleLossConfig& cfg,
                                        const TrainSettings& ts);

}  // namespace umg
