#include "umg/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "umg/optim.hpp"
#include "umg/rng.hpp"

namespace umg {

namespace {

Tensor patch_batch(const std::vector<const GrayImage*>& imgs) { return image_batch(imgs); }

struct PairPick {
    int group_a, idx_a;
    int group_b, idx_b;
};

// uniform over ordered pairs of distinct groups, then uniform patches
PairPick pick_cross_pair(SeededRng& rng, const std::vector<PatchGroup>& groups) {
    PairPick p;
    const int g = static_cast<int>(groups.size());
    p.group_a = rng.uniform_int(g);
    p.group_b = rng.uniform_int(g - 1);
    if (p.group_b >= p.group_a) ++p.group_b;
    p.idx_a = rng.uniform_int(static_cast<int>(groups[static_cast<size_t>(p.group_a)].patches.size()));
    p.idx_b = rng.uniform_int(static_cast<int>(groups[static_cast<size_t>(p.group_b)].patches.size()));
    return p;
}

PairPick pick_live_pair(SeededRng& rng, const PatchGroup& pool) {
    PairPick p;
    p.group_a = p.group_b = 0;
    const int n = static_cast<int>(pool.patches.size());
    p.idx_a = rng.uniform_int(n);
    p.idx_b = rng.uniform_int(n);
    return p;
}

// bound-parameter views in parameters() order
template <class Net>
std::vector<Tensor> bound_views(const Net& net) {
    std::vector<Tensor> out;
    for (const Tensor* t : net.parameters()) out.push_back(*t);
    return out;
}

}  // namespace

std::vector<PatchGroup> collect_patch_groups(const DatasetManifest& m, const std::string& split,
                                             Label label, const PatchPoolOptions& opt) {
    std::map<std::string, PatchGroup> groups;
    for (const auto& r : m.records) {
        if (r.split != split || r.label != label) continue;
        const std::string key = label == Label::live ? "live" : r.material;
        GrayImage img = read_image(m.resolve(r));
        auto& g = groups[key];
        g.name = key;
        if (img.width == opt.size && img.height == opt.size) {
            g.patches.push_back(std::move(img));
            g.source_ids.push_back(r.path);
        } else {
            PatchSet ps = extract_patches(img, r.path, opt.cap_per_image, opt.size);
            for (auto& p : ps.patches) {
                g.patches.push_back(std::move(p.img));
                g.source_ids.push_back(r.path);
            }
        }
    }
    std::vector<PatchGroup> out;
    for (auto& [k, g] : groups) out.push_back(std::move(g));
    return out;
}

UmgModel train_umg(const std::vector<PatchGroup>& groups, UmgRole role, const StyleLossConfig& cfg,
                   const TrainSettings& ts, uint64_t seed, const EncoderSpec* frozen_encoder) {
    cfg.validate();
    if (role == UmgRole::spoof && groups.size() < 2) {
        throw ValueError("train_umg: spoof model needs patches from at least 2 materials");
    }
    if (groups.empty()) throw ValueError("train_umg: no patch groups");
    int64_t pool = 0;
    for (const auto& g : groups) {
        if (g.patches.empty()) throw ValueError("train_umg: empty patch group " + g.name);
        pool += static_cast<int64_t>(g.patches.size());
    }

    UmgModel model;
    model.cfg = cfg;
    model.enc = frozen_encoder ? *frozen_encoder : build_encoder(derive_seed(seed, "umg-encoder"));
    model.dec = build_decoder(model.enc, derive_seed(seed, "umg-decoder"));
    model.disc = build_discriminator(derive_seed(seed, "umg-discriminator"));

    // flattened view for discriminator "real" samples
    std::vector<const GrayImage*> all;
    for (const auto& g : groups) {
        for (const auto& p : g.patches) all.push_back(&p);
    }

    PatchGroup combined_live;
    if (role == UmgRole::live) {
        for (const auto& g : groups) {
            for (size_t i = 0; i < g.patches.size(); ++i) {
                combined_live.patches.push_back(g.patches[i]);
                combined_live.source_ids.push_back(g.source_ids[i]);
            }
        }
    }

    auto opt_g = OptimizerState::make_adam(ts.lr);
    auto opt_d = OptimizerState::make_adam(ts.lr);
    SeededRng rng(derive_seed(seed, "umg-sampling"));
    const int steps_per_epoch =
        ts.steps_per_epoch > 0 ? ts.steps_per_epoch
                               : std::max<int>(1, static_cast<int>(pool / ts.batch));

    for (int epoch = 0; epoch < ts.epochs; ++epoch) {
        for (int step = 0; step < steps_per_epoch; ++step) {
            const int global_step = model.steps_trained;
            try {
                std::vector<const GrayImage*> contents, styles, reals;
                for (int b = 0; b < ts.batch; ++b) {
                    PairPick p = role == UmgRole::spoof ? pick_cross_pair(rng, groups)
                                                        : pick_live_pair(rng, combined_live);
                    const PatchGroup& ga =
                        role == UmgRole::spoof ? groups[static_cast<size_t>(p.group_a)] : combined_live;
                    const PatchGroup& gb =
                        role == UmgRole::spoof ? groups[static_cast<size_t>(p.group_b)] : combined_live;
                    contents.push_back(&ga.patches[static_cast<size_t>(p.idx_a)]);
                    styles.push_back(&gb.patches[static_cast<size_t>(p.idx_b)]);
                    reals.push_back(all[static_cast<size_t>(rng.uniform_int(static_cast<int>(all.size())))]);
                }
                Tensor X = patch_batch(contents);
                Tensor S = patch_batch(styles);
                Tensor R = patch_batch(reals);

                // generator (decoder) step
                Tape tape;
                DecoderSpec bdec = model.dec.bound(tape);
                Tensor f_c = encode_deepest(model.enc, X);
                Tensor t = adain(f_c, encode_deepest(model.enc, S), cfg.stat_eps);
                Tensor t_alpha = interpolate_features(f_c, t, cfg.alpha);
                Tensor synth = decode(bdec, t_alpha);
                auto synth_taps = encode_with_taps(model.enc, synth);
                auto style_taps = encode_with_taps(model.enc, S);
                std::vector<Tensor> g_taps, s_taps;
                for (int i : cfg.tap_indices) {
                    g_taps.push_back(synth_taps[static_cast<size_t>(i)]);
                    s_taps.push_back(style_taps[static_cast<size_t>(i)]);
                }
                Tensor l_s = style_loss_from_taps(g_taps, s_taps, cfg);
                Tensor l_c = content_loss_from_feats(synth_taps[3], t_alpha);
                Tensor d_fake = discriminate(model.disc, synth);
                Tensor l_adv_g = gen_adv_loss(d_fake, cfg);
                Tensor l_g = generator_objective(l_c, l_s, l_adv_g, cfg);
                StepLog log{l_g.scalar(), l_c.scalar(), l_s.scalar(), l_adv_g.scalar(), 0};
                auto gm = tape.backward(l_g);
                optimizer_step(opt_g, model.dec.parameters(), grads_for(gm, bdec_params(bdec)));

                // discriminator step on the pre-update synthesis, detached
                Tensor synth_const;
                synth_const.shape = synth.shape;
                synth_const.store = synth.store;
                Tape tape_d;
                DiscriminatorSpec bdisc = model.disc.bound(tape_d);
                Tensor l_d = disc_adv_loss(discriminate(bdisc, R), discriminate(bdisc, synth_const),
                                           cfg);
                log.l_d = l_d.scalar();
                auto gm_d = tape_d.backward(mul_scalar(l_d, -1));  // maximize
                optimizer_step(opt_d, model.disc.parameters(), grads_for(gm_d, bdisc_params(bdisc)));

                model.log.push_back(log);
                model.steps_trained += 1;
            } catch (const NumericError& e) {
                throw NumericError("train_umg: aborted at step " + std::to_string(global_step) +
                                   ": " + e.what());
            }
        }
    }
    return model;
}

namespace {

std::vector<Tensor> bdec_params_impl(const DecoderSpec& d) {
    std::vector<Tensor> out;
    for (const Tensor* t : d.parameters()) out.push_back(*t);
    return out;
}

std::vector<Tensor> bdisc_params_impl(const DiscriminatorSpec& d) {
    std::vector<Tensor> out;
    for (const Tensor* t : d.parameters()) out.push_back(*t);
    return out;
}

}  // namespace

// bound-parameter views in parameters() order
std::vector<Tensor> bdec_params(const DecoderSpec& d);
std::vector<Tensor> bdisc_params(const DiscriminatorSpec& d);
std::vector<Tensor> bdec_params(const DecoderSpec& d) { return bdec_params_impl(d); }
std::vector<Tensor> bdisc_params(const DiscriminatorSpec& d) { return bdisc_params_impl(d); }

void save_umg_model(const UmgModel& m, const std::string& path) {
    NamedParams params = named_params(m.enc, "enc");
    NamedParams dec = named_params(m.dec, "dec");
    NamedParams disc = named_params(m.disc, "disc");
    params.insert(params.end(), dec.begin(), dec.end());
    params.insert(params.end(), disc.begin(), disc.end());
    params.emplace_back("cfg.alpha", scalar_tensor(m.cfg.alpha));
    params.emplace_back("cfg.lambda_c", scalar_tensor(m.cfg.lambda_c));
    params.emplace_back("cfg.lambda_s", scalar_tensor(m.cfg.lambda_s));
    params.emplace_back("cfg.prob_clamp", scalar_tensor(m.cfg.prob_clamp));
    params.emplace_back("cfg.stat_eps", scalar_tensor(m.cfg.stat_eps));
    params.emplace_back("meta.steps", scalar_tensor(static_cast<real>(m.steps_trained)));
    save_checkpoint(path, params);
}

UmgModel load_umg_model(const std::string& path) {
    auto m = to_map(load_checkpoint(path));
    UmgModel model;
    model.enc = build_encoder(0);
    model.dec = build_decoder(model.enc, 0);
    model.disc = build_discriminator(0);
    assign_params(model.enc, m, "enc");
    assign_params(model.dec, m, "dec");
    assign_params(model.disc, m, "disc");
    auto scalar_of = [&](const std::string& name, real fallback) {
        auto it = m.find(name);
        return it == m.end() ? fallback : it->second.scalar();
    };
    model.cfg.alpha = scalar_of("cfg.alpha", model.cfg.alpha);
    model.cfg.lambda_c = scalar_of("cfg.lambda_c", model.cfg.lambda_c);
    model.cfg.lambda_s = scalar_of("cfg.lambda_s", model.cfg.lambda_s);
    model.cfg.prob_clamp = scalar_of("cfg.prob_clamp", model.cfg.prob_clamp);
    model.cfg.stat_eps = scalar_of("cfg.stat_eps", model.cfg.stat_eps);
    model.steps_trained = static_cast<int>(scalar_of("meta.steps", 0));
    return model;
}

std::vector<GrayImage> synthesize_batch(const UmgModel& m,
                                        const std::vector<const GrayImage*>& contents,
                                        const std::vector<const GrayImage*>& styles, real alpha) {
    if (contents.size() != styles.size() || contents.empty()) {
        throw ValueError("synthesize_batch: mismatched or empty pair lists");
    }
    Tensor X = patch_batch(contents);
    Tensor S = patch_batch(styles);
    Tensor f_c = encode_deepest(m.enc, X);
    Tensor t = adain(f_c, encode_deepest(m.enc, S), m.cfg.stat_eps);
    Tensor out = decode(m.dec, interpolate_features(f_c, t, alpha));
    std::vector<GrayImage> imgs;
    imgs.reserve(contents.size());
    for (size_t i = 0; i < contents.size(); ++i) {
        imgs.push_back(tensor_to_image(out, static_cast<int>(i)));
    }
    return imgs;
}

GrayImage synthesize_pair(const UmgModel& m, const GrayImage& content, const GrayImage& style,
                          real alpha) {
    return synthesize_batch(m, {&content}, {&style}, alpha)[0];
}

namespace {

constexpr int kSynthChunk = 16;

SynthSet run_synthesis(const UmgModel& m, const std::vector<PatchGroup>& groups, bool cross_material,
                       const SynthesisPlan& plan) {
    if (plan.n_synth < 1) throw ValueError("synthesize: plan.n_synth must be >= 1");
    if (cross_material && groups.size() < 2) {
        throw ValueError("synthesize: cross-material synthesis needs >= 2 material groups");
    }
    for (const auto& g : groups) {
        if (g.patches.empty()) throw ValueError("synthesize: empty patch group " + g.name);
    }
    SynthSet set;
    set.label = cross_material ? Label::spoof : Label::live;
    set.untrained_model = m.steps_trained == 0;

    struct Pick {
        const GrayImage* content;
        const GrayImage* style;
        ProvenanceRow row;
        std::string material;
    };
    std::vector<Pick> picks;
    picks.reserve(static_cast<size_t>(plan.n_synth));
    for (int i = 0; i < plan.n_synth; ++i) {
        // per-pair derived seed keeps parallel output equal to sequential
        const uint64_t pair_seed = derive_seed(plan.seed, static_cast<uint64_t>(i));
        SeededRng rng(pair_seed);
        Pick pk;
        if (cross_material) {
            PairPick p = pick_cross_pair(rng, groups);
            const auto& ga = groups[static_cast<size_t>(p.group_a)];
            const auto& gb = groups[static_cast<size_t>(p.group_b)];
            pk.content = &ga.patches[static_cast<size_t>(p.idx_a)];
            pk.style = &gb.patches[static_cast<size_t>(p.idx_b)];
            pk.material = ga.name + "+" + gb.name;
            pk.row = {"", ga.source_ids[static_cast<size_t>(p.idx_a)],
                      gb.source_ids[static_cast<size_t>(p.idx_b)], ga.name, gb.name, plan.alpha,
                      pair_seed};
        } else {
            PairPick p = pick_live_pair(rng, groups[0]);
            pk.content = &groups[0].patches[static_cast<size_t>(p.idx_a)];
            pk.style = &groups[0].patches[static_cast<size_t>(p.idx_b)];
            pk.material = "";
            pk.row = {"", groups[0].source_ids[static_cast<size_t>(p.idx_a)],
                      groups[0].source_ids[static_cast<size_t>(p.idx_b)], "live", "live",
                      plan.alpha, pair_seed};
        }
        picks.push_back(std::move(pk));
    }

    for (size_t start = 0; start < picks.size(); start += kSynthChunk) {
        const size_t end = std::min(picks.size(), start + kSynthChunk);
        std::vector<const GrayImage*> cs, ss;
        for (size_t i = start; i < end; ++i) {
            cs.push_back(picks[i].content);
            ss.push_back(picks[i].style);
        }
        auto imgs = synthesize_batch(m, cs, ss, plan.alpha);
        for (size_t i = start; i < end; ++i) {
            set.patches.push_back(std::move(imgs[i - start]));
            set.materials.push_back(picks[i].material);
            set.prov.push_back(picks[i].row);
        }
    }
    return set;
}

}  // namespace

SynthSet synthesize_spoof_set(const UmgModel& m, const std::vector<PatchGroup>& material_groups,
                              const SynthesisPlan& plan) {
    return run_synthesis(m, material_groups, true, plan);
}

SynthSet synthesize_live_set(const UmgModel& m, const PatchGroup& live_group,
                             const SynthesisPlan& plan) {
    return run_synthesis(m, {live_group}, false, plan);
}

DatasetManifest materialize_synth_set(const SynthSet& set, const std::string& out_dir,
                                      const std::string& prefix, const std::string& sensor) {
    namespace fs = std::filesystem;
    const std::string sub = "synth_" + prefix;
    fs::create_directories(out_dir + "/" + sub);
    DatasetManifest m;
    m.base_dir = out_dir;
    std::vector<ProvenanceRow> prov = set.prov;
    for (size_t i = 0; i < set.patches.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%06zu.pgm", i);
        const std::string rel = sub + "/" + name;
        write_image(set.patches[i], out_dir + "/" + rel);
        prov[i].out_path = rel;
        m.records.push_back({rel, set.label, set.materials[i], sensor, "synth-" + prefix, "train",
                             true});
    }
    save_provenance(prov, out_dir + "/" + sub + "_provenance.csv");
    return m;
}

void save_provenance(const std::vector<ProvenanceRow>& rows, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os.good()) throw IoError("provenance: cannot open for writing: " + path);
    os << "out_path,content_path,style_path,material_a,material_b,alpha,seed\n";
    for (const auto& r : rows) {
        os << r.out_path << ',' << r.content_id << ',' << r.style_id << ',' << r.material_a << ','
           << r.material_b << ',' << r.alpha << ',' << r.seed << "\n";
    }
}

std::vector<ProvenanceRow> load_provenance(const std::string& path) {
    std::ifstream is(path);
    if (!is.good()) throw IoError("provenance: cannot open: " + path);
    std::string line;
    std::getline(is, line);  // header
    std::vector<ProvenanceRow> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ProvenanceRow r;
        std::vector<std::string> f;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                f.push_back(cur);
                cur.clear();
            } else if (c != '\r') {
                cur.push_back(c);
            }
        }
        f.push_back(cur);
        if (f.size() != 7) throw IoError("provenance: malformed row in " + path);
        r.out_path = f[0];
        r.content_id = f[1];
        r.style_id = f[2];
        r.material_a = f[3];
        r.material_b = f[4];
        r.alpha = static_cast<real>(std::stod(f[5]));
        r.seed = std::stoull(f[6]);
        out.push_back(std::move(r));
    }
    return out;
}

DatasetManifest augment(const DatasetManifest& real_manifest,
                        const std::vector<DatasetManifest>& synthetic_sets) {
    DatasetManifest out = real_manifest;
    std::set<std::string> paths;
    for (const auto& r : out.records) paths.insert(r.path);
    for (const auto& s : synthetic_sets) {
        for (const auto& r : s.records) {
            if (!paths.insert(r.path).second) {
                throw ValueError("augment: duplicate record path " + r.path);
            }
            if (r.split == "test") {
                throw ValueError("augment: synthetic record in test split: " + r.path);
            }
            ManifestRecord rec = r;
            rec.synthetic = true;
            out.records.push_back(std::move(rec));
        }
    }
    out.validate();
    return out;
}

DatasetManifest cross_sensor_synthesize(const std::vector<GrayImage>& target_lives,
                                        const std::vector<std::string>& target_live_ids,
                                        const std::string& target_sensor,
                                        const DatasetManifest& source_manifest,
                                        const CrossSensorCounts& counts, uint64_t seed,
                                        const std::string& out_dir, const StyleLossConfig& cfg,
                                        const TrainSettings& ts) {
    if (target_lives.empty()) throw ValueError("cross_sensor_synthesize: no target lives");
    for (const auto& r : source_manifest.records) {
        if (r.sensor == target_sensor) {
            throw ValueError("cross_sensor_synthesize: source manifest contains target sensor '" +
                             target_sensor + "'");
        }
    }

    // patch pool from the ~100 target style lives
    PatchGroup style_pool;
    style_pool.name = "live";
    PatchPoolOptions opt;
    opt.cap_per_image = 40;
    for (size_t i = 0; i < target_lives.size(); ++i) {
        PatchSet ps = extract_patches(target_lives[i],
                                      i < target_live_ids.size() ? target_live_ids[i]
                                                                 : "target_live_" + std::to_string(i),
                                      opt.cap_per_image, opt.size);
        for (auto& p : ps.patches) {
            style_pool.patches.push_back(std::move(p.img));
            style_pool.source_ids.push_back(ps.image_id);
        }
    }
    if (style_pool.patches.empty()) {
        throw ValueError("cross_sensor_synthesize: target lives yielded no patches");
    }

    UmgModel live_model =
        train_umg({style_pool}, UmgRole::live, cfg, ts, derive_seed(seed, "cross-sensor-umg"));

    PatchPoolOptions source_opt;
    auto live_groups = collect_patch_groups(source_manifest, "train", Label::live, source_opt);
    auto spoof_groups = collect_patch_groups(source_manifest, "train", Label::spoof, source_opt);
    if (live_groups.empty() || spoof_groups.empty()) {
        throw ValueError("cross_sensor_synthesize: source manifest lacks live or spoof patches");
    }

    // flatten spoof groups, keeping material tags
    PatchGroup spoof_pool;
    std::vector<std::string> spoof_materials;
    for (const auto& g : spoof_groups) {
        for (size_t i = 0; i < g.patches.size(); ++i) {
            spoof_pool.patches.push_back(g.patches[i]);
            spoof_pool.source_ids.push_back(g.source_ids[i]);
            spoof_materials.push_back(g.name);
        }
    }
    const PatchGroup& live_pool = live_groups[0];

    SynthSet merged;
    merged.label = Label::live;
    merged.untrained_model = live_model.steps_trained == 0;
    auto transfer = [&](const PatchGroup& pool, const std::vector<std::string>* mats, int count,
                        const char* tag, SynthSet& dst) {
        for (int start = 0; start < count; start += kSynthChunk) {
            const int end = std::min(count, start + kSynthChunk);
            std::vector<const GrayImage*> cs, ss;
            std::vector<int> content_idx;
            std::vector<uint64_t> seeds;
            for (int i = start; i < end; ++i) {
                const uint64_t pair_seed =
                    derive_seed(derive_seed(seed, tag), static_cast<uint64_t>(i));
                SeededRng rng(pair_seed);
                const int ci = rng.uniform_int(static_cast<int>(pool.patches.size()));
                const int si = rng.uniform_int(static_cast<int>(style_pool.patches.size()));
                cs.push_back(&pool.patches[static_cast<size_t>(ci)]);
                ss.push_back(&style_pool.patches[static_cast<size_t>(si)]);
                content_idx.push_back(ci);
                seeds.push_back(pair_seed);
            }
            auto imgs = synthesize_batch(live_model, cs, ss, cfg.alpha);
            for (int i = start; i < end; ++i) {
                const int k = i - start;
                dst.patches.push_back(std::move(imgs[static_cast<size_t>(k)]));
                const int ci = content_idx[static_cast<size_t>(k)];
                dst.materials.push_back(mats ? (*mats)[static_cast<size_t>(ci)] : "");
                dst.prov.push_back({"", pool.source_ids[static_cast<size_t>(ci)], target_sensor,
                                    mats ? (*mats)[static_cast<size_t>(ci)] : "live", "live",
                                    cfg.alpha, seeds[static_cast<size_t>(k)]});
            }
        }
    };

    SynthSet live_set;
    live_set.label = Label::live;
    transfer(live_pool, nullptr, counts.n_live, "live-transfer", live_set);
    SynthSet spoof_set;
    spoof_set.label = Label::spoof;
    transfer(spoof_pool, &spoof_materials, counts.n_spoof, "spoof-transfer", spoof_set);

    DatasetManifest live_m = materialize_synth_set(live_set, out_dir, "cs_live", target_sensor);
    DatasetManifest spoof_m = materialize_synth_set(spoof_set, out_dir, "cs_spoof", target_sensor);
    DatasetManifest out;
    out.base_dir = out_dir;
    out.records = live_m.records;
    out.records.insert(out.records.end(), spoof_m.records.begin(), spoof_m.records.end());
    out.validate();
    save_manifest(out, out_dir + "/synthetic_manifest.csv");
    save_umg_model(live_model, out_dir + "/umg_live.umgw");
    return out;
}

}  // namespace umg
