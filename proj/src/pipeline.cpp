#include "dreamstory/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <memory>
#include <mutex>
#include <set>
#include <thread>
#include <utility>

#include "dreamstory/attention.hpp"
#include "dreamstory/errors.hpp"
#include "dreamstory/hash.hpp"
#include "dreamstory/json_util.hpp"
#include "dreamstory/log.hpp"

namespace fs = std::filesystem;

namespace dreamstory {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

const char* to_string(LayerScope scope) {
    return scope == LayerScope::decoder ? "decoder" : "all";
}

const char* to_string(MaskRefineMode mode) {
    switch (mode) {
        case MaskRefineMode::off: return "off";
        case MaskRefineMode::automatic: return "auto";
        case MaskRefineMode::on: return "on";
    }
    return "off";
}

LayerScope layer_scope_from_string(const std::string& s) {
    if (s == "decoder") return LayerScope::decoder;
    if (s == "all") return LayerScope::all;
    throw ConfigError("unknown layer scope '" + s + "' (expected decoder|all)");
}

MaskRefineMode refine_mode_from_string(const std::string& s) {
    if (s == "off") return MaskRefineMode::off;
    if (s == "auto") return MaskRefineMode::automatic;
    if (s == "on") return MaskRefineMode::on;
    throw ConfigError("unknown mask refine mode '" + s + "' (expected off|auto|on)");
}

namespace {

const char* to_string(mask::UnionMode mode) {
    return mode == mask::UnionMode::union_max ? "union" : "intersection";
}

mask::UnionMode union_mode_from_string(const std::string& s) {
    if (s == "union") return mask::UnionMode::union_max;
    if (s == "intersection") return mask::UnionMode::intersection_min;
    throw ConfigError("unknown union mode '" + s + "' (expected union|intersection)");
}

std::string apply_style(const std::string& prompt, const std::string& suffix) {
    if (suffix.empty()) return prompt;
    return prompt + ", " + suffix;
}

std::string scene_prompt(const SceneSpec& scene, const RenderConfig& config) {
    const std::string& base = (!config.use_raw_prompts && !scene.rewritten_prompt.empty())
                                  ? scene.rewritten_prompt
                                  : scene.raw_prompt;
    return apply_style(base, config.style_suffix);
}

MatrixXd plain_probs(const MatrixXd& Q, const MatrixXd& K, double scale) {
    return attn::masked_softmax(Q * K.transpose() * scale, MatrixXd::Ones(Q.rows(), K.rows()));
}

// Nearest-neighbor upscale of a token-grid binary map back to pixel space,
// used when a refined mask replaces the segmentation mask.
mask::PixelMask grid_to_pixel_mask(const VectorXd& binary, int grid_h, int grid_w, int image_h,
                                   int image_w, const std::string& subject) {
    mask::PixelMask pm;
    pm.subject_name = subject;
    pm.source = mask::PixelMask::Source::attention_refined;
    pm.values.setZero(image_h, image_w);
    int min_x = image_w, min_y = image_h, max_x = -1, max_y = -1;
    for (int y = 0; y < image_h; ++y) {
        const int gy = std::min(grid_h - 1, y * grid_h / image_h);
        for (int x = 0; x < image_w; ++x) {
            const int gx = std::min(grid_w - 1, x * grid_w / image_w);
            if (binary[gy * grid_w + gx] > 0.5) {
                pm.values(y, x) = 1;
                min_x = std::min(min_x, x);
                min_y = std::min(min_y, y);
                max_x = std::max(max_x, x);
                max_y = std::max(max_y, y);
            }
        }
    }
    pm.found = max_x >= 0;
    pm.box = pm.found ? Box{min_x, min_y, max_x + 1, max_y + 1} : Box{};
    return pm;
}

// Per-scene state shared by the self and cross processors. Lives for one
// run_steps call; the backend drives it from a single thread.
struct SceneContext {
    const RenderConfig* cfg = nullptr;
    std::vector<const MultimodalAnchor*> anchors;
    mask::MaskSet masks;  // target-side masks, updated in place by refinement
    std::map<std::string, std::map<LayerId, mask::LayerMask>> ref_masks;
    std::vector<std::pair<LayerId, std::pair<int, int>>> layer_grids;
    int image_w = 0;
    int image_h = 0;

    // Maps captured during the current step, consumed at the next step
    // boundary by the refinement pass.
    int capture_step = -1;
    std::map<LayerId, MatrixXd> cap_self_tgt;
    std::vector<std::map<LayerId, MatrixXd>> cap_self_ref;
    std::map<std::string, std::map<LayerId, VectorXd>> cap_cross_tgt;
    std::map<std::string, std::map<LayerId, VectorXd>> cap_cross_ref;
    std::map<LayerId, std::pair<int, int>> cap_grid;

    bool refinement_triggered = false;
    std::set<std::string> mmsa_active;
    std::set<std::string> mmca_active;

    bool refining() const { return cfg->mask_refine != MaskRefineMode::off; }

    void maybe_refresh(int step_index) {
        if (!refining()) return;
        if (capture_step < 0 || step_index == capture_step) return;
        refresh();
        capture_step = -1;
        cap_self_tgt.clear();
        for (auto& m : cap_self_ref) m.clear();
        cap_cross_tgt.clear();
        cap_cross_ref.clear();
        cap_grid.clear();
    }

    void rebuild_correspondence(const std::string& name) {
        for (const auto& [layer, grid] : layer_grids) {
            if (layer.attn_kind != AttnKind::self_attn) continue;
            const auto& tgt = masks.layer_masks.at(name).at(layer).values;
            const auto& ref = ref_masks.at(name).at(layer).values;
            mask::CorrespondenceMatrix corr;
            corr.target_subject = name;
            corr.reference_subject = name;
            corr.values = tgt * ref.transpose();
            masks.correspondence[name][layer] = std::move(corr);
        }
    }

    void apply_refined_masks(const std::string& name, const VectorXd& tgt_binary,
                             const VectorXd& ref_binary, int grid_h, int grid_w) {
        mask::PixelMask tgt_pm =
            grid_to_pixel_mask(tgt_binary, grid_h, grid_w, image_h, image_w, name);
        tgt_pm.score = masks.pixel_masks.at(name).score;
        masks.pixel_masks[name] = tgt_pm;
        mask::PixelMask ref_pm =
            grid_to_pixel_mask(ref_binary, grid_h, grid_w, image_h, image_w, name);
        for (const auto& [layer, grid] : layer_grids) {
            masks.layer_masks[name][layer] =
                mask::downsample_mask(tgt_pm, layer, grid.first, grid.second);
            ref_masks[name][layer] =
                mask::downsample_mask(ref_pm, layer, grid.first, grid.second);
        }
        rebuild_correspondence(name);
    }

    void refresh() {
        bool any = false;
        for (const MultimodalAnchor* anchor : anchors) {
            const std::string& name = anchor->subject.name;
            auto ct = cap_cross_tgt.find(name);
            auto cr = cap_cross_ref.find(name);
            if (ct == cap_cross_tgt.end() || cr == cap_cross_ref.end()) continue;

            std::vector<mask::AttentionMapPair> tgt_pairs, ref_pairs;
            VectorXd mass;
            int grid_h = 0, grid_w = 0;
            const mask::LayerMask* current = nullptr;
            for (const auto& [self_layer, self_probs] : cap_self_tgt) {
                const LayerId cross_layer{self_layer.block_kind, self_layer.layer_index,
                                          AttnKind::cross_attn};
                auto col = ct->second.find(cross_layer);
                if (col == ct->second.end()) continue;
                if (self_probs.rows() != col->second.size()) continue;
                tgt_pairs.push_back({self_probs, col->second});
                if (mass.size() == 0) mass = VectorXd::Zero(col->second.size());
                if (mass.size() == col->second.size()) mass += col->second;
                auto grid = cap_grid.find(self_layer);
                if (grid != cap_grid.end() && grid_h == 0) {
                    grid_h = grid->second.first;
                    grid_w = grid->second.second;
                }
                if (current == nullptr) {
                    auto lm = masks.layer_masks.at(name).find(self_layer);
                    if (lm != masks.layer_masks.at(name).end()) current = &lm->second;
                }
                auto rcol = cr->second.find(cross_layer);
                for (size_t ai = 0; ai < anchors.size(); ++ai) {
                    if (anchors[ai] != anchor) continue;
                    auto rself = cap_self_ref[ai].find(self_layer);
                    if (rself != cap_self_ref[ai].end() && rcol != cr->second.end() &&
                        rself->second.rows() == rcol->second.size())
                        ref_pairs.push_back({rself->second, rcol->second});
                }
            }
            if (tgt_pairs.empty() || ref_pairs.empty() || grid_h == 0) continue;

            if (cfg->mask_refine == MaskRefineMode::automatic) {
                if (current == nullptr) continue;
                const VectorXd mean_mass = mass / static_cast<double>(tgt_pairs.size());
                if (!mask::should_refine(current->values, mean_mass, cfg->drift_threshold))
                    continue;
            }

            const mask::SemanticMap tgt_map = mask::semantic_map(tgt_pairs, cfg->semantic_power);
            const mask::SemanticMap ref_map = mask::semantic_map(ref_pairs, cfg->semantic_power);
            const mask::OtsuResult tgt_bin = mask::otsu_binarize(tgt_map.values);
            const mask::OtsuResult ref_bin = mask::otsu_binarize(ref_map.values);
            apply_refined_masks(name, tgt_bin.binary, ref_bin.binary, grid_h, grid_w);
            any = true;
        }
        if (any) {
            mask::rebuild_fusion_maps(masks, cfg->union_mode);
            refinement_triggered = true;
        }
    }
};

ProcessorRegistry::Processor make_self_processor(std::shared_ptr<SceneContext> ctx) {
    return [ctx](const AttentionBatch& b) -> std::vector<MatrixXd> {
        ctx->maybe_refresh(b.step_index);
        const int n = b.batch_size();
        if (ctx->refining() && b.is_cond && b.layer.block_kind == BlockKind::decoder) {
            ctx->cap_self_tgt[b.layer] = plain_probs(*b.Q[n - 1], *b.K[n - 1], b.scale);
            for (int i = 0; i + 1 < n; ++i)
                ctx->cap_self_ref[i][b.layer] = plain_probs(*b.Q[i], *b.K[i], b.scale);
            ctx->cap_grid[b.layer] = {b.grid_h, b.grid_w};
            ctx->capture_step = b.step_index;
        }
        if (!ctx->cfg->mmsa_enabled) return {};
        if (ctx->cfg->mmsa_layers == LayerScope::decoder &&
            b.layer.block_kind != BlockKind::decoder)
            return {};

        std::vector<MatrixXd> out(n);
        for (int i = 0; i + 1 < n; ++i)
            out[i] = attn::vanilla_attention(attn::AttentionInputs{*b.Q[i], *b.K[i], *b.V[i], b.scale});

        std::vector<attn::ReferenceFeatures> refs;
        refs.reserve(ctx->anchors.size());
        for (size_t i = 0; i < ctx->anchors.size(); ++i) {
            const std::string& name = ctx->anchors[i]->subject.name;
            attn::ReferenceFeatures rf;
            rf.subject = name;
            rf.K = *b.K[i];
            rf.V = *b.V[i];
            rf.mask = ctx->masks.correspondence.at(name).at(b.layer).values;
            rf.timestep = b.step_index;
            refs.push_back(std::move(rf));
        }
        const uint64_t dropout_seed =
            derive_seed(derive_seed(ctx->cfg->seed, "dropout"), b.layer.str(),
                        static_cast<uint64_t>(b.step_index));
        out[n - 1] = attn::mmsa(*b.Q[n - 1], *b.K[n - 1], *b.V[n - 1], refs, ctx->cfg->dropout,
                                dropout_seed);
        if (b.is_cond) ctx->mmsa_active.insert(b.layer.str());
        return out;
    };
}

ProcessorRegistry::Processor make_cross_processor(std::shared_ptr<SceneContext> ctx) {
    return [ctx](const AttentionBatch& b) -> std::vector<MatrixXd> {
        ctx->maybe_refresh(b.step_index);
        const int n = b.batch_size();
        if (ctx->refining() && b.is_cond && b.layer.block_kind == BlockKind::decoder) {
            for (size_t i = 0; i < ctx->anchors.size(); ++i) {
                const std::string& name = ctx->anchors[i]->subject.name;
                const MatrixXd tgt = plain_probs(*b.Q[n - 1], *b.K[i], b.scale);
                ctx->cap_cross_tgt[name][b.layer] = tgt.rowwise().mean();
                const MatrixXd ref = plain_probs(*b.Q[i], *b.K[i], b.scale);
                ctx->cap_cross_ref[name][b.layer] = ref.rowwise().mean();
            }
            ctx->capture_step = b.step_index;
        }
        if (!ctx->cfg->mmca_enabled) return {};
        if (ctx->cfg->mmca_layers == LayerScope::decoder &&
            b.layer.block_kind != BlockKind::decoder)
            return {};

        std::vector<MatrixXd> out(n);
        for (int i = 0; i + 1 < n; ++i)
            out[i] = attn::vanilla_attention(attn::AttentionInputs{*b.Q[i], *b.K[i], *b.V[i], b.scale});

        const MatrixXd vanilla = attn::vanilla_attention(
            attn::AttentionInputs{*b.Q[n - 1], *b.K[n - 1], *b.V[n - 1], b.scale});
        std::vector<MatrixXd> per_subject;
        per_subject.reserve(ctx->anchors.size());
        for (size_t i = 0; i < ctx->anchors.size(); ++i) {
            const std::string& name = ctx->anchors[i]->subject.name;
            const VectorXd& m = ctx->masks.layer_masks.at(name).at(b.layer).values;
            per_subject.push_back(attn::mmca_single(*b.Q[n - 1], *b.K[i], *b.V[i], m));
        }
        attn::FusionWeights w;
        w.lambda = ctx->cfg->lambda;
        w.epsilon = ctx->cfg->epsilon;
        w.mask_union = ctx->masks.union_mask.at(b.layer);
        w.mask_sum = ctx->masks.sum_map.at(b.layer);
        out[n - 1] = attn::mmca_fuse(per_subject, vanilla, w);
        if (b.is_cond) ctx->mmca_active.insert(b.layer.str());
        return out;
    };
}

json box_to_json(const Box& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

}  // namespace

json RenderConfig::to_json() const {
    json j;
    j["steps"] = steps;
    j["guidance_scale"] = guidance_scale;
    j["width"] = width;
    j["height"] = height;
    j["lambda"] = lambda;
    j["dropout"] = dropout;
    j["mmsa_enabled"] = mmsa_enabled;
    j["mmca_enabled"] = mmca_enabled;
    j["mmsa_layers"] = to_string(mmsa_layers);
    j["mmca_layers"] = to_string(mmca_layers);
    j["mask_refine"] = to_string(mask_refine);
    j["drift_threshold"] = drift_threshold;
    j["union_mode"] = to_string(union_mode);
    j["use_raw_prompts"] = use_raw_prompts;
    j["style_suffix"] = style_suffix;
    j["seed"] = seed;
    j["workers"] = workers;
    j["fail_fast"] = fail_fast;
    j["semantic_power"] = semantic_power;
    j["epsilon"] = epsilon;
    return j;
}

RenderConfig RenderConfig::from_json(const json& j) {
    RenderConfig c;
    c.steps = j.value("steps", c.steps);
    c.guidance_scale = j.value("guidance_scale", c.guidance_scale);
    c.width = j.value("width", c.width);
    c.height = j.value("height", c.height);
    c.lambda = j.value("lambda", c.lambda);
    c.dropout = j.value("dropout", c.dropout);
    c.mmsa_enabled = j.value("mmsa_enabled", c.mmsa_enabled);
    c.mmca_enabled = j.value("mmca_enabled", c.mmca_enabled);
    if (j.contains("mmsa_layers")) c.mmsa_layers = layer_scope_from_string(j.at("mmsa_layers"));
    if (j.contains("mmca_layers")) c.mmca_layers = layer_scope_from_string(j.at("mmca_layers"));
    if (j.contains("mask_refine")) c.mask_refine = refine_mode_from_string(j.at("mask_refine"));
    c.drift_threshold = j.value("drift_threshold", c.drift_threshold);
    if (j.contains("union_mode")) c.union_mode = union_mode_from_string(j.at("union_mode"));
    c.use_raw_prompts = j.value("use_raw_prompts", c.use_raw_prompts);
    c.style_suffix = j.value("style_suffix", c.style_suffix);
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    c.fail_fast = j.value("fail_fast", c.fail_fast);
    c.semantic_power = j.value("semantic_power", c.semantic_power);
    c.epsilon = j.value("epsilon", c.epsilon);
    return c;
}

void RenderConfig::validate(const DenoiserBackend& backend) const {
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (guidance_scale < 0.0) throw ConfigError("guidance_scale must be >= 0");
    if (width <= 0 || height <= 0) throw ConfigError("image dimensions must be positive");
    const int f = backend.latent_factor();
    if (width % f != 0 || height % f != 0)
        throw ConfigError("image dimensions must be divisible by the backend latent factor " +
                          std::to_string(f));
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must lie in [0, 1]");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    if (drift_threshold <= 0.0 || drift_threshold >= 1.0)
        throw ConfigError("drift_threshold must lie in (0, 1)");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (semantic_power < 1) throw ConfigError("semantic_power must be >= 1");
    if (epsilon <= 0.0) throw ConfigError("epsilon must be positive");
}

MultimodalAnchor generate_anchor(const SubjectSpec& subject, uint64_t seed,
                                 DenoiserBackend& backend, Segmenter& segmenter,
                                 const RenderConfig& config) {
    MultimodalAnchor a;
    a.subject = subject;
    a.portrait_seed = seed;
    a.full_prompt = apply_style(subject.portrait_prompt, config.style_suffix);
    a.text_embedding = backend.encode_text(a.full_prompt);

    StreamCondition cond;
    cond.prompt = a.full_prompt;
    cond.text = a.text_embedding;
    cond.uncond = backend.encode_text("");
    Latents lat = backend.init_latents(seed, config.height, config.width);
    const int base_h = lat.grid_h;
    const int base_w = lat.grid_w;
    ProcessorRegistry vanilla;
    auto outs = backend.run_steps({std::move(lat)}, {cond}, config.steps, config.guidance_scale,
                                  vanilla);
    a.portrait = backend.decode(outs.at(0));

    mask::MaskSet set = mask::segment_subjects(a.portrait, {subject}, segmenter);
    a.pixel_mask = set.pixel_masks.at(subject.name);
    a.mask_found = a.pixel_mask.found;
    a.crop_box = a.mask_found ? a.pixel_mask.box : Box{0, 0, a.portrait.width, a.portrait.height};
    for (const LayerId& layer : backend.layer_catalog()) {
        auto [gh, gw] = backend.layer_grid(layer, base_h, base_w);
        a.layer_masks[layer] = mask::downsample_mask(a.pixel_mask, layer, gh, gw);
    }
    return a;
}

std::pair<Image, mask::MaskSet> rehearsal_render(const SceneSpec& scene, uint64_t seed,
                                                 DenoiserBackend& backend, Segmenter& segmenter,
                                                 const std::vector<SubjectSpec>& present_subjects,
                                                 const RenderConfig& config) {
    const std::string prompt = scene_prompt(scene, config);
    StreamCondition cond;
    cond.prompt = prompt;
    cond.text = backend.encode_text(prompt);
    cond.uncond = backend.encode_text("");
    Latents lat = backend.init_latents(seed, config.height, config.width);
    const int base_h = lat.grid_h;
    const int base_w = lat.grid_w;
    ProcessorRegistry vanilla;
    auto outs = backend.run_steps({std::move(lat)}, {cond}, config.steps, config.guidance_scale,
                                  vanilla);
    Image img = backend.decode(outs.at(0));

    mask::MaskSet set;
    if (!present_subjects.empty()) {
        set = mask::segment_subjects(img, present_subjects, segmenter);
        for (const auto& [name, pm] : set.pixel_masks) {
            for (const LayerId& layer : backend.layer_catalog()) {
                auto [gh, gw] = backend.layer_grid(layer, base_h, base_w);
                set.layer_masks[name][layer] = mask::downsample_mask(pm, layer, gh, gw);
            }
        }
        mask::rebuild_fusion_maps(set, config.union_mode);
    }
    return {std::move(img), std::move(set)};
}

SceneRender render_scene_msd(const SceneSpec& scene,
                             const std::vector<const MultimodalAnchor*>& anchors,
                             const mask::MaskSet& target_masks, uint64_t seed,
                             DenoiserBackend& backend, const RenderConfig& config) {
    if (anchors.empty()) throw InputError("guided render needs at least one reference anchor");
    for (const std::string& name : scene.present_subjects) {
        const bool covered = std::any_of(anchors.begin(), anchors.end(),
                                         [&](const MultimodalAnchor* a) {
                                             return a->subject.name == name;
                                         });
        if (!covered)
            throw PlanIntegrityError("scene " + std::to_string(scene.index) +
                                     " references subject '" + name + "' without an anchor");
    }

    auto ctx = std::make_shared<SceneContext>();
    ctx->cfg = &config;
    ctx->anchors = anchors;
    ctx->masks = target_masks;
    ctx->image_w = config.width;
    ctx->image_h = config.height;
    ctx->cap_self_ref.resize(anchors.size());

    Latents tgt_lat = backend.init_latents(seed, config.height, config.width);
    for (const LayerId& layer : backend.layer_catalog())
        ctx->layer_grids.push_back({layer, backend.layer_grid(layer, tgt_lat.grid_h,
                                                              tgt_lat.grid_w)});
    for (const MultimodalAnchor* a : anchors) {
        const std::string& name = a->subject.name;
        if (!ctx->masks.layer_masks.count(name))
            throw PlanIntegrityError("target masks missing subject '" + name + "'");
        ctx->ref_masks[name] = a->layer_masks;
        ctx->rebuild_correspondence(name);
    }

    const TokenEmbeddings uncond = backend.encode_text("");
    std::vector<Latents> lats;
    std::vector<StreamCondition> conds;
    for (const MultimodalAnchor* a : anchors) {
        lats.push_back(backend.init_latents(a->portrait_seed, config.height, config.width));
        StreamCondition c;
        c.prompt = a->full_prompt;
        c.text = a->text_embedding;
        c.uncond = uncond;
        conds.push_back(std::move(c));
    }
    const std::string prompt = scene_prompt(scene, config);
    StreamCondition tgt_cond;
    tgt_cond.prompt = prompt;
    tgt_cond.text = backend.encode_text(prompt);
    tgt_cond.uncond = uncond;
    lats.push_back(std::move(tgt_lat));
    conds.push_back(std::move(tgt_cond));

    ProcessorRegistry reg;
    reg.set_self_processor(make_self_processor(ctx));
    reg.set_cross_processor(make_cross_processor(ctx));
    auto outs = backend.run_steps(std::move(lats), conds, config.steps, config.guidance_scale,
                                  reg);

    SceneRender r;
    r.scene = scene;
    r.seed = seed;
    r.prompt_used = prompt;
    r.final_image = backend.decode(outs.back());
    r.target_masks = std::move(ctx->masks);
    if (ctx->refinement_triggered) r.flags.push_back("RefinementTriggered");
    r.mmsa_layers_active.assign(ctx->mmsa_active.begin(), ctx->mmsa_active.end());
    r.mmca_layers_active.assign(ctx->mmca_active.begin(), ctx->mmca_active.end());
    return r;
}

std::string sanitize_filename(const std::string& name) {
    std::string out;
    out.reserve(name.size());
    for (char ch : name) {
        const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
                        (ch >= '0' && ch <= '9') || ch == '.' || ch == '-' || ch == '_';
        out.push_back(ok ? ch : '_');
    }
    return out.empty() ? "unnamed" : out;
}

std::string run_id_for(const StoryPlan& plan, const RenderConfig& config) {
    return "run-" + hex64(plan_hash(plan)).substr(0, 8) + "-" + std::to_string(config.seed);
}

StoryResult run_story(const StoryPlan& plan, const RenderConfig& config, DenoiserBackend& backend,
                      Segmenter& segmenter, const std::string& out_dir) {
    validate_story_plan(plan);
    config.validate(backend);

    const uint64_t phash = plan_hash(plan);
    const std::string run_id = run_id_for(plan, config);
    const fs::path run_dir = fs::path(out_dir) / run_id;
    fs::create_directories(run_dir / "anchors");
    fs::create_directories(run_dir / "rehearsal");
    fs::create_directories(run_dir / "scenes");
    fs::create_directories(run_dir / "masks");

    // Completed scenes from an interrupted run of the same plan and config
    // are kept as-is; everything else renders again.
    std::map<int, json> reusable;
    const fs::path manifest_path = run_dir / "manifest.json";
    if (fs::exists(manifest_path)) {
        try {
            const json old = read_json_file(manifest_path);
            if (old.value("schema", "") == "dreamstory.run.v1" &&
                old.value("plan_hash", "") == hex64(phash) && old.contains("config") &&
                old.at("config") == config.to_json() && old.contains("scenes")) {
                for (const json& rec : old.at("scenes")) {
                    if (!rec.value("ok", false)) continue;
                    const int idx = rec.value("index", -1);
                    const fs::path image = run_dir / rec.value("image", "");
                    const fs::path rehearsal = run_dir / rec.value("rehearsal", "");
                    if (idx >= 0 && fs::exists(image) && fs::exists(rehearsal))
                        reusable.emplace(idx, rec);
                }
            }
        } catch (const std::exception& e) {
            log::warn("ignoring unreadable manifest", e.what());
        }
    }
    if (!reusable.empty())
        log::info("resuming run", std::to_string(reusable.size()) + " scene(s) already complete");

    // The plan travels with the run so evaluation can rebuild subject
    // specs and prompts without the original inputs.
    write_json_atomic(run_dir / "plan.json", plan.to_json());

    json timings;
    timings["schema"] = "dreamstory.timings.v1";
    timings["anchors_ms"] = json::object();
    timings["scenes_ms"] = json::object();
    const auto run_start = std::chrono::steady_clock::now();
    const auto ms_since = [](std::chrono::steady_clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    };

    std::map<std::string, MultimodalAnchor> anchors;
    json anchor_records = json::array();
    for (const SubjectSpec& subject : plan.subjects) {
        const uint64_t aseed = derive_seed(config.seed, "anchor/" + subject.name);
        const auto t0 = std::chrono::steady_clock::now();
        MultimodalAnchor a = generate_anchor(subject, aseed, backend, segmenter, config);
        const std::string stem = sanitize_filename(subject.name);
        write_png(run_dir / "anchors" / (stem + ".png"), a.portrait);
        write_png(run_dir / "anchors" / (stem + "_mask.png"), a.pixel_mask.to_image());

        json rec;
        rec["subject"] = subject.name;
        rec["portrait"] = "anchors/" + stem + ".png";
        rec["mask"] = "anchors/" + stem + "_mask.png";
        rec["seed"] = hex64(aseed);
        rec["crop_box"] = box_to_json(a.crop_box);
        rec["mask_found"] = a.mask_found;
        rec["flags"] = a.mask_found ? json::array() : json::array({"EmptyAnchorMask"});
        anchor_records.push_back(std::move(rec));
        if (!a.mask_found)
            log::warn("anchor mask not found", subject.name + " renders unguided");
        timings["anchors_ms"][subject.name] = ms_since(t0);
        anchors.emplace(subject.name, std::move(a));
    }

    const int n_scenes = static_cast<int>(plan.scenes.size());
    std::vector<json> records(static_cast<size_t>(n_scenes));
    std::mutex mu;

    const auto snapshot = [&](bool complete) {
        json manifest;
        manifest["schema"] = "dreamstory.run.v1";
        manifest["run_id"] = run_id;
        manifest["plan_hash"] = hex64(phash);
        manifest["backend"] = backend.backend_id();
        manifest["config"] = config.to_json();
        manifest["anchors"] = anchor_records;
        json scenes = json::array();
        for (const json& rec : records)
            if (!rec.is_null()) scenes.push_back(rec);
        manifest["scenes"] = std::move(scenes);
        manifest["complete"] = complete;
        write_json_atomic(manifest_path, manifest);
        return manifest;
    };

    const auto render_one = [&](const SceneSpec& scene) -> json {
        const uint64_t sseed = derive_seed(config.seed, "scene", static_cast<uint64_t>(scene.index));
        json rec;
        rec["index"] = scene.index;
        rec["seed"] = hex64(sseed);
        try {
            std::vector<SubjectSpec> present;
            for (const std::string& name : scene.present_subjects)
                present.push_back(*plan.find_subject(name));

            auto [reh_img, masks] =
                rehearsal_render(scene, sseed, backend, segmenter, present, config);
            const std::string reh_rel = "rehearsal/" + std::to_string(scene.index) + ".png";
            write_png(run_dir / reh_rel, reh_img);

            std::vector<std::string> flags;
            for (const std::string& name : masks.missing_subjects)
                flags.push_back("MissingSubject:" + name);

            const bool skip = present.empty() || (!config.mmsa_enabled && !config.mmca_enabled);
            Image final_img;
            std::string prompt;
            json mmsa_layers = json::array();
            json mmca_layers = json::array();
            if (skip) {
                final_img = reh_img;
                prompt = scene_prompt(scene, config);
                flags.push_back("MsdSkipped");
            } else {
                std::vector<const MultimodalAnchor*> refs;
                for (const std::string& name : scene.present_subjects)
                    refs.push_back(&anchors.at(name));
                SceneRender sr = render_scene_msd(scene, refs, masks, sseed, backend, config);
                final_img = std::move(sr.final_image);
                prompt = sr.prompt_used;
                masks = std::move(sr.target_masks);
                for (const std::string& f : sr.flags) flags.push_back(f);
                for (const std::string& l : sr.mmsa_layers_active) mmsa_layers.push_back(l);
                for (const std::string& l : sr.mmca_layers_active) mmca_layers.push_back(l);
            }
            const std::string img_rel = "scenes/" + std::to_string(scene.index) + ".png";
            write_png(run_dir / img_rel, final_img);

            json mask_paths = json::object();
            if (!present.empty()) {
                const fs::path mask_dir = run_dir / "masks" / std::to_string(scene.index);
                fs::create_directories(mask_dir);
                for (const auto& [name, pm] : masks.pixel_masks) {
                    const std::string rel = "masks/" + std::to_string(scene.index) + "/" +
                                            sanitize_filename(name) + ".png";
                    write_png(run_dir / rel, pm.to_image());
                    mask_paths[name] = rel;
                }
            }

            rec["prompt_used"] = prompt;
            rec["rehearsal"] = reh_rel;
            rec["image"] = img_rel;
            rec["masks"] = mask_paths;
            rec["flags"] = flags;
            rec["mmsa_layers"] = mmsa_layers;
            rec["mmca_layers"] = mmca_layers;
            rec["ok"] = true;
            rec["error"] = "";
        } catch (const std::exception& e) {
            rec["ok"] = false;
            rec["error"] = e.what();
            log::error("scene failed", "scene " + std::to_string(scene.index) + ": " + e.what());
        }
        return rec;
    };

    std::vector<int> pending;
    for (int i = 0; i < n_scenes; ++i) {
        const auto it = reusable.find(plan.scenes[i].index);
        if (it != reusable.end())
            records[i] = it->second;
        else
            pending.push_back(i);
    }

    std::exception_ptr fatal;
    if (config.workers <= 1 || pending.size() <= 1) {
        for (int i : pending) {
            const auto t0 = std::chrono::steady_clock::now();
            records[i] = render_one(plan.scenes[i]);
            timings["scenes_ms"][std::to_string(plan.scenes[i].index)] = ms_since(t0);
            snapshot(false);
            if (config.fail_fast && !records[i].value("ok", false)) {
                fatal = std::make_exception_ptr(
                    IOError("scene " + std::to_string(plan.scenes[i].index) +
                            " failed: " + records[i].value("error", "")));
                break;
            }
        }
    } else {
        std::atomic<size_t> next{0};
        std::atomic<bool> abort{false};
        const int n_workers = std::min<int>(config.workers, static_cast<int>(pending.size()));
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w) {
            pool.emplace_back([&] {
                while (true) {
                    const size_t slot = next.fetch_add(1);
                    if (slot >= pending.size() || abort.load()) return;
                    const int i = pending[slot];
                    const auto t0 = std::chrono::steady_clock::now();
                    json rec = render_one(plan.scenes[i]);
                    const double ms = ms_since(t0);
                    std::lock_guard<std::mutex> lock(mu);
                    records[i] = std::move(rec);
                    timings["scenes_ms"][std::to_string(plan.scenes[i].index)] = ms;
                    snapshot(false);
                    if (config.fail_fast && !records[i].value("ok", false)) {
                        abort.store(true);
                        if (!fatal)
                            fatal = std::make_exception_ptr(
                                IOError("scene " + std::to_string(plan.scenes[i].index) +
                                        " failed: " + records[i].value("error", "")));
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    StoryResult result;
    result.run_id = run_id;
    result.out_dir = run_dir.string();
    for (const json& rec : records) {
        if (rec.is_null()) continue;
        if (rec.value("ok", false))
            ++result.scenes_ok;
        else
            ++result.scenes_failed;
    }
    const bool complete = result.scenes_ok == n_scenes;
    result.manifest = snapshot(complete);
    timings["total_ms"] = ms_since(run_start);
    write_json_atomic(run_dir / "timings.json", timings);
    log::info("run finished", run_id + ": " + std::to_string(result.scenes_ok) + "/" +
                                  std::to_string(n_scenes) + " scene(s) rendered");
    if (fatal) std::rethrow_exception(fatal);
    return result;
}

}  // namespace dreamstory
