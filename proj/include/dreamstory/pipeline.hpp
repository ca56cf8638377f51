#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dreamstory/backends.hpp"
#include "dreamstory/mask.hpp"
#include "dreamstory/story.hpp"

namespace dreamstory {

enum class LayerScope { decoder, all };
enum class MaskRefineMode { off, automatic, on };

const char* to_string(LayerScope scope);
const char* to_string(MaskRefineMode mode);
LayerScope layer_scope_from_string(const std::string& s);
MaskRefineMode refine_mode_from_string(const std::string& s);

struct RenderConfig {
    int steps = 50;
    double guidance_scale = 7.0;
    int width = 1280;
    int height = 768;
    double lambda = 0.9;   // text-feature injection weight in the fusion
    double dropout = 0.5;  // reference-mask token dropout rate
    bool mmsa_enabled = true;
    bool mmca_enabled = true;
    LayerScope mmsa_layers = LayerScope::decoder;
    LayerScope mmca_layers = LayerScope::all;
    MaskRefineMode mask_refine = MaskRefineMode::off;
    double drift_threshold = 0.35;
    mask::UnionMode union_mode = mask::UnionMode::union_max;
    bool use_raw_prompts = false;  // ablation: render from unrewritten prompts
    std::string style_suffix;
    uint64_t seed = 0;
    int workers = 1;
    bool fail_fast = false;
    int semantic_power = 4;  // R in the map recursion
    double epsilon = 1e-8;

    nlohmann::json to_json() const;
    static RenderConfig from_json(const nlohmann::json& j);
    // Throws ConfigError on out-of-range values or dimensions the backend
    // cannot map onto its latent grid.
    void validate(const DenoiserBackend& backend) const;
};

// One subject's reference bundle: portrait image, its prompt embedding,
// and the subject's masks, reused across every scene of a run.
struct MultimodalAnchor {
    SubjectSpec subject;
    Image portrait;
    uint64_t portrait_seed = 0;
    std::string full_prompt;  // portrait prompt + style suffix
    TokenEmbeddings text_embedding;
    mask::PixelMask pixel_mask;  // subject within its own portrait
    std::map<LayerId, mask::LayerMask> layer_masks;
    Box crop_box;  // highest-score detection, used by the identity metric
    bool mask_found = true;
};

struct SceneRender {
    SceneSpec scene;
    Image rehearsal_image;
    Image final_image;
    mask::MaskSet target_masks;
    uint64_t seed = 0;
    std::string prompt_used;
    std::vector<std::string> flags;
    std::vector<std::string> mmsa_layers_active;
    std::vector<std::string> mmca_layers_active;
    double elapsed_ms = 0.0;
};

struct StoryResult {
    std::string run_id;
    std::string out_dir;
    nlohmann::json manifest;
    int scenes_ok = 0;
    int scenes_failed = 0;
};

MultimodalAnchor generate_anchor(const SubjectSpec& subject, uint64_t seed,
                                 DenoiserBackend& backend, Segmenter& segmenter,
                                 const RenderConfig& config);

// Vanilla render of the scene with the seed later reused by the guided
// pass; the masks come from segmenting this rehearsal image.
std::pair<Image, mask::MaskSet> rehearsal_render(const SceneSpec& scene, uint64_t seed,
                                                 DenoiserBackend& backend, Segmenter& segmenter,
                                                 const std::vector<SubjectSpec>& present_subjects,
                                                 const RenderConfig& config);

// Joint batch denoising: every reference stream re-derives its anchor's
// portrait trajectory (same seed and prompt) so the target reads
// timestep-aligned reference features at each configured attention layer.
SceneRender render_scene_msd(const SceneSpec& scene,
                             const std::vector<const MultimodalAnchor*>& anchors,
                             const mask::MaskSet& target_masks, uint64_t seed,
                             DenoiserBackend& backend, const RenderConfig& config);

// Whole-story execution. The manifest is written after every scene so an
// interrupted run resumes where it stopped; rerunning a complete run is a
// no-op re-emit.
StoryResult run_story(const StoryPlan& plan, const RenderConfig& config,
                      DenoiserBackend& backend, Segmenter& segmenter, const std::string& out_dir);

std::string run_id_for(const StoryPlan& plan, const RenderConfig& config);
std::string sanitize_filename(const std::string& name);

}  // namespace dreamstory
