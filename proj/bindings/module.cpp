// Python surface: the numeric attention/mask primitives plus plan and
// render entry points wired to the scripted LLM and the mock backend.
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dreamstory/attention.hpp"
#include "dreamstory/director.hpp"
#include "dreamstory/errors.hpp"
#include "dreamstory/hash.hpp"
#include "dreamstory/llm.hpp"
#include "dreamstory/mask.hpp"
#include "dreamstory/mock_backend.hpp"
#include "dreamstory/pipeline.hpp"
#include "dreamstory/templates.hpp"

namespace py = pybind11;
using namespace dreamstory;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Keeps python renders byte-identical to CLI runs with --backend mock.
constexpr uint64_t kBackendWeightSeed = 0x5EED5EEDULL;

MatrixXd py_mmsa(const MatrixXd& Q, const MatrixXd& K_tgt, const MatrixXd& V_tgt,
                 const std::vector<std::tuple<std::string, MatrixXd, MatrixXd, MatrixXd>>& refs,
                 double dropout_rate, uint64_t seed) {
    std::vector<attn::ReferenceFeatures> features;
    features.reserve(refs.size());
    for (const auto& [name, K, V, mask] : refs)
        features.push_back({name, K, V, mask, -1});
    return attn::mmsa(Q, K_tgt, V_tgt, features, dropout_rate, seed);
}

MatrixXd py_mmca_fuse(const std::vector<MatrixXd>& outputs, const MatrixXd& o_vanilla,
                      const VectorXd& mask_union, const VectorXd& mask_sum, double lambda,
                      double epsilon) {
    attn::FusionWeights w;
    w.lambda = lambda;
    w.epsilon = epsilon;
    w.mask_union = mask_union;
    w.mask_sum = mask_sum;
    return attn::mmca_fuse(outputs, o_vanilla, w);
}

py::dict py_otsu(const VectorXd& values) {
    const mask::OtsuResult r = mask::otsu_binarize(values);
    py::dict out;
    out["binary"] = r.binary;
    out["threshold"] = r.threshold;
    out["degenerate"] = r.degenerate;
    return out;
}

VectorXd py_semantic_map(const std::vector<std::pair<MatrixXd, VectorXd>>& layers, int power) {
    std::vector<mask::AttentionMapPair> pairs;
    pairs.reserve(layers.size());
    for (const auto& [self_attn, cross_col] : layers) {
        mask::AttentionMapPair p;
        p.self_attn = self_attn;
        p.cross_attn_col = cross_col;
        pairs.push_back(std::move(p));
    }
    return mask::semantic_map(pairs, power).values;
}

MatrixXd py_correspondence(const VectorXd& target_map, const VectorXd& reference_map) {
    const mask::SemanticMap tgt{target_map, "target"};
    const mask::SemanticMap ref{reference_map, "reference"};
    return mask::correspondence_matrix(tgt, ref).values;
}

std::string py_build_plan(const std::string& story_text, const std::string& llm_spec,
                          int n_scenes, int max_subjects) {
    auto llm = make_llm_client(llm_spec);
    DirectorConfig cfg;
    cfg.max_subjects = max_subjects;
    if (n_scenes > 0) cfg.n_scenes = n_scenes;
    StoryDirector director(*llm, TemplateRegistry::builtin(), cfg);
    return director.build_story_plan(story_text).to_json().dump(2);
}

std::string py_run_story(const std::string& plan_json, const std::string& out_dir,
                         const std::string& config_json) {
    const StoryPlan plan = StoryPlan::from_json(nlohmann::json::parse(plan_json));
    const RenderConfig config = RenderConfig::from_json(nlohmann::json::parse(config_json));
    MockDenoiser backend(kBackendWeightSeed);
    MockSegmenter segmenter;
    const StoryResult result = run_story(plan, config, backend, segmenter, out_dir);
    return result.manifest.dump(2);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "subject-consistent story-to-image rendering primitives";

    py::register_exception<Error>(m, "DreamstoryError");

    m.def("masked_softmax", &attn::masked_softmax, py::arg("logits"), py::arg("mask"),
          "Row softmax where zero-mask entries come out exactly zero.");
    m.def(
        "vanilla_attention",
        [](const MatrixXd& Q, const MatrixXd& K, const MatrixXd& V) {
            return attn::vanilla_attention(attn::AttentionInputs::make(Q, K, V));
        },
        py::arg("q"), py::arg("k"), py::arg("v"), "softmax(Q K^T / sqrt(d)) V.");
    m.def("token_dropout", &attn::token_dropout, py::arg("mask"), py::arg("rate"),
          py::arg("seed"), "Seeded dropout over the 1-entries of a binary mask.");
    m.def("mmsa", &py_mmsa, py::arg("q"), py::arg("k_target"), py::arg("v_target"),
          py::arg("references"), py::arg("dropout_rate") = 0.0, py::arg("seed") = 0,
          "Masked mutual self-attention; references are (name, K, V, mask) tuples.");
    m.def("mmca_fuse", &py_mmca_fuse, py::arg("subject_outputs"), py::arg("vanilla_output"),
          py::arg("mask_union"), py::arg("mask_sum"), py::arg("lambda_") = 0.9,
          py::arg("epsilon") = 1e-8,
          "Mask-weighted fusion of per-subject cross-attention outputs.");

    m.def("otsu", &py_otsu, py::arg("values"),
          "Histogram-split binarization; returns binary, threshold, degenerate.");
    m.def("semantic_map", &py_semantic_map, py::arg("layers"), py::arg("power") = 4,
          "Per-token subject relevance from (self_attention, cross_attention_column) "
          "layer pairs.");
    m.def("correspondence", &py_correspondence, py::arg("target_map"), py::arg("reference_map"),
          "Binary rank-1 matrix linking target tokens to reference tokens.");

    m.def(
        "derive_seed",
        [](uint64_t seed, const std::string& label) { return derive_seed(seed, label); },
        py::arg("seed"), py::arg("label"), "Stable labeled sub-seed derivation.");

    m.def("build_plan", &py_build_plan, py::arg("story_text"), py::arg("llm_spec"),
          py::arg("n_scenes") = 0, py::arg("max_subjects") = 8,
          "Plan a story with an LLM spec such as 'scripted:PATH' or 'replay:PATH'; "
          "returns the plan as a JSON string.");
    m.def("run_story", &py_run_story, py::arg("plan_json"), py::arg("out_dir"),
          py::arg("config_json") = std::string("{}"),
          "Render a plan with the mock backend; returns the run manifest as a JSON "
          "string.");
}
