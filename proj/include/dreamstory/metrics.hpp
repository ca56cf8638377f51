#pragma once

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dreamstory/backends.hpp"
#include "dreamstory/pipeline.hpp"

namespace dreamstory {

struct DetectionLogEntry {
    std::string subject;
    Box box;
    double score = 0.0;
    bool found = false;
};

struct DSResult {
    double value = 0.0;
    bool found = false;
    Box box;
    double score = 0.0;
};

struct SceneMetrics {
    std::string id;
    int k_subjects = 0;
    std::optional<double> aes;
    std::optional<double> clip_t;
    std::optional<double> dc_ds;  // unset for subject-free scenes or when deselected
    std::map<std::string, double> ds_per_subject;
    std::vector<DetectionLogEntry> detection_log;

    std::optional<double> ds_mean() const;
    nlohmann::json to_json() const;
};

struct MetricsSelection {
    bool aes = true;
    bool clip_t = true;
    bool ds = true;
    bool dc_ds = true;

    // Comma-separated subset of aes,clip_t,ds,dc_ds; unknown names are a
    // ConfigError.
    static MetricsSelection parse(const std::string& csv);
};

// Identity similarity of the subject between the scene and its anchor:
// crop the highest-score detection of the subject's type token and compare
// against the anchor's own crop. No detection scores 0 with found=false.
DSResult compute_ds(const Image& scene_image, const MultimodalAnchor& anchor, Detector& detector,
                    PerceptualSimilarity& sim);

// Multi-subject identity score: detections are assigned to subjects
// greedily by score, an assignment is rejected when its box overlaps an
// already-assigned box with IoU > 0.5, and any unassigned subject zeroes
// the whole score; otherwise the mean of per-subject similarities.
double compute_dc_ds(const Image& scene_image, const std::vector<const MultimodalAnchor*>& anchors,
                     Detector& detector, PerceptualSimilarity& sim,
                     std::vector<DetectionLogEntry>* log = nullptr);

double compute_clip_t(const Image& scene_image, const std::string& text, TextImageScorer& scorer);
double compute_aes(const Image& scene_image, AestheticScorer& scorer);

struct AnnotationKey {
    std::string case_id;
    std::string subject;
    auto operator<=>(const AnnotationKey&) const = default;
};

struct AnnotationAccuracy {
    std::map<int, double> decision_pct;  // by subject count of the case
    std::map<int, int> decision_n;
    std::map<int, double> scene_pct;  // exact-match over a case's decisions
    std::map<int, int> scene_n;
    double overall_decision_pct = 0.0;
    double overall_scene_pct = 0.0;

    nlohmann::json to_json() const;
};

// Per-decision accuracy grouped by the case's subject count, plus a
// per-case exact-match rate. Throws KeyMismatch when a prediction has no
// ground truth or its case has no recorded subject count.
AnnotationAccuracy annotation_accuracy(const std::map<AnnotationKey, bool>& predictions,
                                       const std::map<AnnotationKey, bool>& ground_truth,
                                       const std::map<std::string, int>& case_k);

// Published accuracy row kept for table formatting comparisons.
inline constexpr double kReferenceAnnotationAccuracy[4] = {100.00, 98.86, 95.29, 91.28};
inline constexpr const char* kReferenceAnnotationModel = "ChatGPT4";

struct GroupAggregate {
    int n = 0;
    std::optional<double> aes;
    std::optional<double> clip_t;
    std::optional<double> ds;
    std::optional<double> dc_ds;

    nlohmann::json to_json() const;
};

struct MetricsReport {
    std::vector<SceneMetrics> scenes;
    std::map<int, GroupAggregate> groups;  // keyed by k_subjects
    GroupAggregate overall;
    std::map<std::string, AnnotationAccuracy> annotation;  // keyed by model id

    nlohmann::json to_json() const;  // schema dreamstory.metrics.v1
};

// Means per subject-count group; DS aggregates flatten per-subject values.
MetricsReport aggregate_report(const std::vector<SceneMetrics>& scenes);

std::string render_metrics_table(const MetricsReport& report);
std::string render_annotation_table(const std::map<std::string, AnnotationAccuracy>& by_model);

struct EvalBackends {
    Detector& detector;
    PerceptualSimilarity& sim;
    TextImageScorer& clip;
    AestheticScorer& aes;
};

// Scores a finished run directory (manifest.json + plan.json + images).
// Scene indices in `exclude` are skipped, e.g. rejected benchmark cases.
MetricsReport evaluate_run(const std::string& run_dir, EvalBackends backends,
                           const MetricsSelection& selection,
                           const std::vector<int>& exclude = {});

}  // namespace dreamstory
