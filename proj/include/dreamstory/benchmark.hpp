#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dreamstory/backends.hpp"
#include "dreamstory/metrics.hpp"
#include "dreamstory/subject.hpp"
#include "dreamstory/templates.hpp"

namespace dreamstory {

enum class ReviewStatus { auto_accepted, approved, rejected };
const char* to_string(ReviewStatus status);
ReviewStatus review_status_from_string(const std::string& s, const std::string& location);

struct BenchmarkCase {
    std::string case_id;
    int k_subjects = 0;  // in {0,1,2,3}
    std::vector<SubjectSpec> subjects;
    std::string scene_prompt;
    int word_count = 0;
    ReviewStatus review_status = ReviewStatus::auto_accepted;

    nlohmann::json to_json() const;
    static BenchmarkCase from_json(const nlohmann::json& j, const std::string& location);
};

struct BenchmarkManifest {
    std::vector<BenchmarkCase> cases;
    std::vector<SubjectSpec> pool;
    std::string generator_model_id;
    int word_limit = 40;
    uint64_t seed = 0;

    std::map<int, int> group_counts() const;
    nlohmann::json to_json() const;  // schema dreamstory.bench.v1
};

struct BenchConfig {
    int pool_size = 10;
    std::map<int, int> group_sizes = {{0, 10}, {1, 10}, {2, 10}, {3, 10}};
    int word_limit = 40;
    int retries = 3;
    uint64_t seed = 0;
};

// Asks the LLM for n distinct subjects; responses repeating an accepted
// name or portrait prompt are filtered and the shortfall re-requested with
// the taken names listed as avoid lines. Throws PoolExhausted when the
// retry budget runs out before the pool is full.
std::vector<SubjectSpec> gen_subject_pool(LLMClient& llm, int n, const TemplateRegistry& registry,
                                          int retries = 3);

// Each case samples k distinct pool subjects (seeded) and asks for a scene
// prompt featuring exactly those. Word-limit and exclusivity violations
// are re-asked, then the case regenerates once, then it is kept with
// review_status=rejected.
std::vector<BenchmarkCase> gen_cases(const std::vector<SubjectSpec>& pool, int k_subjects,
                                     int n_cases, int word_limit, LLMClient& llm,
                                     const TemplateRegistry& registry, uint64_t seed,
                                     int retries = 3);

BenchmarkManifest build_benchmark(LLMClient& llm, const TemplateRegistry& registry,
                                  const BenchConfig& config);

void export_manifest(const BenchmarkManifest& manifest, const std::string& path);

// Validates every manifest invariant; violations throw SchemaError with a
// location inside the file.
BenchmarkManifest import_manifest(const std::string& path);

struct AnnotationRun {
    std::map<AnnotationKey, bool> predictions;
    std::map<AnnotationKey, bool> ground_truth;
    std::map<std::string, int> case_k;
    std::string model_id;
};

// Presence-annotation driver over non-rejected cases: each case queries
// its own subjects plus distractors sampled from the rest of the pool
// (seeded by case id) up to queries_per_case total questions.
AnnotationRun annotate_cases(const BenchmarkManifest& manifest, LLMClient& llm,
                             const TemplateRegistry& registry, int queries_per_case = 4,
                             int retries = 3);

}  // namespace dreamstory
