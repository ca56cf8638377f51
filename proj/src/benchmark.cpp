#include "dreamstory/benchmark.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <set>
#include <sstream>

#include "dreamstory/director.hpp"
#include "dreamstory/errors.hpp"
#include "dreamstory/hash.hpp"
#include "dreamstory/json_util.hpp"
#include "dreamstory/log.hpp"

namespace dreamstory {

using nlohmann::json;

namespace {

std::string lower(std::string v) {
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return v;
}

bool mentions_subject(const std::string& prompt, const SubjectSpec& s) {
    if (contains_word(prompt, s.name)) return true;
    return !s.short_descriptor.empty() &&
           lower(prompt).find(lower(s.short_descriptor)) != std::string::npos;
}

std::string case_id_for(int k, int i) {
    std::ostringstream os;
    os << "k" << k << "-";
    if (i < 100) os << (i < 10 ? "00" : "0");
    os << i;
    return os.str();
}

// First k entries of a seeded partial Fisher-Yates shuffle over [0, n).
std::vector<size_t> sample_indices(size_t n, size_t k, uint64_t seed) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (size_t i = 0; i < k && i + 1 < n; ++i)
        std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(std::min(n, k));
    return idx;
}

std::string avoid_lines(const std::vector<SubjectSpec>& taken) {
    std::string out;
    for (const SubjectSpec& s : taken) out += "AVOID: " + s.name + "\n";
    return out;
}

std::string subject_lines(const std::vector<SubjectSpec>& subjects) {
    std::string out;
    for (const SubjectSpec& s : subjects) out += "SUBJECTS: " + s.short_descriptor + "\n";
    return out;
}

}  // namespace

const char* to_string(ReviewStatus status) {
    switch (status) {
        case ReviewStatus::auto_accepted: return "auto";
        case ReviewStatus::approved: return "approved";
        case ReviewStatus::rejected: return "rejected";
    }
    return "auto";
}

ReviewStatus review_status_from_string(const std::string& s, const std::string& location) {
    if (s == "auto") return ReviewStatus::auto_accepted;
    if (s == "approved") return ReviewStatus::approved;
    if (s == "rejected") return ReviewStatus::rejected;
    throw SchemaError("unknown review status '" + s + "'", location);
}

json BenchmarkCase::to_json() const {
    json j;
    j["case_id"] = case_id;
    j["k_subjects"] = k_subjects;
    json subs = json::array();
    for (const SubjectSpec& s : subjects) subs.push_back(s.to_json());
    j["subjects"] = std::move(subs);
    j["scene_prompt"] = scene_prompt;
    j["word_count"] = word_count;
    j["review_status"] = to_string(review_status);
    return j;
}

BenchmarkCase BenchmarkCase::from_json(const json& j, const std::string& location) {
    if (!j.is_object()) throw SchemaError("case is not an object", location);
    BenchmarkCase c;
    if (!j.contains("case_id") || !j["case_id"].is_string() || j["case_id"].empty())
        throw SchemaError("missing case_id", location);
    c.case_id = j["case_id"].get<std::string>();
    if (!j.contains("k_subjects") || !j["k_subjects"].is_number_integer())
        throw SchemaError("missing k_subjects", location + ".k_subjects");
    c.k_subjects = j["k_subjects"].get<int>();
    if (c.k_subjects < 0 || c.k_subjects > 3)
        throw SchemaError("k_subjects must lie in {0,1,2,3}, got " +
                              std::to_string(c.k_subjects),
                          location + ".k_subjects");
    if (!j.contains("subjects") || !j["subjects"].is_array())
        throw SchemaError("missing subjects array", location + ".subjects");
    for (size_t i = 0; i < j["subjects"].size(); ++i) {
        try {
            c.subjects.push_back(SubjectSpec::from_json(j["subjects"][i]));
        } catch (const std::exception& e) {
            throw SchemaError(e.what(), location + ".subjects[" + std::to_string(i) + "]");
        }
    }
    if (static_cast<int>(c.subjects.size()) != c.k_subjects)
        throw SchemaError("case lists " + std::to_string(c.subjects.size()) +
                              " subjects but k_subjects is " + std::to_string(c.k_subjects),
                          location + ".subjects");
    std::set<std::string> names;
    for (const SubjectSpec& s : c.subjects)
        if (!names.insert(s.name).second)
            throw SchemaError("subject '" + s.name + "' repeats within the case",
                              location + ".subjects");
    if (!j.contains("scene_prompt") || !j["scene_prompt"].is_string() ||
        j["scene_prompt"].get<std::string>().empty())
        throw SchemaError("missing scene_prompt", location + ".scene_prompt");
    c.scene_prompt = j["scene_prompt"].get<std::string>();
    if (!j.contains("word_count") || !j["word_count"].is_number_integer())
        throw SchemaError("missing word_count", location + ".word_count");
    c.word_count = j["word_count"].get<int>();
    if (c.word_count != dreamstory::word_count(c.scene_prompt))
        throw SchemaError("stored word_count " + std::to_string(c.word_count) +
                              " does not match the prompt (" +
                              std::to_string(dreamstory::word_count(c.scene_prompt)) + " words)",
                          location + ".word_count");
    c.review_status = review_status_from_string(j.value("review_status", "auto"),
                                                location + ".review_status");
    return c;
}

std::map<int, int> BenchmarkManifest::group_counts() const {
    std::map<int, int> counts;
    for (const BenchmarkCase& c : cases) ++counts[c.k_subjects];
    return counts;
}

json BenchmarkManifest::to_json() const {
    json j;
    j["schema"] = "dreamstory.bench.v1";
    j["generator_model_id"] = generator_model_id;
    j["word_limit"] = word_limit;
    j["seed"] = seed;
    json pool_j = json::array();
    for (const SubjectSpec& s : pool) pool_j.push_back(s.to_json());
    j["pool"] = std::move(pool_j);
    json groups = json::object();
    for (const auto& [k, n] : group_counts()) groups[std::to_string(k)] = n;
    j["groups"] = std::move(groups);
    json cases_j = json::array();
    for (const BenchmarkCase& c : cases) cases_j.push_back(c.to_json());
    j["cases"] = std::move(cases_j);
    return j;
}

std::vector<SubjectSpec> gen_subject_pool(LLMClient& llm, int n, const TemplateRegistry& registry,
                                          int retries) {
    if (n < 1) throw InputError("subject pool size must be >= 1");

    std::vector<SubjectSpec> accepted;
    std::set<std::string> names, portraits;
    const auto checker = [](const json& j) -> Check {
        for (const json& e : j) {
            try {
                validate_subject(SubjectSpec::from_json(e));
            } catch (const std::exception& ex) {
                return {false, ex.what(), Check::Severity::schema};
            }
        }
        return {true, "", Check::Severity::schema};
    };

    for (int round = 0; round <= retries && static_cast<int>(accepted.size()) < n; ++round) {
        const int missing = n - static_cast<int>(accepted.size());
        const std::string rendered =
            registry.render("pool_subjects", {{"count", std::to_string(missing)},
                                              {"avoid", avoid_lines(accepted)}});
        const json response =
            ask_llm(llm, {"pool_subjects", rendered, "pool.v1", retries}, checker, nullptr);
        int added = 0;
        for (const json& e : response) {
            SubjectSpec s = SubjectSpec::from_json(e);
            if (!names.insert(s.name).second) continue;
            if (!portraits.insert(s.portrait_prompt).second) {
                names.erase(s.name);
                continue;
            }
            accepted.push_back(std::move(s));
            ++added;
            if (static_cast<int>(accepted.size()) == n) break;
        }
        if (added == 0 && static_cast<int>(accepted.size()) < n)
            log::warn("pool round added nothing",
                      "round " + std::to_string(round) + ", have " +
                          std::to_string(accepted.size()) + " of " + std::to_string(n));
    }
    if (static_cast<int>(accepted.size()) < n)
        throw PoolExhausted("subject pool stalled at " + std::to_string(accepted.size()) +
                            " of " + std::to_string(n) + " unique subjects");
    return accepted;
}

std::vector<BenchmarkCase> gen_cases(const std::vector<SubjectSpec>& pool, int k_subjects,
                                     int n_cases, int word_limit, LLMClient& llm,
                                     const TemplateRegistry& registry, uint64_t seed,
                                     int retries) {
    if (k_subjects < 0 || k_subjects > 3)
        throw InputError("k_subjects must lie in {0,1,2,3}");
    if (static_cast<size_t>(k_subjects) > pool.size())
        throw InputError("pool of " + std::to_string(pool.size()) +
                         " cannot supply k=" + std::to_string(k_subjects));
    if (n_cases < 0) throw InputError("n_cases must be >= 0");

    std::vector<BenchmarkCase> cases;
    for (int i = 0; i < n_cases; ++i) {
        BenchmarkCase c;
        c.case_id = case_id_for(k_subjects, i);
        c.k_subjects = k_subjects;
        const uint64_t case_seed =
            derive_seed(derive_seed(seed, "bench/k", static_cast<uint64_t>(k_subjects)), "case",
                        static_cast<uint64_t>(i));
        for (size_t idx : sample_indices(pool.size(), static_cast<size_t>(k_subjects), case_seed))
            c.subjects.push_back(pool[idx]);

        const auto violation = [&](const std::string& prompt) -> std::string {
            if (word_count(prompt) > word_limit)
                return "prompt runs " + std::to_string(word_count(prompt)) +
                       " words, over the limit of " + std::to_string(word_limit);
            for (const SubjectSpec& s : pool) {
                const bool in_case =
                    std::any_of(c.subjects.begin(), c.subjects.end(),
                                [&](const SubjectSpec& cs) { return cs.name == s.name; });
                if (!in_case && contains_word(prompt, s.name))
                    return "prompt mentions pool subject '" + s.name + "' outside the case";
            }
            for (const SubjectSpec& s : c.subjects)
                if (!mentions_subject(prompt, s))
                    return "prompt omits subject '" + s.name + "'";
            return "";
        };
        const auto checker = [&](const json& j) -> Check {
            const std::string v = violation(j.at("prompt").get<std::string>());
            return {v.empty(), v, Check::Severity::soft};
        };

        const std::string rendered =
            registry.render("case_prompt", {{"word_limit", std::to_string(word_limit)},
                                            {"subjects", subject_lines(c.subjects)}});
        std::string prompt;
        bool ok = false;
        for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
            const json response =
                ask_llm(llm, {"case_prompt", rendered, "case.v1", retries}, checker, nullptr);
            prompt = response.at("prompt").get<std::string>();
            ok = violation(prompt).empty();
            if (!ok && attempt == 0)
                log::warn("case regeneration", c.case_id + ": " + violation(prompt));
        }
        c.scene_prompt = prompt;
        c.word_count = word_count(prompt);
        c.review_status = ok ? ReviewStatus::auto_accepted : ReviewStatus::rejected;
        if (!ok) log::warn("case rejected", c.case_id + ": " + violation(prompt));
        cases.push_back(std::move(c));
    }
    return cases;
}

BenchmarkManifest build_benchmark(LLMClient& llm, const TemplateRegistry& registry,
                                  const BenchConfig& config) {
    BenchmarkManifest m;
    m.generator_model_id = llm.model_id();
    m.word_limit = config.word_limit;
    m.seed = config.seed;
    m.pool = gen_subject_pool(llm, config.pool_size, registry, config.retries);
    for (const auto& [k, n] : config.group_sizes) {
        auto group = gen_cases(m.pool, k, n, config.word_limit, llm, registry, config.seed,
                               config.retries);
        m.cases.insert(m.cases.end(), std::make_move_iterator(group.begin()),
                       std::make_move_iterator(group.end()));
    }
    return m;
}

void export_manifest(const BenchmarkManifest& manifest, const std::string& path) {
    write_json_atomic(path, manifest.to_json());
}

BenchmarkManifest import_manifest(const std::string& path) {
    const json j = read_json_file(path);
    const std::string schema = j.value("schema", "");
    if (schema != "dreamstory.bench.v1")
        throw SchemaError("unsupported benchmark schema '" + schema +
                              "'; regenerate the file with this tool (expected "
                              "dreamstory.bench.v1)",
                          path);

    BenchmarkManifest m;
    m.generator_model_id = j.value("generator_model_id", "");
    m.word_limit = j.value("word_limit", 40);
    m.seed = j.value("seed", uint64_t{0});
    if (m.word_limit < 1) throw SchemaError("word_limit must be >= 1", path + ":word_limit");

    std::set<std::string> pool_names;
    std::map<std::string, SubjectSpec> pool_by_name;
    const json pool_j = j.value("pool", json::array());
    for (size_t i = 0; i < pool_j.size(); ++i) {
        const std::string loc = path + ":pool[" + std::to_string(i) + "]";
        SubjectSpec s;
        try {
            s = SubjectSpec::from_json(pool_j[i]);
            validate_subject(s);
        } catch (const std::exception& e) {
            throw SchemaError(e.what(), loc);
        }
        if (!pool_names.insert(s.name).second)
            throw SchemaError("duplicate pool subject '" + s.name + "'", loc);
        pool_by_name[s.name] = s;
        m.pool.push_back(std::move(s));
    }

    const json cases_j = j.value("cases", json::array());
    std::set<std::string> case_ids;
    for (size_t i = 0; i < cases_j.size(); ++i) {
        const std::string loc = path + ":cases[" + std::to_string(i) + "]";
        BenchmarkCase c = BenchmarkCase::from_json(cases_j[i], loc);
        if (!case_ids.insert(c.case_id).second)
            throw SchemaError("duplicate case_id '" + c.case_id + "'", loc);
        if (c.word_count > m.word_limit && c.review_status != ReviewStatus::rejected)
            throw SchemaError("prompt exceeds the word limit yet is not rejected",
                              loc + ".word_count");
        for (const SubjectSpec& s : c.subjects) {
            const auto it = pool_by_name.find(s.name);
            if (it == pool_by_name.end())
                throw SchemaError("case subject '" + s.name + "' is not in the pool",
                                  loc + ".subjects");
            if (!(it->second == s))
                throw SchemaError("case subject '" + s.name + "' diverges from the pool entry",
                                  loc + ".subjects");
        }
        if (c.review_status != ReviewStatus::rejected) {
            for (const SubjectSpec& s : m.pool) {
                const bool in_case =
                    std::any_of(c.subjects.begin(), c.subjects.end(),
                                [&](const SubjectSpec& cs) { return cs.name == s.name; });
                if (!in_case && contains_word(c.scene_prompt, s.name))
                    throw SchemaError("prompt mentions pool subject '" + s.name +
                                          "' outside the case",
                                      loc + ".scene_prompt");
            }
        }
        m.cases.push_back(std::move(c));
    }

    if (j.contains("groups")) {
        const std::map<int, int> actual = m.group_counts();
        for (const auto& [key, value] : j["groups"].items()) {
            const int k = std::stoi(key);
            const int recorded = value.get<int>();
            const auto it = actual.find(k);
            const int real = it == actual.end() ? 0 : it->second;
            if (recorded != real)
                throw SchemaError("group k=" + key + " records " + std::to_string(recorded) +
                                      " cases but holds " + std::to_string(real),
                                  path + ":groups");
        }
    }
    return m;
}

AnnotationRun annotate_cases(const BenchmarkManifest& manifest, LLMClient& llm,
                             const TemplateRegistry& registry, int queries_per_case,
                             int retries) {
    if (queries_per_case < 1) throw InputError("queries_per_case must be >= 1");
    DirectorConfig cfg;
    cfg.retries = retries;
    StoryDirector director(llm, registry, cfg);

    AnnotationRun run;
    run.model_id = llm.model_id();
    for (const BenchmarkCase& c : manifest.cases) {
        if (c.review_status == ReviewStatus::rejected) continue;
        run.case_k[c.case_id] = c.k_subjects;

        std::vector<SubjectSpec> queried = c.subjects;
        std::vector<const SubjectSpec*> others;
        for (const SubjectSpec& s : manifest.pool) {
            const bool in_case = std::any_of(c.subjects.begin(), c.subjects.end(),
                                             [&](const SubjectSpec& cs) { return cs.name == s.name; });
            if (!in_case) others.push_back(&s);
        }
        const size_t want =
            std::min(others.size(), static_cast<size_t>(std::max(0, queries_per_case -
                                                                        c.k_subjects)));
        for (size_t idx : sample_indices(others.size(), want,
                                         derive_seed(fnv1a64(c.case_id), "distractors")))
            queried.push_back(*others[idx]);

        SceneSpec scene;
        scene.index = 0;
        scene.raw_prompt = c.scene_prompt;
        const std::vector<std::string> present = director.annotate_presence(scene, queried);
        for (const SubjectSpec& s : queried) {
            const AnnotationKey key{c.case_id, s.name};
            run.predictions[key] =
                std::find(present.begin(), present.end(), s.name) != present.end();
            const bool truth = std::any_of(c.subjects.begin(), c.subjects.end(),
                                           [&](const SubjectSpec& cs) { return cs.name == s.name; });
            run.ground_truth[key] = truth;
        }
    }
    return run;
}

}  // namespace dreamstory
