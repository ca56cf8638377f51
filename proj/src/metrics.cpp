#include "dreamstory/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "dreamstory/errors.hpp"
#include "dreamstory/json_util.hpp"

namespace fs = std::filesystem;

namespace dreamstory {

using nlohmann::json;

namespace {

constexpr const char* kDcDsNote =
    "D&C-DS values follow this tool's assignment rule (greedy by detection score, pairwise box "
    "IoU <= 0.5, zero when any expected subject is undetected); compare across tools with care.";

json opt_to_json(const std::optional<double>& v) {
    return v.has_value() ? json(*v) : json(nullptr);
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(precision);
    os << v;
    return os.str();
}

std::string cell(const std::optional<double>& v, int precision = 4) {
    return v.has_value() ? fmt(*v, precision) : "-";
}

struct MeanAcc {
    double sum = 0.0;
    int n = 0;
    void add(double v) {
        sum += v;
        ++n;
    }
    void add(const std::optional<double>& v) {
        if (v) add(*v);
    }
    std::optional<double> mean() const {
        if (n == 0) return std::nullopt;
        return sum / n;
    }
};

Box json_to_box(const json& j) {
    if (!j.is_array() || j.size() != 4) throw SchemaError("box must be a 4-element array", "box");
    return Box{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

}  // namespace

std::optional<double> SceneMetrics::ds_mean() const {
    if (ds_per_subject.empty()) return std::nullopt;
    double sum = 0.0;
    for (const auto& [name, v] : ds_per_subject) sum += v;
    return sum / static_cast<double>(ds_per_subject.size());
}

json SceneMetrics::to_json() const {
    json j;
    j["id"] = id;
    j["k_subjects"] = k_subjects;
    j["aes"] = opt_to_json(aes);
    j["clip_t"] = opt_to_json(clip_t);
    j["ds"] = json::object();
    for (const auto& [name, v] : ds_per_subject) j["ds"][name] = v;
    j["ds_mean"] = opt_to_json(ds_mean());
    j["dc_ds"] = opt_to_json(dc_ds);
    json dets = json::array();
    for (const DetectionLogEntry& d : detection_log) {
        json e;
        e["subject"] = d.subject;
        e["box"] = json::array({d.box.x0, d.box.y0, d.box.x1, d.box.y1});
        e["score"] = d.score;
        e["found"] = d.found;
        dets.push_back(std::move(e));
    }
    j["detections"] = std::move(dets);
    return j;
}

MetricsSelection MetricsSelection::parse(const std::string& csv) {
    MetricsSelection s;
    s.aes = s.clip_t = s.ds = s.dc_ds = false;
    std::string token;
    std::istringstream in(csv);
    while (std::getline(in, token, ',')) {
        if (token.empty()) continue;
        if (token == "aes")
            s.aes = true;
        else if (token == "clip_t")
            s.clip_t = true;
        else if (token == "ds")
            s.ds = true;
        else if (token == "dc_ds")
            s.dc_ds = true;
        else
            throw ConfigError("unknown metric '" + token +
                              "' (expected aes, clip_t, ds, dc_ds)");
    }
    if (!s.aes && !s.clip_t && !s.ds && !s.dc_ds)
        throw ConfigError("metric selection is empty");
    return s;
}

DSResult compute_ds(const Image& scene_image, const MultimodalAnchor& anchor, Detector& detector,
                    PerceptualSimilarity& sim) {
    DSResult r;
    const auto detections = detector.detect(scene_image, anchor.subject.type_token);
    if (detections.empty()) return r;
    const BoxDetection* best = &detections.front();
    for (const BoxDetection& d : detections)
        if (d.score > best->score) best = &d;
    r.found = true;
    r.box = best->box.clipped(scene_image.width, scene_image.height);
    r.score = best->score;
    if (r.box.empty()) return DSResult{};
    const Image scene_crop = scene_image.crop(r.box);
    const Image anchor_crop =
        anchor.portrait.crop(anchor.crop_box.clipped(anchor.portrait.width, anchor.portrait.height));
    r.value = sim.similarity(scene_crop, anchor_crop);
    return r;
}

double compute_dc_ds(const Image& scene_image, const std::vector<const MultimodalAnchor*>& anchors,
                     Detector& detector, PerceptualSimilarity& sim,
                     std::vector<DetectionLogEntry>* log) {
    if (anchors.empty()) throw InputError("multi-subject identity score needs >= 1 subject");

    struct Candidate {
        size_t anchor_idx;
        Box box;
        double score;
    };
    std::vector<Candidate> candidates;
    for (size_t i = 0; i < anchors.size(); ++i) {
        for (const BoxDetection& d : detector.detect(scene_image, anchors[i]->subject.type_token)) {
            const Box b = d.box.clipped(scene_image.width, scene_image.height);
            if (!b.empty()) candidates.push_back({i, b, d.score});
        }
    }
    // Score-descending greedy pass; ties resolve by anchor order then
    // geometry so the assignment is deterministic.
    std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.anchor_idx != b.anchor_idx) return a.anchor_idx < b.anchor_idx;
        return std::tie(a.box.x0, a.box.y0, a.box.x1, a.box.y1) <
               std::tie(b.box.x0, b.box.y0, b.box.x1, b.box.y1);
    });

    std::vector<std::optional<Candidate>> assigned(anchors.size());
    for (const Candidate& c : candidates) {
        if (assigned[c.anchor_idx].has_value()) continue;
        bool overlaps = false;
        for (const auto& a : assigned)
            if (a.has_value() && box_iou(a->box, c.box) > 0.5) {
                overlaps = true;
                break;
            }
        if (!overlaps) assigned[c.anchor_idx] = c;
    }

    bool all_assigned = true;
    for (size_t i = 0; i < anchors.size(); ++i) {
        DetectionLogEntry e;
        e.subject = anchors[i]->subject.name;
        if (assigned[i]) {
            e.box = assigned[i]->box;
            e.score = assigned[i]->score;
            e.found = true;
        } else {
            all_assigned = false;
        }
        if (log) log->push_back(std::move(e));
    }
    if (!all_assigned) return 0.0;

    double sum = 0.0;
    for (size_t i = 0; i < anchors.size(); ++i) {
        const Image scene_crop = scene_image.crop(assigned[i]->box);
        const Image anchor_crop = anchors[i]->portrait.crop(
            anchors[i]->crop_box.clipped(anchors[i]->portrait.width, anchors[i]->portrait.height));
        sum += sim.similarity(scene_crop, anchor_crop);
    }
    return sum / static_cast<double>(anchors.size());
}

double compute_clip_t(const Image& scene_image, const std::string& text, TextImageScorer& scorer) {
    if (text.empty()) throw InputError("text-image score needs non-empty text");
    return scorer.score(scene_image, text);
}

double compute_aes(const Image& scene_image, AestheticScorer& scorer) {
    return scorer.score(scene_image);
}

json AnnotationAccuracy::to_json() const {
    json j;
    j["per_decision"] = json::object();
    j["per_decision_n"] = json::object();
    j["per_scene"] = json::object();
    j["per_scene_n"] = json::object();
    for (const auto& [k, v] : decision_pct) j["per_decision"][std::to_string(k)] = v;
    for (const auto& [k, v] : decision_n) j["per_decision_n"][std::to_string(k)] = v;
    for (const auto& [k, v] : scene_pct) j["per_scene"][std::to_string(k)] = v;
    for (const auto& [k, v] : scene_n) j["per_scene_n"][std::to_string(k)] = v;
    j["overall_decision"] = overall_decision_pct;
    j["overall_scene"] = overall_scene_pct;
    return j;
}

AnnotationAccuracy annotation_accuracy(const std::map<AnnotationKey, bool>& predictions,
                                       const std::map<AnnotationKey, bool>& ground_truth,
                                       const std::map<std::string, int>& case_k) {
    struct CaseTally {
        int k = 0;
        int total = 0;
        int correct = 0;
    };
    std::map<int, std::pair<int, int>> by_k;  // k -> (correct, total)
    std::map<std::string, CaseTally> by_case;
    int correct_all = 0;

    for (const auto& [key, pred] : predictions) {
        const auto truth = ground_truth.find(key);
        if (truth == ground_truth.end())
            throw KeyMismatch("prediction without ground truth: case '" + key.case_id +
                              "', subject '" + key.subject + "'");
        const auto k_it = case_k.find(key.case_id);
        if (k_it == case_k.end())
            throw KeyMismatch("no subject count recorded for case '" + key.case_id + "'");
        const bool ok = pred == truth->second;
        auto& [correct, total] = by_k[k_it->second];
        correct += ok ? 1 : 0;
        ++total;
        correct_all += ok ? 1 : 0;
        CaseTally& tally = by_case[key.case_id];
        tally.k = k_it->second;
        ++tally.total;
        tally.correct += ok ? 1 : 0;
    }

    AnnotationAccuracy acc;
    for (const auto& [k, ct] : by_k) {
        acc.decision_n[k] = ct.second;
        acc.decision_pct[k] = ct.second ? 100.0 * ct.first / ct.second : 0.0;
    }
    std::map<int, std::pair<int, int>> scenes_by_k;
    int exact_all = 0;
    for (const auto& [case_id, tally] : by_case) {
        auto& [exact, total] = scenes_by_k[tally.k];
        const bool is_exact = tally.correct == tally.total;
        exact += is_exact ? 1 : 0;
        ++total;
        exact_all += is_exact ? 1 : 0;
    }
    for (const auto& [k, st] : scenes_by_k) {
        acc.scene_n[k] = st.second;
        acc.scene_pct[k] = st.second ? 100.0 * st.first / st.second : 0.0;
    }
    acc.overall_decision_pct =
        predictions.empty() ? 0.0 : 100.0 * correct_all / static_cast<double>(predictions.size());
    acc.overall_scene_pct =
        by_case.empty() ? 0.0 : 100.0 * exact_all / static_cast<double>(by_case.size());
    return acc;
}

json GroupAggregate::to_json() const {
    json j;
    j["n"] = n;
    j["aes"] = opt_to_json(aes);
    j["clip_t"] = opt_to_json(clip_t);
    j["ds"] = opt_to_json(ds);
    j["dc_ds"] = opt_to_json(dc_ds);
    return j;
}

json MetricsReport::to_json() const {
    json j;
    j["schema"] = "dreamstory.metrics.v1";
    j["notes"] = json::array({kDcDsNote});
    json scenes_j = json::array();
    for (const SceneMetrics& m : scenes) scenes_j.push_back(m.to_json());
    j["scenes"] = std::move(scenes_j);
    j["groups"] = json::object();
    for (const auto& [k, g] : groups) j["groups"][std::to_string(k)] = g.to_json();
    j["overall"] = overall.to_json();
    j["annotation"] = json::object();
    for (const auto& [model, acc] : annotation) j["annotation"][model] = acc.to_json();
    return j;
}

MetricsReport aggregate_report(const std::vector<SceneMetrics>& scenes) {
    MetricsReport report;
    report.scenes = scenes;

    struct GroupAcc {
        int n = 0;
        MeanAcc aes, clip_t, ds, dc_ds;
    };
    std::map<int, GroupAcc> by_k;
    GroupAcc all;
    const auto feed = [](GroupAcc& g, const SceneMetrics& m) {
        ++g.n;
        g.aes.add(m.aes);
        g.clip_t.add(m.clip_t);
        for (const auto& [name, v] : m.ds_per_subject) g.ds.add(v);
        g.dc_ds.add(m.dc_ds);
    };
    for (const SceneMetrics& m : scenes) {
        feed(by_k[m.k_subjects], m);
        feed(all, m);
    }
    const auto finish = [](const GroupAcc& g) {
        GroupAggregate out;
        out.n = g.n;
        out.aes = g.aes.mean();
        out.clip_t = g.clip_t.mean();
        out.ds = g.ds.mean();
        out.dc_ds = g.dc_ds.mean();
        return out;
    };
    for (const auto& [k, g] : by_k) report.groups[k] = finish(g);
    report.overall = finish(all);
    return report;
}

std::string render_metrics_table(const MetricsReport& report) {
    std::ostringstream os;
    const auto row = [&os](const std::string& group, const std::string& n, const std::string& aes,
                           const std::string& clip, const std::string& ds, const std::string& dc) {
        os << group;
        os << std::string(group.size() < 12 ? 12 - group.size() : 1, ' ');
        for (const std::string* col : {&n, &aes, &clip, &ds, &dc}) {
            os << std::string(col->size() < 10 ? 10 - col->size() : 1, ' ') << *col;
        }
        os << "\n";
    };
    row("group", "n", "AES", "CLIP-T", "DS", "D&C-DS");
    for (const auto& [k, g] : report.groups)
        row("k=" + std::to_string(k), std::to_string(g.n), cell(g.aes), cell(g.clip_t), cell(g.ds),
            cell(g.dc_ds));
    row("all", std::to_string(report.overall.n), cell(report.overall.aes),
        cell(report.overall.clip_t), cell(report.overall.ds), cell(report.overall.dc_ds));
    os << "note: " << kDcDsNote << "\n";
    return os.str();
}

std::string render_annotation_table(const std::map<std::string, AnnotationAccuracy>& by_model) {
    std::ostringstream os;
    const auto row = [&os](const std::string& model, const std::string& c0, const std::string& c1,
                           const std::string& c2, const std::string& c3) {
        os << model;
        os << std::string(model.size() < 16 ? 16 - model.size() : 1, ' ');
        for (const std::string* col : {&c0, &c1, &c2, &c3})
            os << std::string(col->size() < 9 ? 9 - col->size() : 1, ' ') << *col;
        os << "\n";
    };
    row("model", "k=0", "k=1", "k=2", "k=3");
    row(kReferenceAnnotationModel, fmt(kReferenceAnnotationAccuracy[0], 2),
        fmt(kReferenceAnnotationAccuracy[1], 2), fmt(kReferenceAnnotationAccuracy[2], 2),
        fmt(kReferenceAnnotationAccuracy[3], 2));
    for (const auto& [model, acc] : by_model) {
        std::string cells[4];
        for (int k = 0; k < 4; ++k) {
            const auto it = acc.decision_pct.find(k);
            cells[k] = it == acc.decision_pct.end() ? "-" : fmt(it->second, 2);
        }
        row(model, cells[0], cells[1], cells[2], cells[3]);
    }
    return os.str();
}

MetricsReport evaluate_run(const std::string& run_dir, EvalBackends backends,
                           const MetricsSelection& selection, const std::vector<int>& exclude) {
    const fs::path root(run_dir);
    const json manifest = read_json_file(root / "manifest.json");
    if (manifest.value("schema", "") != "dreamstory.run.v1")
        throw SchemaError("not a run manifest", (root / "manifest.json").string());
    const StoryPlan plan = read_plan((root / "plan.json").string());

    std::map<std::string, MultimodalAnchor> anchors;
    for (const json& rec : manifest.value("anchors", json::array())) {
        const std::string name = rec.value("subject", "");
        const SubjectSpec* spec = plan.find_subject(name);
        if (spec == nullptr)
            throw PlanIntegrityError("manifest anchor '" + name + "' is not in the plan");
        MultimodalAnchor a;
        a.subject = *spec;
        a.portrait = read_png(root / rec.value("portrait", ""));
        a.crop_box = json_to_box(rec.at("crop_box"));
        a.mask_found = rec.value("mask_found", true);
        anchors.emplace(name, std::move(a));
    }

    std::vector<SceneMetrics> rows;
    for (const json& rec : manifest.value("scenes", json::array())) {
        if (!rec.value("ok", false)) continue;
        const int index = rec.value("index", -1);
        if (std::find(exclude.begin(), exclude.end(), index) != exclude.end()) continue;
        const SceneSpec* scene = nullptr;
        for (const SceneSpec& s : plan.scenes)
            if (s.index == index) scene = &s;
        if (scene == nullptr)
            throw PlanIntegrityError("manifest scene " + std::to_string(index) +
                                     " is not in the plan");
        const Image image = read_png(root / rec.value("image", ""));

        SceneMetrics m;
        m.id = std::to_string(index);
        m.k_subjects = static_cast<int>(scene->present_subjects.size());
        if (selection.aes) m.aes = compute_aes(image, backends.aes);
        if (selection.clip_t) {
            const std::string& text =
                scene->rewritten_prompt.empty() ? scene->raw_prompt : scene->rewritten_prompt;
            m.clip_t = compute_clip_t(image, text, backends.clip);
        }
        std::vector<const MultimodalAnchor*> present;
        for (const std::string& name : scene->present_subjects) {
            const auto it = anchors.find(name);
            if (it == anchors.end())
                throw PlanIntegrityError("scene " + std::to_string(index) +
                                         " references subject '" + name + "' without an anchor");
            present.push_back(&it->second);
        }
        if (selection.ds) {
            for (const MultimodalAnchor* a : present) {
                const DSResult r = compute_ds(image, *a, backends.detector, backends.sim);
                m.ds_per_subject[a->subject.name] = r.value;
                m.detection_log.push_back({a->subject.name, r.box, r.score, r.found});
            }
        }
        if (selection.dc_ds && !present.empty())
            m.dc_ds = compute_dc_ds(image, present, backends.detector, backends.sim);
        rows.push_back(std::move(m));
    }
    return aggregate_report(rows);
}

}  // namespace dreamstory
