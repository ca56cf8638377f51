#include <doctest.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dreamstory/director.hpp"
#include "dreamstory/errors.hpp"
#include "dreamstory/json_util.hpp"
#include "dreamstory/llm.hpp"
#include "dreamstory/metrics.hpp"
#include "dreamstory/mock_backend.hpp"
#include "dreamstory/pipeline.hpp"
#include "dreamstory/templates.hpp"

using namespace dreamstory;
namespace fs = std::filesystem;

namespace {

// Deterministic test image with a per-pixel gradient so crops of distinct
// regions hash differently.
Image gradient_image(int w, int h, uint8_t base) {
    Image img(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(x, y, c) = static_cast<uint8_t>(base + 31 * c + 7 * x + 13 * y);
    return img;
}

MultimodalAnchor make_anchor(const std::string& name, const std::string& type_token,
                             uint8_t base, const Box& crop) {
    MultimodalAnchor a;
    a.subject.name = name;
    a.subject.type_token = type_token;
    a.subject.portrait_prompt = "portrait of " + name;
    a.subject.short_descriptor = "test " + type_token;
    a.portrait = gradient_image(32, 32, base);
    a.crop_box = crop;
    a.mask_found = true;
    return a;
}

ScriptedStoryLLM::Script demo_script() {
    ScriptedStoryLLM::Script s;
    s.subjects = {
        {"Mira", "a tall sailor with a red bandana and weathered hands", "sailor in a red bandana",
         "woman", {}},
        {"Gus", "a grumpy gray cat with a torn ear and yellow eyes", "grumpy gray cat", "cat", {}},
    };
    s.scenes = {
        {"Mira ties the skiff at the dock while gulls wheel overhead", {"Mira"}},
        {"Mira lifts Gus onto her shoulder as the tide rolls in", {"Mira", "Gus"}},
        {"The empty harbor waits under a low fog", {}},
    };
    return s;
}

StoryPlan demo_plan() {
    ScriptedStoryLLM llm(demo_script());
    StoryDirector director(llm, TemplateRegistry::builtin());
    return director.build_story_plan("Mira and Gus at the harbor.");
}

RenderConfig fast_config(uint64_t seed = 5) {
    RenderConfig c;
    c.steps = 2;
    c.width = 24;
    c.height = 16;
    c.seed = seed;
    return c;
}

fs::path temp_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("ds_metrics_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// The mock detector proposes a procedural box for unknown categories, so a
// genuinely detection-free path needs its own stub.
class NullDetector : public Detector {
  public:
    std::vector<BoxDetection> detect(const Image&, const std::string&) override { return {}; }
};

}  // namespace

TEST_CASE("metric selection parses subsets and rejects unknown names") {
    const MetricsSelection only_aes = MetricsSelection::parse("aes");
    CHECK(only_aes.aes);
    CHECK_FALSE(only_aes.clip_t);
    CHECK_FALSE(only_aes.ds);
    CHECK_FALSE(only_aes.dc_ds);

    const MetricsSelection pair = MetricsSelection::parse("clip_t,dc_ds");
    CHECK_FALSE(pair.aes);
    CHECK(pair.clip_t);
    CHECK_FALSE(pair.ds);
    CHECK(pair.dc_ds);

    const MetricsSelection all = MetricsSelection::parse("aes,clip_t,ds,dc_ds");
    CHECK(all.aes);
    CHECK(all.clip_t);
    CHECK(all.ds);
    CHECK(all.dc_ds);

    CHECK_THROWS_AS(MetricsSelection::parse("aes,psnr"), ConfigError);
    CHECK_THROWS_AS(MetricsSelection::parse(""), ConfigError);
    CHECK_THROWS_AS(MetricsSelection::parse(",,"), ConfigError);
}

TEST_CASE("single-subject identity score crops the best detection") {
    const Image scene = gradient_image(64, 48, 10);
    MultimodalAnchor anchor = make_anchor("Mira", "woman", 90, Box{4, 4, 28, 28});

    MockDetector detector;
    detector.add_fixture("woman", Box{2, 2, 20, 30}, 0.6);
    detector.add_fixture("woman", Box{30, 4, 60, 44}, 0.9);

    MockPerceptualSimilarity sim;
    const Image scene_crop = scene.crop(Box{30, 4, 60, 44});
    const Image anchor_crop = anchor.portrait.crop(Box{4, 4, 28, 28});
    sim.pin(scene_crop, anchor_crop, 0.37);

    const DSResult r = compute_ds(scene, anchor, detector, sim);
    CHECK(r.found);
    CHECK(r.box.x0 == 30);
    CHECK(r.box.y0 == 4);
    CHECK(r.box.x1 == 60);
    CHECK(r.box.y1 == 44);
    CHECK(r.score == doctest::Approx(0.9));
    CHECK(r.value == doctest::Approx(0.37));

    SUBCASE("equal scores keep the earlier detection") {
        MockDetector tied;
        tied.add_fixture("woman", Box{0, 0, 10, 10}, 0.8);
        tied.add_fixture("woman", Box{20, 0, 30, 10}, 0.8);
        const DSResult t = compute_ds(scene, anchor, tied, sim);
        CHECK(t.found);
        CHECK(t.box.x0 == 0);
        CHECK(t.box.x1 == 10);
    }

    SUBCASE("detection boxes clip to the scene frame") {
        MockDetector wide;
        wide.add_fixture("woman", Box{40, 20, 200, 200}, 0.8);
        MockPerceptualSimilarity sim2;
        sim2.pin(scene.crop(Box{40, 20, 64, 48}), anchor_crop, 0.25);
        const DSResult c = compute_ds(scene, anchor, wide, sim2);
        CHECK(c.found);
        CHECK(c.box.x1 == 64);
        CHECK(c.box.y1 == 48);
        CHECK(c.value == doctest::Approx(0.25));
    }
}

TEST_CASE("identity score is zero when the subject is not detected") {
    const Image scene = gradient_image(40, 30, 10);
    const MultimodalAnchor anchor = make_anchor("Mira", "woman", 90, Box{0, 0, 16, 16});
    MockPerceptualSimilarity sim;

    NullDetector empty;
    const DSResult none = compute_ds(scene, anchor, empty, sim);
    CHECK_FALSE(none.found);
    CHECK(none.value == 0.0);
    CHECK(none.score == 0.0);

    MockDetector outside;
    outside.add_fixture("woman", Box{100, 100, 200, 200}, 0.9);
    const DSResult clipped = compute_ds(scene, anchor, outside, sim);
    CHECK_FALSE(clipped.found);
    CHECK(clipped.value == 0.0);
}

TEST_CASE("multi-subject score averages similarities over disjoint assignments") {
    const Image scene = gradient_image(80, 40, 20);
    MultimodalAnchor mira = make_anchor("Mira", "woman", 90, Box{2, 2, 30, 30});
    MultimodalAnchor gus = make_anchor("Gus", "cat", 150, Box{1, 1, 31, 31});

    MockDetector detector;
    detector.add_fixture("woman", Box{0, 0, 30, 40}, 0.9);
    detector.add_fixture("cat", Box{40, 0, 80, 40}, 0.8);

    MockPerceptualSimilarity sim;
    sim.pin(scene.crop(Box{0, 0, 30, 40}), mira.portrait.crop(mira.crop_box), 0.6);
    sim.pin(scene.crop(Box{40, 0, 80, 40}), gus.portrait.crop(gus.crop_box), 0.4);

    std::vector<DetectionLogEntry> log;
    const double v = compute_dc_ds(scene, {&mira, &gus}, detector, sim, &log);
    CHECK(v == doctest::Approx(0.5));
    REQUIRE(log.size() == 2);
    CHECK(log[0].subject == "Mira");
    CHECK(log[0].found);
    CHECK(log[0].box.x1 == 30);
    CHECK(log[1].subject == "Gus");
    CHECK(log[1].found);
    CHECK(log[1].box.x0 == 40);

    CHECK_THROWS_AS(compute_dc_ds(scene, {}, detector, sim), InputError);
}

TEST_CASE("multi-subject score zeroes out when detections collide") {
    const Image scene = gradient_image(80, 40, 20);
    MultimodalAnchor mira = make_anchor("Mira", "woman", 90, Box{2, 2, 30, 30});
    MultimodalAnchor gus = make_anchor("Gus", "cat", 150, Box{1, 1, 31, 31});

    // Both categories fire on overlapping regions; the higher score wins the
    // spot and the loser has nowhere else to go.
    MockDetector detector;
    detector.add_fixture("woman", Box{10, 0, 40, 40}, 0.7);
    detector.add_fixture("cat", Box{12, 0, 42, 40}, 0.95);

    MockPerceptualSimilarity sim;
    std::vector<DetectionLogEntry> log;
    const double v = compute_dc_ds(scene, {&mira, &gus}, detector, sim, &log);
    CHECK(v == 0.0);
    REQUIRE(log.size() == 2);
    CHECK(log[0].subject == "Mira");
    CHECK_FALSE(log[0].found);
    CHECK(log[1].subject == "Gus");
    CHECK(log[1].found);
    CHECK(log[1].score == doctest::Approx(0.95));
}

TEST_CASE("multi-subject assignment falls back to lower-ranked detections") {
    const Image scene = gradient_image(80, 40, 20);
    MultimodalAnchor mira = make_anchor("Mira", "woman", 90, Box{2, 2, 30, 30});
    MultimodalAnchor gus = make_anchor("Gus", "cat", 150, Box{1, 1, 31, 31});

    // Mira's best candidate collides with Gus's assignment, but her second
    // candidate sits clear of it and rescues the score.
    MockDetector detector;
    detector.add_fixture("woman", Box{12, 0, 42, 40}, 0.7);
    detector.add_fixture("woman", Box{50, 0, 80, 40}, 0.3);
    detector.add_fixture("cat", Box{10, 0, 40, 40}, 0.95);

    MockPerceptualSimilarity sim;
    sim.pin(scene.crop(Box{50, 0, 80, 40}), mira.portrait.crop(mira.crop_box), 0.8);
    sim.pin(scene.crop(Box{10, 0, 40, 40}), gus.portrait.crop(gus.crop_box), 0.2);

    std::vector<DetectionLogEntry> log;
    const double v = compute_dc_ds(scene, {&mira, &gus}, detector, sim, &log);
    CHECK(v == doctest::Approx(0.5));
    CHECK(log[0].found);
    CHECK(log[0].box.x0 == 50);
    CHECK(log[1].found);
    CHECK(log[1].box.x0 == 10);
}

TEST_CASE("multi-subject overlap boundary admits boxes at exactly half IoU") {
    const Image scene = gradient_image(8, 4, 20);
    MultimodalAnchor mira = make_anchor("Mira", "woman", 90, Box{0, 0, 8, 8});
    MultimodalAnchor gus = make_anchor("Gus", "cat", 150, Box{0, 0, 8, 8});

    // Boxes {0,0,3,2} and {1,0,4,2}: intersection 4, union 8, IoU exactly 0.5,
    // which the rule admits (rejection needs IoU strictly above 0.5).
    MockDetector detector;
    detector.add_fixture("woman", Box{0, 0, 3, 2}, 0.9);
    detector.add_fixture("cat", Box{1, 0, 4, 2}, 0.8);
    CHECK(box_iou(Box{0, 0, 3, 2}, Box{1, 0, 4, 2}) == doctest::Approx(0.5));

    MockPerceptualSimilarity sim;
    sim.pin(scene.crop(Box{0, 0, 3, 2}), mira.portrait.crop(Box{0, 0, 8, 8}), 0.6);
    sim.pin(scene.crop(Box{1, 0, 4, 2}), gus.portrait.crop(Box{0, 0, 8, 8}), 0.4);

    std::vector<DetectionLogEntry> log;
    const double v = compute_dc_ds(scene, {&mira, &gus}, detector, sim, &log);
    CHECK(v == doctest::Approx(0.5));
    CHECK(log[0].found);
    CHECK(log[1].found);
}

TEST_CASE("text-image and aesthetic scores guard their inputs") {
    const Image img = gradient_image(16, 16, 5);

    MockTextImageScorer clip(0.42);
    CHECK(compute_clip_t(img, "a quiet harbor", clip) == doctest::Approx(0.42));
    CHECK_THROWS_AS(compute_clip_t(img, "", clip), InputError);

    MockTextImageScorer hashed;
    const double a = compute_clip_t(img, "a quiet harbor", hashed);
    const double b = compute_clip_t(img, "a quiet harbor", hashed);
    CHECK(a == b);
    hashed.pin(img, "a quiet harbor", 0.77);
    CHECK(compute_clip_t(img, "a quiet harbor", hashed) == doctest::Approx(0.77));

    MockAestheticScorer aes(5.5);
    CHECK(compute_aes(img, aes) == doctest::Approx(5.5));
    MockAestheticScorer aes_hashed;
    CHECK(compute_aes(img, aes_hashed) == compute_aes(img, aes_hashed));
}

TEST_CASE("annotation accuracy aggregates per decision and per scene") {
    std::map<AnnotationKey, bool> truth;
    std::map<AnnotationKey, bool> pred;
    std::map<std::string, int> case_k;

    // c0 (k=0): one distractor decision, correct.
    case_k["c0"] = 0;
    truth[{"c0", "X"}] = false;
    pred[{"c0", "X"}] = false;
    // c1 (k=1): one decision, correct.
    case_k["c1"] = 1;
    truth[{"c1", "A"}] = true;
    pred[{"c1", "A"}] = true;
    // c2 (k=2): two decisions, one wrong.
    case_k["c2"] = 2;
    truth[{"c2", "A"}] = true;
    pred[{"c2", "A"}] = true;
    truth[{"c2", "B"}] = false;
    pred[{"c2", "B"}] = true;
    // c3 (k=2): two decisions, both correct.
    case_k["c3"] = 2;
    truth[{"c3", "A"}] = false;
    pred[{"c3", "A"}] = false;
    truth[{"c3", "B"}] = true;
    pred[{"c3", "B"}] = true;

    const AnnotationAccuracy acc = annotation_accuracy(pred, truth, case_k);
    CHECK(acc.decision_n.at(0) == 1);
    CHECK(acc.decision_n.at(1) == 1);
    CHECK(acc.decision_n.at(2) == 4);
    CHECK(acc.decision_pct.at(0) == doctest::Approx(100.0));
    CHECK(acc.decision_pct.at(1) == doctest::Approx(100.0));
    CHECK(acc.decision_pct.at(2) == doctest::Approx(75.0));
    CHECK(acc.scene_n.at(2) == 2);
    CHECK(acc.scene_pct.at(2) == doctest::Approx(50.0));
    CHECK(acc.overall_decision_pct == doctest::Approx(100.0 * 5.0 / 6.0));
    CHECK(acc.overall_scene_pct == doctest::Approx(75.0));

    const nlohmann::json j = acc.to_json();
    CHECK(j["per_decision"]["2"].get<double>() == doctest::Approx(75.0));
    CHECK(j["per_scene_n"]["2"].get<int>() == 2);

    SUBCASE("prediction without ground truth is a key mismatch") {
        pred[{"c9", "A"}] = true;
        CHECK_THROWS_AS(annotation_accuracy(pred, truth, case_k), KeyMismatch);
    }
    SUBCASE("case without a recorded subject count is a key mismatch") {
        case_k.erase("c2");
        CHECK_THROWS_AS(annotation_accuracy(pred, truth, case_k), KeyMismatch);
    }
    SUBCASE("empty predictions yield zero rates") {
        const AnnotationAccuracy zero = annotation_accuracy({}, truth, case_k);
        CHECK(zero.overall_decision_pct == 0.0);
        CHECK(zero.overall_scene_pct == 0.0);
        CHECK(zero.decision_pct.empty());
    }
}

TEST_CASE("report aggregation averages within subject-count groups") {
    std::vector<SceneMetrics> scenes(4);
    scenes[0].id = "0";
    scenes[0].k_subjects = 1;
    scenes[0].aes = 4.0;
    scenes[0].clip_t = 0.2;
    scenes[0].ds_per_subject = {{"A", 0.5}};
    scenes[0].dc_ds = 0.6;
    scenes[1].id = "1";
    scenes[1].k_subjects = 1;
    scenes[1].aes = 6.0;
    scenes[1].clip_t = 0.4;
    scenes[1].ds_per_subject = {{"A", 0.7}};
    scenes[2].id = "2";
    scenes[2].k_subjects = 2;
    scenes[2].aes = 5.0;
    scenes[2].ds_per_subject = {{"A", 0.2}, {"B", 0.4}};
    scenes[2].dc_ds = 0.3;
    scenes[3].id = "3";
    scenes[3].k_subjects = 0;
    scenes[3].aes = 2.0;

    CHECK(scenes[2].ds_mean() == doctest::Approx(0.3));
    CHECK_FALSE(scenes[3].ds_mean().has_value());

    const MetricsReport report = aggregate_report(scenes);
    REQUIRE(report.groups.count(0) == 1);
    REQUIRE(report.groups.count(1) == 1);
    REQUIRE(report.groups.count(2) == 1);

    const GroupAggregate& g1 = report.groups.at(1);
    CHECK(g1.n == 2);
    CHECK(*g1.aes == doctest::Approx(5.0));
    CHECK(*g1.clip_t == doctest::Approx(0.3));
    CHECK(*g1.ds == doctest::Approx(0.6));
    CHECK(*g1.dc_ds == doctest::Approx(0.6));  // only one scene carries it

    const GroupAggregate& g2 = report.groups.at(2);
    CHECK(g2.n == 1);
    CHECK(*g2.ds == doctest::Approx(0.3));  // per-subject values flattened
    CHECK_FALSE(g2.clip_t.has_value());

    const GroupAggregate& g0 = report.groups.at(0);
    CHECK(g0.n == 1);
    CHECK_FALSE(g0.ds.has_value());
    CHECK_FALSE(g0.dc_ds.has_value());

    CHECK(report.overall.n == 4);
    CHECK(*report.overall.aes == doctest::Approx(4.25));
    CHECK(*report.overall.ds == doctest::Approx((0.5 + 0.7 + 0.2 + 0.4) / 4.0));
    CHECK(*report.overall.dc_ds == doctest::Approx(0.45));
}

TEST_CASE("reports serialize with schema and interpretation note") {
    std::vector<SceneMetrics> scenes(1);
    scenes[0].id = "0";
    scenes[0].k_subjects = 2;
    scenes[0].aes = 5.0;
    scenes[0].ds_per_subject = {{"A", 0.5}};
    scenes[0].detection_log = {{"A", Box{1, 2, 3, 4}, 0.9, true}};
    MetricsReport report = aggregate_report(scenes);

    const nlohmann::json j = report.to_json();
    CHECK(j["schema"] == "dreamstory.metrics.v1");
    REQUIRE(j["notes"].is_array());
    REQUIRE(j["notes"].size() == 1);
    const std::string note = j["notes"][0].get<std::string>();
    CHECK(note.find("greedy by detection score") != std::string::npos);
    CHECK(note.find("IoU <= 0.5") != std::string::npos);
    CHECK(note.find("zero when any expected subject is undetected") != std::string::npos);

    REQUIRE(j["scenes"].size() == 1);
    const nlohmann::json& s = j["scenes"][0];
    CHECK(s["ds"]["A"].get<double>() == doctest::Approx(0.5));
    CHECK(s["ds_mean"].get<double>() == doctest::Approx(0.5));
    CHECK(s["dc_ds"].is_null());
    REQUIRE(s["detections"].size() == 1);
    CHECK(s["detections"][0]["box"] == nlohmann::json::array({1, 2, 3, 4}));
    CHECK(s["detections"][0]["found"] == true);
    CHECK(j["groups"].contains("2"));
    CHECK(j["overall"]["n"].get<int>() == 1);

    const std::string table = render_metrics_table(report);
    CHECK(table.find("group") == 0);
    CHECK(table.find("AES") != std::string::npos);
    CHECK(table.find("CLIP-T") != std::string::npos);
    CHECK(table.find("D&C-DS") != std::string::npos);
    CHECK(table.find("k=2") != std::string::npos);
    CHECK(table.find("\nall") != std::string::npos);
    CHECK(table.find("note: ") != std::string::npos);
    CHECK(table.find("-") != std::string::npos);  // unset clip_t renders as a dash
}

TEST_CASE("annotation table leads with the published reference row") {
    AnnotationAccuracy acc;
    acc.decision_pct = {{0, 100.0}, {1, 50.0}};
    acc.decision_n = {{0, 4}, {1, 4}};
    const std::string table = render_annotation_table({{"scripted", acc}});

    CHECK(table.find("model") == 0);
    CHECK(table.find("k=0") != std::string::npos);
    CHECK(table.find("k=3") != std::string::npos);

    const size_t ref_pos = table.find("ChatGPT4");
    const size_t own_pos = table.find("scripted");
    REQUIRE(ref_pos != std::string::npos);
    REQUIRE(own_pos != std::string::npos);
    CHECK(ref_pos < own_pos);

    CHECK(table.find("100.00") != std::string::npos);
    CHECK(table.find("98.86") != std::string::npos);
    CHECK(table.find("95.29") != std::string::npos);
    CHECK(table.find("91.28") != std::string::npos);
    // Missing subject counts in the scored row render as dashes.
    const std::string own_row = table.substr(own_pos);
    CHECK(own_row.find("50.00") != std::string::npos);
    CHECK(own_row.find("-") != std::string::npos);
}

TEST_CASE("run evaluation scores the manifest scenes") {
    StoryPlan plan = demo_plan();
    // Scene 2 carries no rewrite so the scorer must fall back to the raw prompt.
    plan.scenes[2].rewritten_prompt.clear();
    const fs::path dir = temp_dir("eval_run");
    MockDenoiser backend(7);
    MockSegmenter segmenter;
    const StoryResult rr = run_story(plan, fast_config(), backend, segmenter, dir.string());
    REQUIRE(rr.scenes_failed == 0);
    const fs::path run_root(rr.out_dir);

    MockDetector detector;
    MockPerceptualSimilarity sim;
    MockTextImageScorer clip;
    MockAestheticScorer aes;
    EvalBackends backends{detector, sim, clip, aes};

    // Pin text-image scores against the exact prompts the scorer should see:
    // the rewritten prompt when present, the raw prompt for subject-free scenes.
    const nlohmann::json manifest = read_json_file(run_root / "manifest.json");
    const Image img0 = read_png(run_root / manifest["scenes"][0]["image"].get<std::string>());
    const Image img2 = read_png(run_root / manifest["scenes"][2]["image"].get<std::string>());
    REQUIRE_FALSE(plan.scenes[0].rewritten_prompt.empty());
    CHECK(plan.scenes[2].rewritten_prompt.empty());
    clip.pin(img0, plan.scenes[0].rewritten_prompt, 0.777);
    clip.pin(img2, plan.scenes[2].raw_prompt, 0.555);

    const MetricsReport report =
        evaluate_run(run_root.string(), backends, MetricsSelection{}, {});
    REQUIRE(report.scenes.size() == 3);

    const SceneMetrics& s0 = report.scenes[0];
    CHECK(s0.id == "0");
    CHECK(s0.k_subjects == 1);
    CHECK(s0.aes.has_value());
    CHECK(*s0.clip_t == doctest::Approx(0.777));
    REQUIRE(s0.ds_per_subject.count("Mira") == 1);
    CHECK(s0.detection_log.size() == 1);
    CHECK(s0.detection_log[0].found);  // procedural detector always proposes a box
    CHECK(s0.dc_ds.has_value());
    CHECK(*s0.dc_ds > 0.0);

    const SceneMetrics& s1 = report.scenes[1];
    CHECK(s1.k_subjects == 2);
    CHECK(s1.ds_per_subject.size() == 2);
    // The procedural fallback proposes the same centered box for both
    // categories, so the pairwise-overlap rule zeroes the joint score.
    CHECK(*s1.dc_ds == 0.0);

    const SceneMetrics& s2 = report.scenes[2];
    CHECK(s2.k_subjects == 0);
    CHECK(*s2.clip_t == doctest::Approx(0.555));
    CHECK(s2.ds_per_subject.empty());
    CHECK_FALSE(s2.dc_ds.has_value());

    CHECK(report.groups.at(0).n == 1);
    CHECK(report.groups.at(1).n == 1);
    CHECK(report.groups.at(2).n == 1);
    CHECK(report.overall.n == 3);

    SUBCASE("excluded scene indices are skipped") {
        const MetricsReport partial =
            evaluate_run(run_root.string(), backends, MetricsSelection{}, {1});
        REQUIRE(partial.scenes.size() == 2);
        CHECK(partial.scenes[0].id == "0");
        CHECK(partial.scenes[1].id == "2");
        CHECK(partial.groups.count(2) == 0);
    }

    SUBCASE("metric selection limits what is computed") {
        const MetricsReport only =
            evaluate_run(run_root.string(), backends, MetricsSelection::parse("aes"), {});
        const SceneMetrics& m = only.scenes[0];
        CHECK(m.aes.has_value());
        CHECK_FALSE(m.clip_t.has_value());
        CHECK(m.ds_per_subject.empty());
        CHECK_FALSE(m.dc_ds.has_value());
    }

    SUBCASE("manifests referencing unknown plan entities are rejected") {
        nlohmann::json tampered = manifest;
        tampered["anchors"][0]["subject"] = "Ghost";
        write_json_atomic(run_root / "manifest.json", tampered);
        CHECK_THROWS_AS(
            evaluate_run(run_root.string(), backends, MetricsSelection{}, {}),
            PlanIntegrityError);

        tampered = manifest;
        tampered["scenes"][0]["index"] = 99;
        write_json_atomic(run_root / "manifest.json", tampered);
        CHECK_THROWS_AS(
            evaluate_run(run_root.string(), backends, MetricsSelection{}, {}),
            PlanIntegrityError);
        write_json_atomic(run_root / "manifest.json", manifest);
    }
}

TEST_CASE("run evaluation rejects foreign manifests") {
    const fs::path dir = temp_dir("eval_schema");
    write_json_atomic(dir / "manifest.json", nlohmann::json{{"schema", "bogus.v9"}});
    MockDetector detector;
    MockPerceptualSimilarity sim;
    MockTextImageScorer clip;
    MockAestheticScorer aes;
    EvalBackends backends{detector, sim, clip, aes};
    CHECK_THROWS_AS(evaluate_run(dir.string(), backends, MetricsSelection{}, {}), SchemaError);
}
