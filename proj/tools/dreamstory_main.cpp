#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dreamstory/benchmark.hpp"
#include "dreamstory/director.hpp"
#include "dreamstory/errors.hpp"
#include "dreamstory/json_util.hpp"
#include "dreamstory/llm.hpp"
#include "dreamstory/log.hpp"
#include "dreamstory/metrics.hpp"
#include "dreamstory/mock_backend.hpp"
#include "dreamstory/pipeline.hpp"
#include "dreamstory/story.hpp"
#include "dreamstory/templates.hpp"

namespace fs = std::filesystem;
using namespace dreamstory;

namespace {

// Weight seed of CLI-constructed mock backends; fixed so the same flags
// always describe the same model.
constexpr uint64_t kBackendWeightSeed = 0x5EED5EED;

int exit_code_for(const Error& e) {
    const std::string& kind = e.kind();
    if (kind == "SchemaError") return 3;
    if (kind == "LLMFormatError" || kind == "SceneCountMismatch" || kind == "RewriteLeak")
        return 2;
    return 1;
}

std::unique_ptr<DenoiserBackend> make_backend(const std::string& spec) {
    if (spec == "mock") return std::make_unique<MockDenoiser>(kBackendWeightSeed);
    if (spec.rfind("mock:", 0) == 0) {
        const MockSpec ms = MockSpec::from_json(read_json_file(spec.substr(5)));
        return std::make_unique<MockDenoiser>(kBackendWeightSeed, ms);
    }
    throw ConfigError("unknown backend '" + spec + "' (expected mock or mock:SPEC.json)");
}

TemplateRegistry load_templates(const std::string& dir) {
    return dir.empty() ? TemplateRegistry::builtin() : TemplateRegistry::from_dir(dir);
}

struct PlanArgs {
    std::string story;
    std::string llm;
    std::string templates_dir;
    std::string out = "plan.json";
    int scenes = 0;  // 0: the model chooses
    int max_subjects = 8;
    int word_limit = 40;
    int retries = 3;
};

StoryPlan build_plan(const PlanArgs& a) {
    const std::string story_text = read_text_file(a.story);
    auto llm = make_llm_client(a.llm);
    DirectorConfig dc;
    dc.max_subjects = a.max_subjects;
    dc.word_limit = a.word_limit;
    dc.retries = a.retries;
    if (a.scenes > 0) dc.n_scenes = a.scenes;
    StoryDirector director(*llm, load_templates(a.templates_dir), dc);
    return director.build_story_plan(story_text);
}

int cmd_plan(const PlanArgs& a) {
    const StoryPlan plan = build_plan(a);
    write_plan(plan, a.out);
    std::cout << "plan: " << a.out << " (" << plan.subjects.size() << " subject(s), "
              << plan.scenes.size() << " scene(s))\n";
    return 0;
}

struct RunArgs {
    PlanArgs plan_args;
    std::string plan_path;
    std::string backend = "mock";
    std::string out = "out";
    std::string config_path;
    RenderConfig rc;
    std::string mmsa_layers = "decoder";
    std::string mmca_layers = "all";
    std::string mask_refine = "off";
    std::string union_mode = "union";
    bool disable_mmsa = false;
    bool disable_mmca = false;
    bool disable_rewrite = false;
};

int cmd_run(const RunArgs& a, const CLI::App* cmd) {
    if (a.plan_path.empty() == a.plan_args.story.empty())
        throw ConfigError("pass exactly one of --plan or --story");
    StoryPlan plan;
    if (!a.plan_path.empty()) {
        plan = read_plan(a.plan_path);
    } else {
        if (a.plan_args.llm.empty()) throw ConfigError("--story needs --llm");
        plan = build_plan(a.plan_args);
    }

    // Precedence: defaults, then the config file, then explicit flags.
    RenderConfig rc;
    if (!a.config_path.empty()) rc = RenderConfig::from_json(read_json_file(a.config_path));
    const auto set = [&](const std::string& flag) { return cmd->count(flag) > 0; };
    if (set("--steps")) rc.steps = a.rc.steps;
    if (set("--guidance")) rc.guidance_scale = a.rc.guidance_scale;
    if (set("--width")) rc.width = a.rc.width;
    if (set("--height")) rc.height = a.rc.height;
    if (set("--lambda")) rc.lambda = a.rc.lambda;
    if (set("--dropout")) rc.dropout = a.rc.dropout;
    if (set("--style")) rc.style_suffix = a.rc.style_suffix;
    if (set("--seed")) rc.seed = a.rc.seed;
    if (set("--workers")) rc.workers = a.rc.workers;
    if (set("--fail-fast")) rc.fail_fast = true;
    if (set("--mmsa-layers")) rc.mmsa_layers = layer_scope_from_string(a.mmsa_layers);
    if (set("--mmca-layers")) rc.mmca_layers = layer_scope_from_string(a.mmca_layers);
    if (set("--mask-refine")) rc.mask_refine = refine_mode_from_string(a.mask_refine);
    if (set("--union-mode"))
        rc.union_mode = a.union_mode == "intersection" ? mask::UnionMode::intersection_min
                                                       : mask::UnionMode::union_max;
    if (a.disable_mmsa) rc.mmsa_enabled = false;
    if (a.disable_mmca) rc.mmca_enabled = false;
    if (a.disable_rewrite) rc.use_raw_prompts = true;

    auto backend = make_backend(a.backend);
    MockSegmenter segmenter;
    const StoryResult result = run_story(plan, rc, *backend, segmenter, a.out);
    std::cout << "run: " << result.out_dir << " (" << result.scenes_ok << " ok, "
              << result.scenes_failed << " failed)\n";
    return result.scenes_failed == 0 ? 0 : 1;
}

struct BenchBuildArgs {
    std::string llm;
    std::string templates_dir;
    std::string out = "bench.json";
    std::string ks = "0,1,2,3";
    int pool = 10;
    int per_group = 10;
    int word_limit = 40;
    int retries = 3;
    uint64_t seed = 0;
};

int cmd_bench_build(const BenchBuildArgs& a) {
    auto llm = make_llm_client(a.llm);
    BenchConfig cfg;
    cfg.pool_size = a.pool;
    cfg.word_limit = a.word_limit;
    cfg.retries = a.retries;
    cfg.seed = a.seed;
    cfg.group_sizes.clear();
    std::istringstream in(a.ks);
    std::string token;
    while (std::getline(in, token, ',')) {
        if (token.empty()) continue;
        size_t pos = 0;
        const int k = std::stoi(token, &pos);
        if (pos != token.size() || k < 0 || k > 3)
            throw ConfigError("--ks entries must be integers in {0,1,2,3}, got '" + token + "'");
        cfg.group_sizes[k] = a.per_group;
    }
    if (cfg.group_sizes.empty()) throw ConfigError("--ks selected no groups");

    const BenchmarkManifest manifest = build_benchmark(*llm, load_templates(a.templates_dir), cfg);
    export_manifest(manifest, a.out);
    std::cout << "bench: " << a.out << " (" << manifest.cases.size() << " case(s), pool "
              << manifest.pool.size() << ")\n";
    return 0;
}

struct BenchEvalArgs {
    std::string bench;
    std::string llm;
    std::string templates_dir;
    std::string out = "annotation_metrics.json";
    int queries = 4;
    int retries = 3;
};

int cmd_bench_eval(const BenchEvalArgs& a) {
    const BenchmarkManifest manifest = import_manifest(a.bench);
    auto llm = make_llm_client(a.llm);
    const AnnotationRun run =
        annotate_cases(manifest, *llm, load_templates(a.templates_dir), a.queries, a.retries);
    const AnnotationAccuracy acc =
        annotation_accuracy(run.predictions, run.ground_truth, run.case_k);

    MetricsReport report;
    report.annotation[run.model_id] = acc;
    write_json_atomic(a.out, report.to_json());
    const std::string table = render_annotation_table(report.annotation);
    std::cout << table;
    write_text_file(fs::path(a.out).replace_extension(".txt"), table);
    return 0;
}

struct EvalArgs {
    std::string results;
    std::string bench;
    std::string metrics = "aes,clip_t,ds,dc_ds";
    std::string out;
};

int cmd_eval(const EvalArgs& a) {
    const MetricsSelection selection = MetricsSelection::parse(a.metrics);
    std::vector<int> exclude;
    if (!a.bench.empty()) {
        // Runs rendered from a benchmark keep case order, so rejected
        // cases map to their scene index.
        const BenchmarkManifest manifest = import_manifest(a.bench);
        for (size_t i = 0; i < manifest.cases.size(); ++i)
            if (manifest.cases[i].review_status == ReviewStatus::rejected)
                exclude.push_back(static_cast<int>(i));
    }
    MockDetector detector;
    MockPerceptualSimilarity sim;
    MockTextImageScorer clip;
    MockAestheticScorer aes;
    const MetricsReport report =
        evaluate_run(a.results, EvalBackends{detector, sim, clip, aes}, selection, exclude);

    const std::string out = a.out.empty() ? (fs::path(a.results) / "metrics.json").string() : a.out;
    write_json_atomic(out, report.to_json());
    const std::string table = render_metrics_table(report);
    std::cout << table;
    write_text_file(fs::path(out).replace_extension(".txt"), table);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dreamstory: subject-consistent story-to-image rendering"};
    app.require_subcommand(1);
    std::string log_format = "text";
    app.add_option("--log", log_format, "log format: json|text")->capture_default_str();

    PlanArgs plan_args;
    CLI::App* plan_cmd = app.add_subcommand("plan", "derive a story plan from narrative text");
    plan_cmd->add_option("--story", plan_args.story, "story text file")->required();
    plan_cmd->add_option("--llm", plan_args.llm, "LLM spec: replay:PATH or scripted:PATH")
        ->required();
    plan_cmd->add_option("--scenes", plan_args.scenes, "scene count (0: model chooses)")
        ->capture_default_str();
    plan_cmd->add_option("--out", plan_args.out, "output plan path")->capture_default_str();
    plan_cmd->add_option("--templates", plan_args.templates_dir, "prompt template directory");
    plan_cmd->add_option("--max-subjects", plan_args.max_subjects, "subject cap")
        ->capture_default_str();
    plan_cmd->add_option("--word-limit", plan_args.word_limit, "scene prompt word limit")
        ->capture_default_str();
    plan_cmd->add_option("--retries", plan_args.retries, "LLM re-asks per stage")
        ->capture_default_str();

    RunArgs run_args;
    CLI::App* run_cmd = app.add_subcommand("run", "render a story end to end");
    run_cmd->add_option("--plan", run_args.plan_path, "existing plan.json");
    run_cmd->add_option("--story", run_args.plan_args.story, "story text file (needs --llm)");
    run_cmd->add_option("--llm", run_args.plan_args.llm, "LLM spec for --story");
    run_cmd->add_option("--templates", run_args.plan_args.templates_dir,
                        "prompt template directory");
    run_cmd->add_option("--scenes", run_args.plan_args.scenes, "scene count for --story")
        ->capture_default_str();
    run_cmd->add_option("--backend", run_args.backend, "denoiser: mock or mock:SPEC.json")
        ->capture_default_str();
    run_cmd->add_option("--out", run_args.out, "output directory")->capture_default_str();
    run_cmd->add_option("--config", run_args.config_path, "render config file (flags override)");
    run_cmd->add_option("--seed", run_args.rc.seed, "run seed")->capture_default_str();
    run_cmd->add_option("--steps", run_args.rc.steps, "denoising steps")->capture_default_str();
    run_cmd->add_option("--guidance", run_args.rc.guidance_scale, "guidance scale")
        ->capture_default_str();
    run_cmd->add_option("--width", run_args.rc.width, "image width")->capture_default_str();
    run_cmd->add_option("--height", run_args.rc.height, "image height")->capture_default_str();
    run_cmd->add_option("--lambda", run_args.rc.lambda, "text-injection fusion weight")
        ->capture_default_str();
    run_cmd->add_option("--dropout", run_args.rc.dropout, "reference token dropout rate")
        ->capture_default_str();
    run_cmd->add_option("--style", run_args.rc.style_suffix, "style suffix added to prompts");
    run_cmd->add_option("--workers", run_args.rc.workers, "concurrent scene renders")
        ->capture_default_str();
    run_cmd->add_flag("--fail-fast", "stop at the first scene failure");
    run_cmd->add_option("--mmsa-layers", run_args.mmsa_layers, "self-attention scope: decoder|all")
        ->capture_default_str();
    run_cmd->add_option("--mmca-layers", run_args.mmca_layers, "cross-attention scope: decoder|all")
        ->capture_default_str();
    run_cmd->add_option("--mask-refine", run_args.mask_refine, "mask refinement: off|auto|on")
        ->capture_default_str();
    run_cmd->add_option("--union-mode", run_args.union_mode,
                        "overlap normalizer: union|intersection")
        ->capture_default_str();
    run_cmd->add_flag("--disable-mmsa", run_args.disable_mmsa, "ablation: no reference attention");
    run_cmd->add_flag("--disable-mmca", run_args.disable_mmca, "ablation: no subject-text fusion");
    run_cmd->add_flag("--disable-rewrite", run_args.disable_rewrite,
                      "ablation: render raw prompts");

    CLI::App* bench_cmd = app.add_subcommand("bench", "benchmark construction and evaluation");
    bench_cmd->require_subcommand(1);
    BenchBuildArgs bb;
    CLI::App* bench_build = bench_cmd->add_subcommand("build", "generate a benchmark manifest");
    bench_build->add_option("--llm", bb.llm, "LLM spec")->required();
    bench_build->add_option("--templates", bb.templates_dir, "prompt template directory");
    bench_build->add_option("--out", bb.out, "manifest path")->capture_default_str();
    bench_build->add_option("--pool", bb.pool, "subject pool size")->capture_default_str();
    bench_build->add_option("--per-group", bb.per_group, "cases per subject-count group")
        ->capture_default_str();
    bench_build->add_option("--ks", bb.ks, "subject-count groups to build")
        ->capture_default_str();
    bench_build->add_option("--word-limit", bb.word_limit, "scene prompt word limit")
        ->capture_default_str();
    bench_build->add_option("--seed", bb.seed, "sampling seed")->capture_default_str();
    bench_build->add_option("--retries", bb.retries, "LLM re-asks per stage")
        ->capture_default_str();

    BenchEvalArgs be;
    CLI::App* bench_eval = bench_cmd->add_subcommand("eval", "score presence annotation accuracy");
    bench_eval->add_option("--bench", be.bench, "benchmark manifest")->required();
    bench_eval->add_option("--llm", be.llm, "LLM spec")->required();
    bench_eval->add_option("--templates", be.templates_dir, "prompt template directory");
    bench_eval->add_option("--out", be.out, "metrics output path")->capture_default_str();
    bench_eval->add_option("--queries", be.queries, "presence questions per case")
        ->capture_default_str();
    bench_eval->add_option("--retries", be.retries, "LLM re-asks per stage")
        ->capture_default_str();

    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "score a finished run directory");
    eval_cmd->add_option("--results", ev.results, "run directory")->required();
    eval_cmd->add_option("--bench", ev.bench, "benchmark manifest for case filtering");
    eval_cmd->add_option("--metrics", ev.metrics, "metric selection")->capture_default_str();
    eval_cmd->add_option("--out", ev.out, "metrics output path (default RESULTS/metrics.json)");

    std::string templates_out;
    CLI::App* templates_cmd = app.add_subcommand("templates", "prompt template utilities");
    templates_cmd->require_subcommand(1);
    CLI::App* templates_export =
        templates_cmd->add_subcommand("export", "write the builtin stage templates to a directory");
    templates_export->add_option("--out", templates_out, "target directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }

    if (log_format == "json")
        log::set_format(log::Format::json);
    else if (log_format == "text")
        log::set_format(log::Format::text);
    else {
        std::cerr << "ConfigError: unknown log format '" << log_format << "'\n";
        return 1;
    }

    try {
        if (plan_cmd->parsed()) return cmd_plan(plan_args);
        if (run_cmd->parsed()) return cmd_run(run_args, run_cmd);
        if (bench_build->parsed()) return cmd_bench_build(bb);
        if (bench_eval->parsed()) return cmd_bench_eval(be);
        if (eval_cmd->parsed()) return cmd_eval(ev);
        if (templates_export->parsed()) {
            TemplateRegistry::builtin().export_dir(templates_out);
            std::cout << "templates: " << templates_out << "\n";
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "no subcommand\n";
    return 1;
}
