// sir: train, evaluate and visualize the reconstruction-based anomaly
// detector from the command line.
//
// Exit codes (also listed in --help):
//   0 success
//   2 usage error (unknown flag / bad invocation)
//   3 configuration error (bad key, bad value, schema violation)
//   4 I/O error (missing or unwritable file)
//   5 data error (malformed image, manifest or checkpoint payload)
//   6 shape error (tensor/architecture mismatch)
//   7 state error (inconsistent run state)

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <sir/sir.hpp>

namespace {

int exit_code(sir::ErrorKind kind) {
    switch (kind) {
        case sir::ErrorKind::usage: return 2;
        case sir::ErrorKind::config: return 3;
        case sir::ErrorKind::io: return 4;
        case sir::ErrorKind::data: return 5;
        case sir::ErrorKind::shape: return 6;
        case sir::ErrorKind::state: return 7;
    }
    return 1;
}

const char* kind_name(sir::ErrorKind kind) {
    switch (kind) {
        case sir::ErrorKind::usage: return "usage";
        case sir::ErrorKind::config: return "config";
        case sir::ErrorKind::io: return "io";
        case sir::ErrorKind::data: return "data";
        case sir::ErrorKind::shape: return "shape";
        case sir::ErrorKind::state: return "state";
    }
    return "error";
}

// Shared flags: config file, key=value overrides and the output directory.
struct CommonOpts {
    std::string config_file;
    std::vector<std::string> sets;
    std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_file, "Key=value configuration file");
    cmd->add_option("--set", opts.sets, "Override a config key, e.g. --set seed=7 (repeatable)");
    cmd->add_option("--out", opts.out, "Output directory (overrides out_dir from the config)");
}

// Resolution order: defaults < checkpoint echo < config file < --set < --out.
// SIR_OUT_ROOT supplies the output root when nothing else names one.
sir::Config resolve_config(const CommonOpts& opts, const std::string& fallback_subdir,
                           const std::string& ckpt_echo = "") {
    sir::Config cfg;
    if (!ckpt_echo.empty()) {
        for (const auto& [k, v] : sir::parse_kv(ckpt_echo)) {
            if (k.rfind("state.", 0) == 0) continue;
            sir::apply_config_kv(cfg, k, v);
        }
        cfg.out_dir.clear();
        cfg.manifest_paths.clear();
    }
    if (!opts.config_file.empty()) {
        for (const auto& [k, v] : sir::parse_kv([&] {
                 std::ifstream f(opts.config_file);
                 if (!f) sir::fail(sir::ErrorKind::io, opts.config_file + ": cannot open config file");
                 std::stringstream ss;
                 ss << f.rdbuf();
                 return ss.str();
             }()))
            sir::apply_config_kv(cfg, k, v);
    }
    for (const std::string& s : opts.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            sir::fail(sir::ErrorKind::usage, "--set expects key=value, got '" + s + "'");
        sir::apply_config_kv(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    if (!opts.out.empty()) cfg.out_dir = opts.out;
    if (cfg.out_dir.empty()) {
        const char* root = std::getenv("SIR_OUT_ROOT");
        cfg.out_dir = (std::filesystem::path(root ? root : "out") / fallback_subdir).string();
    }
    return cfg;
}

std::vector<sir::DatasetManifest> load_manifests(const sir::Config& cfg) {
    if (cfg.manifest_paths.empty())
        sir::fail(sir::ErrorKind::config, "no dataset manifests configured (key 'manifests')");
    std::vector<sir::DatasetManifest> out;
    for (const std::string& p : cfg.manifest_paths) out.push_back(sir::load_manifest(p));
    return out;
}

void echo_config(const sir::Config& cfg) {
    sir::write_text_file((std::filesystem::path(cfg.out_dir) / "config_effective.txt").string(),
                         sir::config_echo(cfg));
}

// Rebuilds the model a checkpoint was trained with and loads its weights.
sir::SirModel model_from_checkpoint(const sir::Checkpoint& ckpt, const sir::Config& cfg) {
    sir::SirModel model = sir::make_model(cfg.seed, cfg.channels, cfg.base_channels, cfg.loops,
                                          cfg.epsilon_cos, cfg.leaky_slope);
    sir::apply_checkpoint(ckpt, model, nullptr);
    return model;
}

void print_report(const sir::RunReport& rep) {
    std::cout << sir::report_table(rep) << "\n";
    for (const sir::DomainReport& d : rep.domains)
        std::cout << d.domain << " final fused AUROC = " << sir::fmt_double(d.final_auroc) << "\n";
}

int cmd_synth(const CommonOpts& opts) {
    sir::Config cfg = resolve_config(opts, "synth");
    echo_config(cfg);
    auto manifests = sir::synth_benchmark(cfg.out_dir, cfg.synth);
    std::cout << "generated " << manifests.size() << " domains under " << cfg.out_dir << "\n";
    for (const sir::DatasetManifest& m : manifests)
        std::cout << "  " << m.domain << ": " << m.train_normal.size() << " train, "
                  << m.test_normal.size() << "+" << m.test_anomalous.size() << " test\n";
    return 0;
}

int cmd_train(const CommonOpts& opts) {
    sir::Config cfg = resolve_config(opts, "train");
    sir::validate_config(cfg);
    echo_config(cfg);
    auto reports = sir::run_protocol(cfg, load_manifests(cfg), cfg.out_dir);
    for (const sir::RunReport& rep : reports) print_report(rep);
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_path) {
    sir::Checkpoint ckpt = sir::load_checkpoint_file(ckpt_path);
    sir::Config cfg = resolve_config(opts, "eval", ckpt.config_echo);
    sir::validate_config(cfg);
    echo_config(cfg);
    sir::SirModel model = model_from_checkpoint(ckpt, cfg);

    sir::RunReport rep;
    rep.run_name = "eval";
    rep.protocol = cfg.protocol;
    rep.seed = cfg.seed;
    rep.loops = cfg.loops;
    rep.iterations = 0;
    rep.config = sir::config_echo(cfg);
    for (const sir::DatasetManifest& m : load_manifests(cfg)) {
        sir::DomainTestSet test;
        test.domain = m.domain;
        for (const std::string& p : m.test_normal) test.normal_paths.push_back(m.resolve(p));
        for (const std::string& p : m.test_anomalous) test.anomalous_paths.push_back(m.resolve(p));
        rep.domains.push_back(sir::evaluate_domain(model, cfg.sigma_smooth, test, cfg.image_size, cfg.channels));
    }
    sir::write_text_file((std::filesystem::path(cfg.out_dir) / "report.kv").string(), sir::report_kv(rep));
    sir::write_text_file((std::filesystem::path(cfg.out_dir) / "report.txt").string(), sir::report_table(rep));
    print_report(rep);
    return 0;
}

int cmd_score(const CommonOpts& opts, const std::string& ckpt_path, const std::string& image_path,
              bool dump_maps) {
    sir::Checkpoint ckpt = sir::load_checkpoint_file(ckpt_path);
    sir::Config cfg = resolve_config(opts, "score", ckpt.config_echo);
    sir::validate_config(cfg);
    sir::SirModel model = model_from_checkpoint(ckpt, cfg);

    sir::SampleRecord rec = sir::load_sample(image_path, "", false, cfg.image_size, cfg.channels);
    sir::AnomalyResult res = sir::anomaly_maps(model, rec.image, cfg.sigma_smooth);
    std::cout << "score = " << sir::fmt_double(res.score) << "\n";
    if (dump_maps) {
        echo_config(cfg);
        const std::string stem = std::filesystem::path(image_path).stem().string();
        std::vector<sir::Tensor> all = res.per_loop_maps;
        all.push_back(res.final_map);
        auto norm = sir::normalize_maps(all, cfg.render);
        for (std::size_t l = 0; l < res.per_loop_maps.size(); ++l) {
            const auto name = stem + "__loop" + std::to_string(l + 1) + ".ppm";
            sir::write_image((std::filesystem::path(cfg.out_dir) / name).string(),
                             sir::render_overlay(rec.image, norm[l], cfg.render));
        }
        sir::write_image((std::filesystem::path(cfg.out_dir) / (stem + "__loopfinal.ppm")).string(),
                         sir::render_overlay(rec.image, norm.back(), cfg.render));
        std::cout << "maps written under " << cfg.out_dir << "\n";
    }
    return 0;
}

int cmd_render(const CommonOpts& opts, const std::string& ckpt_path) {
    sir::Checkpoint ckpt = sir::load_checkpoint_file(ckpt_path);
    sir::Config cfg = resolve_config(opts, "render", ckpt.config_echo);
    sir::validate_config(cfg);
    echo_config(cfg);
    sir::SirModel model = model_from_checkpoint(ckpt, cfg);

    for (const sir::DatasetManifest& m : load_manifests(cfg)) {
        // score the whole test set first so normalization uses global percentiles
        std::vector<std::string> paths;
        for (const std::string& p : m.test_normal) paths.push_back(m.resolve(p));
        for (const std::string& p : m.test_anomalous) paths.push_back(m.resolve(p));
        std::vector<sir::Tensor> images;
        std::vector<sir::AnomalyResult> results;
        std::vector<sir::Tensor> pool;
        for (const std::string& p : paths) {
            sir::SampleRecord rec = sir::load_sample(p, m.domain, false, cfg.image_size, cfg.channels);
            sir::AnomalyResult res = sir::anomaly_maps(model, rec.image, cfg.sigma_smooth);
            for (const sir::Tensor& t : res.per_loop_maps) pool.push_back(t);
            pool.push_back(res.final_map);
            images.push_back(std::move(rec.image));
            results.push_back(std::move(res));
        }
        auto norm = sir::normalize_maps(pool, cfg.render);
        const int L = static_cast<int>(results.empty() ? 0 : results[0].per_loop_maps.size());
        std::size_t ni = 0;
        for (std::size_t i = 0; i < paths.size(); ++i) {
            const std::string stem = std::filesystem::path(paths[i]).stem().string();
            const auto ddir = std::filesystem::path(cfg.out_dir) / m.domain;
            for (int l = 0; l < L; ++l)
                sir::write_image((ddir / (stem + "__loop" + std::to_string(l + 1) + ".ppm")).string(),
                                 sir::render_overlay(images[i], norm[ni + l], cfg.render));
            sir::write_image((ddir / (stem + "__loopfinal.ppm")).string(),
                             sir::render_overlay(images[i], norm[ni + L], cfg.render));
            ni += L + 1;
        }
        std::cout << m.domain << ": " << paths.size() << " overlays written\n";
    }
    return 0;
}

int cmd_ablate(const CommonOpts& opts, std::vector<int> l_values) {
    sir::Config cfg = resolve_config(opts, "ablate");
    sir::validate_config(cfg);
    echo_config(cfg);
    if (l_values.empty()) l_values = {1, 3, 5, 7};
    sir::AblationTable table = sir::loop_ablation(cfg, l_values, load_manifests(cfg), cfg.out_dir);
    sir::write_text_file((std::filesystem::path(cfg.out_dir) / "ablation.kv").string(), sir::ablation_kv(table));
    sir::write_text_file((std::filesystem::path(cfg.out_dir) / "ablation.txt").string(),
                         sir::ablation_table_text(table));
    std::cout << sir::ablation_table_text(table);
    return 0;
}

int cmd_gradcheck(const CommonOpts& opts) {
    sir::Config cfg = resolve_config(opts, "gradcheck");
    sir::GradCheckReport rep = sir::grad_check(cfg);
    std::cout << "max relative error = " << sir::fmt_double(rep.max_rel_error) << " over "
              << rep.params_checked << " parameters\n";
    return rep.max_rel_error < 1e-4 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sir: iterative reconstruction anomaly detection"};
    app.require_subcommand(1);
    app.footer("Exit codes: 0 ok, 2 usage, 3 config, 4 io, 5 data, 6 shape, 7 state.\n"
               "SIR_OUT_ROOT names the default output root when no out_dir is configured.");

    CommonOpts synth_o, train_o, eval_o, score_o, render_o, ablate_o, grad_o;
    std::string eval_ckpt, score_ckpt, score_image, render_ckpt;
    bool score_dump = false;
    std::vector<int> ablate_l;

    add_common(app.add_subcommand("synth", "Generate the synthetic benchmark"), synth_o);
    add_common(app.add_subcommand("train", "Train per the configured protocol and report AUROC"), train_o);
    CLI::App* eval = app.add_subcommand("eval", "Evaluate an existing checkpoint");
    add_common(eval, eval_o);
    eval->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
    CLI::App* score = app.add_subcommand("score", "Score a single image");
    add_common(score, score_o);
    score->add_option("--ckpt", score_ckpt, "Checkpoint file")->required();
    score->add_option("--image", score_image, "Image to score (PGM/PPM)")->required();
    score->add_flag("--dump-maps", score_dump, "Also write per-loop overlay maps");
    CLI::App* render = app.add_subcommand("render", "Render overlays for the configured test sets");
    add_common(render, render_o);
    render->add_option("--ckpt", render_ckpt, "Checkpoint file")->required();
    CLI::App* ablate = app.add_subcommand("ablate", "Run the loop-count ablation");
    add_common(ablate, ablate_o);
    ablate->add_option("--loops", ablate_l, "L values to ablate (default 1 3 5 7)");
    add_common(app.add_subcommand("gradcheck", "Finite-difference check of the student gradient"), grad_o);

    try {
        app.parse(argc, argv);
        if (app.got_subcommand("synth")) return cmd_synth(synth_o);
        if (app.got_subcommand("train")) return cmd_train(train_o);
        if (app.got_subcommand("eval")) return cmd_eval(eval_o, eval_ckpt);
        if (app.got_subcommand("score")) return cmd_score(score_o, score_ckpt, score_image, score_dump);
        if (app.got_subcommand("render")) return cmd_render(render_o, render_ckpt);
        if (app.got_subcommand("ablate")) return cmd_ablate(ablate_o, ablate_l);
        if (app.got_subcommand("gradcheck")) return cmd_gradcheck(grad_o);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::cerr << "error: usage: " << e.what() << "\n";
        return 2;
    } catch (const sir::Error& e) {
        std::cerr << "error: " << kind_name(e.kind()) << ": " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
