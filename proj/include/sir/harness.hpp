// Training/evaluation orchestration: protocol runs, loop ablation,
// gradient checking and report emission.

#pragma once

#include <algorithm>
#include <chrono>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "data.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "persist.hpp"
#include "scoring.hpp"
#include "tensor.hpp"

namespace sir {

inline Tensor stack_batch(const std::vector<const Tensor*>& items) {
    if (items.empty()) fail(ErrorKind::shape, "stack_batch: empty batch");
    Shape s = items[0]->shape;
    Tensor out(Shape{static_cast<int>(items.size()) * s.n, s.c, s.h, s.w});
    std::size_t off = 0;
    for (const Tensor* t : items) {
        if (!(t->shape == s)) fail(ErrorKind::shape, "stack_batch: mixed shapes");
        std::copy(t->data.begin(), t->data.end(), out.data.begin() + off);
        off += t->data.size();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trainer
//
// Batches of `batch_size` indices are drawn with replacement from the train
// set. Duplicate batch entries are collapsed into a weighted unique batch;
// batch_weighted_mean makes this exactly equal to the naive batch mean, in
// value and in gradient. Teacher features per train image are computed once
// (the teacher is frozen and pure).
//
// RNG stream partitioning (all derived from the run seed):
//   teacher_init / student_init  - parameter initialization (model.hpp)
//   batching                     - batch index draws, position checkpointed
//   select:<domain>              - protocol sample selection (data.hpp)
//   gradcheck                    - grad_check inputs
// ---------------------------------------------------------------------------

class Trainer {
public:
    Trainer(Config cfg, std::vector<Tensor> train_images)
        : cfg_(std::move(cfg)),
          model_(make_model(cfg_.seed, cfg_.channels, cfg_.base_channels, cfg_.loops,
                            cfg_.epsilon_cos, cfg_.leaky_slope)),
          opt_(student_params(model_), AdamConfig{cfg_.learning_rate, 0.9, 0.999, 1e-8}),
          batch_rng_(Rng::derive(cfg_.seed, "batching")),
          images_(std::move(train_images)) {
        if (images_.empty()) fail(ErrorKind::config, "trainer: empty training set");
        for (const Tensor& img : images_) targets_.push_back(teacher_forward(model_, img));
    }

    double step() {
        const std::size_t n = images_.size();
        std::vector<int> counts(n, 0);
        for (int i = 0; i < cfg_.batch_size; ++i) counts[batch_rng_.below(n)]++;

        std::vector<const Tensor*> f3s, phis;
        std::vector<double> weights;
        for (std::size_t i = 0; i < n; ++i) {
            if (counts[i] == 0) continue;
            f3s.push_back(&targets_[i].f3);
            phis.push_back(&targets_[i].phi);
            weights.push_back(static_cast<double>(counts[i]) / cfg_.batch_size);
        }
        Tensor f3_t = stack_batch(f3s);
        Tensor phi_t = stack_batch(phis);

        Tape tape;
        track_student(tape, model_);
        std::vector<LoopOutput> loops = loop_forward(&tape, model_, phi_t);
        Tensor loss = loss_from_targets(&tape, model_, loops, f3_t, phi_t, weights);
        tape.backward(loss);
        std::vector<Tensor> grads;
        for (const NamedParam& p : student_params(model_)) grads.push_back(tape.grad(*p.tensor));
        untrack_student(model_);
        opt_.step(grads);
        ++iter_;
        loss_history_.push_back(loss.data[0]);
        return loss.data[0];
    }

    void run(int iterations) {
        for (int i = 0; i < iterations; ++i) step();
    }

    SirModel& model() { return model_; }
    const Adam& optimizer() const { return opt_; }
    std::uint64_t iteration() const { return iter_; }
    const std::vector<double>& loss_history() const { return loss_history_; }
    const Config& config() const { return cfg_; }

    std::string metadata() const {
        std::ostringstream os;
        os << config_echo(cfg_);
        os << "state.iteration = " << iter_ << "\n";
        os << "state.batch_rng_draws = " << batch_rng_.draws() << "\n";
        return os.str();
    }

    void save(const std::string& path) { save_checkpoint(path, model_, &opt_, metadata()); }

    // Restores parameters, optimizer moments and the batch stream position so
    // a resumed run reproduces the uninterrupted loss trajectory exactly.
    void restore(const Checkpoint& ckpt) {
        apply_checkpoint(ckpt, model_, &opt_);
        auto kv = parse_kv(ckpt.config_echo);
        if (auto it = kv.find("state.iteration"); it != kv.end()) iter_ = std::stoull(it->second);
        if (auto it = kv.find("state.batch_rng_draws"); it != kv.end()) {
            const std::uint64_t target = std::stoull(it->second);
            if (target < batch_rng_.draws())
                fail(ErrorKind::state, "trainer: checkpoint stream position is behind the live stream");
            batch_rng_.skip(target - batch_rng_.draws());
        }
    }

private:
    Config cfg_;
    SirModel model_;
    Adam opt_;
    Rng batch_rng_;
    std::uint64_t iter_ = 0;
    std::vector<Tensor> images_;
    std::vector<TeacherFeatures> targets_;
    std::vector<double> loss_history_;
};

// ---------------------------------------------------------------------------
// Evaluation and reports
// ---------------------------------------------------------------------------

struct DomainReport {
    std::string domain;
    double final_auroc = 0.0;
    std::vector<double> f3_auroc;    // per loop
    std::vector<double> phi_auroc;   // per loop
    std::vector<double> fused_auroc; // per loop
};

// Scores every sample of the domain in index order (normals first) and
// computes the per-loop / per-scale / final AUROC block.
inline DomainReport evaluate_domain(const SirModel& model, double sigma, const DomainTestSet& test,
                                    int image_size, int channels) {
    const int L = model.loops;
    std::vector<double> final_scores;
    std::vector<std::vector<double>> f3_scores(L), phi_scores(L), fused_scores(L);
    std::vector<bool> labels;
    auto score_one = [&](const std::string& path, bool anomalous) {
        SampleRecord rec = load_sample(path, test.domain, anomalous, image_size, channels);
        AnomalyResult res = anomaly_maps(model, rec.image, sigma);
        final_scores.push_back(res.score);
        labels.push_back(anomalous);
        for (int l = 0; l < L; ++l) {
            f3_scores[l].push_back(*std::max_element(res.per_scale_maps[2 * l].data.begin(),
                                                     res.per_scale_maps[2 * l].data.end()));
            phi_scores[l].push_back(*std::max_element(res.per_scale_maps[2 * l + 1].data.begin(),
                                                      res.per_scale_maps[2 * l + 1].data.end()));
            fused_scores[l].push_back(*std::max_element(res.per_loop_maps[l].data.begin(),
                                                        res.per_loop_maps[l].data.end()));
        }
    };
    for (const std::string& p : test.normal_paths) score_one(p, false);
    for (const std::string& p : test.anomalous_paths) score_one(p, true);

    DomainReport rep;
    rep.domain = test.domain;
    rep.final_auroc = auroc(final_scores, labels);
    for (int l = 0; l < L; ++l) {
        rep.f3_auroc.push_back(auroc(f3_scores[l], labels));
        rep.phi_auroc.push_back(auroc(phi_scores[l], labels));
        rep.fused_auroc.push_back(auroc(fused_scores[l], labels));
    }
    return rep;
}

struct RunReport {
    std::string run_name;
    std::string protocol;
    std::uint64_t seed = 0;
    int loops = 0;
    int iterations = 0;
    std::string config;
    std::vector<DomainReport> domains;
    std::vector<double> loss_samples; // every 10th iteration plus the last
    double wall_seconds = 0.0;        // informational; kept out of report documents
};

// Structured key-value report document. Deterministic for a fixed config and
// seed (wall-clock time deliberately lives elsewhere).
inline std::string report_kv(const RunReport& r) {
    std::ostringstream os;
    os << "run = " << r.run_name << "\n";
    os << "protocol = " << r.protocol << "\n";
    os << "seed = " << r.seed << "\n";
    os << "loops = " << r.loops << "\n";
    os << "iterations = " << r.iterations << "\n";
    for (const DomainReport& d : r.domains) {
        const std::string base = "domain." + d.domain;
        for (int l = 0; l < r.loops; ++l) {
            os << base << ".loop" << (l + 1) << ".f3 = " << fmt_double(d.f3_auroc[l]) << "\n";
            os << base << ".loop" << (l + 1) << ".phi = " << fmt_double(d.phi_auroc[l]) << "\n";
            os << base << ".loop" << (l + 1) << ".fused = " << fmt_double(d.fused_auroc[l]) << "\n";
        }
        os << base << ".final_fused = " << fmt_double(d.final_auroc) << "\n";
    }
    for (std::size_t i = 0; i < r.loss_samples.size(); ++i)
        os << "loss.sample" << i << " = " << fmt_double(r.loss_samples[i]) << "\n";
    os << "# config\n";
    std::istringstream cfg(r.config);
    std::string line;
    while (std::getline(cfg, line)) os << "config." << line << "\n";
    return os.str();
}

// Human-readable fusion table: per-loop f3 / phi / fused rows plus the final
// fused sum, one column per domain (3L+1 AUROC rows).
inline std::string report_table(const RunReport& r) {
    std::ostringstream os;
    os << "Per-loop and fusion analysis (L = " << r.loops << "), run " << r.run_name << "\n";
    char buf[64];
    os << "Metric          ";
    for (const DomainReport& d : r.domains) {
        std::snprintf(buf, sizeof(buf), " %12s", d.domain.c_str());
        os << buf;
    }
    os << "\n";
    auto row = [&](const std::string& label, auto getter) {
        std::snprintf(buf, sizeof(buf), "%-16s", label.c_str());
        os << buf;
        for (const DomainReport& d : r.domains) {
            std::snprintf(buf, sizeof(buf), " %12.4f", getter(d));
            os << buf;
        }
        os << "\n";
    };
    for (int l = 0; l < r.loops; ++l) {
        row("Loop " + std::to_string(l + 1) + " f3", [l](const DomainReport& d) { return d.f3_auroc[l]; });
        row("Loop " + std::to_string(l + 1) + " phi", [l](const DomainReport& d) { return d.phi_auroc[l]; });
        row("Loop " + std::to_string(l + 1) + " fused", [l](const DomainReport& d) { return d.fused_auroc[l]; });
    }
    row("Final fused sum", [](const DomainReport& d) { return d.final_auroc; });
    return os.str();
}

inline std::string sanitize_name(std::string s) {
    for (char& c : s)
        if (c == ':' || c == '(' || c == ')' || c == '/' || c == ' ') c = '_';
    return s;
}

// Trains and evaluates every run of the configured protocol. When out_dir is
// nonempty, each run writes report.kv, report.txt, checkpoint.bin, the
// effective config and a timing sidecar under <out_dir>/<run>/.
inline std::vector<RunReport> run_protocol(const Config& cfg, const std::vector<DatasetManifest>& manifests,
                                           const std::string& out_dir) {
    validate_config(cfg);
    Protocol protocol = parse_protocol(cfg.protocol, cfg.seed);
    std::vector<ProtocolRun> runs = build_protocol(manifests, protocol);

    // no anomalous sample may ever enter a training set
    for (const ProtocolRun& run : runs)
        for (const DomainTestSet& t : run.tests)
            for (const std::string& a : t.anomalous_paths)
                if (std::find(run.train_paths.begin(), run.train_paths.end(), a) != run.train_paths.end())
                    fail(ErrorKind::state, "protocol: anomalous sample '" + a + "' in a training set");

    std::vector<RunReport> reports;
    for (const ProtocolRun& run : runs) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<Tensor> train_images;
        for (const std::string& p : run.train_paths)
            train_images.push_back(load_sample(p, "", false, cfg.image_size, cfg.channels).image);
        Trainer trainer(cfg, std::move(train_images));
        trainer.run(cfg.iterations);

        RunReport rep;
        rep.run_name = run.name;
        rep.protocol = cfg.protocol;
        rep.seed = cfg.seed;
        rep.loops = cfg.loops;
        rep.iterations = cfg.iterations;
        rep.config = config_echo(cfg);
        for (const DomainTestSet& t : run.tests)
            rep.domains.push_back(evaluate_domain(trainer.model(), cfg.sigma_smooth, t,
                                                  cfg.image_size, cfg.channels));
        const std::vector<double>& hist = trainer.loss_history();
        for (std::size_t i = 0; i < hist.size(); i += 10) rep.loss_samples.push_back(hist[i]);
        if (!hist.empty() && (hist.size() - 1) % 10 != 0) rep.loss_samples.push_back(hist.back());
        rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        if (!out_dir.empty()) {
            const std::string rdir = (std::filesystem::path(out_dir) / sanitize_name(run.name)).string();
            write_text_file(rdir + "/report.kv", report_kv(rep));
            write_text_file(rdir + "/report.txt", report_table(rep));
            write_text_file(rdir + "/config_effective.txt", config_echo(cfg));
            write_text_file(rdir + "/timing.txt", "wall_seconds = " + fmt_double(rep.wall_seconds) + "\n");
            trainer.save(rdir + "/checkpoint.bin");
        }
        reports.push_back(std::move(rep));
    }
    return reports;
}

// ---------------------------------------------------------------------------
// Loop ablation (Table-2-shaped: L as rows, domains as columns, trailing avg)
// ---------------------------------------------------------------------------

struct AblationRow {
    int loops = 0;
    std::vector<double> per_domain;
    double average = 0.0;
};

struct AblationTable {
    std::vector<std::string> domains;
    std::vector<AblationRow> rows;
};

inline AblationTable loop_ablation(const Config& cfg, const std::vector<int>& l_values,
                                   const std::vector<DatasetManifest>& manifests,
                                   const std::string& out_dir) {
    if (l_values.empty()) fail(ErrorKind::config, "loop_ablation: empty L list");
    AblationTable table;
    for (int L : l_values) {
        Config c = cfg;
        c.loops = L;
        const std::string sub = out_dir.empty() ? "" : (std::filesystem::path(out_dir) / ("L" + std::to_string(L))).string();
        std::vector<RunReport> reports = run_protocol(c, manifests, sub);
        AblationRow row;
        row.loops = L;
        std::vector<std::string> domains;
        for (const RunReport& rep : reports)
            for (const DomainReport& d : rep.domains) {
                domains.push_back(d.domain);
                row.per_domain.push_back(d.final_auroc);
            }
        double sum = 0.0;
        for (double v : row.per_domain) sum += v;
        row.average = sum / static_cast<double>(row.per_domain.size());
        if (table.domains.empty()) table.domains = domains;
        else if (table.domains != domains)
            fail(ErrorKind::state, "loop_ablation: domain set changed between runs");
        table.rows.push_back(std::move(row));
    }
    return table;
}

inline std::string ablation_kv(const AblationTable& t) {
    std::ostringstream os;
    for (const AblationRow& row : t.rows) {
        for (std::size_t i = 0; i < t.domains.size(); ++i)
            os << "L" << row.loops << "." << t.domains[i] << " = " << fmt_double(row.per_domain[i]) << "\n";
        os << "L" << row.loops << ".average = " << fmt_double(row.average) << "\n";
    }
    return os.str();
}

inline std::string ablation_table_text(const AblationTable& t) {
    std::ostringstream os;
    os << "Ablation on the number of refinement loops (final fused AUROC)\n";
    char buf[64];
    os << "L   ";
    for (const std::string& d : t.domains) {
        std::snprintf(buf, sizeof(buf), " %12s", d.c_str());
        os << buf;
    }
    os << "      Average\n";
    for (const AblationRow& row : t.rows) {
        std::snprintf(buf, sizeof(buf), "%-4d", row.loops);
        os << buf;
        for (double v : row.per_domain) {
            std::snprintf(buf, sizeof(buf), " %12.4f", v);
            os << buf;
        }
        std::snprintf(buf, sizeof(buf), " %12.4f", row.average);
        os << buf << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t params_checked = 0;
    std::size_t teacher_params_zero = 0; // teacher entries confirmed gradient-free
};

// Compares the analytic gradient of training_loss w.r.t. every student
// parameter against central finite differences on a seeded random input.
inline GradCheckReport grad_check(const Config& cfg) {
    SirModel model = make_model(cfg.seed, cfg.channels, cfg.base_channels, cfg.loops,
                                cfg.epsilon_cos, cfg.leaky_slope);
    Rng rng(Rng::derive(cfg.seed, "gradcheck"));
    Tensor x(Shape{1, cfg.channels, cfg.image_size, cfg.image_size});
    for (double& v : x.data) v = rng.uniform();

    Tape tape;
    track_student(tape, model);
    Tensor loss = training_loss(&tape, model, x);
    tape.backward(loss);
    std::vector<Tensor> analytic;
    for (const NamedParam& p : student_params(model)) analytic.push_back(tape.grad(*p.tensor));
    untrack_student(model);

    GradCheckReport rep;
    // the teacher is never tracked, so its gradient is identically zero
    rep.teacher_params_zero = teacher_params(model).size();

    // small enough that finite differences rarely straddle a leaky/clamp kink,
    // large enough that f64 roundoff stays below the reporting floor
    const double h = 1e-7;
    auto params = student_params(model);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi].tensor;
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            const double saved = p.data[j];
            p.data[j] = saved + h;
            const double lp = training_loss(nullptr, model, x).data[0];
            p.data[j] = saved - h;
            const double lm = training_loss(nullptr, model, x).data[0];
            p.data[j] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = analytic[pi].data[j];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
            rep.max_rel_error = std::max(rep.max_rel_error, std::abs(fd - an) / denom);
            ++rep.params_checked;
        }
    }
    return rep;
}

} // namespace sir
