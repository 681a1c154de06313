#include <CLI11.hpp>

#include <cmarl/checkpoint.hpp>
#include <cmarl/gradcheck_suite.hpp>
#include <cmarl/sac.hpp>
#include <cmarl/synthdata.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

constexpr int kExitBadArgs = 2;
constexpr int kExitIo = 3;
constexpr int kExitNan = 4;
constexpr int kExitCheckpoint = 5;
constexpr int kExitGradcheck = 6;

/// Timestamps live here and only here so every other artifact is
/// byte-reproducible under a fixed seed.
void write_run_info(const std::string& dir, const std::string& command) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream os(fs::path(dir) / "run_info.txt", std::ios::trunc);
    const auto now = std::chrono::system_clock::now();
    os << "command = " << command << "\n"
       << "unix_time = "
       << std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count()
       << "\n";
}

void apply_env_seed(cmarl::sac::SacConfig& cfg) {
    if (const char* env = std::getenv("CONTOUR_MARL_SEED")) {
        cfg.seed = std::stoull(env);
    }
}

std::vector<cmarl::synth::ShapeKind> parse_kinds(const std::string& csv) {
    std::vector<cmarl::synth::ShapeKind> kinds;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) kinds.push_back(cmarl::synth::kind_from_name(item));
    }
    if (kinds.empty()) throw CLI::ValidationError("--kinds", "no shape kinds given");
    return kinds;
}

struct EvalArgs {
    std::string config_path;
    std::string checkpoint;
    std::string manifest_path;
    std::string out_dir = "eval_out";
    double shift_frac = 0.0;
    double scale_frac = 0.0;
    std::uint64_t perturb_seed = 0;
    int n_points = 0;
    int horizon = 0;
    bool trace = false;
};

cmarl::sac::SacConfig load_config(const std::string& path) {
    if (path.empty()) return {};
    return cmarl::sac::SacConfig::parse_file(path);
}

void write_report_csv(const cmarl::metrics::MetricReport& report, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path);
    report.write_csv(os);
}

int run_eval_common(const EvalArgs& a, bool sweep, const std::string& n_set_csv,
                    const std::string& t_set_csv) {
    cmarl::sac::SacConfig cfg = load_config(a.config_path);
    apply_env_seed(cfg);
    write_run_info(a.out_dir, sweep ? "sweep" : "eval");
    cfg.write((fs::path(a.out_dir) / "resolved.cfg").string());
    const auto manifest = cmarl::synth::load_manifest(a.manifest_path);

    if (!sweep) {
        cmarl::sac::EvalOptions opts;
        opts.n_points = a.n_points;
        opts.horizon = a.horizon;
        opts.shift_frac = a.shift_frac;
        opts.scale_frac = a.scale_frac;
        opts.perturb_seed = a.perturb_seed;
        opts.trace = a.trace;
        opts.trace_dir = (fs::path(a.out_dir) / "traces").string();
        const auto report = cmarl::sac::evaluate(a.checkpoint, cfg, manifest, opts);
        write_report_csv(report, (fs::path(a.out_dir) / "metrics.csv").string());
        std::printf("aggregate,%.6f,%.6f,%.6f\n", report.miou, report.mdice, report.mboundf);
        return 0;
    }

    auto parse_ints = [](const std::string& csv) {
        std::vector<int> out;
        std::stringstream ss(csv);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) out.push_back(std::stoi(item));
        }
        return out;
    };
    const auto n_set = parse_ints(n_set_csv);
    const auto t_set = parse_ints(t_set_csv);
    if (n_set.empty() || t_set.empty())
        throw CLI::ValidationError("--n-set/--t-set", "empty sweep axis");
    std::ofstream os(fs::path(a.out_dir) / "sweep.csv", std::ios::trunc);
    os << "n_points,horizon,miou,mdice,mboundf\n";
    for (int n : n_set) {
        for (int t : t_set) {
            cmarl::sac::EvalOptions opts;
            opts.n_points = n;
            opts.horizon = t;
            opts.shift_frac = a.shift_frac;
            opts.scale_frac = a.scale_frac;
            opts.perturb_seed = a.perturb_seed;
            const auto report = cmarl::sac::evaluate(a.checkpoint, cfg, manifest, opts);
            char line[128];
            std::snprintf(line, sizeof line, "%d,%d,%.6f,%.6f,%.6f\n", n, t, report.miou,
                          report.mdice, report.mboundf);
            os << line;
            std::fputs(line, stdout);
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contour evolution RL toolkit"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic shape corpus");
    int gen_count = 100, gen_size = 64, gen_blur = 1;
    std::uint64_t gen_seed = 0;
    double gen_noise = 0.05;
    std::string gen_out = "corpus", gen_kinds = "ellipse,star,blob";
    gen->add_option("--count", gen_count, "Number of shapes")->check(CLI::PositiveNumber);
    gen->add_option("--size", gen_size, "Grid side length")->check(CLI::Range(16, 512));
    gen->add_option("--seed", gen_seed, "Master seed");
    gen->add_option("--out", gen_out, "Output directory");
    gen->add_option("--kinds", gen_kinds, "Comma list: ellipse,star,blob");
    gen->add_option("--noise", gen_noise, "Feature noise sigma");
    gen->add_option("--blur", gen_blur, "Feature blur radius");

    // train
    auto* train = app.add_subcommand("train", "Train the contour policy");
    std::string train_config, train_manifest, train_out = "train_out";
    int train_epochs = -1;
    double train_lr = -1.0;
    std::uint64_t train_seed = 0;
    bool train_has_seed = false, train_resume = false;
    int workers = 1;
    train->add_option("--config", train_config, "Config file (key = value)");
    train->add_option("--manifest", train_manifest, "Corpus manifest.csv")->required();
    train->add_option("--out", train_out, "Output directory");
    train->add_option("--epochs", train_epochs, "Override epochs");
    train->add_option("--lr", train_lr, "Override both ends of the LR schedule");
    train->add_option("--seed", train_seed, "Override seed")
        ->each([&train_has_seed](const std::string&) { train_has_seed = true; });
    train->add_flag("--resume", train_resume, "Continue from ckpt_latest.bin in --out");
    train->add_option("--workers", workers, "Rollout workers (only 1 is implemented)")
        ->check(CLI::Range(1, 1));

    // eval / sweep
    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval->add_option("--config", ev.config_path, "Config file");
    eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
    eval->add_option("--manifest", ev.manifest_path, "Corpus manifest.csv")->required();
    eval->add_option("--out", ev.out_dir, "Output directory");
    eval->add_option("--shift-frac", ev.shift_frac, "Bbox shift perturbation fraction");
    eval->add_option("--scale-frac", ev.scale_frac, "Bbox scale perturbation fraction");
    eval->add_option("--perturb-seed", ev.perturb_seed, "Perturbation seed");
    eval->add_option("--n-points", ev.n_points, "Contour points override");
    eval->add_option("--horizon", ev.horizon, "Evolution steps override");
    eval->add_flag("--trace", ev.trace, "Emit per-episode SVG + CSV traces");

    EvalArgs sw;
    sw.out_dir = "sweep_out";
    std::string sw_nset = "32,64,128", sw_tset = "3,4,5,6,7";
    auto* sweep = app.add_subcommand("sweep", "Evaluate across point-count and horizon axes");
    sweep->add_option("--config", sw.config_path, "Config file");
    sweep->add_option("--checkpoint", sw.checkpoint, "Checkpoint file")->required();
    sweep->add_option("--manifest", sw.manifest_path, "Corpus manifest.csv")->required();
    sweep->add_option("--out", sw.out_dir, "Output directory");
    sweep->add_option("--n-set", sw_nset, "Comma list of contour point counts");
    sweep->add_option("--t-set", sw_tset, "Comma list of horizons");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    double gc_eps = 1e-5;
    int gc_trials = 20;
    std::uint64_t gc_seed = 0;
    std::string gc_fault;
    gc->add_option("--eps", gc_eps, "Central difference step");
    gc->add_option("--trials", gc_trials, "Random instances per block")
        ->check(CLI::PositiveNumber);
    gc->add_option("--seed", gc_seed, "Master seed");
    gc->add_option("--fault-block", gc_fault, "Corrupt this block's backward pass (test fixture)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : kExitBadArgs;
    }

    try {
        if (gen->parsed()) {
            const std::string manifest = cmarl::synth::build_corpus(
                gen_count, parse_kinds(gen_kinds), gen_size, gen_seed, gen_out, gen_noise,
                gen_blur);
            write_run_info(gen_out, "gen");
            std::ofstream cfg(fs::path(gen_out) / "resolved.cfg", std::ios::trunc);
            cfg << "count = " << gen_count << "\nsize = " << gen_size
                << "\nseed = " << gen_seed << "\nkinds = " << gen_kinds
                << "\nnoise = " << gen_noise << "\nblur = " << gen_blur << "\n";
            std::printf("%s\n", manifest.c_str());
            return 0;
        }
        if (train->parsed()) {
            cmarl::sac::SacConfig cfg = load_config(train_config);
            if (train_epochs >= 0) cfg.epochs = train_epochs;
            if (train_lr >= 0.0) {
                cfg.lr_start = train_lr;
                cfg.lr_end = train_lr;
            }
            if (train_has_seed) cfg.seed = train_seed;
            apply_env_seed(cfg);
            write_run_info(train_out, "train");
            const auto manifest = cmarl::synth::load_manifest(train_manifest);
            const auto result = cmarl::sac::train(cfg, manifest, train_out, train_resume);
            std::printf("episodes,%d\ncheckpoint,%s\nlog,%s\n", result.episodes,
                        result.checkpoint_path.c_str(), result.log_path.c_str());
            return 0;
        }
        if (eval->parsed()) {
            cmarl::sac::SacConfig cfg = load_config(ev.config_path);
            (void)cfg;
            return run_eval_common(ev, false, "", "");
        }
        if (sweep->parsed()) return run_eval_common(sw, true, sw_nset, sw_tset);
        if (gc->parsed()) {
            const auto results = cmarl::gradcheck::run_all(gc_eps, gc_trials, gc_seed, gc_fault);
            bool all_pass = true;
            std::string failing;
            for (const auto& r : results) {
                std::printf("%-12s max_rel_err %.3e threshold %.0e %s\n", r.name.c_str(),
                            r.max_err, r.threshold, r.pass ? "ok" : "FAIL");
                if (!r.pass) {
                    all_pass = false;
                    failing += (failing.empty() ? "" : ",") + r.name;
                }
            }
            if (!all_pass) {
                std::fprintf(stderr, "gradcheck failed: %s\n", failing.c_str());
                return kExitGradcheck;
            }
            return 0;
        }
    } catch (const CLI::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitBadArgs;
    } catch (const cmarl::sac::NanAbort& e) {
        std::fprintf(stderr, "aborted: %s\n", e.what());
        return kExitNan;
    } catch (const cmarl::diff::CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return kExitCheckpoint;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "bad arguments: %s\n", e.what());
        return kExitBadArgs;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return kExitIo;
    }
    return 0;
}
