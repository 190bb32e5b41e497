// qqm: run quantile-mechanics experiments from JSON configs and compare runs.
//
// Exit codes: 0 success, 1 I/O or internal failure, 2 invalid config or usage,
// 3 numeric abort (non-finite loss or residual).

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "qqm/errors.hpp"
#include "qqm/experiment.hpp"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::filesystem::path output_root() {
    const char* env = std::getenv("QQM_OUT");
    return env && *env ? std::filesystem::path(env) : std::filesystem::path("qqm_runs");
}

std::string run_name(const std::filesystem::path& manifest) {
    const auto p = std::filesystem::is_directory(manifest) ? manifest : manifest.parent_path();
    const auto name = std::filesystem::absolute(p).lexically_normal().filename().string();
    return name.empty() ? "run" : name;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantum quantile mechanics experiment runner"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    bool strict = false;
    bool quiet = false;
    auto* run = app.add_subcommand("run", "Run the experiment described by a JSON config");
    run->add_option("config", config_path, "Config file")->required();
    run->add_option("--out", out, "Output directory (default: $QQM_OUT/<name>, or qqm_runs/<name>)");
    run->add_option("--seed", seed, "Override the config seed");
    run->add_option("--threads", threads, "Worker threads")->check(CLI::Range(1, 1024));
    run->add_flag("--strict-deterministic", strict, "Fixed-order reductions: identical output for any thread count");
    run->add_flag("--quiet", quiet, "No progress lines");

    std::string manifest_a, manifest_b;
    std::optional<std::string> compare_out;
    auto* compare = app.add_subcommand("compare", "Compare the histograms of two runs");
    compare->add_option("manifestA", manifest_a, "First run manifest (or its directory)")->required();
    compare->add_option("manifestB", manifest_b, "Second run manifest (or its directory)")->required();
    compare->add_option("--out", compare_out, "Output directory (default: $QQM_OUT/compare_<A>_vs_<B>)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run) {
            const qqm::ExperimentConfig cfg = qqm::load_config(config_path, seed);
            qqm::RunOptions opt;
            opt.out_dir = qqm::resolve_output_dir(cfg, out ? std::optional<std::filesystem::path>(*out) : std::nullopt);
            opt.threads = threads;
            opt.strict_deterministic = strict;
            opt.log = quiet ? nullptr : &std::cerr;
            const qqm::RunSummary s = qqm::run_experiment(cfg, opt);
            std::cout << s.manifest.string() << '\n' << s.metrics.dump(2) << '\n';
        } else {
            const auto dir = compare_out ? std::filesystem::path(*compare_out)
                                         : output_root() / ("compare_" + run_name(manifest_a) + "_vs_" +
                                                            run_name(manifest_b));
            const qqm::CompareSummary s = qqm::compare_runs(manifest_a, manifest_b, dir);
            std::cout << "t,bins,max_abs_diff,ks,ks_method\n";
            for (const auto& sl : s.slices) {
                std::cout << sl.t << ',' << sl.bins << ',' << sl.max_abs_diff << ',' << sl.ks << ',' << sl.ks_method
                          << '\n';
            }
            std::cout << "wrote " << (s.out_dir / qqm::kManifestFile).string() << '\n';
        }
    } catch (const qqm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const qqm::DomainError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const qqm::NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return 0;
}
