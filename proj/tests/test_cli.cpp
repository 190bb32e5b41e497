#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "qqm/artifacts.hpp"
#include "qqm/config.hpp"
#include "qqm/errors.hpp"
#include "qqm/experiment.hpp"
#include "qqm/svg.hpp"

using namespace qqm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("qqm_test_" + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string error_of(const std::string& text) {
    try {
        parse_config(text, "cfg.json", ".");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

const char* kEm = R"({
  "schema": 1,
  "kind": "euler_maruyama",
  "seed": 3,
  "sde": {"nu": 1.0, "sigma": 0.7, "x0": 4.0, "t0": -0.2},
  "euler_maruyama": {"dt": 0.01, "n_paths": 2000},
  "histograms": {"slices": [0.0, 0.5], "bins": 20}
})";

const char* kTrain = R"({
  "schema": 1,
  "kind": "train_initial_qf",
  "seed": 5,
  "sde": {"nu": 1.0, "sigma": 0.7, "x0": 4.0, "t0": -0.2},
  "data": {"source": "euler_maruyama", "n": 2000, "dt": 0.01},
  "targets": {"points": 9},
  "generator": {"n_qubits": 2, "depth": 1, "z_map": {"kind": "tower", "axis": "Y"},
                "readout": {"kind": "classical_fit"}},
  "optimizer": {"epochs": 4, "learning_rate": 0.01},
  "sampling": {"n_samples": 500}
})";

std::map<std::string, std::string> csv_files(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".csv") {
            out[e.path().filename().string()] = read_file(e.path());
        }
    }
    return out;
}

} // namespace

TEST_CASE("shortest round-trip doubles") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(1e-300) == "1e-300");
    CHECK(format_double(-2.5) == "-2.5");
    CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
    CHECK(format_double(-std::numeric_limits<double>::infinity()) == "-inf");
    std::mt19937_64 rng(9);
    for (int i = 0; i < 2000; ++i) {
        const double x = std::ldexp(static_cast<double>(rng() >> 11), static_cast<int>(rng() % 200) - 150);
        CHECK(std::stod(format_double(x)) == x);
    }
}

TEST_CASE("CSV rows and quoting") {
    Csv c({"a", "b", "c"});
    c.row({1.5, std::int64_t{7}, std::string("x,y")});
    c.row({0.0, std::int64_t{-1}, std::string("say \"hi\"")});
    CHECK(c.str() == "a,b,c\n1.5,7,\"x,y\"\n0,-1,\"say \"\"hi\"\"\"\n");
    CHECK(c.rows() == 2);
    CHECK_THROWS_AS(c.row({1.0}), ConfigError);
}

TEST_CASE("SHA-1 digests") {
    CHECK(sha1_hex("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
    CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    CHECK(git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("SVG output is well formed") {
    svg::Panel p{"t", "x", "y", {svg::Bars{"b", 0.0, 0.5, {1.0, -0.5, 2.0}}}, {svg::Line{"l", {0, 1}, {1, 2}, true}}, false};
    const std::string s = svg::render({p, p}, 2, "title & more");
    CHECK(s.rfind("<svg", 0) == 0);
    CHECK(s.find("</svg>") != std::string::npos);
    CHECK(s.find("title &amp; more") != std::string::npos);
    svg::Panel empty;
    empty.log_y = true;
    CHECK_NOTHROW(svg::render({empty}));
}

TEST_CASE("JSON locator reports lines") {
    const JsonLocator loc("{\n \"a\": {\n  \"b\": [1,\n   2]\n },\n \"c\": \"x\"\n}");
    CHECK(loc.line("") == 1);
    CHECK(loc.line("a") == 2);
    CHECK(loc.line("a.b") == 3);
    CHECK(loc.line("a.b[1]") == 4);
    CHECK(loc.line("c") == 6);
    CHECK(loc.line("a.missing") == 2);
}

TEST_CASE("config errors name the file, line and key") {
    std::string bad = kEm;
    bad.replace(bad.find("\"nu\": 1.0, "), 11, "");
    CHECK(error_of(bad) == "cfg.json:5: sde: missing required key 'nu'");

    bad = kEm;
    bad.replace(bad.find("\"bins\": 20"), 10, "\"bins\": 20, \"colour\": 1");
    CHECK(error_of(bad).find("cfg.json:7: histograms.colour: unknown key") == 0);

    bad = kEm;
    bad.replace(bad.find("\"dt\": 0.01"), 10, "\"dt\": -1");
    CHECK(error_of(bad) == "cfg.json:6: euler_maruyama.dt: must be > 0");

    bad = kEm;
    bad.replace(bad.find("\"schema\": 1"), 11, "\"schema\": 2");
    CHECK(error_of(bad).find("cfg.json:2: schema: unsupported schema version 2") == 0);

    bad = kEm;
    bad.replace(bad.find("euler_maruyama\","), 15, "euler\"");
    CHECK(error_of(bad).find("cfg.json:3: kind: unknown experiment kind 'euler'") == 0);

    CHECK(error_of("{\"schema\": 1, \"kind\": \"euler_maruyama\", \"grid\": {}}").find("grid: not used by kind") !=
          std::string::npos);
    CHECK(error_of("{\n\"schema\": 1,\n}").find("cfg.json:3: invalid JSON") == 0);
    CHECK(error_of("{\"schema\": 1, \"kind\": \"sample\", \"model\": \"no/such/model.json\"}").find("file not found") !=
          std::string::npos);
    CHECK(error_of(R"({"schema": 1, "kind": "propagate_analytic",
        "sde": {"nu": 1, "sigma": 0.7, "x0": 4, "t0": -0.2},
        "generator": {"z_map": {"kind": "product", "axis": "X"}}})")
              .find("cfg.json:3: generator: missing required key 't_map'") == 0);
    CHECK(error_of(R"({"schema": 1, "kind": "propagate_analytic",
        "sde": {"nu": 1, "sigma": 0.7, "x0": 4, "t0": -0.2},
        "generator": {"t_map": {"kind": "product", "axis": "Y"}},
        "grid": {"z": {"from": -1, "to": 1, "n": 21}}})")
              .find("grid.z: z must stay inside |z| < 1") != std::string::npos);
    CHECK(error_of(R"({"schema": 1, "kind": "qgan_train", "data": {"source": "normal", "mu": 0, "sigma": 0.2},
        "discriminator": {"readout": {"kind": "single_z", "alpha": 1}}})")
              .find("discriminator readout must be one cost with norm <= 1/2") != std::string::npos);
    CHECK(error_of(R"({"schema": 1, "kind": "qgan_train", "data": {"source": "normal", "mu": 0, "sigma": 0.2},
        "generator": {"n_qubits": 1.5}})") == "cfg.json:2: generator.n_qubits: expected an integer");
}

TEST_CASE("config defaults and seed override") {
    const auto c = parse_config(kEm, "em.json", ".", 99);
    CHECK(c.kind == ExperimentKind::EulerMaruyama);
    CHECK(c.name == "em");
    CHECK(c.seed == 99);
    CHECK(c.snapshot["seed"] == 99);
    CHECK(c.sde.mu == 0.0);
    CHECK(c.histograms.bins == 20);
    CHECK(c.euler_maruyama.n_paths == 2000);

    const auto q = parse_config(R"({"schema": 1, "kind": "qgan_train",
        "data": {"source": "normal", "mu": 0, "sigma": 0.2}})", "q.json", ".");
    CHECK(q.qgan.epochs == 2000);
    CHECK(q.qgan.generator.n_qubits == 6);
    CHECK(q.data.n == 10000);
}

TEST_CASE("a run lists every file in its manifest, written last") {
    TempDir tmp;
    const auto c = parse_config(kEm, "em.json", ".");
    RunOptions o;
    o.out_dir = tmp.path / "em";
    const RunSummary s = run_experiment(c, o);
    const auto m = nlohmann::json::parse(read_file(s.manifest));
    std::set<std::string> listed;
    for (const auto& a : m["artifacts"]) {
        listed.insert(a["file"].get<std::string>());
        CHECK(a["sha1"] == git_blob_sha1(read_file(o.out_dir / a["file"].get<std::string>())));
    }
    for (const auto& e : fs::directory_iterator(o.out_dir)) {
        const auto name = e.path().filename().string();
        if (name != kManifestFile) {
            CHECK_MESSAGE(listed.count(name) == 1, name);
        }
    }
    CHECK(listed.count("hist_t0.csv") == 1);
    CHECK(listed.count("moments.csv") == 1);
    CHECK(m["histograms"].size() == 2);
    CHECK(m["config_sha1"].get<std::string>().size() == 40);

    // Rerunning into the same directory replaces the previous run.
    CHECK_NOTHROW(run_experiment(c, o));
    // A directory with foreign files is refused.
    write_file_atomic(o.out_dir / "notes.txt", "mine");
    CHECK_THROWS_AS(run_experiment(c, o), ConfigError);
    CHECK(fs::exists(o.out_dir / "notes.txt"));
}

TEST_CASE("identical seeds give byte-identical CSVs") {
    TempDir tmp;
    for (const char* text : {kEm, kTrain}) {
        const auto c = parse_config(text, "c.json", ".");
        RunOptions a, b;
        a.out_dir = tmp.path / "a";
        b.out_dir = tmp.path / "b";
        a.strict_deterministic = b.strict_deterministic = true;
        b.threads = 3;
        run_experiment(c, a);
        run_experiment(c, b);
        const auto fa = csv_files(a.out_dir), fb = csv_files(b.out_dir);
        CHECK(fa.size() >= 3);
        CHECK(fa == fb);
        fs::remove_all(a.out_dir);
        fs::remove_all(b.out_dir);
    }
}

TEST_CASE("compare: self is zero, binning mismatch is an error") {
    TempDir tmp;
    const auto c = parse_config(kEm, "em.json", ".");
    RunOptions o;
    o.out_dir = tmp.path / "a";
    run_experiment(c, o);
    const auto s = compare_runs(o.out_dir / kManifestFile, o.out_dir, tmp.path / "cmp");
    REQUIRE(s.slices.size() == 2);
    for (const auto& sl : s.slices) {
        CHECK(sl.max_abs_diff == 0.0);
        CHECK(sl.ks == 0.0);
        CHECK(sl.ks_method == "samples");
    }
    CHECK(fs::exists(tmp.path / "cmp" / "compare_bins.csv"));

    std::string other = kEm;
    other.replace(other.find("\"bins\": 20"), 10, "\"bins\": 25");
    RunOptions ob;
    ob.out_dir = tmp.path / "b";
    run_experiment(parse_config(other, "other.json", "."), ob);
    try {
        compare_runs(o.out_dir, ob.out_dir, tmp.path / "cmp2");
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("incompatible histograms") != std::string::npos);
        CHECK(msg.find((o.out_dir / kManifestFile).string()) != std::string::npos);
        CHECK(msg.find((ob.out_dir / kManifestFile).string()) != std::string::npos);
    }
}

TEST_CASE("reorder run on the single-dip generator") {
    TempDir tmp;
    const auto c = parse_config(R"({"schema": 1, "kind": "reorder_analysis"})", "r.json", ".");
    RunOptions o;
    o.out_dir = tmp.path / "r";
    const auto s = run_experiment(c, o);
    CHECK(s.metrics["n_flagged"] == 2);
    CHECK(s.metrics["max_abs_diff"].get<double>() <= 1e-3);
    CHECK(s.metrics["recovery_max_error"].get<double>() <= s.metrics["recovery_bound"].get<double>());
    const auto csv = read_csv(o.out_dir / "reorder.csv");
    CHECK(csv.column("z").size() == 200);
}

TEST_CASE("CSV reader") {
    TempDir tmp;
    write_file_atomic(tmp.path / "d.csv", "x,y\n1,2\n3,nan\n");
    const auto c = read_csv(tmp.path / "d.csv");
    CHECK(c.column("x") == std::vector<double>{1, 3});
    CHECK(std::isnan(c.column("y")[1]));
    write_file_atomic(tmp.path / "e.csv", "x\n1\nfoo\n");
    CHECK_THROWS_WITH_AS(read_csv(tmp.path / "e.csv"), doctest::Contains("e.csv:3: not a number"), ConfigError);
}
