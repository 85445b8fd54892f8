#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "tabsynth/harness.hpp"

using namespace tabsynth;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("tabsynth_harness_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SweepSpec tiny_spec(const fs::path& out) {
    SweepSpec s;
    s.dataset.name = "toy";
    s.dataset.toy_rows = 400;
    s.dataset.toy_seed = 3;
    s.sizes = {40, 80};
    s.variants = {Variant::MargCtgan};
    s.seeds = {0};
    s.trials = 2;
    s.synthetic_rows = 200;
    s.train.epochs = 1;
    s.train.batch_size = 50;
    s.train.latent_width = 8;
    s.train.generator_widths = {16};
    s.train.critic_widths = {16};
    s.eval.metrics = {metric::histogram, metric::wasserstein, metric::ml_efficacy, metric::associations};
    s.output = out;
    return s;
}

CellResult cell(const std::string& dataset, std::size_t size, const std::string& variant, std::uint64_t seed,
                std::size_t trial, std::map<std::string, double> scores) {
    CellResult c;
    c.dataset = dataset;
    c.size = size;
    c.variant = variant;
    c.seed = seed;
    c.trial = trial;
    c.report.scores = std::move(scores);
    return c;
}

std::map<std::string, std::string> reports_below(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.path().filename() == "report.json") out[fs::relative(e.path(), dir).string()] = slurp(e.path());
    return out;
}

}  // namespace

TEST_CASE("size labels") {
    CHECK(size_label(kFull) == "FULL");
    CHECK(size_label(640) == "640");
    CHECK(parse_size("FULL") == kFull);
    CHECK(parse_size("-1") == kFull);
    CHECK(parse_size("320") == 320);
    CHECK_THROWS_AS(parse_size("abc"), InputError);
}

TEST_CASE("sweep spec parsing and validation") {
    auto j = nlohmann::json::parse(R"({
        "dataset": {"name": "toy", "toy_rows": 500},
        "sizes": [40, 80, "FULL"],
        "variants": ["ctgan", "margctgan"],
        "seeds": [0, 1],
        "trials": 2,
        "epochs": 7,
        "eval": {"metrics": ["histogram_intersection"], "bins": [10]}
    })");
    auto s = SweepSpec::from_json(j);
    CHECK(s.sizes == std::vector<std::size_t>{40, 80, kFull});
    CHECK(s.train.epochs == 7);
    CHECK(s.trials == 2);
    CHECK(s.eval.bins == std::vector<std::size_t>{10});
    CHECK(SweepSpec::from_json(s.to_json()).to_json() == s.to_json());

    SweepSpec defaults;
    CHECK(defaults.sizes.size() == 11);
    CHECK(defaults.sizes.back() == kFull);
    CHECK(defaults.trials == 5);
    CHECK(defaults.synthetic_rows == 20000);
    CHECK(defaults.seeds.size() == 3);

    auto bad = j;
    bad["sizes"] = {80, 40};
    CHECK_THROWS_AS(SweepSpec::from_json(bad), InputError);
    bad = j;
    bad["seeds"] = {1, 1};
    CHECK_THROWS_AS(SweepSpec::from_json(bad), InputError);
    bad = j;
    bad["eval"]["metrics"] = {"nonsense"};
    CHECK_THROWS_AS(SweepSpec::from_json(bad), InputError);
}

TEST_CASE("relative error") {
    CHECK(relative_error(0.4, 0.8) == doctest::Approx(50.0));
    CHECK(relative_error(0.8, 0.8) == 0.0);
    CHECK(relative_error(0.9, 0.8) < 0.0);
    CHECK(relative_error(0.7, 0.8) > 0.0);
    // Lower-is-better metrics flip the sign convention.
    CHECK(relative_error(0.2, 0.1) < 0.0);
}

TEST_CASE("metric correlation") {
    std::vector<CellResult> cells;
    const double xs[] = {0.1, 0.4, 0.2, 0.9, 0.5};
    const double zs[] = {1.0, 3.0, 2.0, 2.0, 5.0};
    for (int i = 0; i < 5; ++i)
        cells.push_back(cell("d", 40, "ctgan", 0, static_cast<std::size_t>(i),
                             {{"a", xs[i]}, {"b", xs[i]}, {"c", -xs[i]}, {"z", zs[i]}, {"k", 1.0}}));
    auto m = metric_correlation(cells, {"a", "b", "c", "z", "k"});
    REQUIRE(m.metrics.size() == 5);
    CHECK(m.values(0, 1) == doctest::Approx(1.0));
    CHECK(m.values(0, 2) == doctest::Approx(1.0));
    CHECK(m.values(0, 0) == 1.0);
    CHECK(std::isnan(m.values(0, 4)));
    CHECK_FALSE(m.flags.empty());

    double mx = 0, mz = 0;
    for (int i = 0; i < 5; ++i) {
        mx += xs[i] / 5;
        mz += zs[i] / 5;
    }
    double sxz = 0, sxx = 0, szz = 0;
    for (int i = 0; i < 5; ++i) {
        sxz += (xs[i] - mx) * (zs[i] - mz);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        szz += (zs[i] - mz) * (zs[i] - mz);
    }
    CHECK(m.values(0, 3) == doctest::Approx(std::abs(sxz / std::sqrt(sxx * szz))).epsilon(1e-12));
    CHECK(m.values(3, 0) == m.values(0, 3));
}

TEST_CASE("aggregation orders and cross-dataset average") {
    std::vector<CellResult> cells;
    // Unequal trials per seed separate the two averaging orders.
    cells.push_back(cell("d1", 40, "ctgan", 0, 0, {{"m", 1.0}}));
    cells.push_back(cell("d1", 40, "ctgan", 0, 1, {{"m", 2.0}}));
    cells.push_back(cell("d1", 40, "ctgan", 1, 0, {{"m", 6.0}}));
    cells.push_back(cell("d2", 40, "ctgan", 0, 0, {{"m", 10.0}}));
    auto joint = aggregate(cells);
    auto seed_first = aggregate_seed_first(cells);
    CHECK(joint.at({"d1", 40, "ctgan", "m"}) == doctest::Approx(3.0));
    CHECK(seed_first.at({"d1", 40, "ctgan", "m"}) == doctest::Approx(3.75));
    auto cross = cross_dataset_average(joint);
    CHECK(std::abs(cross.at({40, "ctgan", "m"}) - 6.5) < 1e-12);
}

TEST_CASE("relative error tables") {
    std::vector<CellResult> cells;
    for (std::size_t size : {std::size_t{40}, std::size_t{80}, kFull}) {
        cells.push_back(cell("d", size, kReferenceVariant, 0, 0, {{"m", 0.8}, {"zero", 0.0}}));
        cells.push_back(cell("d", size, "margctgan", 0, 0, {{"m", 0.4}, {"zero", 0.1}}));
        cells.push_back(cell("d", size, "ctgan", 0, 0, {{"m", 0.6}, {"zero", 0.1}}));
    }
    auto tables = relative_error_tables(cells);
    REQUIRE(tables.size() == 2);
    const auto& t = tables[0].metric == "m" ? tables[0] : tables[1];
    const auto& z = tables[0].metric == "m" ? tables[1] : tables[0];
    CHECK(t.sizes == std::vector<std::size_t>{kFull, 80, 40});
    CHECK(t.variants == std::vector<std::string>{"ctgan", "margctgan"});
    CHECK(t.values(1, 0) == doctest::Approx(50.0));
    CHECK(t.values(0, 2) == doctest::Approx(25.0));
    CHECK(std::isnan(z.values(0, 0)));
    CHECK(t.to_csv().rfind("variant,-1,80,40\n", 0) == 0);
    CHECK(t.to_json().dump().find("margctgan") != std::string::npos);

    CHECK(parse_report_format("csv") == ReportFormat::Csv);
    CHECK(parse_report_format("json") == ReportFormat::Json);
    CHECK_THROWS_AS(parse_report_format("xml"), InputError);
}

TEST_CASE("real reference on a large toy") {
    Table all = toy_dataset(default_toy_spec(), 10000, 11);
    auto [train, test] = split(all, 0.3, 2);
    EvalOptions opt;
    opt.metrics = {metric::histogram};
    opt.bins = {50};
    auto r = real_reference(train, test, opt);
    CHECK(r.scores.at(metric::histogram) >= 0.95);
}

TEST_CASE("sweep runs, resumes and reports deterministically") {
    fs::path out = scratch("sweep");
    SweepSpec spec = tiny_spec(out);
    auto first = run_sweep(spec);
    CHECK(first.failed == 0);
    CHECK(first.trained == 2);
    CHECK(first.cells.size() == 2 * 2 + 2);
    std::set<std::string> keys;
    for (const auto& c : first.cells) keys.insert(c.key());
    CHECK(keys.size() == first.cells.size());
    CHECK(fs::exists(out / "sweep.json"));
    CHECK(fs::exists(out / "cells" / "40" / "margctgan" / "seed0" / "model.tsyn"));
    CHECK(fs::exists(out / "cells" / "80" / "reference" / "report.json"));

    auto before = reports_below(out);
    auto resumed = run_sweep(spec);
    CHECK(resumed.trained == 0);
    CHECK(resumed.evaluated == 0);
    CHECK(resumed.reused == first.cells.size());
    CHECK(reports_below(out) == before);

    // A missing trial is recomputed from the saved model without retraining.
    fs::remove(out / "cells" / "80" / "margctgan" / "seed0" / "trial1" / "report.json");
    auto partial = run_sweep(spec);
    CHECK(partial.trained == 0);
    CHECK(partial.evaluated == 1);
    CHECK(reports_below(out) == before);

    // A fresh run in another directory reproduces every report byte for byte.
    fs::path other = scratch("sweep_again");
    SweepSpec again = tiny_spec(other);
    run_sweep(again);
    CHECK(reports_below(other) == before);

    auto cells = load_cells(out);
    CHECK(cells.size() == first.cells.size());
    for (std::size_t i = 1; i < cells.size(); ++i) CHECK(cells[i - 1].key() != cells[i].key());

    fs::path report_dir = out / "report";
    auto files = write_report(cells, ReportFormat::Csv, report_dir);
    CHECK_FALSE(files.empty());
    std::size_t rows = 0;
    for (const auto& m : spec.eval.metrics) {
        std::ifstream in(report_dir / "scores" / (m + ".csv"));
        REQUIRE(in.good());
        std::string line;
        std::getline(in, line);
        CHECK(line == "dataset,size,variant,seed,trial,score");
        while (std::getline(in, line)) rows += !line.empty();
    }
    CHECK(rows == cells.size() * spec.eval.metrics.size());
    CHECK(fs::exists(report_dir / "metric_correlation.csv"));
    CHECK(fs::exists(report_dir / "relative_error" / ("toy__" + metric::histogram + ".csv")));

    auto first_report = slurp(report_dir / "scores" / (metric::histogram + ".csv"));
    write_report(load_cells(out), ReportFormat::Csv, report_dir);
    CHECK(slurp(report_dir / "scores" / (metric::histogram + ".csv")) == first_report);

    CHECK_FALSE(write_report(cells, ReportFormat::Json, out / "report_json").empty());
    CHECK(fs::exists(out / "report_json" / "report.json"));
    auto parsed = nlohmann::json::parse(slurp(out / "report_json" / "report.json"));
    CHECK(parsed.is_object());

    fs::remove_all(out);
    fs::remove_all(other);
}

TEST_CASE("sizes beyond the training split are skipped") {
    fs::path out = scratch("skip");
    SweepSpec spec = tiny_spec(out);
    spec.dataset.toy_rows = 100;
    spec.sizes = {40, 5000};
    spec.trials = 1;
    spec.eval.metrics = {metric::histogram};
    auto r = run_sweep(spec);
    CHECK(r.notes.size() == 1);
    CHECK(r.cells.size() == 2);
    fs::remove_all(out);
}
