#include "tabsynth/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace tabsynth {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Spec

nlohmann::json DatasetSource::to_json() const {
    nlohmann::json j{{"name", name}, {"test_fraction", test_fraction}, {"split_seed", split_seed}};
    if (!data.empty()) {
        j["data"] = data.string();
        j["schema"] = schema.string();
        if (!test.empty()) j["test"] = test.string();
    } else {
        j["toy_rows"] = toy_rows;
        j["toy_seed"] = toy_seed;
    }
    return j;
}

DatasetSource DatasetSource::from_json(const nlohmann::json& j) {
    DatasetSource d;
    d.name = j.value("name", d.name);
    d.data = j.value("data", std::string{});
    d.schema = j.value("schema", std::string{});
    d.test = j.value("test", std::string{});
    d.test_fraction = j.value("test_fraction", d.test_fraction);
    d.split_seed = j.value("split_seed", d.split_seed);
    d.toy_rows = j.value("toy_rows", d.toy_rows);
    d.toy_seed = j.value("toy_seed", d.toy_seed);
    if (d.data.empty() && d.toy_rows == 0) throw InputError("dataset needs either data/schema paths or toy_rows");
    if (!d.data.empty() && d.schema.empty()) throw InputError("dataset data given without a schema manifest");
    return d;
}

std::pair<Table, Table> DatasetSource::load() const {
    if (data.empty()) return split(toy_dataset(default_toy_spec(), toy_rows, toy_seed), test_fraction, split_seed);
    Schema s = Schema::load(schema);
    Table all = load_csv(data, s);
    if (!test.empty()) return {all, load_csv(test, s)};
    return split(all, test_fraction, split_seed);
}

std::string size_label(std::size_t size) { return size == kFull ? "FULL" : std::to_string(size); }

std::size_t parse_size(const std::string& s) {
    if (s == "FULL" || s == "full" || s == "-1") return kFull;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &pos);
    } catch (const std::exception&) {
        throw InputError("invalid subset size '" + s + "'");
    }
    if (pos != s.size() || v == 0) throw InputError("invalid subset size '" + s + "'");
    return static_cast<std::size_t>(v);
}

namespace {

// FULL sorts after every finite size.
bool size_less(std::size_t a, std::size_t b) {
    if (a == kFull) return false;
    if (b == kFull) return true;
    return a < b;
}

}  // namespace

void SweepSpec::validate() const {
    if (sizes.empty()) throw InputError("sweep needs at least one subset size");
    for (std::size_t i = 1; i < sizes.size(); ++i)
        if (!size_less(sizes[i - 1], sizes[i])) throw InputError("subset sizes must be strictly ascending with FULL last");
    if (variants.empty()) throw InputError("sweep needs at least one variant");
    if (std::set<Variant>(variants.begin(), variants.end()).size() != variants.size())
        throw InputError("duplicate variants in sweep");
    if (seeds.empty()) throw InputError("sweep needs at least one seed");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw InputError("sweep seeds must be distinct");
    if (trials == 0) throw InputError("sweep needs at least one trial");
    if (synthetic_rows == 0) throw InputError("synthetic row count must be positive");
    if (workers == 0) throw InputError("worker count must be positive");
    train.validate();
}

nlohmann::json SweepSpec::to_json() const {
    nlohmann::json jsizes = nlohmann::json::array();
    for (auto s : sizes) {
        if (s == kFull) jsizes.push_back("FULL");
        else jsizes.push_back(s);
    }
    nlohmann::json jvariants = nlohmann::json::array();
    for (auto v : variants) jvariants.push_back(to_string(v));
    nlohmann::json jeval{{"sample_cap", eval.sample_cap}, {"dcr_k", eval.dcr_k}, {"bins", eval.bins}};
    if (!eval.metrics.empty()) jeval["metrics"] = eval.metrics;
    auto jtrain = train.to_json();
    jtrain.erase("variant");
    jtrain.erase("seed");
    return {{"dataset", dataset.to_json()},
            {"sizes", jsizes},
            {"variants", jvariants},
            {"seeds", seeds},
            {"trials", trials},
            {"synthetic_rows", synthetic_rows},
            {"train", jtrain},
            {"eval", jeval},
            {"subset_seed", subset_seed},
            {"output", output.string()},
            {"workers", workers},
            {"keep_samples", keep_samples},
            {"reference", reference}};
}

SweepSpec SweepSpec::from_json(const nlohmann::json& j) {
    SweepSpec s;
    try {
        s.dataset = DatasetSource::from_json(j.at("dataset"));
        if (j.contains("sizes")) {
            s.sizes.clear();
            for (const auto& v : j["sizes"]) {
                if (v.is_string()) s.sizes.push_back(parse_size(v.get<std::string>()));
                else if (v.is_number_integer() && v.get<long long>() == -1) s.sizes.push_back(kFull);
                else s.sizes.push_back(parse_size(std::to_string(v.get<long long>())));
            }
        }
        if (j.contains("variants")) {
            s.variants.clear();
            for (const auto& v : j["variants"]) s.variants.push_back(parse_variant(v.get<std::string>()));
        }
        s.seeds = j.value("seeds", s.seeds);
        s.trials = j.value("trials", s.trials);
        s.synthetic_rows = j.value("synthetic_rows", s.synthetic_rows);
        if (j.contains("train")) s.train = TrainConfig::from_json(j["train"]);
        if (j.contains("epochs")) s.train.epochs = j["epochs"].get<std::size_t>();
        if (j.contains("eval")) {
            const auto& e = j["eval"];
            s.eval.sample_cap = e.value("sample_cap", s.eval.sample_cap);
            s.eval.dcr_k = e.value("dcr_k", s.eval.dcr_k);
            s.eval.bins = e.value("bins", s.eval.bins);
            if (e.contains("metrics")) {
                for (const auto& m : e["metrics"]) {
                    auto name = m.get<std::string>();
                    if (std::find(all_metrics().begin(), all_metrics().end(), name) == all_metrics().end())
                        throw InputError("unknown metric '" + name + "'");
                    s.eval.metrics.insert(name);
                }
            }
        }
        s.subset_seed = j.value("subset_seed", s.subset_seed);
        s.output = j.value("output", s.output.string());
        s.workers = j.value("workers", s.workers);
        s.keep_samples = j.value("keep_samples", s.keep_samples);
        s.reference = j.value("reference", s.reference);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed sweep config: ") + e.what());
    }
    s.validate();
    return s;
}

SweepSpec SweepSpec::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open sweep config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("cannot parse " + path.string() + ": " + e.what());
    }
    auto spec = SweepSpec::from_json(j);
    if (spec.output.is_relative()) spec.output = path.parent_path() / spec.output;
    auto rebase = [&](fs::path& p) {
        if (!p.empty() && p.is_relative()) p = path.parent_path() / p;
    };
    rebase(spec.dataset.data);
    rebase(spec.dataset.schema);
    rebase(spec.dataset.test);
    return spec;
}

std::string CellResult::key() const {
    return size_label(size) + "/" + variant + "/seed" + std::to_string(seed) + "/trial" + std::to_string(trial);
}

// ---------------------------------------------------------------------------
// Sweep runner

namespace {

void write_text_atomic(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw InputError("cannot write " + tmp.string());
        out << text;
        if (!out) throw InputError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("cannot parse " + path.string() + ": " + e.what());
    }
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

std::string trace_csv(const std::vector<EpochLoss>& trace) {
    std::string out = "epoch,critic,wasserstein,penalty,adversarial,cond,marg\n";
    for (std::size_t e = 0; e < trace.size(); ++e) {
        const auto& l = trace[e];
        out += std::to_string(e) + "," + format_real(l.critic) + "," + format_real(l.wasserstein) + "," +
               format_real(l.penalty) + "," + format_real(l.adversarial) + "," + format_real(l.cond) + "," +
               format_real(l.marg) + "\n";
    }
    return out;
}

struct Unit {
    std::size_t size;
    std::optional<Variant> variant;  // empty: real-data reference
    std::uint64_t seed = 0;
    fs::path dir;
};

fs::path unit_dir(const fs::path& root, std::size_t size, const std::string& variant, std::uint64_t seed,
                  bool reference) {
    fs::path d = root / "cells" / size_label(size) / variant;
    if (!reference) d /= "seed" + std::to_string(seed);
    return d;
}

fs::path trial_report(const Unit& u, std::size_t trial) {
    return u.variant ? u.dir / ("trial" + std::to_string(trial)) / "report.json" : u.dir / "report.json";
}

MetricReport tagged(MetricReport r, const std::string& dataset, std::size_t size, const std::string& variant,
                    std::uint64_t seed, std::size_t trial) {
    r.metadata["dataset"] = dataset;
    r.metadata["size"] = size_label(size);
    r.metadata["variant"] = variant;
    r.metadata["seed"] = std::to_string(seed);
    r.metadata["trial"] = std::to_string(trial);
    return r;
}

}  // namespace

MetricReport real_reference(const Table& train_subset, const Table& test, const EvalOptions& options,
                            const Table* binning) {
    return evaluate(binning ? *binning : train_subset, test, train_subset, options);
}

SweepOutcome run_sweep(const SweepSpec& spec, const SweepHooks& hooks) {
    spec.validate();
    auto log = [&](const std::string& msg) {
        if (hooks.log) hooks.log(msg);
    };
    auto [train_full, test] = spec.dataset.load();
    fs::create_directories(spec.output);
    write_text_atomic(spec.output / "sweep.json", dump(spec.to_json()));

    SweepOutcome outcome;
    std::vector<std::size_t> sizes;
    for (auto s : spec.sizes) {
        if (s != kFull && s > train_full.rows()) {
            outcome.notes.push_back("size " + std::to_string(s) + " skipped: training split has only " +
                                    std::to_string(train_full.rows()) + " rows");
            continue;
        }
        sizes.push_back(s);
    }
    for (const auto& n : outcome.notes) log(n);

    std::vector<Unit> units;
    for (auto size : sizes) {
        if (spec.reference)
            units.push_back({size, std::nullopt, 0, unit_dir(spec.output, size, kReferenceVariant, 0, true)});
        for (auto v : spec.variants)
            for (auto seed : spec.seeds) units.push_back({size, v, seed, unit_dir(spec.output, size, to_string(v), seed, false)});
    }

    std::mutex mu;
    std::vector<std::vector<CellResult>> per_unit(units.size());
    std::atomic<std::size_t> next{0};
    const std::string& dataset = spec.dataset.name;

    auto run_unit = [&](std::size_t ui) {
        const Unit& u = units[ui];
        const std::string variant = u.variant ? to_string(*u.variant) : kReferenceVariant;
        const std::size_t trials = u.variant ? spec.trials : 1;
        auto make_cell = [&](std::size_t trial) {
            CellResult c;
            c.dataset = dataset;
            c.size = u.size;
            c.variant = variant;
            c.seed = u.seed;
            c.trial = trial;
            return c;
        };
        std::vector<CellResult> results;

        fs::path failure = u.dir / "failure.json";
        if (fs::exists(failure)) {
            auto j = read_json(failure);
            for (std::size_t t = 0; t < trials; ++t) {
                auto c = make_cell(t);
                c.failed = true;
                c.error = j.value("error", std::string{"unknown failure"});
                results.push_back(std::move(c));
            }
            std::lock_guard lock(mu);
            outcome.failed += trials;
            outcome.reused += trials;
            per_unit[ui] = std::move(results);
            return;
        }

        std::vector<bool> done(trials);
        bool all_done = true;
        for (std::size_t t = 0; t < trials; ++t) {
            done[t] = fs::exists(trial_report(u, t));
            all_done = all_done && done[t];
        }

        std::size_t trained = 0, evaluated = 0, reused = 0;
        try {
            Table subset = subsample(train_full, u.size, derive_seed(spec.subset_seed, {u.size}));
            std::optional<SynthModel> model;
            double train_seconds = 0.0;
            if (u.variant && !all_done) {
                fs::path model_path = u.dir / "model.tsyn";
                if (fs::exists(model_path)) {
                    model = load(model_path);
                } else {
                    TrainConfig cfg = spec.train;
                    cfg.variant = *u.variant;
                    cfg.seed = derive_seed(u.seed, {u.size});
                    log("train " + size_label(u.size) + "/" + variant + "/seed" + std::to_string(u.seed));
                    auto t0 = std::chrono::steady_clock::now();
                    model = train(subset, cfg);
                    train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                    for (const auto& d : model->diagnostics) log("  " + d);
                    fs::create_directories(u.dir);
                    save(*model, model_path);
                    write_text_atomic(u.dir / "trace.csv", trace_csv(model->trace));
                    write_text_atomic(u.dir / "timing.json", dump({{"train_seconds", train_seconds}}));
                    ++trained;
                }
            }
            for (std::size_t t = 0; t < trials; ++t) {
                CellResult c = make_cell(t);
                fs::path report_path = trial_report(u, t);
                if (u.variant) c.trace = u.dir / "trace.csv";
                if (done[t]) {
                    c.report = MetricReport::from_json(read_json(report_path));
                    ++reused;
                } else {
                    auto t0 = std::chrono::steady_clock::now();
                    EvalOptions eo = spec.eval;
                    eo.seed = derive_seed(u.seed, {u.size, t, 0xe7a1});
                    if (u.variant) {
                        Rng rng(derive_seed(u.seed, {u.size, t, 0x5a3e}));
                        Table synth = sample(*model, spec.synthetic_rows, rng);
                        if (spec.keep_samples) write_csv(report_path.parent_path() / "samples.csv", synth);
                        c.report = tagged(evaluate(train_full, test, synth, eo), dataset, u.size, variant, u.seed, t);
                    } else {
                        c.report = tagged(real_reference(subset, test, eo, &train_full), dataset, u.size, variant,
                                          u.seed, t);
                    }
                    c.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                    if (t == 0) c.wall_seconds += train_seconds;
                    write_text_atomic(report_path, dump(c.report.to_json()));
                    write_text_atomic(report_path.parent_path() / "timing.json",
                                      dump({{"eval_seconds", c.wall_seconds}}));
                    ++evaluated;
                }
                results.push_back(std::move(c));
            }
        } catch (const std::exception& e) {
            log("cell " + size_label(u.size) + "/" + variant + "/seed" + std::to_string(u.seed) + " failed: " + e.what());
            write_text_atomic(failure, dump({{"error", e.what()}}));
            results.clear();
            for (std::size_t t = 0; t < trials; ++t) {
                auto c = make_cell(t);
                c.failed = true;
                c.error = e.what();
                results.push_back(std::move(c));
            }
            std::lock_guard lock(mu);
            outcome.failed += trials;
            outcome.trained += trained;
            per_unit[ui] = std::move(results);
            return;
        }
        std::lock_guard lock(mu);
        outcome.trained += trained;
        outcome.evaluated += evaluated;
        outcome.reused += reused;
        per_unit[ui] = std::move(results);
    };

    auto worker = [&] {
        for (std::size_t i = next++; i < units.size(); i = next++) run_unit(i);
    };
    const std::size_t n_workers = std::min(spec.workers, std::max<std::size_t>(units.size(), 1));
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& r : per_unit)
        for (auto& c : r) outcome.cells.push_back(std::move(c));
    return outcome;
}

// ---------------------------------------------------------------------------
// Analysis

double relative_error(double score, double reference) { return 100.0 * (reference - score) / reference; }

CorrelationMatrix metric_correlation(const std::vector<CellResult>& cells, const std::vector<std::string>& metrics) {
    CorrelationMatrix out;
    std::vector<const CellResult*> usable;
    for (const auto& c : cells)
        if (!c.failed) usable.push_back(&c);
    for (const auto& m : metrics) {
        bool everywhere = !usable.empty();
        for (const auto* c : usable) everywhere = everywhere && c->report.scores.count(m) > 0;
        if (everywhere) out.metrics.push_back(m);
    }
    const auto k = static_cast<Eigen::Index>(out.metrics.size());
    std::vector<std::vector<double>> cols(out.metrics.size());
    for (std::size_t i = 0; i < out.metrics.size(); ++i)
        for (const auto* c : usable) cols[i].push_back(c->report.scores.at(out.metrics[i]));
    auto zero_variance = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    };
    out.values = Matrix::Constant(k, k, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < out.metrics.size(); ++i) {
        if (zero_variance(cols[i])) {
            out.flags.push_back("zero variance: " + out.metrics[i]);
            continue;
        }
        for (std::size_t j = 0; j < out.metrics.size(); ++j) {
            if (zero_variance(cols[j])) continue;
            out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                i == j ? 1.0 : std::abs(pearson(cols[i], cols[j]));
        }
    }
    return out;
}

std::vector<CellResult> load_cells(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw InputError("cell directory " + dir.string() + " does not exist");
    std::vector<fs::path> reports;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() == "report.json") reports.push_back(e.path());
    std::vector<CellResult> cells;
    for (const auto& p : reports) {
        auto j = read_json(p);
        if (!j.contains("scores") || !j.contains("metadata")) continue;  // not a cell report
        CellResult c;
        c.report = MetricReport::from_json(j);
        const auto& md = c.report.metadata;
        auto get = [&](const std::string& k) {
            auto it = md.find(k);
            if (it == md.end()) throw InputError(p.string() + ": missing metadata '" + k + "'");
            return it->second;
        };
        c.dataset = get("dataset");
        c.size = parse_size(get("size"));
        c.variant = get("variant");
        c.seed = std::stoull(get("seed"));
        c.trial = std::stoull(get("trial"));
        cells.push_back(std::move(c));
    }
    std::sort(cells.begin(), cells.end(), [](const CellResult& a, const CellResult& b) {
        if (a.dataset != b.dataset) return a.dataset < b.dataset;
        if (a.size != b.size) return size_less(a.size, b.size);
        return std::tie(a.variant, a.seed, a.trial) < std::tie(b.variant, b.seed, b.trial);
    });
    for (std::size_t i = 1; i < cells.size(); ++i)
        if (cells[i].dataset == cells[i - 1].dataset && cells[i].key() == cells[i - 1].key())
            throw InputError("duplicate cell " + cells[i].key());
    return cells;
}

std::map<AggregateKey, double> aggregate(const std::vector<CellResult>& cells) {
    std::map<AggregateKey, std::pair<double, std::size_t>> acc;
    for (const auto& c : cells) {
        if (c.failed) continue;
        for (const auto& [m, v] : c.report.scores) {
            auto& a = acc[{c.dataset, c.size, c.variant, m}];
            a.first += v;
            a.second += 1;
        }
    }
    std::map<AggregateKey, double> out;
    for (const auto& [k, a] : acc) out[k] = a.first / static_cast<double>(a.second);
    return out;
}

std::map<AggregateKey, double> aggregate_seed_first(const std::vector<CellResult>& cells) {
    std::map<std::pair<AggregateKey, std::uint64_t>, std::pair<double, std::size_t>> per_seed;
    for (const auto& c : cells) {
        if (c.failed) continue;
        for (const auto& [m, v] : c.report.scores) {
            auto& a = per_seed[{{c.dataset, c.size, c.variant, m}, c.seed}];
            a.first += v;
            a.second += 1;
        }
    }
    std::map<AggregateKey, std::pair<double, std::size_t>> acc;
    for (const auto& [k, a] : per_seed) {
        auto& b = acc[k.first];
        b.first += a.first / static_cast<double>(a.second);
        b.second += 1;
    }
    std::map<AggregateKey, double> out;
    for (const auto& [k, a] : acc) out[k] = a.first / static_cast<double>(a.second);
    return out;
}

std::map<std::tuple<std::size_t, std::string, std::string>, double> cross_dataset_average(
    const std::map<AggregateKey, double>& per_dataset) {
    std::map<std::tuple<std::size_t, std::string, std::string>, std::pair<double, std::size_t>> acc;
    for (const auto& [k, v] : per_dataset) {
        auto& a = acc[{std::get<1>(k), std::get<2>(k), std::get<3>(k)}];
        a.first += v;
        a.second += 1;
    }
    std::map<std::tuple<std::size_t, std::string, std::string>, double> out;
    for (const auto& [k, a] : acc) out[k] = a.first / static_cast<double>(a.second);
    return out;
}

namespace {

std::string format_cell(double v) { return std::isfinite(v) ? format_real(v) : ""; }

nlohmann::json json_number(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

std::string RelativeErrorTable::to_csv() const {
    std::string out = "variant";
    for (auto s : sizes) out += "," + std::string(s == kFull ? "-1" : std::to_string(s));
    out += "\n";
    for (std::size_t v = 0; v < variants.size(); ++v) {
        out += variants[v];
        for (std::size_t s = 0; s < sizes.size(); ++s)
            out += "," + format_cell(values(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(s)));
        out += "\n";
    }
    return out;
}

nlohmann::json RelativeErrorTable::to_json() const {
    nlohmann::json cols = nlohmann::json::array();
    for (auto s : sizes) cols.push_back(s == kFull ? -1 : static_cast<long long>(s));
    nlohmann::json rows = nlohmann::json::object();
    for (std::size_t v = 0; v < variants.size(); ++v) {
        nlohmann::json r = nlohmann::json::array();
        for (std::size_t s = 0; s < sizes.size(); ++s)
            r.push_back(json_number(values(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(s))));
        rows[variants[v]] = r;
    }
    return {{"dataset", dataset}, {"metric", metric}, {"sizes", cols}, {"rows", rows}};
}

std::vector<RelativeErrorTable> relative_error_tables(const std::vector<CellResult>& cells) {
    auto means = aggregate(cells);
    std::set<std::string> datasets, metrics;
    std::map<std::string, std::set<std::size_t, decltype(&size_less)>> sizes;
    std::map<std::string, std::set<std::string>> variants;
    for (const auto& [k, v] : means) {
        const auto& [ds, size, variant, metric] = k;
        datasets.insert(ds);
        metrics.insert(metric);
        sizes.try_emplace(ds, &size_less).first->second.insert(size);
        if (variant != kReferenceVariant) variants[ds].insert(variant);
    }
    std::vector<RelativeErrorTable> out;
    for (const auto& ds : datasets) {
        for (const auto& m : metrics) {
            RelativeErrorTable t;
            t.dataset = ds;
            t.metric = m;
            const auto& ss = sizes.at(ds);
            if (ss.count(kFull)) t.sizes.push_back(kFull);
            for (auto it = ss.rbegin(); it != ss.rend(); ++it)
                if (*it != kFull) t.sizes.push_back(*it);
            t.variants.assign(variants[ds].begin(), variants[ds].end());
            t.values = Matrix::Constant(static_cast<Eigen::Index>(t.variants.size()),
                                        static_cast<Eigen::Index>(t.sizes.size()),
                                        std::numeric_limits<double>::quiet_NaN());
            for (std::size_t s = 0; s < t.sizes.size(); ++s) {
                auto ref = means.find({ds, t.sizes[s], kReferenceVariant, m});
                if (ref == means.end() || ref->second == 0.0) continue;
                for (std::size_t v = 0; v < t.variants.size(); ++v) {
                    auto cell = means.find({ds, t.sizes[s], t.variants[v], m});
                    if (cell == means.end()) continue;
                    t.values(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(s)) =
                        relative_error(cell->second, ref->second);
                }
            }
            out.push_back(std::move(t));
        }
    }
    return out;
}

ReportFormat parse_report_format(const std::string& s) {
    if (s == "csv") return ReportFormat::Csv;
    if (s == "json") return ReportFormat::Json;
    throw InputError("unknown report format '" + s + "' (expected csv or json)");
}

std::vector<fs::path> write_report(const std::vector<CellResult>& cells, ReportFormat format, const fs::path& out) {
    fs::create_directories(out);
    std::vector<fs::path> written;
    auto emit = [&](const fs::path& rel, const std::string& text) {
        write_text_atomic(out / rel, text);
        written.push_back(rel);
    };

    std::set<std::string> present;
    for (const auto& c : cells)
        for (const auto& [m, v] : c.report.scores) present.insert(m);
    std::vector<std::string> metrics;
    for (const auto& m : all_metrics())
        if (present.count(m)) metrics.push_back(m);

    std::vector<CellResult> synthetic;
    for (const auto& c : cells)
        if (c.variant != kReferenceVariant && !c.failed) synthetic.push_back(c);
    auto corr = metric_correlation(synthetic, metrics);
    auto tables = relative_error_tables(cells);
    auto joint = aggregate(cells);
    auto seed_first = aggregate_seed_first(cells);

    std::set<std::string> datasets;
    for (const auto& c : cells) datasets.insert(c.dataset);

    if (format == ReportFormat::Csv) {
        for (const auto& m : metrics) {
            std::string text = "dataset,size,variant,seed,trial,score\n";
            for (const auto& c : cells) {
                auto it = c.report.scores.find(m);
                if (it == c.report.scores.end()) continue;
                text += c.dataset + "," + size_label(c.size) + "," + c.variant + "," + std::to_string(c.seed) + "," +
                        std::to_string(c.trial) + "," + format_real(it->second) + "\n";
            }
            emit(fs::path("scores") / (m + ".csv"), text);
        }
        for (const auto& t : tables)
            emit(fs::path("relative_error") / (t.dataset + "__" + t.metric + ".csv"), t.to_csv());
        std::string text = "metric";
        for (const auto& m : corr.metrics) text += "," + m;
        text += "\n";
        for (std::size_t i = 0; i < corr.metrics.size(); ++i) {
            text += corr.metrics[i];
            for (std::size_t j = 0; j < corr.metrics.size(); ++j)
                text += "," + format_cell(corr.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
            text += "\n";
        }
        emit("metric_correlation.csv", text);
        text = "dataset,size,variant,metric,mean_joint,mean_seed_first\n";
        for (const auto& [k, v] : joint) {
            const auto& [ds, size, variant, m] = k;
            text += ds + "," + size_label(size) + "," + variant + "," + m + "," + format_real(v) + "," +
                    format_real(seed_first.at(k)) + "\n";
        }
        emit("averages.csv", text);
        if (datasets.size() > 1) {
            text = "size,variant,metric,mean\n";
            for (const auto& [k, v] : cross_dataset_average(joint)) {
                const auto& [size, variant, m] = k;
                text += size_label(size) + "," + variant + "," + m + "," + format_real(v) + "\n";
            }
            emit("cross_dataset_averages.csv", text);
        }
    } else {
        nlohmann::json j;
        nlohmann::json jcells = nlohmann::json::array();
        for (const auto& c : cells) {
            nlohmann::json jc{{"dataset", c.dataset},
                              {"size", size_label(c.size)},
                              {"variant", c.variant},
                              {"seed", c.seed},
                              {"trial", c.trial},
                              {"scores", c.report.scores}};
            jcells.push_back(jc);
        }
        j["cells"] = jcells;
        nlohmann::json jt = nlohmann::json::array();
        for (const auto& t : tables) jt.push_back(t.to_json());
        j["relative_error"] = jt;
        nlohmann::json jm = nlohmann::json::array();
        for (Eigen::Index i = 0; i < corr.values.rows(); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index k = 0; k < corr.values.cols(); ++k) row.push_back(json_number(corr.values(i, k)));
            jm.push_back(row);
        }
        j["metric_correlation"] = {{"metrics", corr.metrics}, {"values", jm}, {"flags", corr.flags}};
        nlohmann::json ja = nlohmann::json::array();
        for (const auto& [k, v] : joint) {
            const auto& [ds, size, variant, m] = k;
            ja.push_back({{"dataset", ds},
                          {"size", size_label(size)},
                          {"variant", variant},
                          {"metric", m},
                          {"mean_joint", v},
                          {"mean_seed_first", seed_first.at(k)}});
        }
        j["averages"] = ja;
        emit("report.json", dump(j));
    }

    std::size_t failed = 0;
    for (const auto& c : cells) failed += c.failed ? 1 : 0;
    nlohmann::json manifest{{"cells", cells.size()},
                            {"failed_cells", failed},
                            {"datasets", datasets},
                            {"metrics", metrics},
                            {"format", format == ReportFormat::Csv ? "csv" : "json"},
                            {"averaging", "joint mean over (seed x trial); seed-first mean also reported"},
                            {"correlation_flags", corr.flags}};
    nlohmann::json files = nlohmann::json::array();
    for (const auto& p : written) files.push_back(p.generic_string());
    manifest["files"] = files;
    write_text_atomic(out / "manifest.json", dump(manifest));
    written.push_back("manifest.json");
    return written;
}

}  // namespace tabsynth
