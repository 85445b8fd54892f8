#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "tabsynth/harness.hpp"

namespace fs = std::filesystem;
using namespace tabsynth;

namespace {

void print_scores(const MetricReport& r) {
    for (const auto& m : all_metrics()) {
        auto it = r.scores.find(m);
        if (it != r.scores.end()) std::cout << m << " " << format_real(it->second) << "\n";
    }
    for (const auto& f : r.flags) std::cerr << "note: " << f << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tabular data synthesizer with moment matching and an evaluation suite"};
    app.require_subcommand(1);

    // fit
    auto* fit = app.add_subcommand("fit", "Train a synthesizer on a CSV table");
    std::string fit_data, fit_schema, fit_variant = "margctgan", fit_out, fit_config;
    std::size_t fit_epochs = 300, fit_batch = 0, fit_log_every = 0;
    std::uint64_t fit_seed = 0;
    fit->add_option("--data", fit_data, "Training CSV")->required()->check(CLI::ExistingFile);
    fit->add_option("--schema", fit_schema, "Schema manifest (JSON)")->required()->check(CLI::ExistingFile);
    fit->add_option("--variant", fit_variant, "ctgan | margctgan | ctgan-raw");
    fit->add_option("--epochs", fit_epochs, "Training epochs");
    fit->add_option("--seed", fit_seed, "Random seed");
    fit->add_option("--batch-size", fit_batch, "Batch size (even)");
    fit->add_option("--config", fit_config, "Training config JSON (overridden by explicit flags)")
        ->check(CLI::ExistingFile);
    fit->add_option("--log-every", fit_log_every, "Print losses every N epochs");
    fit->add_option("--out", fit_out, "Output model file")->required();

    // sample
    auto* smp = app.add_subcommand("sample", "Generate rows from a trained model");
    std::string smp_model, smp_out;
    std::size_t smp_n = 20000;
    std::uint64_t smp_seed = 0;
    smp->add_option("--model", smp_model, "Model file")->required()->check(CLI::ExistingFile);
    smp->add_option("--n", smp_n, "Number of rows");
    smp->add_option("--seed", smp_seed, "Random seed");
    smp->add_option("--out", smp_out, "Output CSV")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "Score a synthetic table against real train/test tables");
    std::string ev_synth, ev_train, ev_test, ev_schema, ev_out;
    std::vector<std::string> ev_metrics;
    EvalOptions ev_opt;
    ev->add_option("--synth", ev_synth, "Synthetic CSV")->required()->check(CLI::ExistingFile);
    ev->add_option("--train", ev_train, "Real training CSV")->required()->check(CLI::ExistingFile);
    ev->add_option("--test", ev_test, "Real held-out CSV")->required()->check(CLI::ExistingFile);
    ev->add_option("--schema", ev_schema, "Schema manifest (JSON)")->required()->check(CLI::ExistingFile);
    ev->add_option("--out", ev_out, "Output report JSON")->required();
    ev->add_option("--metrics", ev_metrics, "Subset of metrics (default: all)");
    ev->add_option("--seed", ev_opt.seed, "Random seed");
    ev->add_option("--dcr-k", ev_opt.dcr_k, "Neighbor rank for DCR")->check(CLI::Range(1, 9));
    ev->add_option("--sample-cap", ev_opt.sample_cap, "Test rows used by the neighbor metrics");

    // sweep
    auto* sw = app.add_subcommand("sweep", "Run or resume a sample-size sweep");
    std::string sw_config;
    std::size_t sw_workers = 0;
    sw->add_option("--config", sw_config, "Sweep config JSON")->required()->check(CLI::ExistingFile);
    sw->add_option("--workers", sw_workers, "Override the worker count");

    // report
    auto* rep = app.add_subcommand("report", "Summarize sweep cells");
    std::string rep_cells, rep_format = "csv", rep_out;
    rep->add_option("--cells", rep_cells, "Sweep output directory")->required()->check(CLI::ExistingDirectory);
    rep->add_option("--format", rep_format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
    rep->add_option("--out", rep_out, "Report directory (default: <cells>/report)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*fit) {
            TrainConfig cfg;
            if (!fit_config.empty()) {
                std::ifstream in(fit_config);
                cfg = TrainConfig::from_json(nlohmann::json::parse(in));
            }
            cfg.variant = parse_variant(fit_variant);
            if (fit->count("--epochs") || fit_config.empty()) cfg.epochs = fit_epochs;
            if (fit->count("--seed") || fit_config.empty()) cfg.seed = fit_seed;
            if (fit_batch) cfg.batch_size = fit_batch;
            Table t = load_csv(fit_data, fit_schema);
            std::cerr << "training " << to_string(cfg.variant) << " on " << t.rows() << " rows for " << cfg.epochs
                      << " epochs\n";
            TrainOptions opts;
            if (fit_log_every > 0)
                opts.on_epoch = [&](std::size_t e, const EpochLoss& l) {
                    if ((e + 1) % fit_log_every == 0)
                        std::cerr << "epoch " << e + 1 << " critic " << l.critic << " gen " << l.adversarial
                                  << " cond " << l.cond << " marg " << l.marg << "\n";
                };
            SynthModel m = train(t, cfg, opts);
            for (const auto& d : m.diagnostics) std::cerr << "warning: " << d << "\n";
            save(m, fit_out);
            std::cerr << "model written to " << fit_out << "\n";
        } else if (*smp) {
            SynthModel m = load(smp_model);
            Rng rng(smp_seed);
            write_csv(fs::path(smp_out), sample(m, smp_n, rng));
            std::cerr << smp_n << " rows written to " << smp_out << "\n";
        } else if (*ev) {
            Schema s = Schema::load(ev_schema);
            for (const auto& m : ev_metrics) {
                if (std::find(all_metrics().begin(), all_metrics().end(), m) == all_metrics().end())
                    throw InputError("unknown metric '" + m + "'");
                ev_opt.metrics.insert(m);
            }
            MetricReport r = evaluate(load_csv(ev_train, s), load_csv(ev_test, s), load_csv(ev_synth, s), ev_opt);
            std::ofstream out(ev_out);
            if (!out) throw InputError("cannot write " + ev_out);
            out << r.to_json().dump(2) << "\n";
            print_scores(r);
        } else if (*sw) {
            SweepSpec spec = SweepSpec::load(sw_config);
            if (sw_workers) spec.workers = sw_workers;
            SweepHooks hooks;
            hooks.log = [](const std::string& msg) { std::cerr << msg << "\n"; };
            auto outcome = run_sweep(spec, hooks);
            std::cerr << "cells " << outcome.cells.size() << ", trained " << outcome.trained << ", evaluated "
                      << outcome.evaluated << ", reused " << outcome.reused << ", failed " << outcome.failed << "\n";
            return outcome.failed ? 1 : 0;
        } else if (*rep) {
            fs::path out = rep_out.empty() ? fs::path(rep_cells) / "report" : fs::path(rep_out);
            auto cells = load_cells(rep_cells);
            auto files = write_report(cells, parse_report_format(rep_format), out);
            for (const auto& f : files) std::cout << (out / f).string() << "\n";
        }
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
