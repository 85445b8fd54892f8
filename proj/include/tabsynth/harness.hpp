#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tabsynth/data.hpp"
#include "tabsynth/metrics.hpp"
#include "tabsynth/synthesizer.hpp"

namespace tabsynth {

/// Where the real data of a sweep comes from: CSV files or the built-in toy generator.
struct DatasetSource {
    std::string name = "dataset";
    std::filesystem::path data;
    std::filesystem::path schema;
    /// Optional held-out file; when empty the data is split with `test_fraction`.
    std::filesystem::path test;
    double test_fraction = 0.3;
    std::uint64_t split_seed = 0;
    /// Rows of the default toy dataset (used when `data` is empty).
    std::size_t toy_rows = 0;
    std::uint64_t toy_seed = 0;

    nlohmann::json to_json() const;
    static DatasetSource from_json(const nlohmann::json& j);
    /// Loads (train, test).
    std::pair<Table, Table> load() const;
};

struct SweepSpec {
    DatasetSource dataset;
    /// Ascending, kFull (FULL) last.
    std::vector<std::size_t> sizes{40, 80, 160, 320, 640, 1280, 2560, 5120, 10240, 20480, kFull};
    std::vector<Variant> variants{Variant::Ctgan, Variant::MargCtgan};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::size_t trials = 5;
    std::size_t synthetic_rows = 20000;
    /// Training hyperparameters; `variant` and `seed` are set per cell.
    TrainConfig train;
    EvalOptions eval;
    std::uint64_t subset_seed = 0;
    std::filesystem::path output = "sweep";
    std::size_t workers = 1;
    bool keep_samples = false;
    bool reference = true;

    void validate() const;
    nlohmann::json to_json() const;
    /// Missing keys take the defaults above; `epochs` is accepted at top level.
    static SweepSpec from_json(const nlohmann::json& j);
    static SweepSpec load(const std::filesystem::path& path);
};

/// "FULL" for kFull, the decimal size otherwise.
std::string size_label(std::size_t size);
/// Inverse of size_label; also accepts "-1".
std::size_t parse_size(const std::string& s);

inline const std::string kReferenceVariant = "reference";

struct CellResult {
    std::string dataset;
    std::size_t size = kFull;
    std::string variant;  // a variant name or kReferenceVariant
    std::uint64_t seed = 0;
    std::size_t trial = 0;
    MetricReport report;
    double wall_seconds = 0.0;
    std::filesystem::path trace;
    bool failed = false;
    std::string error;

    /// "<size>/<variant>/seed<seed>/trial<trial>", unique within a sweep.
    std::string key() const;
};

struct SweepOutcome {
    std::vector<CellResult> cells;
    std::size_t trained = 0;
    std::size_t evaluated = 0;
    std::size_t reused = 0;
    std::size_t failed = 0;
    std::vector<std::string> notes;
};

struct SweepHooks {
    std::function<void(const std::string&)> log;
};

/// Every metric computed with the real training subset in place of synthetic data.
/// `binning` supplies the train half of the pooled binning data (the full training split).
MetricReport real_reference(const Table& train_subset, const Table& test, const EvalOptions& options = {},
                            const Table* binning = nullptr);

/// Runs or resumes the sweep in spec.output. Cells already on disk are loaded, not recomputed.
SweepOutcome run_sweep(const SweepSpec& spec, const SweepHooks& hooks = {});

/// 100·(reference − score)/reference.
double relative_error(double score, double reference);

struct CorrelationMatrix {
    std::vector<std::string> metrics;
    /// |Pearson| over cells; NaN where a metric has zero variance.
    Matrix values;
    std::vector<std::string> flags;
};

/// Absolute Pearson correlation between metrics over the given cells. Only metrics present in every cell are used.
CorrelationMatrix metric_correlation(const std::vector<CellResult>& cells,
                                     const std::vector<std::string>& metrics = all_metrics());

/// Reads every cell report below `dir`, in a stable order.
std::vector<CellResult> load_cells(const std::filesystem::path& dir);

/// (dataset, size, variant, metric) → mean over all (seed × trial) cells.
using AggregateKey = std::tuple<std::string, std::size_t, std::string, std::string>;
std::map<AggregateKey, double> aggregate(const std::vector<CellResult>& cells);
/// Second averaging order: mean over seeds of the per-seed trial means.
std::map<AggregateKey, double> aggregate_seed_first(const std::vector<CellResult>& cells);
/// (size, variant, metric) → unweighted mean of the per-dataset means.
std::map<std::tuple<std::size_t, std::string, std::string>, double> cross_dataset_average(
    const std::map<AggregateKey, double>& per_dataset);

/// One row per variant, columns "-1" then sizes descending; cells are relative errors
/// of the mean score against the reference at the same size.
struct RelativeErrorTable {
    std::string dataset;
    std::string metric;
    std::vector<std::size_t> sizes;  // FULL first, then descending
    std::vector<std::string> variants;
    /// variants × sizes; NaN when the reference is zero or a cell is missing.
    Matrix values;

    std::string to_csv() const;
    nlohmann::json to_json() const;
};

std::vector<RelativeErrorTable> relative_error_tables(const std::vector<CellResult>& cells);

enum class ReportFormat { Csv, Json };
ReportFormat parse_report_format(const std::string& s);

/// Writes the long-format scores, relative-error tables, metric-correlation matrix and a
/// manifest into `out`. Returns the written files. Output depends only on the cell files.
std::vector<std::filesystem::path> write_report(const std::vector<CellResult>& cells, ReportFormat format,
                                                const std::filesystem::path& out);

}  // namespace tabsynth
