#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabsynth/common.hpp"

namespace tabsynth {

enum class Kind { Numerical, Categorical };
enum class Task { Classification, Regression };

struct Column {
    std::string name;
    Kind kind = Kind::Numerical;
    /// Ordered, duplicate-free labels; empty for numerical columns.
    std::vector<std::string> categories;

    bool is_categorical() const { return kind == Kind::Categorical; }
    std::size_t cardinality() const { return categories.size(); }
    std::optional<std::int32_t> category_index(const std::string& label) const;
};

/// Ordered column list plus optional prediction target.
///
/// Numerical and categorical cells live in separate matrices inside a Table;
/// `slot(i)` maps schema column i to its index within the matrix of its kind.
class Schema {
public:
    Schema() = default;
    Schema(std::vector<Column> columns, std::optional<std::string> target, Task task,
           std::optional<std::string> positive_label = std::nullopt);

    const std::vector<Column>& columns() const { return columns_; }
    const Column& column(std::size_t i) const { return columns_.at(i); }
    std::size_t size() const { return columns_.size(); }
    std::size_t slot(std::size_t i) const { return slots_.at(i); }
    std::size_t numerical_count() const { return n_numerical_; }
    std::size_t categorical_count() const { return columns_.size() - n_numerical_; }
    std::optional<std::size_t> find(const std::string& name) const;

    const std::optional<std::string>& target() const { return target_; }
    std::optional<std::size_t> target_index() const;
    Task task() const { return task_; }
    /// Category index treated as the positive class for binary F1 (default 1).
    std::int32_t positive_index() const;

    /// Same columns, different target (used by the all-columns utility test).
    Schema with_target(std::size_t column) const;

    nlohmann::json to_json() const;
    static Schema from_json(const nlohmann::json& j);
    static Schema load(const std::filesystem::path& manifest);

    bool operator==(const Schema& other) const;

private:
    std::vector<Column> columns_;
    std::vector<std::size_t> slots_;
    std::size_t n_numerical_ = 0;
    std::optional<std::string> target_;
    Task task_ = Task::Classification;
    std::optional<std::string> positive_label_;
};

/// Immutable columnar dataset.
class Table {
public:
    Table() = default;
    Table(Schema schema, Matrix numerical, IndexMatrix categorical);

    const Schema& schema() const { return schema_; }
    std::size_t rows() const { return rows_; }
    bool empty() const { return rows_ == 0; }

    /// rows × numerical_count, columns in schema order of numerical columns.
    const Matrix& numerical() const { return numerical_; }
    /// rows × categorical_count, category indices.
    const IndexMatrix& categorical() const { return categorical_; }

    double number(std::size_t row, std::size_t column) const;
    std::int32_t category(std::size_t row, std::size_t column) const;
    /// Column `column` as reals (category indices converted for categorical columns).
    Vector column_values(std::size_t column) const;
    std::vector<std::int32_t> column_codes(std::size_t column) const;

    Table select_rows(const std::vector<std::size_t>& indices) const;
    Table with_schema(Schema schema) const;

private:
    Schema schema_;
    Matrix numerical_;
    IndexMatrix categorical_;
    std::size_t rows_ = 0;
};

/// Sentinel for subsample(): keep the whole table.
inline constexpr std::size_t kFull = 0;

Table read_csv(std::istream& in, const Schema& schema, const std::string& source = "<stream>");
Table load_csv(const std::filesystem::path& path, const std::filesystem::path& schema_manifest);
Table load_csv(const std::filesystem::path& path, const Schema& schema);
void write_csv(std::ostream& out, const Table& t);
void write_csv(const std::filesystem::path& path, const Table& t);

/// Locale-independent shortest round-trip decimal form.
std::string format_real(double v);

std::pair<Table, Table> split(const Table& t, double test_fraction, std::uint64_t seed);
/// Uniform draw without replacement; n == kFull returns the input unchanged.
Table subsample(const Table& t, std::size_t n, std::uint64_t seed);

struct MixtureComponent {
    double weight;
    double mean;
    double stddev;
};

struct ToyNumerical {
    std::string name;
    std::vector<MixtureComponent> mixture;
};

struct ToyCategorical {
    std::string name;
    std::vector<std::string> categories;
    std::vector<double> priors;
};

/// Binary target: label 1 when bias + Σ w·x + Σ offset[c] + N(0, noise²) > 0.
struct ToyTarget {
    std::string name = "target";
    double bias = 0.0;
    std::vector<double> numerical_weights;
    std::vector<std::vector<double>> categorical_offsets;
    double noise = 0.0;
};

struct ToySpec {
    std::vector<ToyNumerical> numerical;
    std::vector<ToyCategorical> categorical;
    std::optional<ToyTarget> target;
};

Table toy_dataset(const ToySpec& spec, std::size_t n, std::uint64_t seed);

/// Fixture used across tests and the acceptance suite: two numerical columns
/// (one bimodal), one three-class categorical column and a binary target.
ToySpec default_toy_spec();

}  // namespace tabsynth
