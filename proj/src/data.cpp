#include "tabsynth/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace tabsynth {

std::optional<std::int32_t> Column::category_index(const std::string& label) const {
    auto it = std::find(categories.begin(), categories.end(), label);
    if (it == categories.end()) return std::nullopt;
    return static_cast<std::int32_t>(it - categories.begin());
}

Schema::Schema(std::vector<Column> columns, std::optional<std::string> target, Task task,
               std::optional<std::string> positive_label)
    : columns_(std::move(columns)),
      target_(std::move(target)),
      task_(task),
      positive_label_(std::move(positive_label)) {
    std::unordered_set<std::string> names;
    std::size_t n_cat = 0;
    for (const auto& c : columns_) {
        if (!names.insert(c.name).second) throw InputError("duplicate column name '" + c.name + "'");
        if (c.is_categorical()) {
            if (c.categories.empty())
                throw InputError("categorical column '" + c.name + "' has no categories");
            std::unordered_set<std::string> labels(c.categories.begin(), c.categories.end());
            if (labels.size() != c.categories.size())
                throw InputError("categorical column '" + c.name + "' has duplicate categories");
            slots_.push_back(n_cat++);
        } else {
            if (!c.categories.empty())
                throw InputError("numerical column '" + c.name + "' must not list categories");
            slots_.push_back(n_numerical_++);
        }
    }
    if (target_) {
        auto idx = find(*target_);
        if (!idx) throw InputError("target '" + *target_ + "' is not a column");
        const auto& tc = columns_[*idx];
        if (task_ == Task::Classification && !tc.is_categorical())
            throw InputError("classification requires a categorical target");
        if (task_ == Task::Regression && tc.is_categorical())
            throw InputError("regression requires a numerical target");
        if (positive_label_ && tc.is_categorical() && !tc.category_index(*positive_label_))
            throw InputError("positive label '" + *positive_label_ + "' is not a target category");
    }
}

std::optional<std::size_t> Schema::find(const std::string& name) const {
    for (std::size_t i = 0; i < columns_.size(); ++i)
        if (columns_[i].name == name) return i;
    return std::nullopt;
}

std::optional<std::size_t> Schema::target_index() const {
    if (!target_) return std::nullopt;
    return find(*target_);
}

std::int32_t Schema::positive_index() const {
    auto ti = target_index();
    if (ti && positive_label_) {
        if (auto idx = columns_[*ti].category_index(*positive_label_)) return *idx;
    }
    return 1;
}

Schema Schema::with_target(std::size_t column) const {
    const auto& c = columns_.at(column);
    return Schema(columns_, c.name, c.is_categorical() ? Task::Classification : Task::Regression);
}

nlohmann::json Schema::to_json() const {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : columns_) {
        nlohmann::json jc{{"name", c.name}, {"kind", c.is_categorical() ? "categorical" : "numerical"}};
        if (c.is_categorical()) jc["categories"] = c.categories;
        cols.push_back(std::move(jc));
    }
    nlohmann::json j{{"columns", std::move(cols)},
                     {"task", task_ == Task::Classification ? "classification" : "regression"}};
    if (target_) j["target"] = *target_;
    if (positive_label_) j["positive"] = *positive_label_;
    return j;
}

Schema Schema::from_json(const nlohmann::json& j) {
    try {
        std::vector<Column> cols;
        for (const auto& jc : j.at("columns")) {
            Column c;
            c.name = jc.at("name").get<std::string>();
            auto kind = jc.at("kind").get<std::string>();
            if (kind == "numerical") {
                c.kind = Kind::Numerical;
            } else if (kind == "categorical") {
                c.kind = Kind::Categorical;
                c.categories = jc.at("categories").get<std::vector<std::string>>();
            } else {
                throw InputError("column '" + c.name + "': unknown kind '" + kind + "'");
            }
            cols.push_back(std::move(c));
        }
        std::optional<std::string> target;
        if (j.contains("target") && !j["target"].is_null()) target = j["target"].get<std::string>();
        Task task = Task::Classification;
        if (j.contains("task")) {
            auto t = j["task"].get<std::string>();
            if (t == "regression") task = Task::Regression;
            else if (t != "classification") throw InputError("unknown task '" + t + "'");
        }
        std::optional<std::string> positive;
        if (j.contains("positive")) positive = j["positive"].get<std::string>();
        return Schema(std::move(cols), std::move(target), task, std::move(positive));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed schema manifest: ") + e.what());
    }
}

Schema Schema::load(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw InputError("cannot open schema manifest " + manifest.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("schema manifest " + manifest.string() + ": " + e.what());
    }
    return from_json(j);
}

bool Schema::operator==(const Schema& other) const {
    if (columns_.size() != other.columns_.size()) return false;
    for (std::size_t i = 0; i < columns_.size(); ++i) {
        const auto& a = columns_[i];
        const auto& b = other.columns_[i];
        if (a.name != b.name || a.kind != b.kind || a.categories != b.categories) return false;
    }
    return target_ == other.target_ && task_ == other.task_ && positive_label_ == other.positive_label_;
}

Table::Table(Schema schema, Matrix numerical, IndexMatrix categorical)
    : schema_(std::move(schema)), numerical_(std::move(numerical)), categorical_(std::move(categorical)) {
    if (static_cast<std::size_t>(numerical_.cols()) != schema_.numerical_count() ||
        static_cast<std::size_t>(categorical_.cols()) != schema_.categorical_count())
        throw InputError("table matrices do not match schema column counts");
    if (schema_.numerical_count() > 0 && schema_.categorical_count() > 0 &&
        numerical_.rows() != categorical_.rows())
        throw InputError("numerical and categorical row counts differ");
    rows_ = schema_.numerical_count() > 0 ? numerical_.rows() : categorical_.rows();
    if (schema_.numerical_count() == 0) numerical_.resize(static_cast<Eigen::Index>(rows_), 0);
    if (schema_.categorical_count() == 0) categorical_.resize(static_cast<Eigen::Index>(rows_), 0);
    for (std::size_t i = 0; i < schema_.size(); ++i) {
        const auto& c = schema_.column(i);
        auto s = static_cast<Eigen::Index>(schema_.slot(i));
        if (c.is_categorical()) {
            auto card = static_cast<std::int32_t>(c.cardinality());
            for (Eigen::Index r = 0; r < categorical_.rows(); ++r) {
                auto v = categorical_(r, s);
                if (v < 0 || v >= card)
                    throw InputError("category index out of range in column '" + c.name + "'");
            }
        } else if (!numerical_.col(s).allFinite()) {
            throw InputError("non-finite value in column '" + c.name + "'");
        }
    }
}

double Table::number(std::size_t row, std::size_t column) const {
    return numerical_(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(schema_.slot(column)));
}

std::int32_t Table::category(std::size_t row, std::size_t column) const {
    return categorical_(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(schema_.slot(column)));
}

Vector Table::column_values(std::size_t column) const {
    auto s = static_cast<Eigen::Index>(schema_.slot(column));
    if (schema_.column(column).is_categorical()) return categorical_.col(s).cast<double>();
    return numerical_.col(s);
}

std::vector<std::int32_t> Table::column_codes(std::size_t column) const {
    if (!schema_.column(column).is_categorical())
        throw InputError("column '" + schema_.column(column).name + "' is not categorical");
    auto s = static_cast<Eigen::Index>(schema_.slot(column));
    std::vector<std::int32_t> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = categorical_(static_cast<Eigen::Index>(r), s);
    return out;
}

Table Table::select_rows(const std::vector<std::size_t>& indices) const {
    auto n = static_cast<Eigen::Index>(indices.size());
    Matrix num(n, numerical_.cols());
    IndexMatrix cat(n, categorical_.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        auto r = static_cast<Eigen::Index>(indices[static_cast<std::size_t>(i)]);
        if (r >= static_cast<Eigen::Index>(rows_)) throw InputError("row index out of range");
        num.row(i) = numerical_.row(r);
        cat.row(i) = categorical_.row(r);
    }
    return Table(schema_, std::move(num), std::move(cat));
}

Table Table::with_schema(Schema schema) const {
    return Table(std::move(schema), numerical_, categorical_);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

// Splits one RFC-4180 record. Returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line) {
    fields.clear();
    std::string field;
    bool quoted = false;
    bool any = false;
    char ch;
    while (in.get(ch)) {
        any = true;
        if (quoted) {
            if (ch == '"') {
                if (in.peek() == '"') {
                    in.get(ch);
                    field.push_back('"');
                } else {
                    quoted = false;
                }
            } else {
                if (ch == '\n') ++line;
                field.push_back(ch);
            }
            continue;
        }
        if (ch == '"' && field.empty()) {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (ch == '\r') {
            if (in.peek() == '\n') continue;
            break;
        } else if (ch == '\n') {
            break;
        } else {
            field.push_back(ch);
        }
    }
    if (!any) return false;
    ++line;
    fields.push_back(std::move(field));
    return true;
}

bool needs_quotes(const std::string& s) {
    return s.find_first_of(",\"\r\n") != std::string::npos || s.empty();
}

std::string quote(const std::string& s) {
    if (!needs_quotes(s)) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out.push_back('"');
        out.push_back(ch);
    }
    out.push_back('"');
    return out;
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_real(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

Table read_csv(std::istream& in, const Schema& schema, const std::string& source) {
    std::vector<std::string> fields;
    std::size_t line = 0;
    if (!read_record(in, fields, line)) throw InputError(source + ": missing header row");
    if (!fields.empty() && fields[0].rfind("\xEF\xBB\xBF", 0) == 0) fields[0] = fields[0].substr(3);

    // Map schema columns onto CSV positions.
    std::vector<std::size_t> position(schema.size());
    for (std::size_t i = 0; i < schema.size(); ++i) {
        auto it = std::find(fields.begin(), fields.end(), schema.column(i).name);
        if (it == fields.end())
            throw InputError(source + ": missing column '" + schema.column(i).name + "' in header");
        position[i] = static_cast<std::size_t>(it - fields.begin());
    }
    const std::size_t width = fields.size();

    std::vector<double> num;
    std::vector<std::int32_t> cat;
    std::size_t rows = 0;
    while (read_record(in, fields, line)) {
        if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
        if (fields.size() != width)
            throw InputError(source + ": line " + std::to_string(line) + ": expected " +
                             std::to_string(width) + " fields, got " + std::to_string(fields.size()));
        for (std::size_t i = 0; i < schema.size(); ++i) {
            const auto& col = schema.column(i);
            const std::string& cell = fields[position[i]];
            auto where = [&] {
                return source + ": line " + std::to_string(line) + ", column '" + col.name + "'";
            };
            if (col.is_categorical()) {
                auto idx = col.category_index(cell);
                if (!idx) throw InputError(where() + ": unknown category '" + cell + "'");
                cat.push_back(*idx);
            } else {
                auto t = trim(cell);
                double v = 0.0;
                auto res = std::from_chars(t.data(), t.data() + t.size(), v);
                if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size() || !std::isfinite(v))
                    throw InputError(where() + ": not a number '" + cell + "'");
                num.push_back(v);
            }
        }
        ++rows;
    }

    // Cells were appended row-major; transpose into column-major matrices.
    const auto nn = static_cast<Eigen::Index>(schema.numerical_count());
    const auto nc = static_cast<Eigen::Index>(schema.categorical_count());
    const auto nr = static_cast<Eigen::Index>(rows);
    Matrix numerical(nr, nn);
    IndexMatrix categorical(nr, nc);
    for (Eigen::Index r = 0; r < nr; ++r) {
        for (Eigen::Index c = 0; c < nn; ++c) numerical(r, c) = num[static_cast<std::size_t>(r * nn + c)];
        for (Eigen::Index c = 0; c < nc; ++c) categorical(r, c) = cat[static_cast<std::size_t>(r * nc + c)];
    }
    return Table(schema, std::move(numerical), std::move(categorical));
}

Table load_csv(const std::filesystem::path& path, const Schema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    return read_csv(in, schema, path.string());
}

Table load_csv(const std::filesystem::path& path, const std::filesystem::path& schema_manifest) {
    return load_csv(path, Schema::load(schema_manifest));
}

void write_csv(std::ostream& out, const Table& t) {
    const auto& s = t.schema();
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << quote(s.column(i).name);
    out << '\n';
    for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) out << ',';
            const auto& c = s.column(i);
            if (c.is_categorical()) out << quote(c.categories[static_cast<std::size_t>(t.category(r, i))]);
            else out << format_real(t.number(r, i));
        }
        out << '\n';
    }
}

void write_csv(const std::filesystem::path& path, const Table& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    write_csv(out, t);
}

// ---------------------------------------------------------------------------
// Splitting and subsampling

std::pair<Table, Table> split(const Table& t, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw InputError("test fraction must lie in (0, 1)");
    if (t.rows() < 2) throw InputError("split needs at least 2 rows");
    std::vector<std::size_t> idx(t.rows());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(t.rows())));
    n_test = std::clamp<std::size_t>(n_test, 1, t.rows() - 1);
    std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    return {t.select_rows(train), t.select_rows(test)};
}

Table subsample(const Table& t, std::size_t n, std::uint64_t seed) {
    if (n == kFull) return t;
    if (n > t.rows())
        throw InputError("subsample of " + std::to_string(n) + " rows requested from " +
                         std::to_string(t.rows()));
    std::vector<std::size_t> idx(t.rows());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        auto j = i + uniform_index(rng, t.rows() - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return t.select_rows(idx);
}

// ---------------------------------------------------------------------------
// Toy data

namespace {

std::size_t draw_categorical(Rng& rng, const std::vector<double>& probs) {
    double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        acc += probs[k];
        if (u < acc) return k;
    }
    return probs.size() - 1;
}

void check_simplex(const std::vector<double>& p, const std::string& what) {
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) throw InputError(what + ": negative probability");
        sum += v;
    }
    if (p.empty() || std::abs(sum - 1.0) > 1e-9) throw InputError(what + ": probabilities must sum to 1");
}

}  // namespace

Table toy_dataset(const ToySpec& spec, std::size_t n, std::uint64_t seed) {
    if (spec.numerical.empty() && spec.categorical.empty())
        throw InputError("toy spec needs at least one column");
    std::vector<Column> cols;
    std::vector<std::vector<double>> mix_weights;
    for (const auto& nc : spec.numerical) {
        std::vector<double> w;
        for (const auto& m : nc.mixture) {
            if (!(m.stddev > 0.0)) throw InputError(nc.name + ": mixture stddev must be positive");
            w.push_back(m.weight);
        }
        check_simplex(w, nc.name);
        mix_weights.push_back(std::move(w));
        cols.push_back({nc.name, Kind::Numerical, {}});
    }
    for (const auto& cc : spec.categorical) {
        if (cc.priors.size() != cc.categories.size())
            throw InputError(cc.name + ": priors and categories differ in length");
        check_simplex(cc.priors, cc.name);
        cols.push_back({cc.name, Kind::Categorical, cc.categories});
    }
    std::optional<std::string> target_name;
    if (spec.target) {
        const auto& tr = *spec.target;
        if (tr.numerical_weights.size() != spec.numerical.size() ||
            tr.categorical_offsets.size() != spec.categorical.size())
            throw InputError("toy target rule does not match the column counts");
        for (std::size_t j = 0; j < spec.categorical.size(); ++j)
            if (tr.categorical_offsets[j].size() != spec.categorical[j].categories.size())
                throw InputError("toy target offsets do not match category counts");
        cols.push_back({tr.name, Kind::Categorical, {"0", "1"}});
        target_name = tr.name;
    }
    Schema schema(std::move(cols), target_name, Task::Classification);

    const auto nr = static_cast<Eigen::Index>(n);
    Matrix num(nr, static_cast<Eigen::Index>(spec.numerical.size()));
    IndexMatrix cat(nr, static_cast<Eigen::Index>(schema.categorical_count()));
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index r = 0; r < nr; ++r) {
        for (std::size_t j = 0; j < spec.numerical.size(); ++j) {
            const auto& comp = spec.numerical[j].mixture[draw_categorical(rng, mix_weights[j])];
            num(r, static_cast<Eigen::Index>(j)) = comp.mean + comp.stddev * normal(rng);
        }
        for (std::size_t j = 0; j < spec.categorical.size(); ++j)
            cat(r, static_cast<Eigen::Index>(j)) =
                static_cast<std::int32_t>(draw_categorical(rng, spec.categorical[j].priors));
        if (spec.target) {
            const auto& tr = *spec.target;
            double score = tr.bias;
            for (std::size_t j = 0; j < spec.numerical.size(); ++j)
                score += tr.numerical_weights[j] * num(r, static_cast<Eigen::Index>(j));
            for (std::size_t j = 0; j < spec.categorical.size(); ++j)
                score += tr.categorical_offsets[j][static_cast<std::size_t>(cat(r, static_cast<Eigen::Index>(j)))];
            if (tr.noise > 0.0) score += tr.noise * normal(rng);
            cat(r, static_cast<Eigen::Index>(spec.categorical.size())) = score > 0.0 ? 1 : 0;
        }
    }
    return Table(std::move(schema), std::move(num), std::move(cat));
}

ToySpec default_toy_spec() {
    ToySpec spec;
    spec.numerical.push_back({"x0", {{0.5, -2.0, 0.3}, {0.5, 2.0, 0.3}}});
    spec.numerical.push_back({"x1", {{0.7, 0.0, 1.0}, {0.3, 4.0, 0.5}}});
    spec.categorical.push_back({"c0", {"a", "b", "c"}, {0.5, 0.3, 0.2}});
    ToyTarget target;
    target.bias = -0.5;
    target.numerical_weights = {1.0, 0.5};
    target.categorical_offsets = {{0.0, 1.0, -1.5}};
    target.noise = 0.5;
    spec.target = target;
    return spec;
}

}  // namespace tabsynth
