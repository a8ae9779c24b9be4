#include "cspn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cspn/rng.hpp"

namespace cspn {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_real(const std::string& field, int row, const std::string& col) {
    const std::string t = trim(field);
    double v = 0.0;
    const char* begin = t.data();
    const char* end = t.data() + t.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end) {
        throw ParseError("row " + std::to_string(row) + ", col \"" + col +
                         "\": not a number: \"" + t + "\"");
    }
    return v;
}

bool is_integer_valued(double v) { return std::isfinite(v) && v == std::floor(v); }

void check_cell(double v, const ColumnSpec& spec, int row) {
    switch (spec.type) {
        case ColumnType::Binary:
            if (v != 0.0 && v != 1.0)
                throw ParseError("row " + std::to_string(row) + ", col \"" + spec.name +
                                 "\": binary column has value " + std::to_string(v));
            break;
        case ColumnType::Count:
            if (!is_integer_valued(v) || v < 0.0)
                throw ParseError("row " + std::to_string(row) + ", col \"" + spec.name +
                                 "\": count column has value " + std::to_string(v));
            break;
        case ColumnType::Categorical:
            if (!is_integer_valued(v) || v < 0.0 || v >= spec.arity)
                throw ParseError("row " + std::to_string(row) + ", col \"" + spec.name +
                                 "\": categorical(" + std::to_string(spec.arity) +
                                 ") column has value " + std::to_string(v));
            break;
        case ColumnType::Continuous:
            if (!std::isfinite(v))
                throw ParseError("row " + std::to_string(row) + ", col \"" + spec.name +
                                 "\": non-finite value");
            break;
    }
}

std::string format_full(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, ptr);
}

}  // namespace

std::string column_type_name(ColumnType t) {
    switch (t) {
        case ColumnType::Binary: return "binary";
        case ColumnType::Count: return "count";
        case ColumnType::Continuous: return "continuous";
        case ColumnType::Categorical: return "categorical";
    }
    return "?";
}

ColumnType parse_column_type(const std::string& text, int* arity) {
    const std::string t = trim(text);
    if (arity) *arity = 0;
    if (t == "binary") return ColumnType::Binary;
    if (t == "count") return ColumnType::Count;
    if (t == "continuous") return ColumnType::Continuous;
    if (t.rfind("categorical", 0) == 0) {
        const auto open = t.find('(');
        const auto close = t.find(')');
        if (open == std::string::npos || close == std::string::npos || close < open)
            throw ParseError("categorical type needs an arity, e.g. categorical(3): \"" + t + "\"");
        const int c = std::stoi(t.substr(open + 1, close - open - 1));
        if (c < 2) throw ParseError("categorical arity must be >= 2: \"" + t + "\"");
        if (arity) *arity = c;
        return ColumnType::Categorical;
    }
    throw ParseError("unknown column type \"" + t + "\"");
}

Dataset::Dataset(Eigen::MatrixXd values, std::vector<ColumnSpec> schema)
    : values_(std::move(values)), schema_(std::move(schema)) {
    if (static_cast<int>(schema_.size()) != values_.cols())
        throw ParseError("schema has " + std::to_string(schema_.size()) + " columns, data has " +
                         std::to_string(values_.cols()));
    for (int c = 0; c < static_cast<int>(schema_.size()); ++c) {
        (schema_[c].role == ColumnRole::Y ? y_cols_ : x_cols_).push_back(c);
    }
}

Eigen::MatrixXd Dataset::y_matrix() const {
    Eigen::MatrixXd m(rows(), num_y());
    for (int j = 0; j < num_y(); ++j) m.col(j) = values_.col(y_cols_[j]);
    return m;
}

Eigen::MatrixXd Dataset::x_matrix() const {
    Eigen::MatrixXd m(rows(), num_x());
    for (int j = 0; j < num_x(); ++j) m.col(j) = values_.col(x_cols_[j]);
    return m;
}

Eigen::VectorXd Dataset::y_row(int row) const {
    Eigen::VectorXd v(num_y());
    for (int j = 0; j < num_y(); ++j) v[j] = values_(row, y_cols_[j]);
    return v;
}

Eigen::VectorXd Dataset::x_row(int row) const {
    Eigen::VectorXd v(num_x());
    for (int j = 0; j < num_x(); ++j) v[j] = values_(row, x_cols_[j]);
    return v;
}

void Dataset::check_types() const {
    for (int r = 0; r < rows(); ++r)
        for (int c = 0; c < cols(); ++c) check_cell(values_(r, c), schema_[c], r);
}

std::vector<ColumnSpec> load_schema(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open schema file: " + path);
    std::vector<ColumnSpec> schema;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto fields = split_commas(t);
        if (fields.size() < 3)
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": expected \"name,type,role\"");
        ColumnSpec spec;
        spec.name = trim(fields[0]);
        spec.type = parse_column_type(fields[1], &spec.arity);
        std::string role = trim(fields[2]);
        std::transform(role.begin(), role.end(), role.begin(), ::tolower);
        if (role == "y")
            spec.role = ColumnRole::Y;
        else if (role == "x")
            spec.role = ColumnRole::X;
        else
            throw ParseError(path + ":" + std::to_string(lineno) + ": role must be y or x");
        schema.push_back(spec);
    }
    if (schema.empty()) throw ParseError("schema file is empty: " + path);
    return schema;
}

void save_schema(const std::vector<ColumnSpec>& schema, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write schema file: " + path);
    for (const auto& s : schema) {
        out << s.name << ',' << column_type_name(s.type);
        if (s.type == ColumnType::Categorical) out << '(' << s.arity << ')';
        out << ',' << (s.role == ColumnRole::Y ? 'y' : 'x') << '\n';
    }
}

Dataset load_csv(const std::string& csv_path, const std::string& schema_path) {
    const auto schema = load_schema(schema_path);
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open data file: " + csv_path);
    std::vector<double> flat;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto fields = split_commas(t);
        if (fields.size() != schema.size())
            throw ParseError(csv_path + ": row " + std::to_string(row) + " has " +
                             std::to_string(fields.size()) + " columns, schema has " +
                             std::to_string(schema.size()));
        for (size_t c = 0; c < fields.size(); ++c) {
            const double v = parse_real(fields[c], row, schema[c].name);
            check_cell(v, schema[c], row);
            flat.push_back(v);
        }
        ++row;
    }
    Eigen::MatrixXd values(row, static_cast<int>(schema.size()));
    for (int r = 0; r < row; ++r)
        for (int c = 0; c < values.cols(); ++c) values(r, c) = flat[r * values.cols() + c];
    return Dataset(std::move(values), schema);
}

Dataset make_dataset(const Eigen::MatrixXd& values, const std::vector<ColumnSpec>& schema) {
    Dataset d(values, schema);
    d.check_types();
    return d;
}

void save_csv(const Dataset& data, const std::string& csv_path) {
    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot write data file: " + csv_path);
    for (int r = 0; r < data.rows(); ++r) {
        for (int c = 0; c < data.cols(); ++c) {
            if (c) out << ',';
            out << format_full(data.values()(r, c));
        }
        out << '\n';
    }
}

std::vector<int> evidence_columns(int num_cols, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction >= 1.0)
        throw ValidationError("evidence fraction must be in (0,1)");
    Rng rng(seed);
    const auto perm = rng.permutation(num_cols);
    const int take = static_cast<int>(std::ceil(fraction * num_cols));
    std::vector<int> cols(perm.begin(), perm.begin() + take);
    std::sort(cols.begin(), cols.end());
    return cols;
}

Dataset load_binary_benchmark(const std::string& csv_path, double evidence_fraction,
                              std::uint64_t seed) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open data file: " + csv_path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto fields = split_commas(t);
        std::vector<double> row;
        row.reserve(fields.size());
        for (size_t c = 0; c < fields.size(); ++c)
            row.push_back(parse_real(fields[c], static_cast<int>(rows.size()),
                                     "c" + std::to_string(c)));
        if (!rows.empty() && row.size() != rows.front().size())
            throw ParseError(csv_path + ": ragged row " + std::to_string(rows.size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError("empty data file: " + csv_path);
    const int d = static_cast<int>(rows.front().size());
    const auto xcols = evidence_columns(d, evidence_fraction, seed);
    std::vector<ColumnSpec> schema(d);
    for (int c = 0; c < d; ++c) {
        schema[c].name = "v" + std::to_string(c);
        schema[c].type = ColumnType::Binary;
        schema[c].role = std::binary_search(xcols.begin(), xcols.end(), c) ? ColumnRole::X
                                                                           : ColumnRole::Y;
    }
    Eigen::MatrixXd values(static_cast<int>(rows.size()), d);
    for (int r = 0; r < values.rows(); ++r)
        for (int c = 0; c < d; ++c) values(r, c) = rows[r][c];
    Dataset data(std::move(values), schema);
    data.check_types();
    return data;
}

Dataset next_step_pairs(const Eigen::MatrixXd& series) {
    const int n = static_cast<int>(series.rows());
    const int d = static_cast<int>(series.cols());
    if (n < 2) throw ValidationError("next_step_pairs needs at least 2 rows");
    Eigen::MatrixXd values(n - 1, 2 * d);
    for (int t = 0; t + 1 < n; ++t) {
        values.block(t, 0, 1, d) = series.row(t + 1);  // y = next snapshot
        values.block(t, d, 1, d) = series.row(t);      // x = current snapshot
    }
    std::vector<ColumnSpec> schema(2 * d);
    for (int j = 0; j < d; ++j) {
        schema[j] = {"y" + std::to_string(j), ColumnType::Count, ColumnRole::Y, 0};
        schema[d + j] = {"x" + std::to_string(j), ColumnType::Count, ColumnRole::X, 0};
    }
    return Dataset(std::move(values), schema);
}

void write_pgm(const std::string& path, int height, int width, const Eigen::VectorXd& pixels) {
    if (pixels.size() != static_cast<long>(height) * width)
        throw ValidationError("pixel count does not match image dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image: " + path);
    out << "P5\n" << width << ' ' << height << "\n255\n";
    for (long i = 0; i < pixels.size(); ++i) {
        const double v = std::clamp(pixels[i], 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
}

Eigen::VectorXd read_pgm(const std::string& path, int* height, int* width) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw ParseError(path + ": not a P5 PGM file");
    int w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    in.get();
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
        throw ParseError(path + ": bad PGM header");
    Eigen::VectorXd pixels(static_cast<long>(w) * h);
    for (long i = 0; i < pixels.size(); ++i) {
        const int c = in.get();
        if (c == EOF) throw ParseError(path + ": truncated pixel data");
        pixels[i] = static_cast<double>(c) / maxval;
    }
    if (height) *height = h;
    if (width) *width = w;
    return pixels;
}

namespace {
std::uint32_t read_be32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ParseError(path + ": truncated IDX header");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}
}  // namespace

Eigen::MatrixXd load_idx_images(const std::string& path, int* height, int* width) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open IDX file: " + path);
    if (read_be32(in, path) != 0x00000803) throw ParseError(path + ": not an IDX image file");
    const int n = static_cast<int>(read_be32(in, path));
    const int h = static_cast<int>(read_be32(in, path));
    const int w = static_cast<int>(read_be32(in, path));
    Eigen::MatrixXd images(n, h * w);
    std::vector<unsigned char> buf(static_cast<size_t>(h) * w);
    for (int i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!in) throw ParseError(path + ": truncated IDX pixel data");
        for (int p = 0; p < h * w; ++p) images(i, p) = buf[p] / 255.0;
    }
    if (height) *height = h;
    if (width) *width = w;
    return images;
}

std::vector<int> load_idx_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open IDX file: " + path);
    if (read_be32(in, path) != 0x00000801) throw ParseError(path + ": not an IDX label file");
    const int n = static_cast<int>(read_be32(in, path));
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        const int c = in.get();
        if (c == EOF) throw ParseError(path + ": truncated IDX label data");
        labels[i] = c;
    }
    return labels;
}

}  // namespace cspn
