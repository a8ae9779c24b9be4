#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "cspn/errors.hpp"

namespace cspn {

enum class ColumnType { Binary, Count, Continuous, Categorical };
enum class ColumnRole { Y, X };

struct ColumnSpec {
    std::string name;
    ColumnType type = ColumnType::Continuous;
    ColumnRole role = ColumnRole::Y;
    int arity = 0;  // categorical cardinality, 0 otherwise
};

std::string column_type_name(ColumnType t);
ColumnType parse_column_type(const std::string& text, int* arity);

/** Immutable row-major table of (y, x) values with per-column type metadata.
 *
 * Columns keep their file order; the Y/X partition is carried by the schema
 * roles. Row and variable subsets used during structure learning are index
 * views over one shared Dataset.
 */
class Dataset {
public:
    Dataset() = default;
    Dataset(Eigen::MatrixXd values, std::vector<ColumnSpec> schema);

    int rows() const { return static_cast<int>(values_.rows()); }
    int cols() const { return static_cast<int>(values_.cols()); }
    int num_y() const { return static_cast<int>(y_cols_.size()); }
    int num_x() const { return static_cast<int>(x_cols_.size()); }

    const Eigen::MatrixXd& values() const { return values_; }
    const std::vector<ColumnSpec>& schema() const { return schema_; }

    // j indexes into the Y (resp. X) block, not raw file columns.
    const ColumnSpec& y_spec(int j) const { return schema_[y_cols_[j]]; }
    const ColumnSpec& x_spec(int j) const { return schema_[x_cols_[j]]; }
    double y_value(int row, int j) const { return values_(row, y_cols_[j]); }
    double x_value(int row, int j) const { return values_(row, x_cols_[j]); }

    Eigen::MatrixXd y_matrix() const;
    Eigen::MatrixXd x_matrix() const;
    Eigen::VectorXd y_row(int row) const;
    Eigen::VectorXd x_row(int row) const;

    /// Throws ParseError naming row and column on the first type violation.
    void check_types() const;

private:
    Eigen::MatrixXd values_;
    std::vector<ColumnSpec> schema_;
    std::vector<int> y_cols_, x_cols_;
};

std::vector<ColumnSpec> load_schema(const std::string& path);
void save_schema(const std::vector<ColumnSpec>& schema, const std::string& path);

/// Strict CSV parse against a sidecar schema (one "name,type,role" line per column).
Dataset load_csv(const std::string& csv_path, const std::string& schema_path);
Dataset make_dataset(const Eigen::MatrixXd& values, const std::vector<ColumnSpec>& schema);
void save_csv(const Dataset& data, const std::string& csv_path);

/** Seeded evidence split for all-binary benchmark tables: the first
 *  ceil(fraction*d) columns of a Fisher-Yates permutation (see rng.hpp)
 *  become X, the rest Y. Returns the X column set, ascending.
 */
std::vector<int> evidence_columns(int num_cols, double fraction, std::uint64_t seed);

/// Load a bare 0/1 CSV (no schema file) and apply an evidence mask.
Dataset load_binary_benchmark(const std::string& csv_path, double evidence_fraction,
                              std::uint64_t seed);

/// Rows (y = series row t+1, x = series row t); count/count schema, n-1 rows.
Dataset next_step_pairs(const Eigen::MatrixXd& series);

// -- image plumbing ----------------------------------------------------------

/// 8-bit binary PGM (P5); values clamped from [0,1].
void write_pgm(const std::string& path, int height, int width, const Eigen::VectorXd& pixels);
Eigen::VectorXd read_pgm(const std::string& path, int* height, int* width);

/// IDX (ubyte) image archive, as used by the standard digit datasets.
Eigen::MatrixXd load_idx_images(const std::string& path, int* height, int* width);
std::vector<int> load_idx_labels(const std::string& path);

}  // namespace cspn
