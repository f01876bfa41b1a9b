#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace eafd {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) noexcept { return std::isnan(v); }

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double> column(std::size_t c) const;
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Column-major feature table; NaN marks a missing cell.
struct ColumnTable {
  std::size_t rows = 0;
  std::vector<std::vector<double>> columns;
  std::vector<std::string> names;

  std::size_t cols() const noexcept { return columns.size(); }
  bool is_missing(std::size_t r, std::size_t c) const { return std::isnan(columns[c][r]); }
};

/// Non-owning list of equal-length columns, the input format of the probe.
using ColumnView = std::vector<std::span<const double>>;

ColumnView columns_of(const Matrix& m, std::vector<std::vector<double>>& storage);
ColumnView view_of(const ColumnTable& t);

}  // namespace eafd
