#pragma once

// CSV tables and PNG figures for evaluation outputs.

#include <filesystem>
#include <string>
#include <vector>

#include "grainfuse/grid.hpp"

namespace grainfuse::report {

/// Column-ordered table with string cells. Numbers are formatted with 17
/// significant digits so CSVs round-trip exactly.
class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row);
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  void write(const std::filesystem::path& path) const;
  /// Throws FormatError on a missing file or ragged rows.
  static Table read(const std::filesystem::path& path);
  int column(const std::string& name) const;  // -1 when absent

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string num(double v);

/// Grayscale PNG of a [0, 1] map (values clipped).
void write_png(const std::filesystem::path& path, const ScalarMap& m);
void write_png(const std::filesystem::path& path, const BoundaryMap& m);
/// RGB PNG of a 3-channel field in [-1, 1].
void write_png(const std::filesystem::path& path, const Field& f);

struct Series {
  std::string label;
  std::vector<double> x, y, err;  // err: half-width of the band, may be empty
};

/// Line plot with error bars; x and y ranges fit the data.
void line_plot(const std::filesystem::path& path, const std::vector<Series>& series, const std::string& title,
               const std::string& x_label, const std::string& y_label);

/// Heatmap of values[row][col] with axis tick labels and per-cell values.
void heatmap(const std::filesystem::path& path, const std::vector<std::vector<double>>& values,
             const std::vector<std::string>& row_labels, const std::vector<std::string>& col_labels,
             const std::string& title);

}  // namespace grainfuse::report
