#include "grainfuse/report.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "grainfuse/errors.hpp"

namespace grainfuse::report {

namespace fs = std::filesystem;

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void Table::add(std::vector<std::string> row) {
  if (row.size() != header_.size()) throw ConfigError("table row width does not match the header");
  rows_.push_back(std::move(row));
}

void Table::write(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
}

Table Table::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read '" + path.string() + "'");
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty table '" + path.string() + "'");
  Table t(split(line));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header_.size()) throw FormatError("ragged row in '" + path.string() + "'");
    t.rows_.push_back(std::move(cells));
  }
  return t;
}

int Table::column(const std::string& name) const {
  const auto it = std::find(header_.begin(), header_.end(), name);
  return it == header_.end() ? -1 : static_cast<int>(it - header_.begin());
}

namespace {

void save(const fs::path& path, const cv::Mat& img) {
  if (!cv::imwrite(path.string(), img)) throw ConfigError("cannot write image '" + path.string() + "'");
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

void write_png(const fs::path& path, const ScalarMap& m) {
  cv::Mat img(m.height, m.width, CV_8UC1);
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c) img.at<std::uint8_t>(r, c) = to_byte(m(r, c));
  save(path, img);
}

void write_png(const fs::path& path, const BoundaryMap& m) {
  cv::Mat img(m.height, m.width, CV_8UC1);
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c) img.at<std::uint8_t>(r, c) = m(r, c) ? 255 : 0;
  save(path, img);
}

void write_png(const fs::path& path, const Field& f) {
  if (f.channels != 3) throw ConfigError("RGB export needs a 3-channel field");
  cv::Mat img(f.height, f.width, CV_8UC3);
  for (int r = 0; r < f.height; ++r)
    for (int c = 0; c < f.width; ++c) {
      auto& px = img.at<cv::Vec3b>(r, c);
      for (int k = 0; k < 3; ++k) px[2 - k] = to_byte(0.5 * (f(r, c, k) + 1.0));  // OpenCV is BGR
    }
  save(path, img);
}

namespace {

const cv::Scalar kPalette[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214},
                               {189, 103, 148}, {75, 86, 140}, {194, 119, 227}, {127, 127, 127}};

void text(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.45) {
  cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, {0, 0, 0}, 1, cv::LINE_AA);
}

std::string short_num(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

}  // namespace

void line_plot(const fs::path& path, const std::vector<Series>& series, const std::string& title,
               const std::string& x_label, const std::string& y_label) {
  const int W = 640, H = 440, left = 80, right = 150, top = 40, bottom = 60;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double e = i < s.err.size() ? s.err[i] : 0.0;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i] - e);
      y1 = std::max(y1, s.y[i] + e);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x, double y) {
    return cv::Point(left + static_cast<int>((x - x0) / (x1 - x0) * (W - left - right)),
                     H - bottom - static_cast<int>((y - y0) / (y1 - y0) * (H - top - bottom)));
  };
  cv::rectangle(img, {left, top}, {W - right, H - bottom}, {0, 0, 0});
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    text(img, short_num(xv), px(xv, y0) + cv::Point(-12, 18), 0.4);
    text(img, short_num(yv), px(x0, yv) + cv::Point(-70, 4), 0.4);
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const auto color = kPalette[k % std::size(kPalette)];
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i + 1 < s.x.size()) cv::line(img, px(s.x[i], s.y[i]), px(s.x[i + 1], s.y[i + 1]), color, 2, cv::LINE_AA);
      cv::circle(img, px(s.x[i], s.y[i]), 3, color, cv::FILLED, cv::LINE_AA);
      if (i < s.err.size() && s.err[i] > 0)
        cv::line(img, px(s.x[i], s.y[i] - s.err[i]), px(s.x[i], s.y[i] + s.err[i]), color, 1, cv::LINE_AA);
    }
    cv::line(img, {W - right + 10, top + 20 + 20 * static_cast<int>(k)},
             {W - right + 30, top + 20 + 20 * static_cast<int>(k)}, color, 2);
    text(img, s.label, {W - right + 35, top + 25 + 20 * static_cast<int>(k)}, 0.4);
  }
  text(img, title, {left, 25}, 0.55);
  text(img, x_label, {left + (W - left - right) / 2 - 40, H - 15});
  text(img, y_label, {5, top - 8}, 0.4);
  save(path, img);
}

void heatmap(const fs::path& path, const std::vector<std::vector<double>>& values,
             const std::vector<std::string>& row_labels, const std::vector<std::string>& col_labels,
             const std::string& title) {
  const int rows = static_cast<int>(values.size());
  const int cols = rows ? static_cast<int>(values[0].size()) : 0;
  const int cell = 70, left = 110, top = 50;
  cv::Mat img(top + rows * cell + 50, left + cols * cell + 20, CV_8UC3, cv::Scalar(255, 255, 255));
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : values)
    for (double v : r)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double v = values[r][c];
      const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
      cv::Mat one(1, 1, CV_8UC1, cv::Scalar(to_byte(t)));
      cv::Mat mapped;
      cv::applyColorMap(one, mapped, cv::COLORMAP_VIRIDIS);
      const auto color = mapped.at<cv::Vec3b>(0, 0);
      const cv::Point a(left + c * cell, top + r * cell);
      cv::rectangle(img, a, a + cv::Point(cell - 2, cell - 2), cv::Scalar(color[0], color[1], color[2]), cv::FILLED);
      cv::putText(img, short_num(v), a + cv::Point(6, cell / 2), cv::FONT_HERSHEY_SIMPLEX, 0.4,
                  t > 0.5 ? cv::Scalar(0, 0, 0) : cv::Scalar(255, 255, 255), 1, cv::LINE_AA);
    }
  for (int r = 0; r < rows && r < static_cast<int>(row_labels.size()); ++r)
    text(img, row_labels[r], {8, top + r * cell + cell / 2}, 0.4);
  for (int c = 0; c < cols && c < static_cast<int>(col_labels.size()); ++c)
    text(img, col_labels[c], {left + c * cell + 4, top + rows * cell + 20}, 0.4);
  text(img, title, {8, 28}, 0.55);
  save(path, img);
}

}  // namespace grainfuse::report
