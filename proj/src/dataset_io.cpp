#include "curl_lab/dataset_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "curl_lab/format.hpp"

namespace curl {

namespace {

constexpr std::array<char, 8> kMagic{'C', 'U', 'R', 'L', 'D', 'A', 'T', 'A'};

static_assert(std::endian::native == std::endian::little, "binary container assumes a little-endian host");

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

int label_from_double(double v, std::size_t row) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e9) {
    throw FormatError("row " + std::to_string(row) + ": label is not a nonnegative integer");
  }
  return static_cast<int>(v);
}

LabeledDataset assemble(std::vector<double> pts, std::size_t dim, std::vector<int> labels,
                        std::optional<int> num_classes) {
  if (labels.empty()) throw FormatError("dataset file has no rows");
  const int classes = num_classes.value_or(*std::max_element(labels.begin(), labels.end()) + 1);
  return LabeledDataset(std::move(pts), dim, std::move(labels), classes);
}

}  // namespace

void write_dataset_csv(const LabeledDataset& data, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (std::size_t d = 0; d < data.dim(); ++d) out << "x_" << d << ',';
  out << "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.point(i)) out << format_double(v) << ',';
    out << data.label(i) << '\n';
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

LabeledDataset read_dataset_csv(const std::filesystem::path& path, std::optional<int> num_classes) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + " is empty");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 2 || line.rfind("x_0", 0) != 0) throw FormatError(path.string() + ": bad CSV header");
  const std::size_t dim = columns - 1;
  std::vector<double> pts;
  std::vector<int> labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError("row " + std::to_string(row) + ": cannot parse '" + cell + "'");
      }
      if (col < dim) {
        pts.push_back(v);
      } else if (col == dim) {
        labels.push_back(label_from_double(v, row));
      }
      ++col;
    }
    if (col != columns) throw FormatError("row " + std::to_string(row) + " has the wrong number of columns");
  }
  return assemble(std::move(pts), dim, std::move(labels), num_classes);
}

void write_dataset_binary(const LabeledDataset& data, const std::filesystem::path& path) {
  if (data.size() > UINT32_MAX || data.dim() > UINT32_MAX) throw FormatError("dataset too large for u32 header");
  auto out = open_out(path);
  out.write(kMagic.data(), kMagic.size());
  const auto n = static_cast<std::uint32_t>(data.size());
  const auto d = static_cast<std::uint32_t>(data.dim());
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(&d), sizeof d);
  std::vector<double> row(data.dim() + 1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto p = data.point(i);
    std::copy(p.begin(), p.end(), row.begin());
    row.back() = data.label(i);
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

LabeledDataset read_dataset_binary(const std::filesystem::path& path, std::optional<int> num_classes) {
  auto in = open_in(path);
  std::array<char, 8> magic{};
  std::uint32_t n = 0, d = 0;
  in.read(magic.data(), magic.size());
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  in.read(reinterpret_cast<char*>(&d), sizeof d);
  if (!in || magic != kMagic) throw FormatError(path.string() + ": missing CURLDATA header");
  if (d == 0) throw FormatError(path.string() + ": zero dimension");
  std::vector<double> row(static_cast<std::size_t>(d) + 1);
  std::vector<double> pts;
  std::vector<int> labels;
  pts.reserve(static_cast<std::size_t>(n) * d);
  labels.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double)));
    if (!in) throw FormatError(path.string() + ": truncated at row " + std::to_string(i));
    pts.insert(pts.end(), row.begin(), row.end() - 1);
    labels.push_back(label_from_double(row.back(), i));
  }
  return assemble(std::move(pts), d, std::move(labels), num_classes);
}

LabeledDataset read_dataset(const std::filesystem::path& path, std::optional<int> num_classes) {
  std::array<char, 8> head{};
  {
    auto in = open_in(path);
    in.read(head.data(), head.size());
  }
  return head == kMagic ? read_dataset_binary(path, num_classes) : read_dataset_csv(path, num_classes);
}

}  // namespace curl
