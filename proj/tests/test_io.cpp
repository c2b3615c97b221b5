#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "curl_lab/dataset_io.hpp"
#include "curl_lab/format.hpp"
#include "curl_lab/synth.hpp"

using namespace curl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "curl_lab_io_tests";
  fs::create_directories(dir);
  return dir / name;
}

void expect_same(const LabeledDataset& a, const LabeledDataset& b) {
  ASSERT_EQ(a.size(), b.size());
  ASSERT_EQ(a.dim(), b.dim());
  EXPECT_EQ(a.num_classes(), b.num_classes());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.label(i), b.label(i));
    for (std::size_t j = 0; j < a.dim(); ++j) EXPECT_EQ(a.point(i)[j], b.point(i)[j]);
  }
}

}  // namespace

TEST(FormatDouble, RoundTripsAndSpecialValues) {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) {
    const auto s = format_double(x);
    EXPECT_EQ(std::stod(s), x) << s;
  }
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(format_double(std::numeric_limits<double>::quiet_NaN()), "nan");
  EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
}

TEST(DatasetIo, CsvRoundTrip) {
  const auto d = gen_circle(4, 25, 3);
  const auto path = scratch("circle.csv");
  write_dataset_csv(d, path);
  expect_same(d, read_dataset_csv(path));
  expect_same(d, read_dataset(path));
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "x_0,x_1,label");
}

TEST(DatasetIo, BinaryRoundTripAndLayout) {
  const auto d = gen_circle(3, 7, 5);
  const auto path = scratch("circle.bin");
  write_dataset_binary(d, path);
  expect_same(d, read_dataset_binary(path));
  expect_same(d, read_dataset(path));
  EXPECT_EQ(fs::file_size(path), 16u + d.size() * 3 * 8);
  std::ifstream in(path, std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  EXPECT_EQ(std::string(magic, 8), "CURLDATA");
}

TEST(DatasetIo, ExplicitClassCountKeepsEmptyTail) {
  const LabeledDataset d({0.0, 1.0}, 1, {0, 1}, 2);
  const auto path = scratch("two.csv");
  write_dataset_csv(d, path);
  EXPECT_EQ(read_dataset_csv(path).num_classes(), 2);
  EXPECT_THROW(read_dataset_csv(path, 1), std::exception);
}

TEST(DatasetIo, MalformedInputsRejected) {
  const auto bad_csv = scratch("bad.csv");
  {
    std::ofstream f(bad_csv);
    f << "x_0,label\n0.5,0\nabc,1\n";
  }
  EXPECT_THROW(read_dataset_csv(bad_csv), FormatError);
  const auto ragged = scratch("ragged.csv");
  {
    std::ofstream f(ragged);
    f << "x_0,x_1,label\n0.5,0.1,0\n0.2,1\n";
  }
  EXPECT_THROW(read_dataset_csv(ragged), FormatError);
  const auto truncated = scratch("short.bin");
  {
    std::ofstream f(truncated, std::ios::binary);
    f << "CURLDATA";
    const unsigned char n[8] = {5, 0, 0, 0, 2, 0, 0, 0};
    f.write(reinterpret_cast<const char*>(n), 8);
  }
  EXPECT_THROW(read_dataset_binary(truncated), FormatError);
  EXPECT_THROW(read_dataset(scratch("missing.csv")), std::exception);
}
