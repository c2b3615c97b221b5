#pragma once

// Dataset files. CSV has header x_0..x_{d-1},label. The binary container is
// the 8-byte magic "CURLDATA", little-endian u32 n and u32 d, then n rows of
// d + 1 float64 values (coordinates, then the label).

#include <filesystem>
#include <optional>

#include "curl_lab/losses.hpp"

namespace curl {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_dataset_csv(const LabeledDataset& data, const std::filesystem::path& path);
void write_dataset_binary(const LabeledDataset& data, const std::filesystem::path& path);

/// num_classes defaults to max label + 1.
LabeledDataset read_dataset_csv(const std::filesystem::path& path, std::optional<int> num_classes = std::nullopt);
LabeledDataset read_dataset_binary(const std::filesystem::path& path,
                                   std::optional<int> num_classes = std::nullopt);

/// Picks the reader from the leading magic bytes.
LabeledDataset read_dataset(const std::filesystem::path& path, std::optional<int> num_classes = std::nullopt);

}  // namespace curl
