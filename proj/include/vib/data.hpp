#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vib/numcore.hpp"

namespace vib {

struct Dataset {
  Matrix inputs;  // N x D
  std::vector<int> labels;
  std::size_t classes = 0;
  std::string split;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return inputs.cols(); }
  void validate() const;

  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;
  Matrix rows(std::span<const std::size_t> indices) const;
  std::vector<int> labels_of(std::span<const std::size_t> indices) const;
  /// Indices of the first `n` examples carrying `label` (all of them when n == 0).
  std::vector<std::size_t> first_with_label(int label, std::size_t n) const;
  std::vector<std::size_t> label_histogram() const;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxHeader {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
};

/// Parses a big-endian IDX header; throws FormatError on a bad magic or truncation.
IdxHeader parse_idx_header(std::span<const std::uint8_t> bytes);

/// File contents, transparently gunzipped when the file starts with the gzip magic.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Images (0..255, unscaled) and labels; classes fixed at 10.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

std::vector<std::uint8_t> encode_idx_images(std::span<const std::uint8_t> pixels, std::uint32_t count,
                                            std::uint32_t rows, std::uint32_t cols);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);

/// x / 127.5 - 1, mapping [0, 255] onto [-1, 1].
Dataset scale_to_pm1(Dataset ds);

/// Comma-separated rows, last column an integer label. A non-numeric first line is a
/// header and is skipped. `expected_dim` of 0 accepts any consistent width.
Dataset load_feature_csv(const std::filesystem::path& path, std::size_t expected_dim = 0);

/// Class c ~ N(separation * mu_c, I) with unit-norm, maximally spread mu_c, then
/// squashed by 1 / (separation + 4) and clipped to [-1, 1].
Dataset synth_blobs(Rng& rng, std::size_t classes, std::size_t per_class, std::size_t dim, double separation);

/// Unit class centres used by synth_blobs.
std::vector<std::vector<double>> blob_centres(std::size_t classes, std::size_t dim);

/// Seeded permutation split into (first n_first, rest).
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, std::size_t n_first, Rng& rng);

}  // namespace vib
