#include "vib/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace vib {

void Dataset::validate() const {
  if (labels.empty()) throw ConfigError("dataset '" + split + "' is empty");
  require(inputs.rows() == labels.size(), "dataset inputs/labels count mismatch");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw FormatError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
}

Matrix Dataset::rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), dim());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = inputs.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels[i]);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.inputs = rows(indices);
  d.labels = labels_of(indices);
  d.classes = classes;
  d.split = split;
  return d;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return subset(idx);
}

std::vector<std::size_t> Dataset::first_with_label(int label, std::size_t n) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size() && (n == 0 || out.size() < n); ++i)
    if (labels[i] == label) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::label_histogram() const {
  std::vector<std::size_t> h(classes, 0);
  for (int l : labels) ++h[static_cast<std::size_t>(l)];
  return h;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in, const std::string& name) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw IoError("zlib init failed for " + name);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int rc;
  do {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError(name + ": corrupt gzip stream");
    }
    out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

}  // namespace

IdxHeader parse_idx_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("IDX: truncated magic at offset 0");
  IdxHeader h;
  h.magic = read_be32(bytes, 0);
  std::size_t ndims;
  if (h.magic == kIdxImagesMagic) {
    ndims = 3;
  } else if (h.magic == kIdxLabelsMagic) {
    ndims = 1;
  } else {
    throw FormatError("IDX: bad magic " + hex32(h.magic) + " at offset 0");
  }
  for (std::size_t d = 0; d < ndims; ++d) {
    const std::size_t off = 4 + 4 * d;
    if (bytes.size() < off + 4) throw FormatError("IDX: truncated dimension at offset " + std::to_string(off));
    h.dims.push_back(read_be32(bytes, off));
  }
  return h;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(bytes, path.string());
  return bytes;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto ib = read_file_bytes(images);
  const auto lb = read_file_bytes(labels);
  const IdxHeader ih = parse_idx_header(ib);
  const IdxHeader lh = parse_idx_header(lb);
  if (ih.magic != kIdxImagesMagic)
    throw FormatError(images.string() + ": expected image magic 0x00000803 at offset 0, got " + hex32(ih.magic));
  if (lh.magic != kIdxLabelsMagic)
    throw FormatError(labels.string() + ": expected label magic 0x00000801 at offset 0, got " + hex32(lh.magic));
  const std::size_t n = ih.dims[0];
  const std::size_t d = std::size_t{ih.dims[1]} * ih.dims[2];
  if (lh.dims[0] != n)
    throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(lh.dims[0]) +
                      " labels (offset 4)");
  const std::size_t ioff = 16;
  const std::size_t loff = 8;
  if (ib.size() < ioff + n * d)
    throw FormatError(images.string() + ": truncated pixel data at offset " + std::to_string(ib.size()));
  if (lb.size() < loff + n)
    throw FormatError(labels.string() + ": truncated label data at offset " + std::to_string(lb.size()));

  Dataset ds;
  ds.classes = 10;
  ds.split = images.filename().string();
  ds.inputs = Matrix(n, d);
  auto px = ds.inputs.values();
  for (std::size_t i = 0; i < n * d; ++i) px[i] = static_cast<double>(ib[ioff + i]);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto l = lb[loff + i];
    if (l >= 10)
      throw FormatError(labels.string() + ": label " + std::to_string(l) + " out of range at offset " +
                        std::to_string(loff + i));
    ds.labels[i] = l;
  }
  return ds;
}

std::vector<std::uint8_t> encode_idx_images(std::span<const std::uint8_t> pixels, std::uint32_t count,
                                            std::uint32_t rows, std::uint32_t cols) {
  require(pixels.size() == std::size_t{count} * rows * cols, "encode_idx_images: pixel count mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(16 + pixels.size());
  put_be32(out, kIdxImagesMagic);
  put_be32(out, count);
  put_be32(out, rows);
  put_be32(out, cols);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

Dataset scale_to_pm1(Dataset ds) {
  for (auto& v : ds.inputs.values()) v = v / 127.5 - 1.0;
  return ds;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

bool parse_double(std::string_view cell, double& out) {
  while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
  if (cell.empty()) return false;
  if (cell.front() == '+') cell.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc{} && ptr == cell.data() + cell.size() && std::isfinite(out);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    cells.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

}  // namespace

Dataset load_feature_csv(const std::filesystem::path& path, std::size_t expected_dim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    std::vector<double> row(cells.size());
    bool numeric = true;
    for (std::size_t j = 0; j < cells.size() && numeric; ++j) numeric = parse_double(cells[j], row[j]);
    if (!numeric) {
      if (lineno == 1) continue;  // header
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": non-numeric cell");
    }
    if (cells.size() < 2) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": need features and a label");
    if (width == 0) {
      width = cells.size();
    } else if (cells.size() != width) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": ragged row (" +
                        std::to_string(cells.size()) + " columns, expected " + std::to_string(width) + ")");
    }
    const double lab = row.back();
    if (lab != std::floor(lab) || lab < 0)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": label must be a non-negative integer");
    labels.push_back(static_cast<int>(lab));
    values.insert(values.end(), row.begin(), row.end() - 1);
  }
  if (labels.empty()) throw FormatError(path.string() + ": no data rows");
  const std::size_t dim = width - 1;
  if (expected_dim != 0 && dim != expected_dim)
    throw ConfigError(path.string() + ": feature dimension " + std::to_string(dim) + " != expected " +
                      std::to_string(expected_dim));
  Dataset ds;
  ds.inputs = Matrix(labels.size(), dim, std::move(values));
  ds.classes = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
  ds.labels = std::move(labels);
  ds.split = path.filename().string();
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic

std::vector<std::vector<double>> blob_centres(std::size_t classes, std::size_t dim) {
  std::vector<std::vector<double>> mu(classes, std::vector<double>(dim, 0.0));
  if (dim == 1) {
    for (std::size_t c = 0; c < classes; ++c)
      mu[c][0] = classes == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(c) / static_cast<double>(classes - 1);
    return mu;
  }
  const bool polytope = classes <= 2 || (dim >= 3 && classes <= 2 * dim);
  for (std::size_t c = 0; c < classes; ++c) {
    if (polytope) {
      mu[c][c / 2] = (c % 2 == 0) ? 1.0 : -1.0;
    } else {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
      mu[c][0] = std::cos(a);
      mu[c][1] = std::sin(a);
    }
  }
  return mu;
}

Dataset synth_blobs(Rng& rng, std::size_t classes, std::size_t per_class, std::size_t dim, double separation) {
  if (classes < 1 || per_class < 1 || dim < 1) throw ConfigError("synth_blobs: sizes must be >= 1");
  if (!(separation >= 0.0) || !std::isfinite(separation)) throw ConfigError("synth_blobs: separation must be >= 0");
  const auto mu = blob_centres(classes, dim);
  const double squash = 1.0 / (separation + 4.0);
  Dataset ds;
  ds.classes = classes;
  ds.split = "synth";
  ds.inputs = Matrix(classes * per_class, dim);
  ds.labels.resize(classes * per_class);
  // Interleave classes so any prefix is roughly balanced.
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < classes; ++c) {
      const std::size_t r = i * classes + c;
      ds.labels[r] = static_cast<int>(c);
      auto row = ds.inputs.row(r);
      for (std::size_t j = 0; j < dim; ++j)
        row[j] = std::clamp((separation * mu[c][j] + rng.normal()) * squash, -1.0, 1.0);
    }
  return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, std::size_t n_first, Rng& rng) {
  require(n_first <= ds.size(), "split_dataset: split larger than dataset");
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  const std::span<const std::size_t> all(perm);
  return {ds.subset(all.first(n_first)), ds.subset(all.subspan(n_first))};
}

}  // namespace vib
