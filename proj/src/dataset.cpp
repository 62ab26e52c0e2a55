#include "splitvfu/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "splitvfu/errors.hpp"
#include "splitvfu/rng.hpp"

namespace splitvfu {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) {
    throw FormatError(path.string() + ": truncated header", bytes.size());
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

// Top-left corner of the trigger window inside a slice.
std::pair<int, int> trigger_origin(const TriggerSpec& t, const Shape& slice) {
  const bool bottom = t.corner == TriggerCorner::kLowerRight || t.corner == TriggerCorner::kLowerLeft;
  const bool right = t.corner == TriggerCorner::kLowerRight || t.corner == TriggerCorner::kUpperRight;
  return {bottom ? slice.height - t.height : 0, right ? slice.width - t.width : 0};
}

void validate_trigger(const TriggerSpec& t, const PartitionedDataset& data, int party) {
  if (party < 1 || party > data.num_parties()) {
    throw ArgumentError("trigger party " + std::to_string(party) + " does not exist");
  }
  const Shape& s = data.slice_shape(party);
  if (t.height < 1 || t.width < 1 || t.height > s.height || t.width > s.width) {
    throw ArgumentError("trigger " + std::to_string(t.height) + "x" + std::to_string(t.width) +
                        " does not fit inside party " + std::to_string(party) + "'s slice " +
                        to_string(s));
  }
  if (!(t.fill_value >= 0.0 && t.fill_value <= 1.0)) {
    throw ArgumentError("trigger fill_value must lie in [0, 1]");
  }
  if (t.target_label < 0 || t.target_label >= data.num_classes) {
    throw ArgumentError("trigger target_label out of range");
  }
  if (!(t.poison_rate >= 0.0 && t.poison_rate <= 1.0)) {
    throw ArgumentError("poison_rate must lie in [0, 1]");
  }
}

void stamp_row(const TriggerSpec& t, const Shape& s, double* row) {
  const auto [y0, x0] = trigger_origin(t, s);
  for (int c = 0; c < s.channels; ++c) {
    for (int y = y0; y < y0 + t.height; ++y) {
      for (int x = x0; x < x0 + t.width; ++x) {
        row[static_cast<Eigen::Index>(c) * s.height * s.width + y * s.width + x] = t.fill_value;
      }
    }
  }
}

RawDataset select_rows(const RawDataset& data, std::size_t begin, std::size_t end) {
  RawDataset out;
  out.image_shape = data.image_shape;
  out.num_classes = data.num_classes;
  out.images = data.images.middleRows(static_cast<Eigen::Index>(begin),
                                      static_cast<Eigen::Index>(end - begin));
  out.labels.assign(data.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    data.labels.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

}  // namespace

RawDataset load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  if (img.empty()) throw FormatError(images_path.string() + ": empty file", 0);
  if (lab.empty()) throw FormatError(labels_path.string() + ": empty file", 0);
  if (read_be32(img, 0, images_path) != kIdxImagesMagic) {
    throw FormatError(images_path.string() + ": bad IDX image magic", 0);
  }
  if (read_be32(lab, 0, labels_path) != kIdxLabelsMagic) {
    throw FormatError(labels_path.string() + ": bad IDX label magic", 0);
  }
  const std::size_t n = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t n_labels = read_be32(lab, 4, labels_path);
  if (n_labels != n) {
    throw FormatError(labels_path.string() + ": label count " + std::to_string(n_labels) +
                          " does not match image count " + std::to_string(n),
                      4);
  }
  if (rows == 0 || cols == 0) throw FormatError(images_path.string() + ": zero image size", 8);
  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + n * pixels) {
    throw FormatError(images_path.string() + ": truncated pixel payload", img.size());
  }
  if (lab.size() < 8 + n) throw FormatError(labels_path.string() + ": truncated labels", lab.size());

  RawDataset out;
  out.image_shape = {1, static_cast<int>(rows), static_cast<int>(cols)};
  out.images.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pixels));
  for (std::size_t i = 0; i < n * pixels; ++i) out.images.data()[i] = img[16 + i] / 255.0;
  out.labels.resize(n);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = lab[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.num_classes = max_label + 1;
  return out;
}

void write_idx(const RawDataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  if (data.image_shape.channels != 1) throw ArgumentError("IDX export supports grayscale only");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw ArgumentError("cannot open IDX output files");
  write_be32(img, kIdxImagesMagic);
  write_be32(img, static_cast<std::uint32_t>(data.size()));
  write_be32(img, static_cast<std::uint32_t>(data.image_shape.height));
  write_be32(img, static_cast<std::uint32_t>(data.image_shape.width));
  for (Eigen::Index i = 0; i < data.images.size(); ++i) {
    const double v = std::clamp(data.images.data()[i], 0.0, 1.0);
    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  write_be32(lab, kIdxLabelsMagic);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int y : data.labels) lab.put(static_cast<char>(y));
}

RawDataset synth_dataset(const SynthParams& p) {
  if (p.n < 1) throw ArgumentError("synth_dataset needs n >= 1");
  if (p.num_classes < 1) throw ArgumentError("synth_dataset needs num_classes >= 1");
  if (p.height < 1 || p.width < 1 || p.channels < 1) throw ArgumentError("bad synth image shape");

  Rng rng(derive_seed(p.seed, "synth"));
  const Shape shape{p.channels, p.height, p.width};
  const Eigen::Index size = shape.size();

  // One prototype per class: blobs spaced across the width so that every
  // vertical slice sees class-specific structure.
  const int blobs = std::max(2, p.width / 3);
  Matrix prototypes = Matrix::Zero(p.num_classes, size);
  for (int k = 0; k < p.num_classes; ++k) {
    for (int b = 0; b < blobs; ++b) {
      const double cx = (b + rng.uniform()) * p.width / blobs;
      const double cy = rng.uniform(0.0, p.height);
      const double sigma = rng.uniform(0.8, 1.8);
      const double amp = rng.uniform(0.5, 1.0);
      for (int c = 0; c < p.channels; ++c) {
        for (int y = 0; y < p.height; ++y) {
          for (int x = 0; x < p.width; ++x) {
            const double d2 = (x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy);
            prototypes(k, static_cast<Eigen::Index>(c) * p.height * p.width + y * p.width + x) +=
                amp * std::exp(-d2 / (2.0 * sigma * sigma));
          }
        }
      }
    }
  }
  prototypes = prototypes.cwiseMin(1.0);

  std::vector<int> labels(p.n);
  for (std::size_t i = 0; i < p.n; ++i) labels[i] = static_cast<int>(i % p.num_classes);
  rng.shuffle(std::span(labels));

  RawDataset out;
  out.image_shape = shape;
  out.num_classes = p.num_classes;
  out.labels = labels;
  out.images.resize(static_cast<Eigen::Index>(p.n), size);
  for (std::size_t i = 0; i < p.n; ++i) {
    const double scale = rng.uniform(0.6, 1.0);
    for (Eigen::Index j = 0; j < size; ++j) {
      const double v = scale * prototypes(labels[i], j) + p.noise * rng.normal();
      out.images(static_cast<Eigen::Index>(i), j) = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

std::pair<RawDataset, RawDataset> split_head(const RawDataset& data, std::size_t count) {
  if (count > data.size()) throw ArgumentError("split point beyond dataset size");
  return {select_rows(data, 0, count), select_rows(data, count, data.size())};
}

RawDataset take_head(const RawDataset& data, std::size_t count) {
  return select_rows(data, 0, std::min(count, data.size()));
}

PartitionSpec PartitionSpec::equal_slices(int width, int num_parties) {
  if (num_parties < 1 || num_parties > width) {
    throw ArgumentError("cannot split width " + std::to_string(width) + " into " +
                        std::to_string(num_parties) + " slices");
  }
  PartitionSpec spec;
  spec.boundaries.push_back(0);
  const int base = width / num_parties;
  const int extra = width % num_parties;
  for (int k = 0; k < num_parties; ++k) {
    spec.boundaries.push_back(spec.boundaries.back() + base + (k < extra ? 1 : 0));
  }
  return spec;
}

const Matrix& PartitionedDataset::party_features(int party) const {
  if (party < 1 || party > num_parties()) {
    throw ArgumentError("party " + std::to_string(party) + " holds no features");
  }
  return features[static_cast<std::size_t>(party - 1)];
}

const Shape& PartitionedDataset::slice_shape(int party) const {
  if (party < 1 || party > num_parties()) {
    throw ArgumentError("party " + std::to_string(party) + " holds no features");
  }
  return slice_shapes[static_cast<std::size_t>(party - 1)];
}

Matrix PartitionedDataset::gather(int party, std::span<const Eigen::Index> rows) const {
  const Matrix& src = party_features(party);
  Matrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= src.rows()) {
      throw ArgumentError("sample index " + std::to_string(rows[i]) + " out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = src.row(rows[i]);
  }
  return out;
}

std::size_t PartitionedDataset::poisoned_count() const {
  return static_cast<std::size_t>(std::count(poison_mask.begin(), poison_mask.end(), 1));
}

PartitionedDataset partition(const RawDataset& raw, const PartitionSpec& spec) {
  const auto& b = spec.boundaries;
  const int width = raw.image_shape.width;
  if (b.size() < 2 || b.front() != 0 || b.back() != width) {
    throw ArgumentError("partition boundaries must start at 0 and end at the image width " +
                        std::to_string(width));
  }
  for (std::size_t i = 1; i < b.size(); ++i) {
    if (b[i] <= b[i - 1]) throw ArgumentError("partition boundaries must be strictly increasing");
  }

  const auto [channels, height, _] = raw.image_shape;
  PartitionedDataset out;
  out.spec = spec;
  out.image_shape = raw.image_shape;
  out.labels = raw.labels;
  out.num_classes = raw.num_classes;
  out.poison_mask.assign(raw.size(), 0);
  const auto n = static_cast<Eigen::Index>(raw.size());
  for (int k = 1; k <= spec.num_parties(); ++k) {
    const int w = spec.slice_width(k);
    const int x0 = b[static_cast<std::size_t>(k - 1)];
    Shape s{channels, height, w};
    Matrix f(n, s.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int c = 0; c < channels; ++c) {
        for (int y = 0; y < height; ++y) {
          const Eigen::Index src = static_cast<Eigen::Index>(c) * height * width + y * width + x0;
          const Eigen::Index dst = static_cast<Eigen::Index>(c) * height * w + y * w;
          f.row(i).segment(dst, w) = raw.images.row(i).segment(src, w);
        }
      }
    }
    out.slice_shapes.push_back(s);
    out.features.push_back(std::move(f));
  }
  return out;
}

RawDataset reassemble(const PartitionedDataset& data) {
  const auto [channels, height, width] = data.image_shape;
  RawDataset out;
  out.image_shape = data.image_shape;
  out.labels = data.labels;
  out.num_classes = data.num_classes;
  out.images.resize(static_cast<Eigen::Index>(data.size()), data.image_shape.size());
  for (int k = 1; k <= data.num_parties(); ++k) {
    const int w = data.spec.slice_width(k);
    const int x0 = data.spec.boundaries[static_cast<std::size_t>(k - 1)];
    const Matrix& f = data.party_features(k);
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      for (int c = 0; c < channels; ++c) {
        for (int y = 0; y < height; ++y) {
          out.images.row(i).segment(static_cast<Eigen::Index>(c) * height * width + y * width + x0, w) =
              f.row(i).segment(static_cast<Eigen::Index>(c) * height * w + y * w, w);
        }
      }
    }
  }
  return out;
}

PartitionedDataset inject_backdoor(const PartitionedDataset& data, const TriggerSpec& trigger,
                                   int party, std::uint64_t seed) {
  validate_trigger(trigger, data, party);
  PartitionedDataset out = data;
  out.poison_target_label = trigger.target_label;
  const std::size_t n = data.size();
  const auto count = static_cast<std::size_t>(std::llround(trigger.poison_rate * static_cast<double>(n)));
  if (count == 0) return out;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));

  Matrix& f = out.features[static_cast<std::size_t>(party - 1)];
  const Shape& s = out.slice_shape(party);
  for (std::size_t j = 0; j < count; ++j) {
    const auto i = order[j];
    stamp_row(trigger, s, f.row(static_cast<Eigen::Index>(i)).data());
    out.labels[i] = trigger.target_label;
    out.poison_mask[i] = 1;
  }
  return out;
}

PartitionedDataset stamp_trigger(const PartitionedDataset& data, const TriggerSpec& trigger,
                                 int party) {
  validate_trigger(trigger, data, party);
  PartitionedDataset out = data;
  out.poison_target_label = trigger.target_label;
  Matrix& f = out.features[static_cast<std::size_t>(party - 1)];
  const Shape& s = out.slice_shape(party);
  for (Eigen::Index i = 0; i < f.rows(); ++i) stamp_row(trigger, s, f.row(i).data());
  std::fill(out.poison_mask.begin(), out.poison_mask.end(), 1);
  return out;
}

}  // namespace splitvfu
