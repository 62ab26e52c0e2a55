#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "splitvfu/matrix.hpp"
#include "splitvfu/network.hpp"

namespace splitvfu {

// Images stored one per row, channel-major, values in [0, 1].
struct RawDataset {
  Shape image_shape;
  Matrix images;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
};

// Reads an IDX image/label file pair (MNIST, Fashion-MNIST). Pixel bytes are
// scaled to [0, 1]. Throws FormatError with the failing byte offset.
RawDataset load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path);

// Writes a grayscale dataset as an IDX pair, rounding pixels to bytes.
void write_idx(const RawDataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

// Class-conditional Gaussian-blob images: each class owns a fixed prototype
// made of blobs spread across the full width, and each sample is a scaled,
// noisy copy of its class prototype. Labels are balanced.
struct SynthParams {
  std::uint64_t seed = 0;
  std::size_t n = 600;
  int height = 12;
  int width = 12;
  int num_classes = 3;
  int channels = 1;
  double noise = 0.15;
};

RawDataset synth_dataset(const SynthParams& params);

// Splits the first `count` samples from the rest; used for train/test splits
// of a single synthetic draw.
std::pair<RawDataset, RawDataset> split_head(const RawDataset& data, std::size_t count);

RawDataset take_head(const RawDataset& data, std::size_t count);

// Column boundaries over the image width: party k (1-based) owns
// columns [boundaries[k-1], boundaries[k]).
struct PartitionSpec {
  std::vector<int> boundaries;

  int num_parties() const { return static_cast<int>(boundaries.size()) - 1; }
  int slice_width(int party) const { return boundaries.at(party) - boundaries.at(party - 1); }

  // K slices, with the remainder columns going to the earliest parties.
  static PartitionSpec equal_slices(int width, int num_parties);
};

// Per-party feature slices for the same, index-aligned samples plus the
// label column held by the active party.
struct PartitionedDataset {
  PartitionSpec spec;
  Shape image_shape;
  std::vector<Shape> slice_shapes;   // index k-1 for party k
  std::vector<Matrix> features;      // N x slice size, index k-1 for party k
  std::vector<int> labels;
  std::vector<std::uint8_t> poison_mask;
  int poison_target_label = -1;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  int num_parties() const { return spec.num_parties(); }
  const Matrix& party_features(int party) const;
  const Shape& slice_shape(int party) const;
  Matrix gather(int party, std::span<const Eigen::Index> rows) const;
  std::size_t poisoned_count() const;
};

PartitionedDataset partition(const RawDataset& raw, const PartitionSpec& spec);

// Concatenates the slices back into full images (exact inverse of partition).
RawDataset reassemble(const PartitionedDataset& data);

enum class TriggerCorner { kLowerRight, kLowerLeft, kUpperRight, kUpperLeft };

struct TriggerSpec {
  int height = 2;
  int width = 2;
  TriggerCorner corner = TriggerCorner::kLowerRight;
  double fill_value = 1.0;
  int target_label = 0;
  double poison_rate = 0.1;
};

// Stamps the trigger into `party`'s slice for round(poison_rate * N) samples
// chosen by a seeded draw without replacement and relabels them to
// target_label.
PartitionedDataset inject_backdoor(const PartitionedDataset& data, const TriggerSpec& trigger,
                                   int party, std::uint64_t seed);

// Stamps every sample, keeps true labels. The backdoor evaluation set.
PartitionedDataset stamp_trigger(const PartitionedDataset& data, const TriggerSpec& trigger,
                                 int party);

}  // namespace splitvfu
