#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mismatch/tensor.hpp"

namespace mismatch {

/// Single-channel H x W map, row-major.
struct Map2D {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  Map2D() = default;
  Map2D(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return values[i * width + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * width + j]; }
  bool operator==(const Map2D&) const = default;
};

enum class DatasetKind { tubes, blobs };
std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& name);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::tubes;
  std::size_t size = 32;
  std::uint64_t seed = 0;
  double noise_sigma = 0.35;
  // tubes
  std::size_t min_curves = 1;
  std::size_t max_curves = 3;
  double min_thickness = 1.0;
  double max_thickness = 3.0;
  // blobs
  std::size_t min_blobs = 1;
  std::size_t max_blobs = 3;
  double min_radius = 2.0;
  double max_radius = 7.0;
  double min_foreground = 0.03;
  double max_foreground = 0.25;
  std::size_t max_retries = 200;
  std::size_t labeled = 5;
  std::size_t unlabeled = 200;
  std::size_t validation = 10;
  std::size_t test = 50;

  std::size_t count() const { return labeled + unlabeled + validation + test; }
};

/// Throws ConfigError naming the offending field.
void validate(const DatasetSpec& spec);

struct Sample {
  std::size_t id = 0;
  Map2D image;  // zero mean, unit standard deviation
  Map2D mask;   // values in {0, 1}
  bool operator==(const Sample&) const = default;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<Sample> labeled;
  std::vector<Sample> unlabeled;
  std::vector<Sample> validation;
  std::vector<Sample> test;
};

/// Pure function of (spec, id); retries until the foreground fraction lands
/// inside the spec band.
Sample generate_sample(const DatasetSpec& spec, std::size_t id);
/// Ids are assigned consecutively: labeled, unlabeled, validation, test.
Dataset generate_dataset(const DatasetSpec& spec);

/// Binary dilation/erosion with a (2r+1)^2 square element. Out-of-image
/// pixels count as 0 for dilation and 1 for erosion.
Map2D morph_binary(const Map2D& mask, MorphOp op, std::size_t radius);
/// Pixels within one step of the mask boundary on either side (2 px wide).
Map2D boundary_band(const Map2D& mask);

enum class AugmentKind { hflip, vflip, gaussian_noise };
Map2D augment(const Map2D& image, AugmentKind kind, double sigma, std::uint64_t seed);
/// Flips transform image and mask together; noise touches the image only.
Sample augment(const Sample& sample, AugmentKind kind, double sigma, std::uint64_t seed);

/// <dir>/images/<id>.mmt, <dir>/masks/<id>.mmt and <dir>/images/<id>.json.
void write_sample(const Sample& sample, const std::filesystem::path& dir);
Sample read_sample(const std::filesystem::path& dir, std::size_t id);
std::string sample_stem(std::size_t id);

/// Sample files plus meta.json (spec echo, split membership, format version).
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

/// Stacks maps into a [N,1,H,W] tensor.
Tensor stack_maps(std::span<const Map2D* const> maps);
Tensor stack_images(std::span<const Sample> samples);
Tensor stack_masks(std::span<const Sample> samples);

}  // namespace mismatch
