#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gaopom/numerics.hpp"

namespace gaopom {

struct IdentitySet {
  std::size_t identity_id = 0;
  std::vector<Tensor> train_images;
  std::vector<Tensor> test_images;

  friend bool operator==(const IdentitySet&, const IdentitySet&) = default;
};

struct Dataset {
  std::vector<IdentitySet> identities;
  std::vector<std::size_t> image_shape;
  std::uint64_t gen_seed = 0;

  std::size_t num_identities() const { return identities.size(); }
  std::size_t num_train_images() const;
  std::size_t num_test_images() const;
  void validate() const;

  std::vector<std::uint8_t> serialize() const;
  static Dataset deserialize(const std::vector<std::uint8_t>& bytes);
  void save(const std::string& path) const;
  static Dataset load(const std::string& path);

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SyntheticParams {
  std::size_t n_identities = 20;
  std::size_t images_per_identity = 15;
  std::size_t n_train = 10;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  // Std of additive per-pixel noise, in pixel units.
  double intra_noise = 12.0;
  // Maximum sub-pixel translation of the base field, in pixels.
  double max_shift = 1.0;
  // Maximum absolute brightness offset, in pixel units.
  double brightness = 12.0;
  // Contrast of the identity base pattern around mid-grey.
  double base_contrast = 10.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Per identity: a smooth base pattern (bilinear upsampling of a 4x4 seeded
// noise grid) plus per-image translation, brightness shift and additive
// Gaussian noise, clamped to [0, 255]. Split into train/test by `n_train`.
Dataset gen_synthetic_identities(const SyntheticParams& params);

// Reassigns the first `n_train` images of each identity (train then test
// order) to the training split.
Dataset split(const Dataset& ds, std::size_t n_train);

}  // namespace gaopom
