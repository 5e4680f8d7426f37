#include "gaopom/data.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gaopom/binary_io.hpp"
#include "gaopom/error.hpp"
#include "gaopom/rng.hpp"

namespace gaopom {

namespace {

constexpr std::uint16_t kDatasetFormatVersion = 1;
constexpr std::size_t kGrid = 4;

// Bilinear sample of a kGrid x kGrid x C grid at continuous grid coordinates,
// clamped at the border.
double sample_grid(const std::vector<double>& grid, std::size_t channels, double gy, double gx, std::size_t c) {
  const double maxc = static_cast<double>(kGrid - 1);
  gy = std::clamp(gy, 0.0, maxc);
  gx = std::clamp(gx, 0.0, maxc);
  const auto y0 = static_cast<std::size_t>(std::min(std::floor(gy), maxc - 1));
  const auto x0 = static_cast<std::size_t>(std::min(std::floor(gx), maxc - 1));
  const double ty = gy - static_cast<double>(y0), tx = gx - static_cast<double>(x0);
  auto at = [&](std::size_t y, std::size_t x) { return grid[(y * kGrid + x) * channels + c]; };
  return (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) +
         ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
}

}  // namespace

std::size_t Dataset::num_train_images() const {
  std::size_t n = 0;
  for (const auto& id : identities) n += id.train_images.size();
  return n;
}

std::size_t Dataset::num_test_images() const {
  std::size_t n = 0;
  for (const auto& id : identities) n += id.test_images.size();
  return n;
}

void Dataset::validate() const {
  if (identities.empty()) throw InvalidArgument("dataset has no identities");
  for (std::size_t k = 0; k < identities.size(); ++k) {
    const auto& id = identities[k];
    if (id.identity_id != k) throw InvalidArgument("identity ids must be contiguous from 0");
    if (id.train_images.empty() || id.test_images.empty()) {
      throw InvalidArgument("identity " + std::to_string(k) + " has an empty train or test split");
    }
    for (const auto* list : {&id.train_images, &id.test_images}) {
      for (const auto& img : *list) {
        if (img.shape() != image_shape) throw InvalidArgument("image shape mismatch in dataset");
      }
    }
  }
}

void SyntheticParams::validate() const {
  if (n_identities < 2) throw InvalidArgument("n_identities must be >= 2");
  if (images_per_identity < 2) throw InvalidArgument("images_per_identity must be >= 2");
  if (n_train < 1 || n_train >= images_per_identity) {
    throw InvalidArgument("n_train must be in [1, images_per_identity)");
  }
  if (height < 2 || width < 2 || channels < 1) throw InvalidArgument("image extents too small");
  if (intra_noise < 0.0 || max_shift < 0.0 || brightness < 0.0 || base_contrast < 0.0) {
    throw InvalidArgument("variation parameters must be non-negative");
  }
}

Dataset gen_synthetic_identities(const SyntheticParams& params) {
  params.validate();
  const std::size_t H = params.height, W = params.width, C = params.channels;
  Dataset ds;
  ds.image_shape = {H, W, C};
  ds.gen_seed = params.seed;

  for (std::size_t k = 0; k < params.n_identities; ++k) {
    Rng base_rng(derive_seed(derive_seed(params.seed, "base"), k));
    Rng var_rng(derive_seed(derive_seed(params.seed, "variation"), k));
    std::vector<double> grid(kGrid * kGrid * C);
    for (auto& v : grid) v = base_rng.normal();

    IdentitySet id;
    id.identity_id = k;
    for (std::size_t i = 0; i < params.images_per_identity; ++i) {
      const double sy = var_rng.uniform(-params.max_shift, params.max_shift);
      const double sx = var_rng.uniform(-params.max_shift, params.max_shift);
      const double bright = var_rng.uniform(-params.brightness, params.brightness);
      Tensor img({H, W, C});
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          // Pixel centres map onto [0, kGrid - 1] in grid coordinates.
          const double gy = (static_cast<double>(y) + sy) * static_cast<double>(kGrid - 1) / static_cast<double>(H - 1);
          const double gx = (static_cast<double>(x) + sx) * static_cast<double>(kGrid - 1) / static_cast<double>(W - 1);
          for (std::size_t c = 0; c < C; ++c) {
            double v = 127.5 + params.base_contrast * sample_grid(grid, C, gy, gx, c) + bright;
            if (params.intra_noise > 0.0) v += params.intra_noise * var_rng.normal();
            img[(y * W + x) * C + c] = std::clamp(v, 0.0, 255.0);
          }
        }
      }
      (i < params.n_train ? id.train_images : id.test_images).push_back(std::move(img));
    }
    ds.identities.push_back(std::move(id));
  }
  return ds;
}

Dataset split(const Dataset& ds, std::size_t n_train) {
  Dataset out;
  out.image_shape = ds.image_shape;
  out.gen_seed = ds.gen_seed;
  for (const auto& id : ds.identities) {
    const std::size_t total = id.train_images.size() + id.test_images.size();
    if (n_train < 1 || n_train >= total) {
      throw InvalidArgument("split: n_train=" + std::to_string(n_train) + " out of range for " +
                            std::to_string(total) + " images per identity");
    }
    IdentitySet s;
    s.identity_id = id.identity_id;
    std::size_t i = 0;
    for (const auto* list : {&id.train_images, &id.test_images}) {
      for (const auto& img : *list) (i++ < n_train ? s.train_images : s.test_images).push_back(img);
    }
    out.identities.push_back(std::move(s));
  }
  return out;
}

std::vector<std::uint8_t> Dataset::serialize() const {
  validate();
  io::Writer w;
  w.magic("GADS");
  w.u16(kDatasetFormatVersion);
  w.u32(static_cast<std::uint32_t>(identities.size()));
  w.u32(static_cast<std::uint32_t>(num_train_images()));
  w.u32(static_cast<std::uint32_t>(num_test_images()));
  for (auto e : image_shape) w.u32(static_cast<std::uint32_t>(e));
  w.u64(gen_seed);
  for (const auto& id : identities) {
    w.u32(static_cast<std::uint32_t>(id.identity_id));
    w.u32(static_cast<std::uint32_t>(id.train_images.size()));
    w.u32(static_cast<std::uint32_t>(id.test_images.size()));
    for (const auto& img : id.train_images) w.f64s(img.data());
    w.magic("SPLT");
    for (const auto& img : id.test_images) w.f64s(img.data());
  }
  return w.take();
}

Dataset Dataset::deserialize(const std::vector<std::uint8_t>& bytes) {
  io::Reader r(bytes, "dataset file");
  r.expect_magic("GADS");
  if (r.u16() != kDatasetFormatVersion) throw IoError("dataset file: unsupported version");
  Dataset ds;
  const std::size_t n_ids = r.u32();
  const std::size_t n_train_total = r.u32();
  const std::size_t n_test_total = r.u32();
  ds.image_shape = {r.u32(), r.u32(), r.u32()};
  ds.gen_seed = r.u64();
  std::size_t volume = 0;
  try {
    volume = shape_volume(ds.image_shape);
  } catch (const InvalidArgument&) {
    throw IoError("dataset file: bad image shape");
  }
  for (std::size_t k = 0; k < n_ids; ++k) {
    IdentitySet id;
    id.identity_id = r.u32();
    const std::size_t ntr = r.u32();
    const std::size_t nte = r.u32();
    for (std::size_t i = 0; i < ntr; ++i) id.train_images.emplace_back(ds.image_shape, r.f64s(volume));
    r.expect_magic("SPLT");
    for (std::size_t i = 0; i < nte; ++i) id.test_images.emplace_back(ds.image_shape, r.f64s(volume));
    ds.identities.push_back(std::move(id));
  }
  r.expect_end();
  if (ds.num_train_images() != n_train_total || ds.num_test_images() != n_test_total) {
    throw IoError("dataset file: image counts do not match header");
  }
  try {
    ds.validate();
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("dataset file: ") + e.what());
  }
  return ds;
}

void Dataset::save(const std::string& path) const { io::write_file(path, serialize()); }

Dataset Dataset::load(const std::string& path) { return deserialize(io::read_file(path)); }

}  // namespace gaopom
