#pragma once

#include "gaopom/data.hpp"
#include "gaopom/model.hpp"
#include "gaopom/rng.hpp"

namespace gaopom::testing {

// Default 20-identity dataset (10 train / 5 test per identity).
inline const Dataset& default_dataset() {
  static const Dataset ds = gen_synthetic_identities(SyntheticParams{});
  return ds;
}

inline const EmbeddingModel& trained_mlp() {
  static const EmbeddingModel m =
      train_classifier(default_dataset(), Architecture::Mlp3, LossKind::Softmax, TrainConfig{}, 1).model;
  return m;
}

inline const EmbeddingModel& trained_conv() {
  static const EmbeddingModel m =
      train_classifier(default_dataset(), Architecture::Conv2, LossKind::Softmax, TrainConfig{}, 3).model;
  return m;
}

inline Tensor random_image(Rng& rng, const std::vector<std::size_t>& shape = {16, 16, 3}) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(0.0, 255.0);
  return t;
}

inline Tensor random_unit(Rng& rng, std::size_t d) {
  Tensor t({d});
  for (auto& v : t.data()) v = rng.normal();
  t *= 1.0 / t.norm_l2();
  return t;
}

}  // namespace gaopom::testing
