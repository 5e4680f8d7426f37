#include <cmath>
#include <numeric>
#include <string>

#include "gaopom/data.hpp"
#include "gaopom/error.hpp"
#include "gaopom/model.hpp"

namespace gaopom {

TrainResult train_classifier(const Dataset& ds, Architecture arch, LossKind loss, const TrainConfig& cfg,
                             std::uint64_t seed, std::size_t feature_dim) {
  cfg.validate();
  if (ds.num_identities() < 2) throw InvalidArgument("training needs at least 2 identities");
  if (ds.image_shape.size() != 3) throw InvalidArgument("dataset image shape must be (H, W, C)");

  struct Example {
    const Tensor* image;
    std::size_t label;
  };
  std::vector<Example> examples;
  for (std::size_t k = 0; k < ds.identities.size(); ++k) {
    if (ds.identities[k].train_images.empty()) throw InvalidArgument("identity without training images");
    for (const auto& img : ds.identities[k].train_images) examples.push_back({&img, k});
  }

  ModelSpec spec;
  spec.arch = arch;
  spec.loss = loss;
  spec.height = ds.image_shape[0];
  spec.width = ds.image_shape[1];
  spec.channels = ds.image_shape[2];
  if (arch == Architecture::Conv2) {
    spec.hidden_a = 8;
    spec.hidden_b = 16;
  }
  spec.feature_dim = feature_dim;
  spec.num_classes = ds.num_identities();
  spec.train_seed = seed;
  EmbeddingModel model(spec);

  Rng shuffle_rng(derive_seed(seed, "shuffle"));
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(model.parameters().size());
  double epoch_loss = 0.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);
    epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      try {
        for (std::size_t b = start; b < end; ++b) {
          const Example& ex = examples[order[b]];
          epoch_loss += model.accumulate_training_gradient(*ex.image, ex.label, cfg, grad);
        }
      } catch (const NumericFailure& e) {
        throw TrainingFailure("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      const double step = cfg.learning_rate / static_cast<double>(end - start);
      auto& p = model.mutable_parameters().data();
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= step * grad[i];
    }
    epoch_loss /= static_cast<double>(examples.size());
    if (!std::isfinite(epoch_loss)) {
      throw TrainingFailure("training loss became non-finite at epoch " + std::to_string(epoch));
    }
  }

  TrainResult result{std::move(model), 0.0, epoch_loss};
  result.train_accuracy = classification_accuracy(result.model, ds, false);
  return result;
}

double classification_accuracy(const EmbeddingModel& model, const Dataset& ds, bool test_split) {
  std::size_t correct = 0, total = 0;
  for (std::size_t k = 0; k < ds.identities.size(); ++k) {
    const auto& images = test_split ? ds.identities[k].test_images : ds.identities[k].train_images;
    for (const auto& img : images) {
      correct += model.predict(img) == k ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace gaopom
