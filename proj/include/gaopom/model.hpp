#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gaopom/numerics.hpp"
#include "gaopom/rng.hpp"

namespace gaopom {

struct Dataset;

enum class Architecture : std::uint8_t { Mlp3 = 1, Conv2 = 2 };
enum class LossKind : std::uint8_t { Softmax = 1, MarginCosine = 2 };

std::string to_string(Architecture a);
std::string to_string(LossKind k);
Architecture parse_architecture(const std::string& s);
LossKind parse_loss_kind(const std::string& s);

// Layer extents. For Mlp3 `hidden_a`/`hidden_b` are the two hidden widths; for
// Conv2 they are the channel counts of the two conv stages.
struct ModelSpec {
  Architecture arch = Architecture::Mlp3;
  LossKind loss = LossKind::Softmax;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::size_t hidden_a = 64;
  std::size_t hidden_b = 64;
  std::size_t feature_dim = 32;
  std::size_t num_classes = 2;
  std::uint64_t train_seed = 0;

  std::vector<std::size_t> image_shape() const { return {height, width, channels}; }
  void validate() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct TrainConfig {
  int epochs = 60;
  double learning_rate = 0.05;
  int batch_size = 16;
  double margin = 0.2;
  double scale = 16.0;

  void validate() const;
};

// One multiplicative mask per dropout site (hidden activation), already scaled
// by 1/(1-p) on survivors.
using DropoutMasks = std::vector<std::vector<double>>;

// Activations retained by a forward pass so gradients can be taken without a
// second forward evaluation.
struct ForwardPass {
  std::vector<std::vector<double>> activations;  // [0] = x / 255 - 0.5, back() = raw head output
  Tensor feature;                                 // normalized head output
  double raw_norm = 0.0;
  DropoutMasks masks;
};

struct LossGradient {
  double loss = 0.0;
  Tensor gradient;
};

class EmbeddingModel {
 public:
  // Seeded random initialization.
  explicit EmbeddingModel(const ModelSpec& spec);
  EmbeddingModel(const ModelSpec& spec, Tensor parameters);

  const ModelSpec& spec() const { return spec_; }
  std::size_t feature_dim() const { return spec_.feature_dim; }
  const Tensor& parameters() const { return params_; }
  Tensor& mutable_parameters() { return params_; }

  // Sizes of the hidden activations that dropout may act on.
  std::vector<std::size_t> dropout_sites() const;

  ForwardPass forward(const Tensor& image, DropoutMasks masks = {}) const;

  Tensor embed(const Tensor& image) const;
  double distance_loss(const Tensor& image, const Tensor& target) const;
  Tensor input_gradient(const Tensor& image, const Tensor& target) const;

  // ||target - pass.feature||_2 and its gradient w.r.t. the input pixels.
  // `target` is held constant. Returns a zero gradient at the minimum.
  LossGradient distance_gradient(const ForwardPass& pass, const Tensor& target) const;

  // Class scores from the classification head; used for training accuracy.
  std::vector<double> class_scores(const ForwardPass& pass) const;
  std::size_t predict(const Tensor& image) const;

  // Classification loss on one labelled example, accumulating the parameter
  // gradient into `param_grad`.
  double accumulate_training_gradient(const Tensor& image, std::size_t label, const TrainConfig& cfg,
                                      std::vector<double>& param_grad) const;

  std::vector<std::uint8_t> serialize() const;
  static EmbeddingModel deserialize(const std::vector<std::uint8_t>& bytes);
  void save(const std::string& path) const;
  static EmbeddingModel load(const std::string& path);

  // SHA-256 of the serialized model, hex encoded.
  std::string fingerprint() const;

 private:
  struct Layer {
    enum class Kind { Dense, Relu, Dropout, Conv3x3, AvgPool2 };
    Kind kind;
    std::size_t in_size = 0;
    std::size_t out_size = 0;
    std::size_t param_offset = 0;
    std::size_t param_count = 0;
    // Spatial input extents for conv/pool; (in, out) features for dense.
    std::size_t h = 0, w = 0, cin = 0, cout = 0;
    std::size_t site = 0;  // dropout site index
  };
  void build_layers();
  std::vector<double> backward_trunk(const ForwardPass& pass, std::vector<double> grad_out,
                                     std::vector<double>* param_grad) const;
  std::size_t head_offset() const { return head_offset_; }

  ModelSpec spec_;
  Tensor params_;
  std::vector<Layer> layers_;
  std::size_t head_offset_ = 0;
};

// Stochastic view that resamples a dropout pattern on every forward pass. With
// p = 0 it reproduces the wrapped model exactly. Not safe to share across
// threads: the generator is private mutable state.
class DropoutView {
 public:
  DropoutView(const EmbeddingModel& model, double p, std::uint64_t seed);

  const EmbeddingModel& model() const { return *model_; }
  double p() const { return p_; }

  ForwardPass forward(const Tensor& image);
  Tensor embed(const Tensor& image);
  Tensor input_gradient(const Tensor& image, const Tensor& target);

 private:
  const EmbeddingModel* model_;
  double p_;
  Rng rng_;
};

DropoutView with_dropout(const EmbeddingModel& model, double p, std::uint64_t seed);

struct TrainResult {
  EmbeddingModel model;
  double train_accuracy = 0.0;
  double final_loss = 0.0;
};

// Trains an identity classifier on the training split of `ds` with plain
// minibatch gradient descent and seeded shuffling.
TrainResult train_classifier(const Dataset& ds, Architecture arch, LossKind loss, const TrainConfig& cfg,
                             std::uint64_t seed, std::size_t feature_dim = 32);

double classification_accuracy(const EmbeddingModel& model, const Dataset& ds, bool test_split);

}  // namespace gaopom
