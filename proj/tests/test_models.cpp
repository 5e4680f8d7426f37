#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "gaopom/error.hpp"
#include "gaopom/model.hpp"

using namespace gaopom;
using namespace gaopom::testing;

namespace {

ModelSpec small_spec(Architecture arch, LossKind loss, std::uint64_t seed) {
  ModelSpec s;
  s.arch = arch;
  s.loss = loss;
  s.height = 8;
  s.width = 8;
  s.channels = 2;
  s.hidden_a = arch == Architecture::Mlp3 ? 12 : 3;
  s.hidden_b = arch == Architecture::Mlp3 ? 10 : 4;
  s.feature_dim = 6;
  s.num_classes = 4;
  s.train_seed = seed;
  return s;
}

double rel_error(const Tensor& a, const Tensor& b) { return (a - b).norm_l2() / std::max(b.norm_l2(), 1e-300); }

}  // namespace

TEST_CASE("training reaches high accuracy and is deterministic") {
  SyntheticParams p;
  p.images_per_identity = 10;
  p.n_train = 9;
  const Dataset ds = gen_synthetic_identities(p);
  // 20 identities x 10 images: 9 train + 1 held-out per identity.
  const auto a = train_classifier(ds, Architecture::Mlp3, LossKind::Softmax, TrainConfig{}, 0);
  CHECK(a.train_accuracy >= 0.95);
  const auto b = train_classifier(ds, Architecture::Mlp3, LossKind::Softmax, TrainConfig{}, 0);
  CHECK(a.model.parameters() == b.model.parameters());
}

TEST_CASE("every roster architecture trains on the default dataset") {
  const Dataset& ds = default_dataset();
  CHECK(train_classifier(ds, Architecture::Mlp3, LossKind::MarginCosine, TrainConfig{}, 2).train_accuracy >= 0.95);
  CHECK(classification_accuracy(trained_conv(), ds, false) >= 0.95);
}

TEST_CASE("training rejects degenerate input") {
  Dataset one = default_dataset();
  one.identities.resize(1);
  CHECK_THROWS_AS(train_classifier(one, Architecture::Mlp3, LossKind::Softmax, TrainConfig{}, 0), InvalidArgument);
  TrainConfig bad;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(train_classifier(default_dataset(), Architecture::Mlp3, LossKind::Softmax, bad, 0), InvalidArgument);
}

TEST_CASE("divergent training reports the epoch") {
  TrainConfig cfg;
  cfg.learning_rate = 1e6;
  cfg.epochs = 5;
  try {
    train_classifier(default_dataset(), Architecture::Mlp3, LossKind::Softmax, cfg, 0);
    FAIL("expected training failure");
  } catch (const TrainingFailure& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("embed is unit norm and deterministic") {
  Rng rng(7);
  for (const auto* m : {&trained_mlp(), &trained_conv()}) {
    for (int i = 0; i < 10; ++i) {
      const Tensor x = random_image(rng);
      const Tensor f = m->embed(x);
      CHECK(std::abs(f.norm_l2() - 1.0) < 1e-9);
      CHECK(m->embed(x) == f);
    }
  }
  CHECK_THROWS_AS(trained_mlp().embed(Tensor({16, 16, 1})), InvalidArgument);
}

TEST_CASE("same-identity features are closer than cross-identity features") {
  const Dataset& ds = default_dataset();
  const EmbeddingModel& m = trained_mlp();
  std::vector<std::vector<Tensor>> feats;
  for (const auto& id : ds.identities) {
    feats.emplace_back();
    for (const auto& img : id.test_images) feats.back().push_back(m.embed(img));
  }
  double same = 0.0, cross = 0.0;
  long n_same = 0, n_cross = 0;
  for (std::size_t a = 0; a < feats.size(); ++a)
    for (std::size_t b = a; b < feats.size(); ++b)
      for (std::size_t i = 0; i < feats[a].size(); ++i)
        for (std::size_t j = (a == b ? i + 1 : 0); j < feats[b].size(); ++j) {
          const double c = dot(feats[a][i].data(), feats[b][j].data());
          (a == b ? same : cross) += c;
          ++(a == b ? n_same : n_cross);
        }
  CHECK(same / n_same > cross / n_cross);
}

TEST_CASE("distance_loss examples") {
  Rng rng(5);
  const EmbeddingModel& m = trained_mlp();
  const Tensor x = random_image(rng);
  CHECK(m.distance_loss(x, m.embed(x)) < 1e-9);
  const Tensor f = m.embed(x);
  CHECK(m.distance_loss(x, -1.0 * f) == doctest::Approx(2.0).epsilon(1e-12));
  const Tensor t = random_unit(rng, m.feature_dim());
  CHECK(m.distance_loss(x, t) == doctest::Approx(norm_l2((f - t).data())).epsilon(1e-14));
  CHECK_THROWS_AS(m.distance_loss(x, Tensor({3})), InvalidArgument);
}

TEST_CASE("input gradients match central differences") {
  Rng rng(123);
  const Architecture archs[] = {Architecture::Mlp3, Architecture::Conv2};
  const LossKind losses[] = {LossKind::Softmax, LossKind::MarginCosine};
  for (auto arch : archs) {
    for (auto loss : losses) {
      for (int c = 0; c < 10; ++c) {
        const EmbeddingModel m(small_spec(arch, loss, 100 + c));
        const Tensor x = random_image(rng, {8, 8, 2});
        const Tensor t = random_unit(rng, 6);
        const Tensor analytic = m.input_gradient(x, t);
        const Tensor numeric =
            finite_diff_grad([&](const Tensor& xx) { return m.distance_loss(xx, t); }, x, 1e-5);
        CHECK(rel_error(analytic, numeric) < 1e-4);
      }
    }
  }
}

TEST_CASE("input gradients match central differences under a fixed dropout pattern") {
  Rng rng(321);
  for (auto arch : {Architecture::Mlp3, Architecture::Conv2}) {
    for (int c = 0; c < 5; ++c) {
      const EmbeddingModel m(small_spec(arch, LossKind::Softmax, 200 + c));
      DropoutMasks masks;
      for (auto n : m.dropout_sites()) {
        std::vector<double> mk(n);
        for (auto& v : mk) v = rng.uniform() < 0.2 ? 0.0 : 1.25;
        masks.push_back(std::move(mk));
      }
      const Tensor x = random_image(rng, {8, 8, 2});
      const Tensor t = random_unit(rng, 6);
      const Tensor analytic = m.distance_gradient(m.forward(x, masks), t).gradient;
      const auto loss = [&](const Tensor& xx) {
        return norm_l2((m.forward(xx, masks).feature - t).data());
      };
      CHECK(rel_error(analytic, finite_diff_grad(loss, x, 1e-5)) < 1e-4);
    }
  }
}

TEST_CASE("training-loss parameter gradients match central differences") {
  Rng rng(77);
  TrainConfig cfg;
  for (auto arch : {Architecture::Mlp3, Architecture::Conv2}) {
    for (auto loss : {LossKind::Softmax, LossKind::MarginCosine}) {
      EmbeddingModel m(small_spec(arch, loss, 300));
      const Tensor x = random_image(rng, {8, 8, 2});
      const std::size_t label = 2;
      std::vector<double> grad(m.parameters().size(), 0.0);
      const double base = m.accumulate_training_gradient(x, label, cfg, grad);
      CHECK(std::isfinite(base));
      const auto eval = [&] {
        std::vector<double> scratch(m.parameters().size(), 0.0);
        return m.accumulate_training_gradient(x, label, cfg, scratch);
      };
      Tensor analytic({40}), numeric({40});
      for (int k = 0; k < 40; ++k) {
        const std::size_t i = rng.index(grad.size());
        double& p = m.mutable_parameters()[i];
        const double orig = p;
        p = orig + 1e-5;
        const double fp = eval();
        p = orig - 1e-5;
        const double fm = eval();
        p = orig;
        analytic[static_cast<std::size_t>(k)] = grad[i];
        numeric[static_cast<std::size_t>(k)] = (fp - fm) / 2e-5;
      }
      CHECK(rel_error(analytic, numeric) < 1e-4);
    }
  }
}

TEST_CASE("gradient vanishes at the loss minimum and ascent increases the loss") {
  Rng rng(9);
  const EmbeddingModel& m = trained_mlp();
  const Tensor x = random_image(rng);
  CHECK(m.input_gradient(x, m.embed(x)).norm_l2() < 1e-6);

  for (int i = 0; i < 5; ++i) {
    const Tensor t = random_unit(rng, m.feature_dim());
    const Tensor g = m.input_gradient(x, t);
    const double before = m.distance_loss(x, t);
    CHECK(m.distance_loss(x + 1e-3 * g, t) > before);
  }
  // Moving the target further along the ray away from the embedding raises the loss.
  const Tensor f = m.embed(x);
  const Tensor dir = random_unit(rng, m.feature_dim());
  CHECK(m.distance_loss(x, f + 2.0 * dir) > m.distance_loss(x, f + 1.0 * dir));
}

TEST_CASE("dropout view") {
  Rng rng(4);
  const EmbeddingModel& m = trained_mlp();
  const Tensor x = random_image(rng);
  auto off = with_dropout(m, 0.0, 1);
  CHECK(off.embed(x) == m.embed(x));

  auto a = with_dropout(m, 0.1, 42);
  auto b = with_dropout(m, 0.1, 42);
  for (int i = 0; i < 5; ++i) CHECK(a.embed(x) == b.embed(x));

  auto c = with_dropout(m, 0.1, 7);
  Tensor mean({m.feature_dim()});
  for (int i = 0; i < 100; ++i) mean += c.embed(x);
  const Tensor base = m.embed(x);
  CHECK(dot(mean.data(), base.data()) / mean.norm_l2() >= 0.9);

  CHECK_THROWS_AS(with_dropout(m, 1.0, 0), InvalidArgument);
  CHECK_THROWS_AS(with_dropout(m, -0.1, 0), InvalidArgument);
}

TEST_CASE("model file round trip is bit exact") {
  const EmbeddingModel& m = trained_conv();
  const auto bytes = m.serialize();
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "GAOM");
  const EmbeddingModel back = EmbeddingModel::deserialize(bytes);
  CHECK(back.spec() == m.spec());
  CHECK(back.parameters() == m.parameters());
  CHECK(back.serialize() == bytes);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(EmbeddingModel::deserialize(bad), IoError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(EmbeddingModel::deserialize(truncated), IoError);
}
