#include "gaopom/model.hpp"

#include <cmath>
#include <string>

#include "gaopom/binary_io.hpp"
#include "gaopom/error.hpp"
#include "gaopom/hash.hpp"

namespace gaopom {

namespace {

constexpr std::uint16_t kModelFormatVersion = 1;
constexpr double kPixelScale = 1.0 / 255.0;
constexpr double kPixelCenter = 0.5;

}  // namespace

std::string to_string(Architecture a) { return a == Architecture::Mlp3 ? "mlp3" : "conv2"; }
std::string to_string(LossKind k) { return k == LossKind::Softmax ? "softmax" : "margin-cosine"; }

Architecture parse_architecture(const std::string& s) {
  if (s == "mlp3" || s == "MLP-3") return Architecture::Mlp3;
  if (s == "conv2" || s == "Conv-2") return Architecture::Conv2;
  throw InvalidArgument("unknown architecture '" + s + "'");
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "softmax") return LossKind::Softmax;
  if (s == "margin-cosine" || s == "cosface") return LossKind::MarginCosine;
  throw InvalidArgument("unknown loss kind '" + s + "'");
}

void ModelSpec::validate() const {
  if (height == 0 || width == 0 || channels == 0 || hidden_a == 0 || hidden_b == 0 || feature_dim == 0) {
    throw InvalidArgument("model extents must be positive");
  }
  if (num_classes < 2) throw InvalidArgument("classifier needs at least 2 identities");
  if (arch == Architecture::Conv2 && (height % 4 != 0 || width % 4 != 0)) {
    throw InvalidArgument("conv2 needs height and width divisible by 4");
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(margin >= 0.0 && margin < 1.0)) throw InvalidArgument("margin must be in [0, 1)");
  if (!(scale > 0.0)) throw InvalidArgument("scale must be > 0");
}

EmbeddingModel::EmbeddingModel(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  build_layers();
  Rng rng(derive_seed(spec_.train_seed, "init"));
  auto& p = params_.data();
  auto fill = [&](std::size_t offset, std::size_t count, double stddev) {
    for (std::size_t i = 0; i < count; ++i) p[offset + i] = stddev * rng.normal();
  };
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& l = layers_[li];
    const bool last = li + 1 == layers_.size();
    if (l.kind == Layer::Kind::Dense) {
      fill(l.param_offset, l.cin * l.cout, std::sqrt((last ? 1.0 : 2.0) / static_cast<double>(l.cin)));
    } else if (l.kind == Layer::Kind::Conv3x3) {
      fill(l.param_offset, l.cout * 9 * l.cin, std::sqrt(2.0 / static_cast<double>(9 * l.cin)));
    }
  }
  fill(head_offset_, spec_.num_classes * spec_.feature_dim, std::sqrt(1.0 / static_cast<double>(spec_.feature_dim)));
}

EmbeddingModel::EmbeddingModel(const ModelSpec& spec, Tensor parameters) : spec_(spec) {
  spec_.validate();
  build_layers();
  if (parameters.size() != params_.size()) {
    throw InvalidArgument("parameter count " + std::to_string(parameters.size()) + " does not match architecture (" +
                          std::to_string(params_.size()) + ")");
  }
  params_ = Tensor({params_.size()}, std::move(parameters.data()));
}

void EmbeddingModel::build_layers() {
  layers_.clear();
  std::size_t offset = 0;
  std::size_t site = 0;
  auto dense = [&](std::size_t in, std::size_t out) {
    Layer l{Layer::Kind::Dense};
    l.in_size = in;
    l.out_size = out;
    l.cin = in;
    l.cout = out;
    l.param_offset = offset;
    l.param_count = in * out + out;
    offset += l.param_count;
    layers_.push_back(l);
  };
  auto relu_dropout = [&](std::size_t n) {
    Layer r{Layer::Kind::Relu};
    r.in_size = r.out_size = n;
    layers_.push_back(r);
    Layer d{Layer::Kind::Dropout};
    d.in_size = d.out_size = n;
    d.site = site++;
    layers_.push_back(d);
  };
  auto conv = [&](std::size_t h, std::size_t w, std::size_t cin, std::size_t cout) {
    Layer l{Layer::Kind::Conv3x3};
    l.h = h;
    l.w = w;
    l.cin = cin;
    l.cout = cout;
    l.in_size = h * w * cin;
    l.out_size = h * w * cout;
    l.param_offset = offset;
    l.param_count = cout * 9 * cin + cout;
    offset += l.param_count;
    layers_.push_back(l);
  };
  auto pool = [&](std::size_t h, std::size_t w, std::size_t c) {
    Layer l{Layer::Kind::AvgPool2};
    l.h = h;
    l.w = w;
    l.cin = l.cout = c;
    l.in_size = h * w * c;
    l.out_size = (h / 2) * (w / 2) * c;
    layers_.push_back(l);
  };

  const std::size_t H = spec_.height, W = spec_.width, C = spec_.channels;
  if (spec_.arch == Architecture::Mlp3) {
    dense(H * W * C, spec_.hidden_a);
    relu_dropout(spec_.hidden_a);
    dense(spec_.hidden_a, spec_.hidden_b);
    relu_dropout(spec_.hidden_b);
    dense(spec_.hidden_b, spec_.feature_dim);
  } else {
    conv(H, W, C, spec_.hidden_a);
    relu_dropout(H * W * spec_.hidden_a);
    pool(H, W, spec_.hidden_a);
    conv(H / 2, W / 2, spec_.hidden_a, spec_.hidden_b);
    relu_dropout((H / 2) * (W / 2) * spec_.hidden_b);
    pool(H / 2, W / 2, spec_.hidden_b);
    dense((H / 4) * (W / 4) * spec_.hidden_b, spec_.feature_dim);
  }
  head_offset_ = offset;
  offset += spec_.num_classes * spec_.feature_dim;
  if (spec_.loss == LossKind::Softmax) offset += spec_.num_classes;
  params_ = Tensor({offset});
}

std::vector<std::size_t> EmbeddingModel::dropout_sites() const {
  std::vector<std::size_t> sizes;
  for (const auto& l : layers_) {
    if (l.kind == Layer::Kind::Dropout) sizes.push_back(l.in_size);
  }
  return sizes;
}

ForwardPass EmbeddingModel::forward(const Tensor& image, DropoutMasks masks) const {
  if (image.shape() != spec_.image_shape()) throw InvalidArgument("image shape does not match model input shape");
  if (!masks.empty()) {
    const auto sites = dropout_sites();
    if (masks.size() != sites.size()) throw InvalidArgument("dropout mask count mismatch");
    for (std::size_t i = 0; i < sites.size(); ++i) {
      if (masks[i].size() != sites[i]) throw InvalidArgument("dropout mask size mismatch");
    }
  }
  const auto& p = params_.data();
  ForwardPass pass;
  pass.masks = std::move(masks);
  pass.activations.reserve(layers_.size() + 1);
  std::vector<double> x(image.data());
  for (auto& v : x) v = v * kPixelScale - kPixelCenter;
  pass.activations.push_back(std::move(x));

  for (const Layer& l : layers_) {
    const std::vector<double>& in = pass.activations.back();
    std::vector<double> out(l.out_size, 0.0);
    switch (l.kind) {
      case Layer::Kind::Dense: {
        const double* wgt = p.data() + l.param_offset;
        const double* bias = wgt + l.cin * l.cout;
        for (std::size_t o = 0; o < l.cout; ++o) {
          double s = bias[o];
          const double* row = wgt + o * l.cin;
          for (std::size_t i = 0; i < l.cin; ++i) s += row[i] * in[i];
          out[o] = s;
        }
        break;
      }
      case Layer::Kind::Relu:
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
        break;
      case Layer::Kind::Dropout:
        if (pass.masks.empty()) {
          out = in;
        } else {
          const auto& m = pass.masks[l.site];
          for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * m[i];
        }
        break;
      case Layer::Kind::Conv3x3: {
        const double* wgt = p.data() + l.param_offset;
        const double* bias = wgt + l.cout * 9 * l.cin;
        const auto H = static_cast<std::ptrdiff_t>(l.h), W = static_cast<std::ptrdiff_t>(l.w);
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          for (std::ptrdiff_t x = 0; x < W; ++x) {
            double* o = out.data() + (y * W + x) * l.cout;
            for (std::size_t co = 0; co < l.cout; ++co) o[co] = bias[co];
            for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
              const std::ptrdiff_t yy = y + ky - 1;
              if (yy < 0 || yy >= H) continue;
              for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
                const std::ptrdiff_t xx = x + kx - 1;
                if (xx < 0 || xx >= W) continue;
                const double* src = in.data() + (yy * W + xx) * l.cin;
                for (std::size_t co = 0; co < l.cout; ++co) {
                  const double* k = wgt + ((co * 3 + ky) * 3 + kx) * l.cin;
                  double s = 0.0;
                  for (std::size_t ci = 0; ci < l.cin; ++ci) s += k[ci] * src[ci];
                  o[co] += s;
                }
              }
            }
          }
        }
        break;
      }
      case Layer::Kind::AvgPool2: {
        const std::size_t oh = l.h / 2, ow = l.w / 2, c = l.cin;
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t x = 0; x < ow; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
              double s = 0.0;
              for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx) s += in[((2 * y + dy) * l.w + 2 * x + dx) * c + ch];
              out[(y * ow + x) * c + ch] = 0.25 * s;
            }
        break;
      }
    }
    pass.activations.push_back(std::move(out));
  }

  const auto& z = pass.activations.back();
  pass.raw_norm = norm_l2(z);
  if (!(pass.raw_norm > 0.0) || !std::isfinite(pass.raw_norm)) {
    throw NumericFailure("embedding head output has zero or non-finite norm");
  }
  std::vector<double> f(z);
  for (auto& v : f) v /= pass.raw_norm;
  pass.feature = Tensor::vector(std::move(f));
  return pass;
}

std::vector<double> EmbeddingModel::backward_trunk(const ForwardPass& pass, std::vector<double> grad,
                                                   std::vector<double>* param_grad) const {
  const auto& p = params_.data();
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Layer& l = layers_[li];
    const std::vector<double>& in = pass.activations[li];
    std::vector<double> gin(l.in_size, 0.0);
    switch (l.kind) {
      case Layer::Kind::Dense: {
        const double* wgt = p.data() + l.param_offset;
        for (std::size_t o = 0; o < l.cout; ++o) {
          const double g = grad[o];
          if (g == 0.0) continue;
          const double* row = wgt + o * l.cin;
          for (std::size_t i = 0; i < l.cin; ++i) gin[i] += row[i] * g;
        }
        if (param_grad) {
          double* gw = param_grad->data() + l.param_offset;
          double* gb = gw + l.cin * l.cout;
          for (std::size_t o = 0; o < l.cout; ++o) {
            const double g = grad[o];
            gb[o] += g;
            if (g == 0.0) continue;
            double* row = gw + o * l.cin;
            for (std::size_t i = 0; i < l.cin; ++i) row[i] += g * in[i];
          }
        }
        break;
      }
      case Layer::Kind::Relu:
        for (std::size_t i = 0; i < in.size(); ++i) gin[i] = in[i] > 0.0 ? grad[i] : 0.0;
        break;
      case Layer::Kind::Dropout:
        if (pass.masks.empty()) {
          gin = grad;
        } else {
          const auto& m = pass.masks[l.site];
          for (std::size_t i = 0; i < in.size(); ++i) gin[i] = grad[i] * m[i];
        }
        break;
      case Layer::Kind::Conv3x3: {
        const double* wgt = p.data() + l.param_offset;
        double* gw = param_grad ? param_grad->data() + l.param_offset : nullptr;
        const auto H = static_cast<std::ptrdiff_t>(l.h), W = static_cast<std::ptrdiff_t>(l.w);
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          for (std::ptrdiff_t x = 0; x < W; ++x) {
            const double* go = grad.data() + (y * W + x) * l.cout;
            if (gw) {
              double* gb = gw + l.cout * 9 * l.cin;
              for (std::size_t co = 0; co < l.cout; ++co) gb[co] += go[co];
            }
            for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
              const std::ptrdiff_t yy = y + ky - 1;
              if (yy < 0 || yy >= H) continue;
              for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
                const std::ptrdiff_t xx = x + kx - 1;
                if (xx < 0 || xx >= W) continue;
                const std::ptrdiff_t src_off = (yy * W + xx) * static_cast<std::ptrdiff_t>(l.cin);
                for (std::size_t co = 0; co < l.cout; ++co) {
                  const double g = go[co];
                  if (g == 0.0) continue;
                  const std::size_t koff = ((co * 3 + ky) * 3 + kx) * l.cin;
                  for (std::size_t ci = 0; ci < l.cin; ++ci) {
                    gin[src_off + ci] += wgt[koff + ci] * g;
                    if (gw) gw[koff + ci] += in[src_off + ci] * g;
                  }
                }
              }
            }
          }
        }
        break;
      }
      case Layer::Kind::AvgPool2: {
        const std::size_t ow = l.w / 2, c = l.cin;
        for (std::size_t y = 0; y < l.h; ++y)
          for (std::size_t x = 0; x < l.w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) gin[(y * l.w + x) * c + ch] = 0.25 * grad[((y / 2) * ow + x / 2) * c + ch];
        break;
      }
    }
    grad = std::move(gin);
  }
  return grad;
}

Tensor EmbeddingModel::embed(const Tensor& image) const { return forward(image).feature; }

double EmbeddingModel::distance_loss(const Tensor& image, const Tensor& target) const {
  const Tensor f = embed(image);
  if (target.size() != f.size()) throw InvalidArgument("target dimension does not match feature dimension");
  return norm_l2((f - Tensor::vector(target.data())).data());
}

Tensor EmbeddingModel::input_gradient(const Tensor& image, const Tensor& target) const {
  return distance_gradient(forward(image), target).gradient;
}

LossGradient EmbeddingModel::distance_gradient(const ForwardPass& pass, const Tensor& target) const {
  const auto& f = pass.feature.data();
  if (target.size() != f.size()) throw InvalidArgument("target dimension does not match feature dimension");
  std::vector<double> diff(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) diff[i] = f[i] - target[i];
  LossGradient out;
  out.loss = norm_l2(diff);
  out.gradient = Tensor(spec_.image_shape());
  if (out.loss == 0.0) return out;

  // d||f - t|| / df = (f - t) / L, then through f = z / ||z||.
  for (auto& v : diff) v /= out.loss;
  const double proj = dot(f, diff);
  std::vector<double> gz(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) gz[i] = (diff[i] - f[i] * proj) / pass.raw_norm;

  auto gin = backward_trunk(pass, std::move(gz), nullptr);
  for (std::size_t i = 0; i < gin.size(); ++i) out.gradient[i] = gin[i] * kPixelScale;
  return out;
}

std::vector<double> EmbeddingModel::class_scores(const ForwardPass& pass) const {
  const auto& p = params_.data();
  const std::size_t d = spec_.feature_dim;
  const double* wc = p.data() + head_offset_;
  std::vector<double> scores(spec_.num_classes);
  if (spec_.loss == LossKind::Softmax) {
    const auto& z = pass.activations.back();
    const double* bc = wc + spec_.num_classes * d;
    for (std::size_t j = 0; j < spec_.num_classes; ++j) {
      scores[j] = bc[j] + dot({wc + j * d, d}, z);
    }
  } else {
    const auto& f = pass.feature.data();
    for (std::size_t j = 0; j < spec_.num_classes; ++j) {
      std::span<const double> wj{wc + j * d, d};
      scores[j] = dot(wj, f) / norm_l2(wj);
    }
  }
  return scores;
}

std::size_t EmbeddingModel::predict(const Tensor& image) const {
  const auto scores = class_scores(forward(image));
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j) {
    if (scores[j] > scores[best]) best = j;
  }
  return best;
}

double EmbeddingModel::accumulate_training_gradient(const Tensor& image, std::size_t label, const TrainConfig& cfg,
                                                    std::vector<double>& param_grad) const {
  if (label >= spec_.num_classes) throw InvalidArgument("label out of range");
  const ForwardPass pass = forward(image);
  const std::size_t d = spec_.feature_dim, K = spec_.num_classes;
  const auto& p = params_.data();
  const double* wc = p.data() + head_offset_;
  double* gwc = param_grad.data() + head_offset_;

  std::vector<double> logits = class_scores(pass);
  if (spec_.loss == LossKind::MarginCosine) {
    logits[label] -= cfg.margin;
    for (auto& v : logits) v *= cfg.scale;
  }
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double denom = 0.0;
  for (double v : logits) denom += std::exp(v - mx);
  const double loss = -(logits[label] - mx - std::log(denom));
  std::vector<double> dlogit(K);
  for (std::size_t j = 0; j < K; ++j) dlogit[j] = std::exp(logits[j] - mx) / denom - (j == label ? 1.0 : 0.0);

  std::vector<double> gz(d, 0.0);
  if (spec_.loss == LossKind::Softmax) {
    const auto& z = pass.activations.back();
    double* gbc = gwc + K * d;
    for (std::size_t j = 0; j < K; ++j) {
      gbc[j] += dlogit[j];
      for (std::size_t i = 0; i < d; ++i) {
        gwc[j * d + i] += dlogit[j] * z[i];
        gz[i] += dlogit[j] * wc[j * d + i];
      }
    }
  } else {
    // logits_j = s * (w_j . f / |w_j| - m [j = y]).
    const auto& f = pass.feature.data();
    std::vector<double> gf(d, 0.0);
    for (std::size_t j = 0; j < K; ++j) {
      std::span<const double> wj{wc + j * d, d};
      const double wn = norm_l2(wj);
      const double gcos = cfg.scale * dlogit[j];
      const double cosv = dot(wj, f) / wn;
      for (std::size_t i = 0; i < d; ++i) {
        const double what = wj[i] / wn;
        gf[i] += gcos * what;
        gwc[j * d + i] += gcos * (f[i] - what * cosv) / wn;
      }
    }
    const double proj = dot(f, gf);
    for (std::size_t i = 0; i < d; ++i) gz[i] = (gf[i] - f[i] * proj) / pass.raw_norm;
  }
  backward_trunk(pass, std::move(gz), &param_grad);
  return loss;
}

std::vector<std::uint8_t> EmbeddingModel::serialize() const {
  io::Writer w;
  w.magic("GAOM");
  w.u16(kModelFormatVersion);
  w.u8(static_cast<std::uint8_t>(spec_.arch));
  const std::size_t extents[] = {spec_.height,   spec_.width,       spec_.channels,   spec_.hidden_a,
                                 spec_.hidden_b, spec_.feature_dim, spec_.num_classes};
  w.u32(static_cast<std::uint32_t>(std::size(extents)));
  for (auto e : extents) w.u32(static_cast<std::uint32_t>(e));
  w.u8(static_cast<std::uint8_t>(spec_.loss));
  w.u32(static_cast<std::uint32_t>(spec_.feature_dim));
  w.u64(spec_.train_seed);
  w.u64(params_.size());
  w.f64s(params_.data());
  return w.take();
}

EmbeddingModel EmbeddingModel::deserialize(const std::vector<std::uint8_t>& bytes) {
  io::Reader r(bytes, "model file");
  r.expect_magic("GAOM");
  if (r.u16() != kModelFormatVersion) throw IoError("model file: unsupported version");
  ModelSpec spec;
  const auto arch = r.u8();
  if (arch != 1 && arch != 2) throw IoError("model file: bad architecture tag");
  spec.arch = static_cast<Architecture>(arch);
  if (r.u32() != 7) throw IoError("model file: bad extent count");
  spec.height = r.u32();
  spec.width = r.u32();
  spec.channels = r.u32();
  spec.hidden_a = r.u32();
  spec.hidden_b = r.u32();
  spec.feature_dim = r.u32();
  spec.num_classes = r.u32();
  const auto loss = r.u8();
  if (loss != 1 && loss != 2) throw IoError("model file: bad loss tag");
  spec.loss = static_cast<LossKind>(loss);
  if (r.u32() != spec.feature_dim) throw IoError("model file: feature_dim mismatch");
  spec.train_seed = r.u64();
  const auto n = r.u64();
  auto params = r.f64s(n);
  r.expect_end();
  try {
    const std::size_t count = params.size();
    return EmbeddingModel(spec, Tensor({count}, std::move(params)));
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("model file: ") + e.what());
  }
}

void EmbeddingModel::save(const std::string& path) const { io::write_file(path, serialize()); }

EmbeddingModel EmbeddingModel::load(const std::string& path) { return deserialize(io::read_file(path)); }

std::string EmbeddingModel::fingerprint() const {
  const auto bytes = serialize();
  return to_hex(sha256(bytes.data(), bytes.size()));
}

DropoutView::DropoutView(const EmbeddingModel& model, double p, std::uint64_t seed)
    : model_(&model), p_(p), rng_(seed) {
  if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("dropout p must be in [0, 1)");
}

ForwardPass DropoutView::forward(const Tensor& image) {
  if (p_ == 0.0) return model_->forward(image);
  const double keep_scale = 1.0 / (1.0 - p_);
  DropoutMasks masks;
  for (auto n : model_->dropout_sites()) {
    std::vector<double> m(n);
    for (auto& v : m) v = rng_.uniform() < p_ ? 0.0 : keep_scale;
    masks.push_back(std::move(m));
  }
  return model_->forward(image, std::move(masks));
}

Tensor DropoutView::embed(const Tensor& image) { return forward(image).feature; }

Tensor DropoutView::input_gradient(const Tensor& image, const Tensor& target) {
  return model_->distance_gradient(forward(image), target).gradient;
}

DropoutView with_dropout(const EmbeddingModel& model, double p, std::uint64_t seed) {
  return DropoutView(model, p, seed);
}

}  // namespace gaopom
