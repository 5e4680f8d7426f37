#include "gaopom/attack.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "gaopom/binary_io.hpp"
#include "gaopom/data.hpp"
#include "gaopom/error.hpp"
#include "gaopom/hull.hpp"

namespace gaopom {

namespace {

constexpr std::uint16_t kMaskFormatVersion = 1;

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void check_images(const EmbeddingModel& model, const std::vector<Tensor>& images) {
  if (images.empty()) throw InvalidArgument("attack needs at least one training image");
  for (const auto& img : images) {
    if (!img.same_shape(images.front())) throw InvalidArgument("training images differ in shape");
  }
  if (images.front().shape() != model.spec().image_shape()) {
    throw InvalidArgument("training image shape does not match surrogate input shape");
  }
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

// Shared state of one crafting call: the surrogate (possibly under dropout),
// clean features and the hull solver for the identity.
class AttackContext {
 public:
  AttackContext(const EmbeddingModel& model, const std::vector<Tensor>& images, const AttackConfig& cfg,
                bool convex_hull)
      : model_(model),
        images_(images),
        view_(model, cfg.dropout_p, derive_seed(cfg.seed, "dropout")),
        convex_hull_(convex_hull) {
    FeatureMatrix fm;
    for (const auto& img : images) fm.columns.push_back(model.embed(img));
    clean_ = fm.columns;
    if (convex_hull_) solver_.emplace(std::move(fm));
  }

  // Gradient of the distance between f(X_i + delta) and its target.
  LossGradient query(std::size_t i, const Tensor& delta) {
    const ForwardPass pass = view_.forward(apply_delta(images_[i], delta));
    const Tensor& target = convex_hull_ ? solver_->solve(pass.feature).hull_point : clean_[i];
    return model_.distance_gradient(pass, target);
  }

  double mean_loss(const Tensor& delta) const {
    return mean_attack_loss(model_, images_, delta, convex_hull_);
  }

 private:
  const EmbeddingModel& model_;
  const std::vector<Tensor>& images_;
  DropoutView view_;
  bool convex_hull_;
  std::vector<Tensor> clean_;
  std::optional<HullSolver> solver_;
};

Tensor initial_delta(const std::vector<std::size_t>& shape, const AttackConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "delta0"));
  Tensor delta(shape);
  for (auto& v : delta.data()) v = rng.uniform(-cfg.epsilon, cfg.epsilon);
  return delta;
}

Digest fingerprint_for(Method method, const AttackConfig& cfg, const EmbeddingModel& model) {
  return attack_fingerprint(method, cfg, model);
}

// Outer update shared by every variant: optional momentum, then one sign step.
Tensor outer_update(const Tensor& delta, const Tensor& direction, Tensor& momentum, const AttackConfig& cfg,
                    AttackTrace* trace) {
  Tensor dir = direction;
  if (cfg.momentum_mu > 0.0) {
    momentum = momentum_fold(momentum, direction, cfg.momentum_mu);
    dir = momentum;
  }
  if (trace) ++trace->outer_sign_count;
  return clip_inf(delta + cfg.outer_step_size * sign(dir), cfg.epsilon);
}

PrivacyMask craft_accumulated(Method method, const EmbeddingModel& model, const std::vector<Tensor>& images,
                              const AttackConfig& cfg, AttackTrace* trace) {
  cfg.validate();
  check_images(model, images);
  AttackContext ctx(model, images, cfg, uses_convex_hull(method));
  Rng pick(derive_seed(cfg.seed, "pick"));
  const std::size_t n = images.size();
  const auto inner_steps = static_cast<std::size_t>(cfg.inner_multiplier) * n;

  Tensor delta = initial_delta(images.front().shape(), cfg);
  Tensor momentum;
  if (trace && trace->record_losses) trace->mean_losses.push_back(ctx.mean_loss(delta));

  for (int step = 0; step < cfg.outer_steps; ++step) {
    Tensor inner = delta;
    Tensor accum(delta.shape());
    if (trace && trace->record_inner_gradients) trace->inner_gradients.emplace_back();
    for (std::size_t m = 0; m < inner_steps; ++m) {
      const std::size_t t = pick.index(n);
      LossGradient lg = ctx.query(t, inner);
      if (!all_finite(lg.gradient)) {
        throw NumericFailure("non-finite gradient at outer step " + std::to_string(step) + ", inner step " +
                             std::to_string(m));
      }
      inner = clip_inf(inner + cfg.inner_step_size * sign(lg.gradient), cfg.epsilon);
      accum += lg.gradient;
      if (trace) {
        ++trace->gradient_evaluations;
        if (trace->record_inner_gradients) trace->inner_gradients.back().push_back(std::move(lg.gradient));
      }
    }
    delta = outer_update(delta, accum, momentum, cfg, trace);
    if (trace) {
      trace->outer_iterates.push_back(delta);
      trace->outer_directions.push_back(std::move(accum));
      if (trace->record_losses) trace->mean_losses.push_back(ctx.mean_loss(delta));
    }
  }
  return PrivacyMask{std::move(delta), 0, cfg.epsilon, fingerprint_for(method, cfg, model)};
}

PrivacyMask craft_full_batch(Method method, const EmbeddingModel& model, const std::vector<Tensor>& images,
                             const AttackConfig& cfg, AttackTrace* trace) {
  cfg.validate();
  check_images(model, images);
  AttackContext ctx(model, images, cfg, uses_convex_hull(method));
  const std::size_t n = images.size();

  Tensor delta = initial_delta(images.front().shape(), cfg);
  Tensor momentum;
  if (trace && trace->record_losses) trace->mean_losses.push_back(ctx.mean_loss(delta));

  for (int step = 0; step < cfg.outer_steps; ++step) {
    Tensor mean(delta.shape());
    for (std::size_t i = 0; i < n; ++i) {
      LossGradient lg = ctx.query(i, delta);
      if (!all_finite(lg.gradient)) {
        throw NumericFailure("non-finite gradient at outer step " + std::to_string(step) + ", image " +
                             std::to_string(i));
      }
      mean += lg.gradient;
      if (trace) ++trace->gradient_evaluations;
    }
    mean *= 1.0 / static_cast<double>(n);
    delta = outer_update(delta, mean, momentum, cfg, trace);
    if (trace) {
      trace->outer_iterates.push_back(delta);
      trace->outer_directions.push_back(std::move(mean));
      if (trace->record_losses) trace->mean_losses.push_back(ctx.mean_loss(delta));
    }
  }
  return PrivacyMask{std::move(delta), 0, cfg.epsilon, fingerprint_for(method, cfg, model)};
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::FiUap:
      return "fi-uap";
    case Method::Opom:
      return "opom";
    case Method::GaFiUap:
      return "ga-fi-uap";
    case Method::GaOpom:
      return "ga-opom";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (Method m : {Method::FiUap, Method::Opom, Method::GaFiUap, Method::GaOpom}) {
    if (to_string(m) == s) return m;
  }
  throw InvalidArgument("unknown method '" + s + "' (expected fi-uap, opom, ga-fi-uap or ga-opom)");
}

bool is_gradient_accumulation(Method m) { return m == Method::GaFiUap || m == Method::GaOpom; }
bool uses_convex_hull(Method m) { return m == Method::Opom || m == Method::GaOpom; }

void AttackConfig::validate() const {
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be > 0");
  if (outer_steps < 1) throw InvalidArgument("outer_steps must be >= 1");
  if (inner_multiplier < 1) throw InvalidArgument("inner_multiplier must be >= 1");
  if (!(outer_step_size > 0.0)) throw InvalidArgument("outer_step_size must be > 0");
  if (!(inner_step_size >= 0.0)) throw InvalidArgument("inner_step_size must be >= 0");
  if (!(momentum_mu >= 0.0)) throw InvalidArgument("momentum_mu must be >= 0");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InvalidArgument("dropout_p must be in [0, 1)");
}

std::string AttackConfig::canonical() const {
  std::ostringstream os;
  os << "epsilon=" << fmt_double(epsilon) << ";outer_steps=" << outer_steps << ";inner_multiplier=" << inner_multiplier
     << ";outer_step_size=" << fmt_double(outer_step_size) << ";inner_step_size=" << fmt_double(inner_step_size)
     << ";momentum_mu=" << fmt_double(momentum_mu) << ";dropout_p=" << fmt_double(dropout_p) << ";seed=" << seed;
  return os.str();
}

Digest attack_fingerprint(Method method, const AttackConfig& cfg, const EmbeddingModel& surrogate) {
  return sha256("method=" + to_string(method) + ";" + cfg.canonical() + ";surrogate=" + surrogate.fingerprint());
}

std::vector<std::uint8_t> PrivacyMask::serialize() const {
  io::Writer w;
  w.magic("GAPM");
  w.u16(kMaskFormatVersion);
  w.u32(static_cast<std::uint32_t>(identity_id));
  w.u32(static_cast<std::uint32_t>(delta.shape().size()));
  for (auto e : delta.shape()) w.u32(static_cast<std::uint32_t>(e));
  w.f64(epsilon);
  w.raw(config_fingerprint.data(), config_fingerprint.size());
  w.f64s(delta.data());
  return w.take();
}

PrivacyMask PrivacyMask::deserialize(const std::vector<std::uint8_t>& bytes) {
  io::Reader r(bytes, "mask file");
  r.expect_magic("GAPM");
  if (r.u16() != kMaskFormatVersion) throw IoError("mask file: unsupported version");
  PrivacyMask m;
  m.identity_id = r.u32();
  const std::size_t rank = r.u32();
  if (rank == 0 || rank > 8) throw IoError("mask file: bad rank");
  std::vector<std::size_t> shape(rank);
  for (auto& e : shape) e = r.u32();
  m.epsilon = r.f64();
  m.config_fingerprint = r.raw<32>();
  std::size_t volume = 0;
  try {
    volume = shape_volume(shape);
  } catch (const InvalidArgument&) {
    throw IoError("mask file: bad shape");
  }
  m.delta = Tensor(shape, r.f64s(volume));
  r.expect_end();
  if (!(m.epsilon > 0.0) || !(m.delta.norm_inf() <= m.epsilon)) {
    throw IoError("mask file: delta violates the recorded l_inf budget");
  }
  return m;
}

void PrivacyMask::save(const std::string& path) const { io::write_file(path, serialize()); }

PrivacyMask PrivacyMask::load(const std::string& path) { return deserialize(io::read_file(path)); }

PrivacyMask craft_ga_opom(const EmbeddingModel& model, const std::vector<Tensor>& train_images,
                          const AttackConfig& cfg, AttackTrace* trace) {
  return craft_accumulated(Method::GaOpom, model, train_images, cfg, trace);
}

PrivacyMask craft_ga_fi_uap(const EmbeddingModel& model, const std::vector<Tensor>& train_images,
                            const AttackConfig& cfg, AttackTrace* trace) {
  return craft_accumulated(Method::GaFiUap, model, train_images, cfg, trace);
}

PrivacyMask craft_opom(const EmbeddingModel& model, const std::vector<Tensor>& train_images, const AttackConfig& cfg,
                       AttackTrace* trace) {
  return craft_full_batch(Method::Opom, model, train_images, cfg, trace);
}

PrivacyMask craft_fi_uap(const EmbeddingModel& model, const std::vector<Tensor>& train_images,
                         const AttackConfig& cfg, AttackTrace* trace) {
  return craft_full_batch(Method::FiUap, model, train_images, cfg, trace);
}

PrivacyMask craft(Method method, const EmbeddingModel& model, const std::vector<Tensor>& train_images,
                  const AttackConfig& cfg, AttackTrace* trace) {
  return is_gradient_accumulation(method) ? craft_accumulated(method, model, train_images, cfg, trace)
                                          : craft_full_batch(method, model, train_images, cfg, trace);
}

std::vector<PrivacyMask> craft_all(Method method, const EmbeddingModel& model, const Dataset& ds,
                                   const AttackConfig& cfg) {
  std::vector<PrivacyMask> masks;
  masks.reserve(ds.identities.size());
  for (const auto& id : ds.identities) {
    AttackConfig c = cfg;
    c.seed = derive_seed(cfg.seed, id.identity_id);
    PrivacyMask m = craft(method, model, id.train_images, c);
    m.identity_id = id.identity_id;
    masks.push_back(std::move(m));
  }
  return masks;
}

Tensor momentum_fold(const Tensor& state, const Tensor& g, double mu) {
  if (!(mu >= 0.0)) throw InvalidArgument("momentum mu must be >= 0");
  const double l1 = g.norm_l1();
  if (!(l1 > 0.0) || !std::isfinite(l1)) throw NumericFailure("momentum_fold: zero or non-finite gradient");
  Tensor out = (1.0 / l1) * g;
  if (!state.empty()) {
    if (!state.same_shape(g)) throw InvalidArgument("momentum_fold: shape mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += mu * state[i];
  }
  return out;
}

Tensor apply_delta(const Tensor& image, const Tensor& delta) {
  if (!image.same_shape(delta)) throw InvalidArgument("mask shape does not match image shape");
  Tensor out = image;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i] + delta[i], 0.0, 255.0);
  return out;
}

Tensor apply_mask(const Tensor& image, const PrivacyMask& mask) { return apply_delta(image, mask.delta); }

double mean_attack_loss(const EmbeddingModel& model, const std::vector<Tensor>& images, const Tensor& delta,
                        bool convex_hull) {
  check_images(model, images);
  FeatureMatrix fm;
  for (const auto& img : images) fm.columns.push_back(model.embed(img));
  std::optional<HullSolver> solver;
  if (convex_hull) solver.emplace(fm);
  double total = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor f = model.embed(apply_delta(images[i], delta));
    const Tensor target = convex_hull ? solver->solve(f).hull_point : fm.columns[i];
    total += norm_l2((f - target).data());
  }
  return total / static_cast<double>(images.size());
}

}  // namespace gaopom
