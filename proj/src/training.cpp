// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "d2net/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "d2net/metrics.hpp"

namespace d2net::train {

template <Scalar T>
LossResult<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (!(pred.shape() == target.shape()))
    throw ShapeError("l1_loss: shape " + pred.shape().str() + " vs " + target.shape().str());
  if (pred.numel() == 0) throw ShapeError("l1_loss: empty tensors");
  LossResult<T> r{0.0, Tensor<T>(pred.shape())};
  const double inv = 1.0 / static_cast<double>(pred.numel());
  double sum = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    sum += std::abs(d);
    r.grad[i] = static_cast<T>(d > 0 ? inv : (d < 0 ? -inv : 0.0));
  }
  r.value = sum * inv;
  return r;
}

double cosine_lr(double base, std::size_t t, std::size_t total) {
  if (total == 0 || t >= total) return 0.0;
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(total)));
}

template <Scalar T>
void adam_step(ModuleParams<T>& params, const ModuleParams<T>& grads, OptimState<T>& state) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!(grads.at(i).shape() == params.at(i).shape()))
      throw ShapeError("adam_step: gradient shape mismatch for " + params.name(i));
    for (T g : grads.at(i).data())
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in " + params.name(i));
  }
  ++state.t;
  const AdamConfig& c = state.config;
  const double lr = state.lr();
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params.at(i).raw();
    T* m = state.m.at(i).raw();
    T* v = state.v.at(i).raw();
    const T* g = grads.at(i).raw();
    for (std::size_t k = 0; k < params.at(i).numel(); ++k) {
      const double gk = g[k];
      const double mk = c.beta1 * m[k] + (1 - c.beta1) * gk;
      const double vk = c.beta2 * v[k] + (1 - c.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      p[k] = static_cast<T>(p[k] - lr * (mk / bc1) / (std::sqrt(vk / bc2) + c.eps));
    }
  }
}

// ---------------------------------------------------------------------------

const char* task_name(Task task) {
  switch (task) {
  case Task::lowlight:
    return "lowlight";
  case Task::haze:
    return "haze";
  case Task::blur:
    return "blur";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  for (Task t : {Task::lowlight, Task::haze, Task::blur})
    if (name == task_name(t)) return t;
  throw ConfigError("unknown task '" + name + "' (expected lowlight, haze or blur)");
}

double Range::sample(std::mt19937_64& rng) const {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

DegradationSpec DegradationSpec::for_task(Task kind, std::uint64_t seed) {
  DegradationSpec s;
  s.kind = kind;
  s.seed = seed;
  return s;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Line of `side` pixels through the center at angle theta, normalized.
std::vector<double> motion_kernel(std::size_t side, double theta) {
  std::vector<double> k(side * side, 0.0);
  const double r = static_cast<double>(side / 2);
  const std::size_t samples = side * 8;
  for (std::size_t s = 0; s < samples; ++s) {
    const double t = -r + 2 * r * static_cast<double>(s) / static_cast<double>(samples - 1);
    const auto x = static_cast<std::size_t>(std::lround(r + t * std::cos(theta)));
    const auto y = static_cast<std::size_t>(std::lround(r + t * std::sin(theta)));
    k[y * side + x] = 1.0;
  }
  double sum = 0;
  for (double v : k) sum += v;
  for (double& v : k) v /= sum;
  return k;
}

} // namespace

Degradation sample_degradation(const DegradationSpec& spec, std::mt19937_64& rng) {
  Degradation d;
  d.kind = spec.kind;
  switch (spec.kind) {
  case Task::lowlight:
    d.gamma = spec.gamma.sample(rng);
    d.scale = spec.scale.sample(rng);
    d.noise_sigma = spec.noise_sigma.sample(rng);
    d.noise_seed = rng();
    break;
  case Task::haze:
    d.transmission = spec.transmission.sample(rng);
    d.airlight = spec.airlight.sample(rng);
    break;
  case Task::blur: {
    if (spec.blur_min < 1 || spec.blur_max < spec.blur_min) throw ConfigError("blur length range is empty");
    // Odd lengths only, so the kernel has a center tap.
    std::vector<std::size_t> lengths;
    for (std::size_t l = spec.blur_min; l <= spec.blur_max; ++l)
      if (l % 2 == 1) lengths.push_back(l);
    if (lengths.empty()) throw ConfigError("blur length range holds no odd length");
    const std::size_t side = lengths[rng() % lengths.size()];
    d.kernel_side = side;
    if (rng() & 1) {
      d.kernel.assign(side * side, 1.0 / static_cast<double>(side * side));
    } else {
      d.kernel = motion_kernel(side, unit(rng) * std::numbers::pi);
    }
    break;
  }
  }
  return d;
}

template <Scalar T>
Tensor<T> degrade(const Tensor<T>& clean, const Degradation& d) {
  const Shape s = clean.shape();
  Tensor<T> out(s);
  switch (d.kind) {
  case Task::lowlight: {
    std::mt19937_64 rng(d.noise_seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < clean.numel(); ++i) {
      double v = d.scale * std::pow(static_cast<double>(clean[i]), d.gamma);
      if (d.noise_sigma > 0) v += d.noise_sigma * noise(rng);
      out[i] = static_cast<T>(std::clamp(v, 0.0, 1.0));
    }
    break;
  }
  case Task::haze:
    for (std::size_t i = 0; i < clean.numel(); ++i) {
      const double v = static_cast<double>(clean[i]) * d.transmission + d.airlight * (1.0 - d.transmission);
      out[i] = static_cast<T>(std::clamp(v, 0.0, 1.0));
    }
    break;
  case Task::blur: {
    const auto k = static_cast<std::ptrdiff_t>(d.kernel_side);
    const std::ptrdiff_t r = k / 2;
    const auto H = static_cast<std::ptrdiff_t>(s.h), W = static_cast<std::ptrdiff_t>(s.w);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c) {
        const T* src = clean.plane(n, c);
        T* dst = out.plane(n, c);
        for (std::ptrdiff_t y = 0; y < H; ++y)
          for (std::ptrdiff_t x = 0; x < W; ++x) {
            double acc = 0;
            for (std::ptrdiff_t i = 0; i < k; ++i) {
              const std::ptrdiff_t yy = mirror_index(y + i - r, H);
              for (std::ptrdiff_t j = 0; j < k; ++j) {
                const double w = d.kernel[static_cast<std::size_t>(i * k + j)];
                if (w != 0) acc += w * src[yy * W + mirror_index(x + j - r, W)];
              }
            }
            dst[y * W + x] = static_cast<T>(std::clamp(acc, 0.0, 1.0));
          }
      }
    break;
  }
  }
  return out;
}

std::vector<Tensor<float>> synthetic_corpus(std::size_t count, std::size_t size, std::uint64_t seed) {
  std::vector<Tensor<float>> images;
  images.reserve(count);
  const double S = static_cast<double>(size);
  for (std::size_t idx = 0; idx < count; ++idx) {
    std::mt19937_64 rng(mix(seed, idx));
    std::vector<double> img(3 * size * size);
    auto color = [&] { return std::array<double, 3>{unit(rng), unit(rng), unit(rng)}; };
    auto put = [&](std::size_t c, std::size_t y, std::size_t x) -> double& { return img[(c * size + y) * size + x]; };

    // Background: linear gradient between two colors.
    const auto c0 = color(), c1 = color();
    const double ang = unit(rng) * 2 * std::numbers::pi;
    const double dx = std::cos(ang), dy = std::sin(ang);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double t = std::clamp(0.5 + ((x / S - 0.5) * dx + (y / S - 0.5) * dy), 0.0, 1.0);
        for (std::size_t c = 0; c < 3; ++c) put(c, y, x) = c0[c] * (1 - t) + c1[c] * t;
      }

    const std::size_t shapes = 6 + rng() % 7;
    for (std::size_t k = 0; k < shapes; ++k) {
      const auto col = color();
      const double cx = unit(rng) * S, cy = unit(rng) * S;
      const double rx = (0.05 + 0.2 * unit(rng)) * S, ry = (0.05 + 0.2 * unit(rng)) * S;
      const std::size_t kind = rng() % 3;
      const double period = 3.0 + 6.0 * unit(rng);
      const double stripe_ang = unit(rng) * std::numbers::pi;
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double u = (static_cast<double>(x) - cx) / rx, v = (static_cast<double>(y) - cy) / ry;
          bool inside = false;
          double shade = 1.0;
          if (kind == 0) {
            inside = std::abs(u) <= 1 && std::abs(v) <= 1;
          } else if (kind == 1) {
            inside = u * u + v * v <= 1;
          } else {
            inside = std::abs(u) <= 1 && std::abs(v) <= 1;
            const double p = static_cast<double>(x) * std::cos(stripe_ang) + static_cast<double>(y) * std::sin(stripe_ang);
            shade = std::fmod(p / period, 1.0) < 0.5 ? 1.0 : 0.35;
          }
          if (inside)
            for (std::size_t c = 0; c < 3; ++c) put(c, y, x) = col[c] * shade;
        }
    }

    Tensor<float> t(Shape{1, 3, size, size});
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double grain = 0.02 * (unit(rng) - 0.5);
      t[i] = static_cast<float>(std::clamp(img[i] + grain, 0.0, 1.0));
    }
    images.push_back(std::move(t));
  }
  return images;
}

Batch make_batch(const std::vector<Tensor<float>>& images, const DegradationSpec& spec, std::size_t crop,
                 std::size_t batch, std::uint64_t seed) {
  if (images.empty()) throw InputError("make_batch: no source images");
  if (crop == 0 || batch == 0) throw ConfigError("make_batch: crop and batch must be positive");
  for (const auto& im : images)
    if (im.shape().h < crop || im.shape().w < crop)
      throw InputError("make_batch: source image " + im.shape().str() + " smaller than crop " + std::to_string(crop));
  std::mt19937_64 rng(mix(seed, spec.seed));
  Batch b{Tensor<float>(Shape{batch, 3, crop, crop}), Tensor<float>(Shape{batch, 3, crop, crop})};
  for (std::size_t n = 0; n < batch; ++n) {
    const Tensor<float>& src = images[rng() % images.size()];
    const std::size_t y0 = rng() % (src.shape().h - crop + 1);
    const std::size_t x0 = rng() % (src.shape().w - crop + 1);
    const bool flip_h = rng() & 1, flip_v = rng() & 1;
    Tensor<float> clean(Shape{1, 3, crop, crop});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < crop; ++y)
        for (std::size_t x = 0; x < crop; ++x) {
          const std::size_t sy = y0 + (flip_v ? crop - 1 - y : y);
          const std::size_t sx = x0 + (flip_h ? crop - 1 - x : x);
          clean(0, c, y, x) = src(0, c, sy, sx);
        }
    const Tensor<float> degraded = degrade(clean, sample_degradation(spec, rng));
    std::copy(clean.raw(), clean.raw() + clean.numel(), b.clean.plane(n, 0));
    std::copy(degraded.raw(), degraded.raw() + degraded.numel(), b.degraded.plane(n, 0));
  }
  return b;
}

// ---------------------------------------------------------------------------

NetworkConfig toy_network_config() {
  NetworkConfig cfg;
  cfg.base_channels = 8;
  cfg.level_depths = {1, 1, 1, 1};
  cfg.decoder_depths = {1, 1, 1};
  cfg.refine_depth = 1;
  cfg.fem.r_g = 0.25;
  cfg.fem.ffn_expand = 2.0;
  return cfg;
}

std::vector<Batch> heldout_set(const std::vector<Tensor<float>>& images, const DegradationSpec& spec,
                               std::size_t crop, std::uint64_t seed) {
  std::vector<Batch> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    // A single centered crop per image, no flips.
    const Tensor<float>& src = images[i];
    if (src.shape().h < crop || src.shape().w < crop) throw InputError("heldout image smaller than crop");
    const std::size_t y0 = (src.shape().h - crop) / 2, x0 = (src.shape().w - crop) / 2;
    Tensor<float> clean(Shape{1, 3, crop, crop});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < crop; ++y)
        for (std::size_t x = 0; x < crop; ++x) clean(0, c, y, x) = src(0, c, y0 + y, x0 + x);
    std::mt19937_64 rng(mix(mix(seed, spec.seed), i));
    Tensor<float> degraded = degrade(clean, sample_degradation(spec, rng));
    out.push_back(Batch{std::move(degraded), std::move(clean)});
  }
  return out;
}

Evaluation evaluate(const D2Net& net, const ModuleParams<float>& params, const std::vector<Batch>& heldout) {
  Evaluation e;
  if (heldout.empty()) return e;
  for (const Batch& b : heldout) {
    const Tensor<float> restored = net.forward_full_resolution(params, b.degraded);
    Tensor<float> clipped = restored;
    for (float& v : clipped.data()) v = std::clamp(v, 0.0f, 1.0f);
    e.psnr_degraded += metrics::psnr(b.degraded, b.clean);
    e.psnr_restored += metrics::psnr(clipped, b.clean);
    e.ssim_degraded += metrics::ssim(b.degraded, b.clean);
    e.ssim_restored += metrics::ssim(clipped, b.clean);
  }
  const double n = static_cast<double>(heldout.size());
  e.psnr_degraded /= n;
  e.psnr_restored /= n;
  e.ssim_degraded /= n;
  e.ssim_restored /= n;
  return e;
}

TrainResult train(const TrainConfig& config, const DegradationSpec& task,
                  const std::vector<Tensor<float>>& train_images, const std::vector<Tensor<float>>& heldout_images,
                  std::ostream* log) {
  if (train_images.size() + heldout_images.size() < 8)
    throw InputError("training needs at least 8 source images, got " +
                     std::to_string(train_images.size() + heldout_images.size()));
  if (train_images.empty() || heldout_images.empty()) throw InputError("training and held-out sets must be non-empty");
  const D2Net net(config.network);
  if (config.crop % config.network.pad_multiple() != 0)
    throw ConfigError("crop " + std::to_string(config.crop) + " must be a multiple of " +
                      std::to_string(config.network.pad_multiple()));

  TrainResult result;
  result.params = net.init_params<float>(config.seed);
  // Zero residual head: the untrained network is the identity.
  result.params[net.tail().weight].fill(0.0f);
  if (net.tail().bias.valid()) result.params[net.tail().bias].fill(0.0f);

  AdamConfig adam = config.adam;
  adam.total_steps = config.iters;
  auto state = OptimState<float>::fresh(result.params, adam);
  const auto heldout = heldout_set(heldout_images, task, config.crop, mix(config.seed, 0x4e1d));
  result.initial = evaluate(net, result.params, heldout);

  for (std::size_t step = 1; step <= config.iters; ++step) {
    const Batch b = make_batch(train_images, task, config.crop, config.batch, mix(config.seed, step));
    NetworkTrace<float> trace;
    const Tensor<float> pred = net.forward(result.params, b.degraded, &trace);
    const LossResult<float> loss = l1_loss(pred, b.clean);
    if (!std::isfinite(loss.value)) throw NumericError("training diverged at step " + std::to_string(step));
    ModuleParams<float> grads = result.params.zeros_like();
    net.backward(result.params, trace, loss.grad, grads);
    try {
      adam_step(result.params, grads, state);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    TraceRow row{step, state.lr(), loss.value, false, 0, 0};
    if ((config.eval_every && step % config.eval_every == 0) || step == config.iters) {
      const Evaluation e = evaluate(net, result.params, heldout);
      row.has_eval = true;
      row.eval_psnr = e.psnr_restored;
      row.eval_ssim = e.ssim_restored;
      if (log)
        *log << "step " << step << " loss " << loss.value << " heldout psnr " << e.psnr_restored << " (degraded "
             << e.psnr_degraded << ")\n";
    }
    result.trace.push_back(row);
  }
  result.final = evaluate(net, result.params, heldout);
  std::ostringstream ck;
  save_checkpoint(result.params, ck);
  result.checkpoint = ck.str();
  return result;
}

TrainResult train_toy(const TrainConfig& config, const DegradationSpec& task, std::ostream* log) {
  auto images = synthetic_corpus(config.corpus_images + config.heldout_images, config.corpus_size, config.seed);
  std::vector<Tensor<float>> heldout(std::make_move_iterator(images.end() - static_cast<std::ptrdiff_t>(config.heldout_images)),
                                     std::make_move_iterator(images.end()));
  images.resize(config.corpus_images);
  return train(config, task, images, heldout, log);
}

double window_mean(const std::vector<TraceRow>& trace, std::size_t first, std::size_t last) {
  if (first == 0 || last < first || last > trace.size()) throw ConfigError("window_mean: bad window");
  double s = 0;
  for (std::size_t i = first; i <= last; ++i) s += trace[i - 1].loss;
  return s / static_cast<double>(last - first + 1);
}

void write_trace_csv(const std::vector<TraceRow>& trace, std::ostream& os) {
  os << "step,lr,loss,eval_psnr,eval_ssim\n";
  const auto prec = os.precision(10);
  for (const auto& r : trace) {
    os << r.step << ',' << r.lr << ',' << r.loss << ',';
    if (r.has_eval) os << r.eval_psnr << ',' << r.eval_ssim;
    else os << ',';
    os << '\n';
  }
  os.precision(prec);
}

template LossResult<float> l1_loss(const Tensor<float>&, const Tensor<float>&);
template LossResult<double> l1_loss(const Tensor<double>&, const Tensor<double>&);
template void adam_step(ModuleParams<float>&, const ModuleParams<float>&, OptimState<float>&);
template void adam_step(ModuleParams<double>&, const ModuleParams<double>&, OptimState<double>&);
template Tensor<float> degrade(const Tensor<float>&, const Degradation&);
template Tensor<double> degrade(const Tensor<double>&, const Degradation&);

} // namespace d2net::train
