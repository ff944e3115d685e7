// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "d2net/network.hpp"
#include "d2net/params.hpp"
#include "d2net/tensor.hpp"

namespace d2net::train {

template <Scalar T>
struct LossResult {
  double value = 0;
  Tensor<T> grad; ///< d value / d pred
};

/// Mean absolute error; the subgradient at pred == target is 0.
template <Scalar T>
LossResult<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double base_lr = 2e-4;
  std::size_t total_steps = 2000;
};

/// base * 0.5 * (1 + cos(pi * t / total)), clamped to [0, base] for t > total.
double cosine_lr(double base, std::size_t t, std::size_t total);

template <Scalar T>
struct OptimState {
  AdamConfig config;
  ModuleParams<T> m;
  ModuleParams<T> v;
  std::size_t t = 0;

  static OptimState fresh(const ModuleParams<T>& params, const AdamConfig& config) {
    return OptimState{config, params.zeros_like(), params.zeros_like(), 0};
  }
  double lr() const { return cosine_lr(config.base_lr, t, config.total_steps); }
};

/// Advances t, then applies the bias-corrected Adam update with lr(t).
/// Throws NumericError before touching anything if a gradient is not finite.
template <Scalar T>
void adam_step(ModuleParams<T>& params, const ModuleParams<T>& grads, OptimState<T>& state);

// ---------------------------------------------------------------------------
// Synthetic degradations

enum class Task { lowlight, haze, blur };

const char* task_name(Task task);
Task parse_task(const std::string& name);

struct Range {
  double lo = 0;
  double hi = 0;
  double sample(std::mt19937_64& rng) const;
};

/// Parameter ranges of one corruption family. Each sample draws fresh
/// values from the ranges; degenerate ranges pin a value.
struct DegradationSpec {
  Task kind = Task::lowlight;
  Range gamma{2.0, 5.0};
  Range scale{0.1, 0.5};
  Range noise_sigma{0.0, 0.02};
  Range transmission{0.3, 0.9};
  Range airlight{0.7, 1.0};
  std::size_t blur_min = 3;
  std::size_t blur_max = 9;
  std::uint64_t seed = 0;

  static DegradationSpec for_task(Task kind, std::uint64_t seed = 0);
};

/// One concrete draw from a DegradationSpec.
struct Degradation {
  Task kind = Task::lowlight;
  double gamma = 1, scale = 1, noise_sigma = 0;
  double transmission = 1, airlight = 1;
  /// Normalized blur kernel (odd square side), empty for other tasks.
  std::vector<double> kernel;
  std::size_t kernel_side = 0;
  std::uint64_t noise_seed = 0;
};

Degradation sample_degradation(const DegradationSpec& spec, std::mt19937_64& rng);

/// Applies a degradation to a (N, 3, H, W) image in [0, 1]; output clamped
/// to [0, 1]. Blur uses mirrored boundaries.
template <Scalar T>
Tensor<T> degrade(const Tensor<T>& clean, const Degradation& d);

/// Deterministic procedural corpus: smooth color fields, rectangles, discs,
/// stripes and mild texture, each (1, 3, size, size) in [0, 1].
std::vector<Tensor<float>> synthetic_corpus(std::size_t count, std::size_t size, std::uint64_t seed);

struct Batch {
  Tensor<float> degraded;
  Tensor<float> clean;
};

/// Per sample: seeded source pick, random crop, independent horizontal and
/// vertical flips shared by both sides, then the degradation on the input
/// side only.
Batch make_batch(const std::vector<Tensor<float>>& images, const DegradationSpec& spec, std::size_t crop,
                 std::size_t batch, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Toy training

/// Small network used for desk-scale training runs.
NetworkConfig toy_network_config();

struct TrainConfig {
  NetworkConfig network = toy_network_config();
  /// The toy network is ~50x smaller than the default one and trains for
  /// 2000 steps, so it uses a larger peak rate than AdamConfig's default.
  AdamConfig adam{.base_lr = 1e-3};
  std::size_t iters = 2000;
  std::size_t crop = 64;
  std::size_t batch = 4;
  std::size_t eval_every = 250;
  std::size_t heldout_images = 8;
  std::size_t corpus_images = 24;
  std::size_t corpus_size = 96;
  std::uint64_t seed = 1;
};

struct TraceRow {
  std::size_t step = 0;
  double lr = 0;
  double loss = 0;
  bool has_eval = false;
  double eval_psnr = 0;
  double eval_ssim = 0;
};

struct Evaluation {
  double psnr_degraded = 0;
  double psnr_restored = 0;
  double ssim_degraded = 0;
  double ssim_restored = 0;
};

struct TrainResult {
  ModuleParams<float> params;
  std::vector<TraceRow> trace;
  Evaluation initial;
  Evaluation final;
  std::string checkpoint; ///< serialized parameters
};

/// Held-out pairs: one fixed degraded crop per image.
std::vector<Batch> heldout_set(const std::vector<Tensor<float>>& images, const DegradationSpec& spec,
                               std::size_t crop, std::uint64_t seed);

Evaluation evaluate(const D2Net& net, const ModuleParams<float>& params, const std::vector<Batch>& heldout);

/// Trains from scratch on `train_images`, evaluating on `heldout_images`.
/// Throws NumericError naming the step if the loss diverges.
TrainResult train(const TrainConfig& config, const DegradationSpec& task,
                  const std::vector<Tensor<float>>& train_images, const std::vector<Tensor<float>>& heldout_images,
                  std::ostream* log = nullptr);

/// Train on the synthetic corpus (split into training and held-out images).
TrainResult train_toy(const TrainConfig& config, const DegradationSpec& task, std::ostream* log = nullptr);

/// Mean loss over steps [first, last] (1-based, inclusive).
double window_mean(const std::vector<TraceRow>& trace, std::size_t first, std::size_t last);

/// CSV columns: step,lr,loss,eval_psnr,eval_ssim (eval fields empty between evaluations).
void write_trace_csv(const std::vector<TraceRow>& trace, std::ostream& os);

} // namespace d2net::train
