// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

// d2net: restore images, train toy models, certify gradients, benchmark
// attention memory and compute image metrics.
//
// Exit codes: 0 success, 1 check failure, 2 user-input error,
// 3 artifact or format error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "d2net/bench.hpp"
#include "d2net/config_file.hpp"
#include "d2net/gradcheck.hpp"
#include "d2net/image_io.hpp"
#include "d2net/metrics.hpp"
#include "d2net/network.hpp"
#include "d2net/spectral.hpp"
#include "d2net/training.hpp"

namespace {

using namespace d2net;

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUserError = 2;
constexpr int kArtifactError = 3;

struct Globals {
  std::uint64_t seed = 1;
  std::string precision = "single";
  std::string config_path;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

RunConfig resolve(const Globals& g, RunConfig base) {
  if (!g.config_path.empty()) base = load_run_config(g.config_path, base);
  return base;
}

void banner(const Globals& g, const std::string& command, const RunConfig& cfg,
            std::vector<std::pair<std::string, std::string>> extra = {}) {
  extra.insert(extra.begin(), {{"command", command}, {"seed", std::to_string(g.seed)}, {"precision", g.precision}});
  if (!g.config_path.empty()) extra.emplace_back("config", g.config_path);
  print_banner(std::cerr, cfg, extra);
}

// ---------------------------------------------------------------------------

struct RestoreArgs {
  std::string input, checkpoint, output;
};

template <Scalar T>
Tensor<T> run_restore(const D2Net& net, const ModuleParams<float>& params, const Tensor<T>& x,
                      std::size_t& peak) {
  const ModuleParams<T> p = params.template cast<T>();
  MemoryLedger ledger;
  Tensor<T> y;
  {
    LedgerScope scope(ledger);
    y = net.forward_full_resolution(p, x);
  }
  peak = ledger.peak();
  return y;
}

int cmd_restore(const Globals& g, const RestoreArgs& a) {
  const RunConfig cfg = resolve(g, {});
  banner(g, "restore", cfg, {{"input", a.input}, {"checkpoint", a.checkpoint}, {"output", a.output}});
  const Image8 image = read_ppm_file(a.input);
  const D2Net net(cfg.network);
  const ModuleParams<float> params = load_checkpoint_file(a.checkpoint, net.layout());
  std::size_t peak = 0;
  Image8 restored;
  if (g.precision == "double") {
    restored = from_tensor(run_restore(net, params, to_tensor<double>(image), peak));
  } else {
    restored = from_tensor(run_restore(net, params, to_tensor<float>(image), peak));
  }
  write_ppm_file(restored, a.output);
  std::cout << "restored " << image.width << "x" << image.height << " -> " << a.output << "\n";
  std::cout << "peak_activation_floats = " << peak << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string task = "lowlight";
  std::string data;
  std::size_t iters = 2000;
  bool iters_given = false;
  std::string out = "toy.d2nt";
  std::string trace;
};

std::vector<Tensor<float>> load_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw InputError("data directory '" + dir + "' does not exist");
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && (e.path().extension() == ".ppm" || e.path().extension() == ".pnm"))
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  std::vector<Tensor<float>> images;
  for (const auto& f : files) images.push_back(to_tensor<float>(read_ppm_file(f)));
  return images;
}

int cmd_train(const Globals& g, const TrainArgs& a) {
  RunConfig base;
  base.network = train::toy_network_config();
  RunConfig cfg = resolve(g, base);
  if (a.iters_given) cfg.training.iters = a.iters;
  if (g.precision != "single") throw InputError("train-toy runs in single precision only");
  const train::Task task = train::parse_task(a.task);
  const std::string trace_path = a.trace.empty() ? a.out + ".csv" : a.trace;
  banner(g, "train-toy", cfg,
         {{"task", a.task}, {"data", a.data.empty() ? "<synthetic>" : a.data}, {"out", a.out}, {"trace", trace_path}});

  train::TrainConfig tc = cfg.training;
  tc.network = cfg.network;
  tc.seed = g.seed;
  const auto spec = train::DegradationSpec::for_task(task, g.seed);
  train::TrainResult result;
  if (a.data.empty()) {
    result = train::train_toy(tc, spec, &std::cerr);
  } else {
    auto images = load_corpus(a.data);
    if (images.size() < 8)
      throw InputError("data directory '" + a.data + "' holds " + std::to_string(images.size()) +
                       " images; at least 8 are required");
    const std::size_t held = std::max<std::size_t>(1, images.size() / 4);
    std::vector<Tensor<float>> heldout(images.end() - static_cast<std::ptrdiff_t>(held), images.end());
    images.resize(images.size() - held);
    result = train::train(tc, spec, images, heldout, &std::cerr);
  }

  {
    std::ofstream ck(a.out, std::ios::binary);
    if (!ck) throw CheckpointError(CheckpointError::Kind::io, "cannot write checkpoint '" + a.out + "'");
    ck << result.checkpoint;
    if (!ck) throw CheckpointError(CheckpointError::Kind::io, "write failed for '" + a.out + "'");
  }
  {
    std::ofstream cf(a.out + ".config");
    print_banner(cf, cfg, {{"task", a.task}, {"seed", std::to_string(g.seed)}});
  }
  {
    std::ofstream tr(trace_path);
    if (!tr) throw InputError("cannot write trace '" + trace_path + "'");
    train::write_trace_csv(result.trace, tr);
  }
  std::cout << "heldout_psnr_degraded = " << fmt(result.final.psnr_degraded) << "\n";
  std::cout << "heldout_psnr_restored = " << fmt(result.final.psnr_restored) << "\n";
  std::cout << "heldout_psnr_gain = " << fmt(result.final.psnr_restored - result.final.psnr_degraded) << "\n";
  std::cout << "heldout_ssim_restored = " << fmt(result.final.ssim_restored) << "\n";
  std::cout << "checkpoint = " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct GradArgs {
  std::string scope = "blocks";
  bool corrupt = false;
};

int cmd_gradcheck(const Globals& g, const GradArgs& a) {
  const RunConfig cfg = resolve(g, {});
  banner(g, "gradcheck", cfg, {{"scope", a.scope}, {"check_precision", "double"}});
  gradcheck::Scope scope = gradcheck::Scope::blocks;
  if (a.scope == "ops") scope = gradcheck::Scope::ops;
  else if (a.scope == "network") scope = gradcheck::Scope::network;
  const auto reports = gradcheck::run_scope(scope, g.seed, a.corrupt ? 1.5 : 1.0);
  gradcheck::write_rows(std::cout, reports);
  const gradcheck::CheckReport* worst = nullptr;
  for (const auto& r : reports)
    if (!r.pass && (!worst || r.max_rel_err / r.tolerance > worst->max_rel_err / worst->tolerance)) worst = &r;
  if (worst) {
    std::cerr << "gradcheck FAILED: worst offender " << worst->name << " at " << worst->worst_coordinate
              << " (analytic " << worst->worst_analytic << ", numeric " << worst->worst_numeric << ", rel err "
              << worst->max_rel_err << " > " << worst->tolerance << ")\n";
    return kCheckFailed;
  }
  std::cerr << "gradcheck passed: " << reports.size() << " checks\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::vector<std::size_t> sizes{16, 32, 64, 128};
  std::vector<std::size_t> naive_sizes{8, 16, 32, 64};
  std::size_t channels = 4;
  std::string csv;
};

int cmd_bench(const Globals& g, const BenchArgs& a) {
  const RunConfig cfg = resolve(g, {});
  banner(g, "bench-attn", cfg, {{"channels", std::to_string(a.channels)}});
  for (std::size_t s : a.sizes)
    if (s == 0 || s % cfg.network.fem.freq_patch != 0)
      throw InputError("bench size " + std::to_string(s) + " must be a positive multiple of the frequency patch");
  const auto report = bench::memory_scaling_report(a.sizes, a.naive_sizes, {a.channels, g.seed});
  if (a.csv.empty()) {
    bench::write_csv(report, std::cout);
  } else {
    std::ofstream f(a.csv);
    if (!f) throw InputError("cannot write '" + a.csv + "'");
    bench::write_csv(report, f);
  }
  std::cout << "# fgfe exponent " << fmt(report.fgfe_exponent) << ", naive exponent " << fmt(report.naive_exponent);
  if (const double r = report.ratio_at(64); r > 0) std::cout << ", naive/fgfe peak at 64x64 " << fmt(r);
  std::cout << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct MetricsArgs {
  std::string ref, test;
};

int cmd_metrics(const Globals& g, const MetricsArgs& a) {
  const RunConfig cfg = resolve(g, {});
  banner(g, "metrics", cfg, {{"ref", a.ref}, {"test", a.test}});
  const Image8 ref = read_ppm_file(a.ref);
  const Image8 test = read_ppm_file(a.test);
  if (ref.width != test.width || ref.height != test.height)
    throw InputError("metrics: image sizes differ (" + std::to_string(ref.width) + "x" + std::to_string(ref.height) +
                     " vs " + std::to_string(test.width) + "x" + std::to_string(test.height) + ")");
  const auto r = to_tensor<double>(ref);
  const auto t = to_tensor<double>(test);
  const double p = metrics::psnr(r, t);
  char buf[64];
  if (metrics::is_identical(p)) {
    std::cout << "psnr = identical\n";
  } else {
    std::snprintf(buf, sizeof buf, "%.17g", p);
    std::cout << "psnr = " << buf << "\n";
  }
  std::snprintf(buf, sizeof buf, "%.17g", metrics::ssim(r, t));
  std::cout << "ssim = " << buf << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_selftest(const Globals& g) {
  const RunConfig cfg = resolve(g, {});
  banner(g, "selftest", cfg);
  bool ok = true;
  auto report = [&](const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS " : "FAIL ") << name << " " << detail << "\n";
    ok = ok && pass;
  };

  {
    std::mt19937_64 rng(g.seed);
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
      std::vector<double> x(64);
      for (double& v : x) v = static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5;
      const auto fast = spectral::dft2<double>(x, 8, 8);
      const auto direct = spectral::dft2_direct<double>(x, 8, 8);
      for (std::size_t i = 0; i < 64; ++i)
        worst = std::max({worst, std::abs(fast.re[i] - direct.re[i]), std::abs(fast.im[i] - direct.im[i])});
    }
    report("dft_vs_direct", worst < 1e-12, "max_abs_diff=" + fmt(worst));
  }
  {
    const auto reports = gradcheck::run_scope(gradcheck::Scope::ops, g.seed);
    bool pass = std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.pass; });
    report("gradcheck_ops", pass, std::to_string(reports.size()) + " ops");
  }
  {
    Image8 img{5, 3, {}};
    for (std::size_t i = 0; i < 45; ++i) img.rgb.push_back(static_cast<std::uint8_t>(i * 37 % 256));
    std::stringstream ss;
    write_ppm(img, ss);
    const std::string first = ss.str();
    std::stringstream again;
    write_ppm(read_ppm(ss), again);
    report("ppm_roundtrip", again.str() == first, std::to_string(first.size()) + " bytes");
  }
  {
    NetworkConfig nc = train::toy_network_config();
    const D2Net net(nc);
    const auto params = net.init_params<float>(g.seed);
    std::stringstream ss;
    save_checkpoint(params, ss);
    const std::string bytes = ss.str();
    std::stringstream in(bytes), again;
    save_checkpoint(load_checkpoint(in, net.layout()), again);
    report("checkpoint_roundtrip", again.str() == bytes, std::to_string(bytes.size()) + " bytes");
  }
  return ok ? kOk : kCheckFailed;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"D2Net reference implementation: restoration, toy training, gradient checks, memory benchmark"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stream")->capture_default_str();
  app.add_option("--precision", g.precision, "Scalar precision")
      ->check(CLI::IsMember({"single", "double"}))
      ->capture_default_str();
  app.add_option("--config", g.config_path, "key = value configuration file (flags override it)");

  RestoreArgs ra;
  auto* restore = app.add_subcommand("restore", "Restore a P6 image at full resolution");
  restore->add_option("--input", ra.input, "Input P6 image")->required();
  restore->add_option("--checkpoint", ra.checkpoint, "D2NT checkpoint")->required();
  restore->add_option("--output", ra.output, "Output P6 image")->required();

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train-toy", "Train a small model on a synthetic degradation");
  trainc->add_option("--task", ta.task, "Degradation")->check(CLI::IsMember({"lowlight", "haze", "blur"}))->capture_default_str();
  trainc->add_option("--data", ta.data, "Directory of clean P6 images (default: procedural corpus)");
  auto* iters_opt = trainc->add_option("--iters", ta.iters, "Training steps")->capture_default_str();
  trainc->add_option("--out", ta.out, "Checkpoint path")->capture_default_str();
  trainc->add_option("--trace", ta.trace, "CSV trace path (default: <out>.csv)");

  GradArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "Central finite-difference gradient certification");
  grad->add_option("--scope", ga.scope, "Which suite")->check(CLI::IsMember({"ops", "blocks", "network"}))->capture_default_str();
  grad->add_flag("--corrupt-backward", ga.corrupt, "Scale analytic gradients to test the harness")->group("");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench-attn", "Activation-memory scaling of FGFE vs naive attention");
  bench->add_option("--sizes", ba.sizes, "FGFE square sizes")->delimiter(',')->capture_default_str();
  bench->add_option("--naive-sizes", ba.naive_sizes, "Naive attention square sizes")->delimiter(',')->capture_default_str();
  bench->add_option("--channels", ba.channels, "Feature channels")->capture_default_str();
  bench->add_option("--csv", ba.csv, "Write the CSV here instead of standard output");

  MetricsArgs ma;
  auto* met = app.add_subcommand("metrics", "PSNR and SSIM of two P6 images");
  met->add_option("--ref", ma.ref, "Reference image")->required();
  met->add_option("--test", ma.test, "Test image")->required();

  auto* self = app.add_subcommand("selftest", "Quick internal consistency checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUserError;
  }
  ta.iters_given = iters_opt->count() > 0;

  try {
    if (*restore) return cmd_restore(g, ra);
    if (*trainc) return cmd_train(g, ta);
    if (*grad) return cmd_gradcheck(g, ga);
    if (*bench) return cmd_bench(g, ba);
    if (*met) return cmd_metrics(g, ma);
    if (*self) return cmd_selftest(g);
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kArtifactError;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kUserError;
}
