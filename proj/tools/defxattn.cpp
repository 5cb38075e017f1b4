/* Copyright 2026 The DefXAttn Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
// Command-line driver. Subcommands:
//   synth      generate a synthetic pair dataset under <out>/dataset
//   train      train the registration model, artifacts under <out>/train
//   eval       evaluate a checkpoint, report under <out>/eval
//   bench      analytic multiply-count ledger (+ --instrument cross-check)
//   gradcheck  finite-difference audit of the differentiable pipeline
//   dump-grid  CSV of the deformable sampling positions of one block
//
// Every failure path prints a single line `error: <CODE>: <message>` on
// stderr and exits with status 1.
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "defxattn/attention.hpp"
#include "defxattn/checkpoint.hpp"
#include "defxattn/complexity.hpp"
#include "defxattn/config.hpp"
#include "defxattn/errors.hpp"
#include "defxattn/gradcheck.hpp"
#include "defxattn/network.hpp"
#include "defxattn/ops.hpp"
#include "defxattn/registration.hpp"
#include "defxattn/rng.hpp"
#include "defxattn/synth.hpp"
#include "defxattn/tensor.hpp"
#include "defxattn/trainer.hpp"
#include "defxattn/volume_io.hpp"

namespace {

using namespace defxattn;

// Options shared by every subcommand.
struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::string out;
};

void add_common_options(CLI::App* sub, CommonOpts* opts) {
  sub->add_option("--config", opts->config_path,
                  "Run-config file (flat key=value lines)")
      ->check(CLI::ExistingFile);
  sub->add_option("--set", opts->overrides,
                  "Config override key=value (repeatable, applied in order)");
  sub->add_option("--seed", opts->seed, "Override the run seed");
  sub->add_option("--out", opts->out, "Override the output directory");
}

RunConfig build_config(const CommonOpts& opts) {
  RunConfig config;
  if (!opts.config_path.empty()) config = load_run_config(opts.config_path);
  for (const std::string& assignment : opts.overrides) {
    apply_override(config, assignment);
  }
  if (opts.seed) config.seed = *opts.seed;
  if (!opts.out.empty()) config.out_dir = opts.out;
  config.validate();
  return config;
}

std::string dataset_dir(const RunConfig& config) {
  return config.out_dir + "/dataset";
}

// Loads the dataset under <out>/dataset if one exists; otherwise generates it
// from the config and saves it there so later subcommands reuse it.
SynthDataset load_or_make_dataset(const RunConfig& config) {
  const std::string dir = dataset_dir(config);
  if (std::filesystem::exists(dir + "/dataset.txt")) {
    return load_synth_dataset(dir);
  }
  SynthDataset dataset =
      make_synth_dataset(config.seed, config.pairs, config.model.image,
                         config.labels, config.max_warp, config.multimodal);
  save_synth_dataset(dataset, dir);
  return dataset;
}

int run_synth(const CommonOpts& opts) {
  RunConfig config = build_config(opts);
  SynthDataset dataset =
      make_synth_dataset(config.seed, config.pairs, config.model.image,
                         config.labels, config.max_warp, config.multimodal);
  const std::string dir = dataset_dir(config);
  save_synth_dataset(dataset, dir);
  std::printf("[synth] wrote %lld pairs (%lldx%lldx%lld, %lld labels) to %s\n",
              static_cast<long long>(dataset.pairs.size()),
              static_cast<long long>(dataset.extents[0]),
              static_cast<long long>(dataset.extents[1]),
              static_cast<long long>(dataset.extents[2]),
              static_cast<long long>(dataset.n_labels), dir.c_str());
  return 0;
}

int run_train(const CommonOpts& opts) {
  RunConfig config = build_config(opts);
  SynthDataset dataset = load_or_make_dataset(config);
  RunConfig train_config = config;
  train_config.out_dir = config.out_dir + "/train";
  TrainResult result = train_model(train_config, dataset);
  std::printf("[train] baseline val dice %.4f\n", result.baseline_val_dice);
  std::printf("[train] best val dice %.4f\n", result.best_val_dice);
  std::printf("[train] final val dice %.4f\n", result.final_val_dice);
  std::printf("[train] wrote %s/{loss.csv,val.csv,best.ckpt,last.ckpt}\n",
              train_config.out_dir.c_str());
  return 0;
}

int run_eval(const CommonOpts& opts, const std::string& checkpoint_arg) {
  RunConfig cli_config = build_config(opts);
  const std::string checkpoint = checkpoint_arg.empty()
                                     ? cli_config.out_dir + "/train/best.ckpt"
                                     : checkpoint_arg;

  // The checkpoint's embedded config is authoritative for the architecture
  // and dataset; the command line only chooses where the report goes.
  RunConfig config = parse_run_config(read_checkpoint_config(checkpoint));
  config.out_dir = cli_config.out_dir;

  ParameterStore store;
  Rng rng(config.seed);
  ModelParams params = make_model_params(store, config.model, rng);
  load_checkpoint(checkpoint, store);

  SynthDataset dataset = load_or_make_dataset(config);
  const std::string dir = config.out_dir + "/eval";
  EvalSummary summary = evaluate_model(config, params, dataset, dir);
  std::printf("[eval] checkpoint %s\n", checkpoint.c_str());
  std::printf("[eval] mean dice %.4f (unregistered %.4f)\n", summary.mean_dice,
              summary.mean_dice_pre);
  std::printf("[eval] mean hd95 %.4f\n", summary.mean_hd95);
  std::printf(
      "[eval] mean sdlogj %.4f, pct_nonpositive %.4f%%, pct_ndv %.4f%%\n",
      summary.mean_sdlogj, summary.mean_pct_nonpositive, summary.mean_pct_ndv);
  std::printf("[eval] mean field rmse %.4f\n", summary.mean_field_rmse);
  std::printf("[eval] wrote %s/metrics.csv\n", dir.c_str());
  return 0;
}

// Runs each attention mechanism once on a small grid and checks the runtime
// multiply counters against the analytic grid-level numbers.
void run_instrument(uint64_t seed) {
  ComplexityConfig cfg;
  cfg.window = {2, 2, 2};
  cfg.expand = {3, 3, 3};
  cfg.channels = 8;
  cfg.n_heads = 2;
  cfg.offset_kernel = 3;
  cfg.grid = {4, 4, 4};
  cfg.validate();

  Rng rng(seed);
  ParameterStore store;
  AttentionParams params = make_attention_params(
      store, "bench", cfg.channels, cfg.n_heads, cfg.offset_kernel, rng);
  auto random_field = [&rng, &cfg]() {
    std::vector<double> values(static_cast<size_t>(
        cfg.grid[0] * cfg.grid[1] * cfg.grid[2] * cfg.channels));
    for (double& v : values) v = rng.gauss();
    return TokenField(Tensor::create(
        {cfg.grid[0], cfg.grid[1], cfg.grid[2], cfg.channels}, values));
  };
  TokenField base = random_field();
  TokenField reference = random_field();
  WindowLayout layout = make_layout(cfg.grid, cfg.window, {0, 0, 0});

  bool all_match = true;
  for (Mechanism mech : {Mechanism::kFixedWindowSA, Mechanism::kExpandedWindowCA,
                         Mechanism::kDwMca}) {
    reset_multiply_counters();
    switch (mech) {
      case Mechanism::kFixedWindowSA:
        windowed_sa_block(base, params, layout);
        break;
      case Mechanism::kExpandedWindowCA:
        expanded_window_ca(base, reference, params, layout, cfg.expand[0],
                           cfg.expand[1], cfg.expand[2]);
        break;
      case Mechanism::kDwMca:
        dw_mca_block(base, reference, params, layout, CrossMode::kDeformable);
        break;
    }
    const MultiplyCounters& counters = multiply_counters();
    const uint64_t counted = counters.score_mults + counters.av_mults;
    const uint64_t analytic = grid_score_av(mech, cfg);
    const bool match = counted == analytic;
    all_match = all_match && match;
    std::printf("[instrument] %s: analytic=%" PRIu64 " counted=%" PRIu64
                " %s\n",
                mechanism_name(mech), analytic, counted,
                match ? "match" : "MISMATCH");
  }
  if (!all_match) {
    throw NumericError(
        "runtime multiply counters disagree with the analytic ledger");
  }
}

int run_bench(const CommonOpts& opts, bool instrument) {
  RunConfig config = build_config(opts);

  ComplexityConfig reference;  // full-scale stage-one layer
  reference.window = {5, 6, 7};
  reference.expand = {3, 3, 3};
  reference.channels = 96;
  reference.n_heads = 4;
  reference.offset_kernel = 5;

  ComplexityConfig mid;
  mid.window = {4, 4, 4};
  mid.expand = {3, 3, 3};
  mid.channels = 48;
  mid.n_heads = 4;
  mid.offset_kernel = 5;

  ComplexityConfig desk;  // the 16^3 test architecture's stage-one layer
  desk.window = {2, 2, 2};
  desk.expand = {3, 3, 3};
  desk.channels = 8;
  desk.n_heads = 2;
  desk.offset_kernel = 3;

  const std::vector<ComplexityConfig> configs{reference, mid, desk};
  for (const ComplexityConfig& c : configs) c.validate();

  const std::string dir = config.out_dir + "/bench";
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/complexity.csv";
  const std::string csv = complexity_report_csv(configs);
  {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) throw IoError("cannot open " + path + " for writing");
    const size_t wrote = std::fwrite(csv.data(), 1, csv.size(), f);
    std::fclose(f);
    if (wrote != csv.size()) throw IoError("short write to " + path);
  }

  const FlopReport fixed =
      attention_flops(Mechanism::kFixedWindowSA, reference);
  const FlopReport expanded =
      attention_flops(Mechanism::kExpandedWindowCA, reference);
  const FlopReport deformable = attention_flops(Mechanism::kDwMca, reference);
  std::printf("[bench] window 5x6x7, 96 channels, 4 heads, kernel 5:\n");
  std::printf("[bench]   expanded/fixed score+AV ratio: %.3f (%" PRIu64
              " / %" PRIu64 ")\n",
              static_cast<double>(expanded.score_av()) /
                  static_cast<double>(fixed.score_av()),
              expanded.score_av(), fixed.score_av());
  std::printf("[bench]   deformable/fixed leading-term ratio: %.3f\n",
              static_cast<double>(deformable.claim_total()) /
                  static_cast<double>(fixed.claim_total()));
  std::printf("[bench]   deformable/fixed all-components ratio: %.3f\n",
              static_cast<double>(deformable.total()) /
                  static_cast<double>(fixed.total()));
  std::printf("[bench] wrote %s\n", path.c_str());

  if (instrument) run_instrument(config.seed);
  return 0;
}

int run_gradcheck(const CommonOpts& opts) {
  RunConfig config = build_config(opts);
  const double tol = 1e-4;
  Rng rng(config.seed);
  GradcheckOptions gc;
  gc.entries_per_tensor = 6;

  auto random_values = [&rng](int64_t n, double scl) {
    std::vector<double> values(static_cast<size_t>(n));
    for (double& v : values) v = scl * rng.gauss();
    return values;
  };

  struct Row {
    std::string name;
    GradcheckReport report;
  };
  std::vector<Row> rows;

  {  // Trilinear warping: gradients with respect to image and field.
    Tensor image = Tensor::create({1, 5, 5, 5}, random_values(125, 1.0), true);
    Tensor field =
        Tensor::create({3, 5, 5, 5}, random_values(375, 0.35), true);
    auto f = [&image, &field]() {
      Tensor warped = warp_trilinear(image, {field});
      return sum(mul(warped, warped));
    };
    rows.push_back(
        {"warp", gradcheck(f, {{"image", image}, {"field", field}}, gc)});
  }

  {  // Window-normalized correlation loss on both inputs.
    Tensor a = Tensor::create({1, 6, 6, 6}, random_values(216, 1.0), true);
    Tensor b = Tensor::create({1, 6, 6, 6}, random_values(216, 1.0), true);
    auto f = [&a, &b]() { return ncc_loss(a, b, 3); };
    rows.push_back({"ncc", gradcheck(f, {{"warped", a}, {"fixed", b}}, gc)});
  }

  {  // One deformable cross-attention block with perturbed offsets.
    ParameterStore store;
    AttentionParams params = make_attention_params(store, "blk", 4, 2, 3, rng);
    {
      auto pw = params.offset_pw.mutable_data();
      for (double& v : pw) v = 0.1 * rng.gauss();
      auto pb = params.offset_pw_bias.mutable_data();
      for (double& v : pb) v = 0.2 * rng.gauss();
    }
    TokenField xb(Tensor::create({2, 2, 2, 4}, random_values(32, 1.0)));
    TokenField xr(Tensor::create({2, 2, 2, 4}, random_values(32, 1.0)));
    WindowLayout layout = make_layout({2, 2, 2}, {2, 2, 2}, {0, 0, 0});
    auto f = [&]() {
      TokenField y =
          dw_mca_block(xb, xr, params, layout, CrossMode::kDeformable);
      return sum(mul(y.data, y.data));
    };
    GradcheckOptions block_gc = gc;
    block_gc.entries_per_tensor = 4;
    rows.push_back({"attention-block",
                    gradcheck(f,
                              {{"u_q", params.u_q},
                               {"offset_pw", params.offset_pw},
                               {"mlp_w1", params.mlp_w1}},
                              block_gc)});
  }

  std::vector<std::string> failures;
  for (const Row& row : rows) {
    const bool ok = row.report.passes(tol);
    std::printf("[gradcheck] %s: worst rel err %.3e in %s (tol %.0e) %s\n",
                row.name.c_str(), row.report.worst.rel_err,
                row.report.worst.tensor.c_str(), tol, ok ? "pass" : "FAIL");
    if (!ok) failures.push_back(row.name);
  }
  if (!failures.empty()) {
    std::string msg = "gradient check failed for:";
    for (const std::string& name : failures) msg += " " + name;
    throw NumericError(msg);
  }
  std::printf("[gradcheck] all %lld groups passed\n",
              static_cast<long long>(rows.size()));
  return 0;
}

int run_dump_grid(const CommonOpts& opts, const std::string& checkpoint) {
  RunConfig config;
  ParameterStore store;
  std::optional<ModelParams> params;
  if (!checkpoint.empty()) {
    config = parse_run_config(read_checkpoint_config(checkpoint));
    if (opts.seed) config.seed = *opts.seed;
    if (!opts.out.empty()) config.out_dir = opts.out;
    Rng rng(config.seed);
    params = make_model_params(store, config.model, rng);
    load_checkpoint(checkpoint, store);
  } else {
    config = build_config(opts);
    Rng rng(config.seed);
    params = make_model_params(store, config.model, rng);
  }

  Rng master(config.seed);
  Rng pair_rng = master.fork(0);
  SynthPair pair = make_synth_pair(pair_rng, config.model.image, config.labels,
                                   config.max_warp, config.multimodal);
  TokenField base = patch_embed(pair.moving, config.model, *params);
  TokenField reference = patch_embed(pair.fixed, config.model, *params);
  WindowLayout layout = make_layout(config.model.stage_grid(0),
                                    config.model.stage_windows[0], {0, 0, 0});
  Tensor coords;
  dw_mca_block(base, reference, params->blocks_a[0][0], layout,
               CrossMode::kDeformable, &coords);

  std::filesystem::create_directories(config.out_dir);
  const std::string path = config.out_dir + "/sampling_grid.csv";
  dump_sampling_grid(coords, path);
  std::printf("[dump-grid] wrote %s (%lld sampling points, %s parameters)\n",
              path.c_str(), static_cast<long long>(coords.numel() / 3),
              checkpoint.empty() ? "fresh" : "checkpoint");
  return 0;
}

std::string single_line(std::string text) {
  for (char& c : text) {
    if (c == '\n') c = ';';
  }
  return text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable cross-attention registration toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;
  int result = 0;

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_common_options(synth, &opts);
  synth->callback([&]() { result = run_synth(opts); });

  CLI::App* train = app.add_subcommand("train", "Train the registration model");
  add_common_options(train, &opts);
  train->callback([&]() { result = run_train(opts); });

  std::string eval_checkpoint;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common_options(eval, &opts);
  eval->add_option("checkpoint", eval_checkpoint,
                   "Checkpoint path (default <out>/train/best.ckpt)");
  eval->callback([&]() { result = run_eval(opts, eval_checkpoint); });

  bool instrument = false;
  CLI::App* bench =
      app.add_subcommand("bench", "Analytic multiply-count ledger");
  add_common_options(bench, &opts);
  bench->add_flag("--instrument", instrument,
                  "Cross-check runtime multiply counters");
  bench->callback([&]() { result = run_bench(opts, instrument); });

  CLI::App* gradcheckcmd =
      app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  add_common_options(gradcheckcmd, &opts);
  gradcheckcmd->callback([&]() { result = run_gradcheck(opts); });

  std::string grid_checkpoint;
  CLI::App* dump_grid = app.add_subcommand(
      "dump-grid", "Write one block's deformable sampling positions");
  add_common_options(dump_grid, &opts);
  dump_grid->add_option("--ckpt", grid_checkpoint,
                        "Load parameters from this checkpoint")
      ->check(CLI::ExistingFile);
  dump_grid->callback([&]() { result = run_dump_grid(opts, grid_checkpoint); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::fprintf(stderr, "error: CONFIG_ERROR: %s\n",
                 single_line(e.what()).c_str());
    return 1;
  } catch (const defxattn::Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.code().c_str(),
                 single_line(e.what()).c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: INTERNAL_ERROR: %s\n",
                 single_line(e.what()).c_str());
    return 1;
  }
  return result;
}
