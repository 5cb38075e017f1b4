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
#include "defxattn/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <vector>

#include "defxattn/attention.hpp"
#include "defxattn/checkpoint.hpp"
#include "defxattn/errors.hpp"
#include "defxattn/ops.hpp"
#include "defxattn/registration.hpp"
#include "defxattn/volume_io.hpp"

namespace defxattn {
namespace {

constexpr double kAdamEps = 1e-8;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FileHandle = std::unique_ptr<std::FILE, FileCloser>;

FileHandle open_csv(const std::string& path, const char* header) {
  FileHandle f(std::fopen(path.c_str(), "wb"));
  if (!f) {
    throw IoError("cannot open '" + path + "' for writing");
  }
  std::fprintf(f.get(), "%s\n", header);
  return f;
}

std::vector<int32_t> foreground_ids(int64_t n_labels) {
  std::vector<int32_t> ids;
  for (int64_t l = 1; l <= n_labels; ++l) ids.push_back(static_cast<int32_t>(l));
  return ids;
}

Tensor warp_channels(const Tensor& onehot, const DisplacementField& field) {
  std::vector<Tensor> parts;
  for (int64_t c = 0; c < onehot.shape()[0]; ++c) {
    parts.push_back(warp_trilinear(narrow(onehot, 0, c, 1), field));
  }
  return concat(parts, 0);
}

struct StepLosses {
  Tensor total, ncc, dice, reg;
};

StepLosses pair_losses(const RunConfig& config, const ModelParams& params,
                       const SynthPair& pair, const Tensor& onehot_moving,
                       const Tensor& onehot_fixed) {
  DisplacementField u =
      model_forward(pair.moving, pair.fixed, params, config.model);
  Tensor warped = warp_trilinear(pair.moving, u);
  StepLosses out;
  out.ncc = ncc_loss(warped, pair.fixed, config.ncc_window);
  out.dice = soft_dice_loss(warp_channels(onehot_moving, u), onehot_fixed);
  out.reg = diffusion_regularizer(u);
  out.total = add(add(scale(out.ncc, config.w_ncc), scale(out.dice, config.w_dice)),
                  scale(out.reg, config.w_reg));
  return out;
}

double validation_dice(const RunConfig& config, const ModelParams& params,
                       const SynthDataset& dataset,
                       const std::vector<int32_t>& ids) {
  double acc = 0.0;
  for (const SynthPair& pair : dataset.pairs) {
    DisplacementField u =
        model_forward(pair.moving, pair.fixed, params, config.model);
    LabelMap warped = warp_nearest(pair.labels_moving, u);
    acc += dice_metric(warped, pair.labels_fixed, ids).mean;
  }
  return acc / static_cast<double>(dataset.pairs.size());
}

void require_dataset_fit(const RunConfig& config, const SynthDataset& dataset) {
  if (dataset.pairs.empty()) {
    throw ConfigError("the dataset holds no pairs");
  }
  if (dataset.extents != config.model.image) {
    throw ConfigError(
        "dataset extents (" + std::to_string(dataset.extents[0]) + "," +
        std::to_string(dataset.extents[1]) + "," +
        std::to_string(dataset.extents[2]) + ") do not match the model image (" +
        std::to_string(config.model.image[0]) + "," +
        std::to_string(config.model.image[1]) + "," +
        std::to_string(config.model.image[2]) + ")");
  }
}

class Adam {
 public:
  Adam(double lr, double beta1, double beta2)
      : lr_(lr), beta1_(beta1), beta2_(beta2) {}

  void step(ParameterStore& store, int64_t iteration) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, tensor] : store.entries()) {
      auto& m = moment1_[name];
      auto& v = moment2_[name];
      if (m.empty()) {
        m.assign(tensor.data().size(), 0.0);
        v.assign(tensor.data().size(), 0.0);
      }
      const bool has_grad = tensor.has_grad();
      const auto grad = has_grad ? tensor.grad() : std::span<const double>{};
      auto values = tensor.mutable_data();
      for (size_t i = 0; i < values.size(); ++i) {
        const double g = has_grad ? grad[i] : 0.0;
        if (!std::isfinite(g)) {
          throw NumericError("gradient for '" + name +
                             "' is non-finite at iteration " +
                             std::to_string(iteration));
        }
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        values[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kAdamEps);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_;
  int64_t t_ = 0;
  std::map<std::string, std::vector<double>> moment1_, moment2_;
};

}  // namespace

TrainResult train_model(const RunConfig& config, const SynthDataset& dataset) {
  config.validate();
  require_dataset_fit(config, dataset);
  std::filesystem::create_directories(config.out_dir);

  Rng master(config.seed);
  Rng init = master.fork(0);
  ParameterStore store;
  ModelParams params = make_model_params(store, config.model, init);

  const std::vector<int32_t> ids = foreground_ids(dataset.n_labels);
  std::vector<Tensor> onehots_m, onehots_f;
  for (const SynthPair& pair : dataset.pairs) {
    onehots_m.push_back(one_hot(pair.labels_moving, ids));
    onehots_f.push_back(one_hot(pair.labels_fixed, ids));
  }

  FileHandle loss_csv = open_csv(config.out_dir + "/loss.csv",
                                 "iter,total,ncc,dice,reg");
  FileHandle val_csv = open_csv(config.out_dir + "/val.csv", "iter,val_dice");
  const std::string config_echo = serialize_run_config(config);
  const std::string best_path = config.out_dir + "/best.ckpt";
  const std::string last_path = config.out_dir + "/last.ckpt";

  // Row 0: the untrained baseline, averaged over every pair. The zero-init
  // displacement head makes this the unregistered state.
  {
    double total = 0.0, ncc = 0.0, dice = 0.0, reg = 0.0;
    for (size_t p = 0; p < dataset.pairs.size(); ++p) {
      StepLosses l = pair_losses(config, params, dataset.pairs[p], onehots_m[p],
                                 onehots_f[p]);
      total += l.total.data()[0];
      ncc += l.ncc.data()[0];
      dice += l.dice.data()[0];
      reg += l.reg.data()[0];
    }
    const auto n = static_cast<double>(dataset.pairs.size());
    std::fprintf(loss_csv.get(), "0,%.17g,%.17g,%.17g,%.17g\n", total / n,
                 ncc / n, dice / n, reg / n);
  }

  TrainResult result;
  result.baseline_val_dice = validation_dice(config, params, dataset, ids);
  result.best_val_dice = result.baseline_val_dice;
  result.final_val_dice = result.baseline_val_dice;
  result.best_checkpoint = best_path;
  result.last_checkpoint = last_path;
  std::fprintf(val_csv.get(), "0,%.17g\n", result.baseline_val_dice);
  save_checkpoint(best_path, store, config_echo);

  Adam optimizer(config.lr, config.beta1, config.beta2);
  for (int64_t iter = 1; iter <= config.iters; ++iter) {
    const size_t p = static_cast<size_t>((iter - 1) %
                                         static_cast<int64_t>(dataset.pairs.size()));
    Tape tape;
    double total_value;
    {
      Tape::Scope scope(tape);
      StepLosses l = pair_losses(config, params, dataset.pairs[p], onehots_m[p],
                                 onehots_f[p]);
      total_value = l.total.data()[0];
      if (!std::isfinite(total_value)) {
        const std::string node = tape.first_nonfinite_node();
        throw NumericError("loss is non-finite at iteration " +
                           std::to_string(iter) + "; first bad tensor: " +
                           (node.empty() ? "<loss>" : node));
      }
      std::fprintf(loss_csv.get(), "%lld,%.17g,%.17g,%.17g,%.17g\n",
                   static_cast<long long>(iter), total_value, l.ncc.data()[0],
                   l.dice.data()[0], l.reg.data()[0]);
      backward(l.total, tape);
    }
    optimizer.step(store, iter);
    store.zero_grad_all();

    if (iter % config.val_every == 0 || iter == config.iters) {
      const double val = validation_dice(config, params, dataset, ids);
      std::fprintf(val_csv.get(), "%lld,%.17g\n", static_cast<long long>(iter),
                   val);
      result.final_val_dice = val;
      if (val > result.best_val_dice) {
        result.best_val_dice = val;
        save_checkpoint(best_path, store, config_echo);
      }
    }
  }
  save_checkpoint(last_path, store, config_echo);
  return result;
}

EvalSummary evaluate_model(const RunConfig& config, const ModelParams& params,
                           const SynthDataset& dataset,
                           const std::string& out_dir) {
  require_dataset_fit(config, dataset);
  std::filesystem::create_directories(out_dir);
  EvalSummary summary;
  int64_t hd_pairs = 0;

  const std::vector<int32_t> ids = foreground_ids(dataset.n_labels);
  std::string header = "pair_id,dice_pre,dice_mean";
  for (int32_t id : ids) header += ",dice_label_" + std::to_string(id);
  header += ",hd95,sdlogj,pct_nonpositive,pct_ndv,field_rmse";
  FileHandle csv = open_csv(out_dir + "/metrics.csv", header.c_str());

  for (size_t p = 0; p < dataset.pairs.size(); ++p) {
    const SynthPair& pair = dataset.pairs[p];
    DisplacementField u =
        model_forward(pair.moving, pair.fixed, params, config.model);
    LabelMap warped_labels = warp_nearest(pair.labels_moving, u);
    const double dice_pre =
        dice_metric(pair.labels_moving, pair.labels_fixed, ids).mean;
    DiceResult dice_post = dice_metric(warped_labels, pair.labels_fixed, ids);

    // Mean symmetric surface distance over labels present in both maps.
    double hd_acc = 0.0;
    int64_t hd_n = 0;
    for (int32_t id : ids) {
      bool in_a = false, in_b = false;
      for (size_t t = 0; t < warped_labels.labels.size(); ++t) {
        in_a = in_a || warped_labels.labels[t] == id;
        in_b = in_b || pair.labels_fixed.labels[t] == id;
        if (in_a && in_b) break;
      }
      if (in_a && in_b) {
        hd_acc += hd95_metric(warped_labels, pair.labels_fixed, id);
        ++hd_n;
      }
    }
    const double hd95 = hd_n > 0 ? hd_acc / static_cast<double>(hd_n)
                                 : std::numeric_limits<double>::quiet_NaN();

    InvertibilityStats inv = invertibility_metrics(u);
    double se = 0.0;
    for (size_t i = 0; i < u.data.data().size(); ++i) {
      const double d = u.data.data()[i] - pair.gt.data.data()[i];
      se += d * d;
    }
    const double rmse =
        std::sqrt(se / static_cast<double>(u.data.data().size()));

    summary.mean_dice_pre += dice_pre;
    summary.mean_dice += dice_post.mean;
    if (!std::isnan(hd95)) {
      summary.mean_hd95 += hd95;
      ++hd_pairs;
    }
    summary.mean_sdlogj += inv.sdlogj;
    summary.mean_pct_nonpositive += inv.pct_nonpositive;
    summary.mean_pct_ndv += inv.pct_ndv;
    summary.mean_field_rmse += rmse;

    std::fprintf(csv.get(), "%lld,%.17g,%.17g", static_cast<long long>(p),
                 dice_pre, dice_post.mean);
    for (double d : dice_post.per_label) std::fprintf(csv.get(), ",%.17g", d);
    std::fprintf(csv.get(), ",%.17g,%.17g,%.17g,%.17g,%.17g\n", hd95,
                 inv.sdlogj, inv.pct_nonpositive, inv.pct_ndv, rmse);

    char base[32];
    std::snprintf(base, sizeof base, "pair%03lld", static_cast<long long>(p));
    Tensor warped = warp_trilinear(pair.moving, u);
    save_raw_volume(out_dir + "/" + base + ".warped", warped);
    std::vector<double> diff(warped.data().size());
    for (size_t i = 0; i < diff.size(); ++i) {
      diff[i] = std::abs(warped.data()[i] - pair.fixed.data()[i]);
    }
    save_raw_volume(out_dir + "/" + base + ".diff",
                    Tensor::create(warped.shape(), std::move(diff)));
  }

  // Deformable sampling grid of the first cross-attention block on pair 0.
  const SynthPair& first = dataset.pairs[0];
  TokenField a = patch_embed(first.moving, config.model, params);
  TokenField b = patch_embed(first.fixed, config.model, params);
  WindowLayout layout = make_layout(config.model.stage_grid(0),
                                    config.model.stage_windows[0], {0, 0, 0});
  Tensor coords;
  dw_mca_block(a, b, params.blocks_a[0][0], layout, CrossMode::kDeformable,
               &coords);
  dump_sampling_grid(coords, out_dir + "/sampling_grid_pair000.csv");

  const double n = static_cast<double>(dataset.pairs.size());
  summary.mean_dice_pre /= n;
  summary.mean_dice /= n;
  summary.mean_hd95 = hd_pairs > 0
                          ? summary.mean_hd95 / static_cast<double>(hd_pairs)
                          : std::numeric_limits<double>::quiet_NaN();
  summary.mean_sdlogj /= n;
  summary.mean_pct_nonpositive /= n;
  summary.mean_pct_ndv /= n;
  summary.mean_field_rmse /= n;
  return summary;
}

}  // namespace defxattn
