// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "diffquant/dataset.hpp"
#include "diffquant/schedule.hpp"
#include "diffquant/tensor.hpp"

namespace diffquant {

/// The six affine maps of the denoiser, in forward order. Activation
/// quantizers attach to the *input* of each map.
enum LayerId : int {
  kLayerInX = 0,   // noisy sample x_t            (dim = data_dim)
  kLayerInTime,    // sinusoidal time features    (dim = time_feat_dim)
  kLayerInCond,    // condition embedding         (dim = cond_emb_dim)
  kLayerHidden1,   // first residual block input  (dim = hidden_width)
  kLayerHidden2,   // second residual block input (dim = hidden_width)
  kLayerOut,       // output projection input     (dim = hidden_width)
};
inline constexpr int kNumQuantLayers = 6;

const char* layer_name(int layer);

/// Observes (and may rewrite in place) the input of each affine layer during
/// a forward pass. Used for activation fake-quantization and for recording
/// calibration data.
class LayerTap {
public:
  virtual ~LayerTap() = default;
  virtual void tap(int layer, int t, std::span<double> input) = 0;
};

struct DenoiserConfig {
  int data_dim = 2;
  int hidden_width = 64;
  int time_feat_dim = 16; // even
  int cond_emb_dim = 8;
  int num_labels = 4;
  std::uint64_t init_seed = 7;
};

/// Noise-prediction MLP: one input block feeding a hidden state of
/// `hidden_width` from x, sinusoidal time features and a learned label
/// embedding, two residual blocks, and a linear output head back to data
/// space. The output head is zero-initialized so the untrained model
/// predicts zero noise. Deterministic given (x, t, label, parameters).
class Denoiser {
public:
  explicit Denoiser(const DenoiserConfig& cfg);

  const DenoiserConfig& config() const noexcept { return cfg_; }

  /// Predicted noise for state x at timestep t under condition `label`.
  Tensor predict(const Tensor& x, int t, int label) const;

  /// Forward pass over an explicit parameter vector (same layout as
  /// parameters()), with an optional tap on every affine layer input.
  /// The fake-quantized twin runs through this entry point.
  Tensor forward_with(std::span<const double> params, const Tensor& x, int t,
                      int label, LayerTap* tap) const;

  std::span<const double> parameters() const noexcept { return theta_; }
  std::span<double> mutable_parameters() noexcept { return theta_; }
  std::size_t num_parameters() const noexcept { return theta_.size(); }

  /// Row-major weight matrix of one affine layer inside `params`.
  /// Shape is {out_rows(layer), in_cols(layer)}.
  std::span<const double> layer_weights(std::span<const double> params,
                                        int layer) const;
  std::span<double> layer_weights(std::span<double> params, int layer) const;
  int layer_in_dim(int layer) const;
  int layer_out_dim(int layer) const;

  /// Loss and parameter gradient of the noise-prediction objective on one
  /// batch: mean over the batch of |eps_hat - eps|^2 (sum over coordinates).
  double loss_and_gradient(std::span<const Tensor> x_t,
                           std::span<const int> t,
                           std::span<const int> labels,
                           std::span<const Tensor> eps,
                           std::span<double> grad) const;

  /// Sinusoidal features of the (integer) timestep.
  std::vector<double> time_features(int t) const;

  /// Multiply-accumulate count of one forward pass (affine maps only).
  double flops_per_forward() const;

private:
  struct Offsets {
    std::size_t w_x, w_t, w_c, b0;
    std::size_t w_h1, b_h1, w_h2, b_h2;
    std::size_t w_out, b_out;
    std::size_t emb;
    std::size_t total;
  };

  void init_parameters();

  DenoiserConfig cfg_;
  Offsets off_;
  std::vector<double> theta_;
};

struct TrainConfig {
  int steps = 4000;
  int batch_size = 128;
  double learning_rate = 3e-3;
  double rms_decay = 0.99; // momentum-free adaptive step (RMSProp)
  std::uint64_t seed = 5;
  int log_every = 50;
};

struct TrainLogRow {
  int step;
  double loss;         // raw batch loss
  double running_loss; // exponential moving average
  double best_running; // running minimum of the EMA (monotone non-increasing)
};

struct TrainResult {
  double initial_loss = 0.0;
  double final_running_loss = 0.0;
  std::vector<TrainLogRow> log;
};

/// Trains on the noise-prediction objective with uniformly sampled t and
/// Gaussian eps. Deterministic given config seeds. Throws TrainingFailure
/// with the step index if the loss becomes non-finite.
Denoiser train_denoiser(const GaussianMixture& data, const NoiseSchedule& sched,
                        const DenoiserConfig& model_cfg, const TrainConfig& cfg,
                        TrainResult* result = nullptr);

/// Text checkpoint: config, schedule parameters and all weights at 17
/// significant digits (exact double round-trip).
void save_checkpoint(const std::string& path, const Denoiser& model,
                     const NoiseSchedule& sched, double beta_start,
                     double beta_end, const std::string& config_hash);

struct Checkpoint {
  Denoiser model;
  NoiseSchedule schedule;
  double beta_start;
  double beta_end;
  std::string config_hash;
};
Checkpoint load_checkpoint(const std::string& path);

} // namespace diffquant
