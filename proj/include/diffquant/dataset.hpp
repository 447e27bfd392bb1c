// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "diffquant/rng.hpp"
#include "diffquant/tensor.hpp"

namespace diffquant {

/// Labeled 2-D Gaussian mixture: K modes on a circle. Class labels stand in
/// for prompts; the mode geometry makes condition matching measurable.
struct MixtureConfig {
  int num_modes = 4;
  double radius = 4.0;
  double mode_std = 0.3;
  double phase = 0.0; // angular offset of mode 0, radians
  std::uint64_t seed = 1;
};

struct LabeledSample {
  Tensor x;
  int label = 0;
};

class GaussianMixture {
public:
  explicit GaussianMixture(const MixtureConfig& cfg);

  const MixtureConfig& config() const noexcept { return cfg_; }
  int num_labels() const noexcept { return cfg_.num_modes; }

  const Tensor& center(int label) const;
  const std::vector<Tensor>& centers() const noexcept { return centers_; }

  /// Draws one sample with a uniformly random label.
  LabeledSample draw(Rng& rng) const;
  /// Draws one sample for a fixed label.
  LabeledSample draw_for_label(int label, Rng& rng) const;

private:
  MixtureConfig cfg_;
  std::vector<Tensor> centers_;
};

} // namespace diffquant
