// SPDX-License-Identifier: Apache-2.0
#include "diffquant/dataset.hpp"

#include <cmath>
#include <stdexcept>

namespace diffquant {

GaussianMixture::GaussianMixture(const MixtureConfig& cfg) : cfg_(cfg) {
  if (cfg.num_modes < 1)
    throw std::invalid_argument("GaussianMixture: need at least one mode");
  if (!(cfg.mode_std > 0.0))
    throw std::invalid_argument("GaussianMixture: mode_std must be positive");
  centers_.reserve(static_cast<std::size_t>(cfg.num_modes));
  for (int k = 0; k < cfg.num_modes; ++k) {
    const double ang = cfg.phase + 2.0 * M_PI * static_cast<double>(k) /
                                       static_cast<double>(cfg.num_modes);
    centers_.push_back(
        Tensor::of({cfg.radius * std::cos(ang), cfg.radius * std::sin(ang)}));
  }
}

const Tensor& GaussianMixture::center(int label) const {
  if (label < 0 || label >= cfg_.num_modes)
    throw std::invalid_argument("GaussianMixture: label out of range");
  return centers_[static_cast<std::size_t>(label)];
}

LabeledSample GaussianMixture::draw(Rng& rng) const {
  const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg_.num_modes)));
  return draw_for_label(label, rng);
}

LabeledSample GaussianMixture::draw_for_label(int label, Rng& rng) const {
  const Tensor& c = center(label);
  Tensor x({2});
  x[0] = c[0] + cfg_.mode_std * rng.normal();
  x[1] = c[1] + cfg_.mode_std * rng.normal();
  return {std::move(x), label};
}

} // namespace diffquant
