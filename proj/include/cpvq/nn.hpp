// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cpvq/rng.hpp"
#include "cpvq/tensor.hpp"

namespace cpvq {

/// Named learnable tensor, in the order a bundle stores it.
using NamedTensor = std::pair<std::string, Tensor>;

/// Fully connected layer y = x W + b with W, b ~ U(-1/sqrt(in), 1/sqrt(in)).
struct Linear {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  Tensor operator()(const Tensor& x) const { return affine(x, weight, bias); }
  Tensor relu(const Tensor& x) const { return affine_relu(x, weight, bias); }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named);

}  // namespace cpvq
