#pragma once

// Conversions between H x W x C grids and N x C x H x W torch tensors.

#include <torch/torch.h>

#include <vector>

#include "grainfuse/grid.hpp"

namespace grainfuse {

torch::Tensor to_tensor(const Field& f);  // 1 x C x H x W
torch::Tensor to_tensor(const std::vector<Field>& fs);
Field to_field(const torch::Tensor& t);  // C x H x W or 1 x C x H x W
std::vector<Field> to_fields(const torch::Tensor& t);

}  // namespace grainfuse
