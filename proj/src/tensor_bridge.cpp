#include "grainfuse/tensor_bridge.hpp"

#include "grainfuse/errors.hpp"

namespace grainfuse {

torch::Tensor to_tensor(const Field& f) {
  return torch::from_blob(const_cast<float*>(f.data.data()), {1, f.height, f.width, f.channels}, torch::kFloat32)
      .permute({0, 3, 1, 2})
      .contiguous();
}

torch::Tensor to_tensor(const std::vector<Field>& fs) {
  if (fs.empty()) throw ConfigError("cannot stack an empty field list");
  std::vector<torch::Tensor> parts;
  parts.reserve(fs.size());
  for (const auto& f : fs) {
    if (!f.same_shape(fs.front())) throw ConfigError("cannot stack fields of different shapes");
    parts.push_back(to_tensor(f));
  }
  return torch::cat(parts, 0);
}

Field to_field(const torch::Tensor& t) {
  auto x = t.dim() == 4 ? t.squeeze(0) : t;
  if (x.dim() != 3) throw ConfigError("expected a C x H x W tensor");
  x = x.to(torch::kFloat32).permute({1, 2, 0}).contiguous();
  Field f(static_cast<int>(x.size(0)), static_cast<int>(x.size(1)), static_cast<int>(x.size(2)));
  std::copy(x.data_ptr<float>(), x.data_ptr<float>() + x.numel(), f.data.begin());
  return f;
}

std::vector<Field> to_fields(const torch::Tensor& t) {
  std::vector<Field> out;
  for (std::int64_t i = 0; i < t.size(0); ++i) out.push_back(to_field(t[i]));
  return out;
}

}  // namespace grainfuse
