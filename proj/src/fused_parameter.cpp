#include "hfta/fused_parameter.h"

#include <algorithm>

#include "hfta/errors.h"

namespace hfta {

FusedParameter FusedParameter::serial(Tensor value, std::int64_t model_index) {
  FusedParameter p;
  p.per_model_extent = value.size(0);
  p.value = std::move(value);
  p.first_model = model_index;
  return p;
}

FusedParameter FusedParameter::concat(std::span<const Tensor> per_model, std::int64_t axis) {
  if (per_model.empty()) throw FusionError("cannot fuse zero parameters");
  const Shape& first = per_model[0].shape();
  if (axis < 0 || axis >= static_cast<std::int64_t>(first.size())) {
    throw DimensionError("fusion axis out of range for " + to_string(first));
  }
  for (const Tensor& t : per_model) {
    if (t.shape() != first) {
      throw InfusibleError("shape", "parameter shapes differ: " + to_string(first) + " vs " +
                                        to_string(t.shape()));
    }
  }
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::int64_t block = first[axis] * inner;
  const auto models = static_cast<std::int64_t>(per_model.size());

  Shape shape = first;
  shape[axis] *= models;
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  for (std::int64_t b = 0; b < models; ++b) {
    auto src = per_model[b].data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + o * block, block, data.begin() + (o * models + b) * block);
    }
  }
  FusedParameter p;
  p.value = Tensor(shape, std::move(data), true);
  p.model_count = models;
  p.fusion_axis = axis;
  p.per_model_extent = first[axis];
  return p;
}

FusedParameter FusedParameter::stack(std::span<const Tensor> per_model) {
  if (per_model.empty()) throw FusionError("cannot fuse zero parameters");
  std::vector<Tensor> lifted;
  for (const Tensor& t : per_model) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    lifted.emplace_back(s, std::vector<double>(t.data().begin(), t.data().end()));
  }
  return concat(lifted, 0);
}

Tensor FusedParameter::model_slice(std::int64_t b, const Shape& serial_shape) const {
  if (b < 0 || b >= model_count) throw RangeError("model slice out of range");
  const Shape& s = value.shape();
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < fusion_axis; ++d) outer *= s[d];
  for (std::size_t d = fusion_axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::int64_t block = per_model_extent * inner;
  Shape out_shape = s;
  out_shape[fusion_axis] = per_model_extent;
  std::vector<double> out(static_cast<std::size_t>(outer * block));
  auto src = value.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(src.begin() + (o * model_count + b) * block, block, out.begin() + o * block);
  }
  if (!serial_shape.empty()) {
    if (numel(serial_shape) != numel(out_shape)) {
      throw DimensionError("model slice " + to_string(out_shape) + " cannot become " +
                           to_string(serial_shape));
    }
    out_shape = serial_shape;
  }
  return Tensor(out_shape, std::move(out));
}

void FusedParameter::validate() const {
  if (!value.defined()) throw StateError("fused parameter has no value");
  if (model_count < 1 || per_model_extent < 1) throw StateError("fused parameter metadata invalid");
  if (value.size(fusion_axis) != model_count * per_model_extent) {
    throw StateError("fused parameter extent " + std::to_string(value.size(fusion_axis)) +
                     " != " + std::to_string(model_count) + " x " +
                     std::to_string(per_model_extent));
  }
}

}  // namespace hfta
