#include "bcsnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bcsnet/errors.hpp"

namespace bcsnet {

namespace {
std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d < 0) throw ValidationError("tensor dimension must be non-negative, got " + std::to_string(d));
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape)
    : shape_(std::move(shape)), numel_(shape_numel(shape_)) {
  data_.assign(static_cast<std::size_t>(numel_), 0.0);
}

Tensor::Tensor(std::vector<std::int64_t> shape, double fill)
    : shape_(std::move(shape)), numel_(shape_numel(shape_)) {
  data_.assign(static_cast<std::size_t>(numel_), fill);
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)), numel_(shape_numel(shape_)) {
  if (static_cast<std::int64_t>(data_.size()) != numel_) {
    throw ValidationError("tensor data size " + std::to_string(data_.size()) +
                          " does not match shape " + shape_str());
  }
}

Tensor Tensor::reshaped(std::vector<std::int64_t> shape) const {
  if (shape_numel(shape) != numel_) {
    throw ValidationError("cannot reshape " + shape_str() + " to " + shape_str(shape));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  out.numel_ = numel_;
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::min() const {
  double m = data_.empty() ? 0.0 : data_[0];
  for (double v : data_) m = std::min(m, v);
  return m;
}

double Tensor::max() const {
  double m = data_.empty() ? 0.0 : data_[0];
  for (double v : data_) m = std::max(m, v);
  return m;
}

std::string Tensor::shape_str(const std::vector<std::int64_t>& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::string Tensor::shape_str() const { return shape_str(shape_); }

}  // namespace bcsnet
