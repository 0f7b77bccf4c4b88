#include "ovocc/tensor.hpp"

#include <sstream>

#include "ovocc/error.hpp"

namespace ovocc {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kNonFiniteInput: return "NonFiniteInput";
    case ErrorCode::kEmptyMask: return "EmptyMask";
    case ErrorCode::kEmptyCoverage: return "EmptyCoverage";
    case ErrorCode::kEmptyVisibleSet: return "EmptyVisibleSet";
    case ErrorCode::kNoValidVoxels: return "NoValidVoxels";
    case ErrorCode::kChannelsNotDivisible: return "ChannelsNotDivisible";
    case ErrorCode::kMissingForwardState: return "MissingForwardState";
    case ErrorCode::kUnknownClassName: return "UnknownClassName";
    case ErrorCode::kUnknownClass: return "UnknownClass";
    case ErrorCode::kEmptyCandidateSet: return "EmptyCandidateSet";
    case ErrorCode::kNoRelevantPoints: return "NoRelevantPoints";
    case ErrorCode::kBoxOutOfRange: return "BoxOutOfRange";
    case ErrorCode::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kFormat: return "Format";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kConfig: return "Config";
  }
  return "Unknown";
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != numel(shape_)) {
    throw Error(ErrorCode::kShapeMismatch,
                "data size " + std::to_string(data_.size()) +
                    " does not match shape " + shape_str(shape_));
  }
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "index rank mismatch");
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "index " + std::to_string(i) + " on axis " +
                      std::to_string(axis) + " of " + shape_str(shape_));
    }
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "item() on tensor of shape " + shape_str(shape_));
  }
  return data_[0];
}

}  // namespace ovocc
