#include "lsseg/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace lsseg {

std::string to_string(const Shape4& s) {
    std::ostringstream os;
    os << "(" << s.n << "," << s.c << "," << s.h << "," << s.w << ")";
    return os.str();
}

template <class T>
Tensor<T>::Tensor(Shape4 shape, T fill) : shape_(shape), data_(shape.numel(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
        throw ShapeError("negative tensor dimension " + to_string(shape));
}

template <class T>
Tensor<T>::Tensor(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match dims " + to_string(shape_));
}

template <class T>
void Tensor<T>::fill(T v) {
    std::fill(data_.begin(), data_.end(), v);
}

ClassWeights::ClassWeights(std::vector<double> w) : w_(std::move(w)) {
    if (w_.empty()) throw ConfigError("class weights must not be empty");
    for (std::size_t i = 0; i < w_.size(); ++i)
        if (!(w_[i] > 0.0))
            throw ConfigError("class weight " + std::to_string(i) + " must be strictly positive");
}

ClassWeights ClassWeights::three_class() { return ClassWeights({0.2, 1.2, 2.2}); }
ClassWeights ClassWeights::two_class() { return ClassWeights({0.2, 1.2}); }

template class Tensor<float>;
template class Tensor<double>;

}  // namespace lsseg
