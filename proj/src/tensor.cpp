#include "gf/tensor.h"

#include <cmath>
#include <sstream>

namespace gf {

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << "x";
        os << shape_[i];
    }
    os << "]";
    return os.str();
}

void check_finite(const Tensor& t, const char* op) {
    for (float v : t.values()) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string(op) + ": non-finite value in output");
        }
    }
}

}  // namespace gf
