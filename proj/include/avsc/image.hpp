#pragma once

#include "avsc/nn/tensor.hpp"

namespace avsc {

/// RGB image with values in [0, 1]; pixels are (y * width + x) x 3.
struct RgbImage {
  int height = 0;
  int width = 0;
  nn::Matrix pixels;

  bool in_range() const {
    return pixels.size() > 0 && pixels.minCoeff() >= 0.0 && pixels.maxCoeff() <= 1.0;
  }
};

}  // namespace avsc
