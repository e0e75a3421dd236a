#pragma once

#include <vector>

#include "protofed/tensor.hpp"

namespace protofed {

/// One minibatch: per-modality inputs (already zero-filled where absent),
/// a [B, M] presence mask (1 = real data, 0 = zero-filled), and labels.
struct MultimodalBatch {
  std::vector<Tensor> inputs;
  Tensor presence;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t num_modalities() const noexcept { return inputs.size(); }
};

}  // namespace protofed
