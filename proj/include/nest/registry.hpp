#pragma once

#include "nest/elastic_param.hpp"

#include <optional>
#include <string>
#include <vector>

namespace nest {

/// A named parameter. `bank` >= 0 marks a per-granularity parameter that is
/// active only at that granularity (batch-norm banks).
struct ParamEntry {
  std::string name;
  ElasticParam* param = nullptr;
  int bank = -1;

  std::optional<Extent> active_extent(int g) const {
    if (bank >= 0) {
      if (bank != g) return std::nullopt;
      return Extent{param->values.rows(), param->values.cols()};
    }
    return param->extent(g);
  }
};

/// Non-trainable persistent state (running statistics).
struct BufferEntry {
  std::string name;
  Eigen::VectorXd* values = nullptr;
  int bank = -1;
};

struct Registry {
  std::vector<ParamEntry> params;
  std::vector<BufferEntry> buffers;
};

}  // namespace nest
