#pragma once

#include <cstdint>
#include <vector>

namespace metalab::ispl {

/// Binary keep/discard decision per training sample of one task.
struct SelectionMask {
  std::vector<std::uint8_t> keep;  // v_i in {0, 1}
  double gamma_used = 0.0;
  std::vector<double> mean_losses;

  std::size_t size() const { return keep.size(); }
  std::size_t selected_count() const {
    std::size_t c = 0;
    for (auto k : keep) c += k ? 1 : 0;
    return c;
  }
  std::vector<double> as_weights() const { return {keep.begin(), keep.end()}; }
};

}  // namespace metalab::ispl
