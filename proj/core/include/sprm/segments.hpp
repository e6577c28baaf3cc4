#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace sprm {

/// Row layout of a sampled sequence: `count` independent segments of
/// `length` rows each, stored back to back, with a validity flag per row.
/// Sequence ops (conv, scan, attention, instance norm) never cross segment
/// boundaries and treat invalid rows as absent.
struct Segments {
  std::size_t count = 1;
  std::size_t length = 0;
  std::vector<std::uint8_t> valid;  // empty means every row is valid

  static Segments whole(std::size_t rows) { return Segments{1, rows, {}}; }

  std::size_t rows() const { return count * length; }
  bool is_valid(std::size_t row) const { return valid.empty() || valid[row] != 0; }
  std::size_t valid_rows() const {
    if (valid.empty()) return rows();
    std::size_t n = 0;
    for (auto v : valid) n += v != 0;
    return n;
  }
};

}  // namespace sprm
