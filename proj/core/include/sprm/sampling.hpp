#pragma once

#include <cstddef>
#include <vector>

#include "sprm/segments.hpp"
#include "sprm/tensor.hpp"

namespace sprm::sampling {

struct SamplingConfig {
  std::size_t window = 64;  // W
  std::size_t stride = 64;  // G
  void validate() const;
};

/// Row permutation from an L-frame sequence into a segmented layout.
/// `source[row]` is the frame stored at that row (-1 for a pad row) and
/// `frame_to_row[frame]` is its inverse.
struct Layout {
  Segments segments;
  std::vector<std::ptrdiff_t> source;
  std::vector<std::ptrdiff_t> frame_to_row;
};

/// ceil(L/W) consecutive windows of W frames; the last one is padded.
Layout window_layout(std::size_t frames, std::size_t window);
/// G subsequences; subsequence g holds frames g, g+G, g+2G, ... padded to ceil(L/G).
Layout longrange_layout(std::size_t frames, std::size_t stride);

/// A sequence rearranged into a layout. Pad rows hold zeros.
struct Sampled {
  NdArray rows;
  Layout layout;

  std::size_t count() const { return layout.segments.count; }
  std::size_t length() const { return layout.segments.length; }
  /// Copy of segment i as a [length x C] array.
  NdArray segment(std::size_t i) const;
};

/// Applies a layout to F [L x C]; differentiable.
NdArray apply_layout(const NdArray& frames, const Layout& layout);
/// Inverse of apply_layout: picks every frame's row back out, dropping pads.
NdArray invert_layout(const NdArray& rows, const Layout& layout);

Sampled window_partition(const NdArray& frames, std::size_t window);
NdArray window_merge(const Sampled& windows);
Sampled longrange_reorder(const NdArray& frames, std::size_t stride);
NdArray longrange_inverse(const Sampled& subsequences);

}  // namespace sprm::sampling
