#include "sprm/sampling.hpp"

#include <algorithm>

#include "sprm/error.hpp"
#include "sprm/ops.hpp"

namespace sprm::sampling {

void SamplingConfig::validate() const {
  if (window < 1) throw ConfigError("window size W must be >= 1");
  if (stride < 1) throw ConfigError("long-range stride G must be >= 1");
}

namespace {

Layout make_layout(std::size_t frames, std::size_t count, std::size_t length,
                   std::ptrdiff_t (*frame_at)(std::size_t seg, std::size_t pos, std::size_t count,
                                              std::size_t length, std::size_t frames)) {
  Layout layout;
  layout.segments.count = count;
  layout.segments.length = length;
  layout.segments.valid.assign(count * length, 0);
  layout.source.assign(count * length, -1);
  layout.frame_to_row.assign(frames, -1);
  for (std::size_t s = 0; s < count; ++s) {
    for (std::size_t p = 0; p < length; ++p) {
      const std::size_t row = s * length + p;
      const std::ptrdiff_t f = frame_at(s, p, count, length, frames);
      if (f < 0) continue;
      layout.source[row] = f;
      layout.segments.valid[row] = 1;
      layout.frame_to_row[static_cast<std::size_t>(f)] = static_cast<std::ptrdiff_t>(row);
    }
  }
  return layout;
}

}  // namespace

Layout window_layout(std::size_t frames, std::size_t window) {
  if (frames < 1) throw DimensionError("window partition needs at least one frame");
  if (window < 1) throw ConfigError("window size W must be >= 1");
  const std::size_t count = (frames + window - 1) / window;
  return make_layout(frames, count, window,
                     [](std::size_t s, std::size_t p, std::size_t, std::size_t length,
                        std::size_t frames) -> std::ptrdiff_t {
                       const std::size_t f = s * length + p;
                       return f < frames ? static_cast<std::ptrdiff_t>(f) : -1;
                     });
}

Layout longrange_layout(std::size_t frames, std::size_t stride) {
  if (frames < 1) throw DimensionError("long-range sampling needs at least one frame");
  if (stride < 1) throw ConfigError("long-range stride G must be >= 1");
  const std::size_t length = (frames + stride - 1) / stride;
  return make_layout(frames, stride, length,
                     [](std::size_t s, std::size_t p, std::size_t count, std::size_t,
                        std::size_t frames) -> std::ptrdiff_t {
                       const std::size_t f = s + p * count;
                       return f < frames ? static_cast<std::ptrdiff_t>(f) : -1;
                     });
}

NdArray Sampled::segment(std::size_t i) const {
  if (i >= count()) throw DimensionError("segment index out of range");
  std::vector<std::ptrdiff_t> idx(length());
  for (std::size_t p = 0; p < length(); ++p) idx[p] = static_cast<std::ptrdiff_t>(i * length() + p);
  NoGradGuard guard;
  return gather_rows(rows, idx);
}

NdArray apply_layout(const NdArray& frames, const Layout& layout) {
  if (frames.rows() != layout.frame_to_row.size()) {
    throw DimensionError("layout built for " + std::to_string(layout.frame_to_row.size()) +
                         " frames, got " + shape_str(frames.shape()));
  }
  return gather_rows(frames, layout.source);
}

NdArray invert_layout(const NdArray& rows, const Layout& layout) {
  if (rows.rows() != layout.segments.rows()) {
    throw DimensionError("sampled array has " + std::to_string(rows.rows()) + " rows, layout expects " +
                         std::to_string(layout.segments.rows()));
  }
  return gather_rows(rows, layout.frame_to_row);
}

Sampled window_partition(const NdArray& frames, std::size_t window) {
  Layout layout = window_layout(frames.rows(), window);
  NdArray rows = apply_layout(frames, layout);
  return {std::move(rows), std::move(layout)};
}

NdArray window_merge(const Sampled& windows) { return invert_layout(windows.rows, windows.layout); }

Sampled longrange_reorder(const NdArray& frames, std::size_t stride) {
  Layout layout = longrange_layout(frames.rows(), stride);
  NdArray rows = apply_layout(frames, layout);
  return {std::move(rows), std::move(layout)};
}

NdArray longrange_inverse(const Sampled& subsequences) {
  return invert_layout(subsequences.rows, subsequences.layout);
}

}  // namespace sprm::sampling
