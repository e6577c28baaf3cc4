#include "sprm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include <fmt/format.h>

#include "sprm/error.hpp"

namespace sprm::metrics {

namespace {

void require_same_length(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size()) {
    throw DataError(fmt::format("prediction has {} frames, ground truth {}", pred.size(), gt.size()));
  }
}

double ratio(std::size_t num, std::size_t den) { return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den); }

char phase_char(int label) {
  if (label < 0) return '.';
  if (label < 10) return static_cast<char>('0' + label);
  if (label < 36) return static_cast<char>('A' + label - 10);
  return '?';
}

const char* palette(int label) {
  static const char* colours[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
                                  "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};
  return colours[static_cast<std::size_t>(label) % 10];
}

}  // namespace

double frame_accuracy(const std::vector<int>& pred, const std::vector<int>& gt) {
  require_same_length(pred, gt);
  if (gt.empty()) throw DataError("accuracy of an empty sequence is undefined");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) hit += pred[i] == gt[i];
  return ratio(hit, gt.size());
}

PhaseScores phase_prf_jaccard(const std::vector<int>& pred, const std::vector<int>& gt, std::size_t num_classes) {
  require_same_length(pred, gt);
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  const auto check = [num_classes](int label, const char* what) {
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw DataError(fmt::format("{} label {} outside [0, {})", what, label, num_classes));
    }
  };
  for (std::size_t i = 0; i < gt.size(); ++i) {
    check(gt[i], "ground-truth");
    check(pred[i], "predicted");
    const auto g = static_cast<std::size_t>(gt[i]);
    const auto p = static_cast<std::size_t>(pred[i]);
    if (g == p) {
      ++tp[g];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  PhaseScores out;
  out.precision.assign(num_classes, 0.0);
  out.recall.assign(num_classes, 0.0);
  out.jaccard.assign(num_classes, 0.0);
  out.included.assign(num_classes, false);
  std::size_t used = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (tp[c] + fp[c] + fn[c] == 0) continue;
    out.included[c] = true;
    out.precision[c] = ratio(tp[c], tp[c] + fp[c]);
    out.recall[c] = ratio(tp[c], tp[c] + fn[c]);
    out.jaccard[c] = ratio(tp[c], tp[c] + fp[c] + fn[c]);
    out.mean_precision += out.precision[c];
    out.mean_recall += out.recall[c];
    out.mean_jaccard += out.jaccard[c];
    ++used;
  }
  if (used > 0) {
    out.mean_precision /= static_cast<double>(used);
    out.mean_recall /= static_cast<double>(used);
    out.mean_jaccard /= static_cast<double>(used);
  }
  return out;
}

std::vector<int> relax_predictions(const std::vector<int>& pred, const std::vector<int>& gt, double fps,
                                   double window_seconds) {
  require_same_length(pred, gt);
  if (!(fps > 0.0)) throw UsageError("fps must be > 0");
  if (!(window_seconds >= 0.0)) throw UsageError("relaxed window must be >= 0 seconds");
  const auto w = static_cast<std::size_t>(std::llround(window_seconds * fps));
  std::vector<int> out = pred;
  // Ground-truth segments as [begin, end).
  std::vector<std::pair<std::size_t, std::size_t>> segs;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (i == 0 || gt[i] != gt[i - 1]) segs.emplace_back(i, i);
    segs.back().second = i + 1;
  }
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const auto [begin, end] = segs[s];
    const int phase = gt[begin];
    if (s > 0) {
      const int before = gt[segs[s - 1].first];
      for (std::size_t t = begin; t < std::min(end, begin + w); ++t) {
        if (pred[t] == before) out[t] = phase;
      }
    }
    if (s + 1 < segs.size()) {
      const int after = gt[segs[s + 1].first];
      for (std::size_t t = end > w ? std::max(begin, end - w) : begin; t < end; ++t) {
        if (pred[t] == after) out[t] = phase;
      }
    }
  }
  return out;
}

VideoMetrics evaluate(const std::vector<int>& pred, const std::vector<int>& gt, std::size_t num_classes,
                      Protocol protocol, double fps, double window_seconds) {
  VideoMetrics m;
  m.protocol = protocol;
  const std::vector<int> used = protocol == Protocol::relaxed ? relax_predictions(pred, gt, fps, window_seconds) : pred;
  m.accuracy = frame_accuracy(used, gt);
  m.phases = phase_prf_jaccard(used, gt, num_classes);
  return m;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

Aggregate aggregate(const std::vector<VideoMetrics>& reports) {
  if (reports.empty()) throw UsageError("cannot aggregate zero videos");
  std::vector<double> acc, p, r, j;
  for (const auto& m : reports) {
    acc.push_back(m.accuracy);
    p.push_back(m.phases.mean_precision);
    r.push_back(m.phases.mean_recall);
    j.push_back(m.phases.mean_jaccard);
  }
  return {reports.size(), summarize(acc), summarize(p), summarize(r), summarize(j)};
}

std::string format_report(const std::vector<VideoMetrics>& reports, const std::string& title) {
  std::string out = title + "\n";
  out += fmt::format("{:<20} {:>14} {:>14} {:>14} {:>14}\n", "video", "Accuracy", "Precision", "Recall", "Jaccard");
  for (const auto& m : reports) {
    out += fmt::format("{:<20} {:>14.2f} {:>14.2f} {:>14.2f} {:>14.2f}\n", m.video_id, m.accuracy,
                       m.phases.mean_precision, m.phases.mean_recall, m.phases.mean_jaccard);
  }
  if (!reports.empty()) {
    const auto a = aggregate(reports);
    const auto cell = [](const Summary& s) { return fmt::format("{:.2f}±{:.2f}", s.mean, s.std); };
    out += fmt::format("{:<20} {:>14} {:>14} {:>14} {:>14}\n", "mean±std", cell(a.accuracy), cell(a.precision),
                       cell(a.recall), cell(a.jaccard));
  }
  return out;
}

std::string report_csv(const Aggregate& agg) {
  std::string out = "metric,mean,std\n";
  const std::pair<const char*, Summary> rows[] = {
      {"accuracy", agg.accuracy}, {"precision", agg.precision}, {"recall", agg.recall}, {"jaccard", agg.jaccard}};
  for (const auto& [name, s] : rows) out += fmt::format("{},{:.4f},{:.4f}\n", name, s.mean, s.std);
  return out;
}

std::string ribbon_text(const std::vector<int>& labels, std::size_t width) {
  if (labels.empty() || width == 0) return {};
  const std::size_t buckets = std::min(width, labels.size());
  std::string out;
  out.reserve(buckets);
  for (std::size_t b = 0; b < buckets; ++b) {
    const std::size_t lo = b * labels.size() / buckets;
    const std::size_t hi = (b + 1) * labels.size() / buckets;
    std::vector<std::size_t> counts;
    for (std::size_t i = lo; i < hi; ++i) {
      const int l = labels[i];
      if (l < 0) continue;
      if (static_cast<std::size_t>(l) >= counts.size()) counts.resize(static_cast<std::size_t>(l) + 1, 0);
      ++counts[static_cast<std::size_t>(l)];
    }
    if (counts.empty()) {
      out += '.';
    } else {
      out += phase_char(static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin()));
    }
  }
  return out;
}

std::string ribbon_svg(const std::vector<std::pair<std::string, std::vector<int>>>& tracks, std::size_t num_classes) {
  constexpr double kWidth = 800.0, kRow = 24.0, kGap = 8.0, kLabel = 90.0;
  const double height = static_cast<double>(tracks.size()) * (kRow + kGap) + kGap + 20.0;
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"12\">\n",
      kLabel + kWidth + 10.0, height);
  for (std::size_t r = 0; r < tracks.size(); ++r) {
    const auto& [name, labels] = tracks[r];
    const double y = kGap + static_cast<double>(r) * (kRow + kGap);
    out += fmt::format("  <text x=\"4\" y=\"{}\">{}</text>\n", y + kRow * 0.7, name);
    const double scale = labels.empty() ? 0.0 : kWidth / static_cast<double>(labels.size());
    std::size_t i = 0;
    while (i < labels.size()) {
      std::size_t j = i;
      while (j < labels.size() && labels[j] == labels[i]) ++j;
      out += fmt::format("  <rect x=\"{:.2f}\" y=\"{}\" width=\"{:.2f}\" height=\"{}\" fill=\"{}\"/>\n",
                         kLabel + static_cast<double>(i) * scale, y, static_cast<double>(j - i) * scale, kRow,
                         labels[i] < 0 ? "#ffffff" : palette(labels[i]));
      i = j;
    }
  }
  const double ly = height - 8.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double x = kLabel + static_cast<double>(c) * 60.0;
    out += fmt::format("  <rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>", x, ly - 9.0,
                       palette(static_cast<int>(c)));
    out += fmt::format("<text x=\"{}\" y=\"{}\">P{}</text>\n", x + 14.0, ly, c);
  }
  out += "</svg>\n";
  return out;
}

}  // namespace sprm::metrics
