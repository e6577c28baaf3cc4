#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace sprm::metrics {

enum class Protocol { standard, relaxed };

/// Percent of frames where pred == gt. Throws DataError on length mismatch.
double frame_accuracy(const std::vector<int>& pred, const std::vector<int>& gt);

/// Per-phase precision, recall and Jaccard in percent. A phase absent from
/// both streams is excluded (included[c] == false, values 0); an undefined
/// ratio for an included phase counts as 0.
struct PhaseScores {
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> jaccard;
  std::vector<bool> included;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  double mean_jaccard = 0.0;
};

/// Throws DataError on length mismatch or labels outside [0, num_classes).
PhaseScores phase_prf_jaccard(const std::vector<int>& pred, const std::vector<int>& gt, std::size_t num_classes);

/// Boundary-tolerant copy of `pred`. Within `window_seconds * fps` frames
/// after the start of each ground-truth segment a prediction of the previous
/// segment's phase is accepted, and within the same number of frames before
/// its end a prediction of the next segment's phase is accepted; accepted
/// frames are rewritten to the ground-truth label.
std::vector<int> relax_predictions(const std::vector<int>& pred, const std::vector<int>& gt, double fps,
                                   double window_seconds = 10.0);

struct VideoMetrics {
  std::string video_id;
  Protocol protocol = Protocol::standard;
  double accuracy = 0.0;
  PhaseScores phases;
};

VideoMetrics evaluate(const std::vector<int>& pred, const std::vector<int>& gt, std::size_t num_classes,
                      Protocol protocol = Protocol::standard, double fps = 1.0, double window_seconds = 10.0);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population
};

Summary summarize(const std::vector<double>& values);

struct Aggregate {
  std::size_t videos = 0;
  Summary accuracy, precision, recall, jaccard;
};

/// Mean and population standard deviation of the phase-averaged values over
/// videos. Throws UsageError when `reports` is empty.
Aggregate aggregate(const std::vector<VideoMetrics>& reports);

/// Aligned plain-text table: one line per video plus the mean ± std line.
std::string format_report(const std::vector<VideoMetrics>& reports, const std::string& title);
/// "metric,mean,std" rows for accuracy, precision, recall and jaccard.
std::string report_csv(const Aggregate& agg);

/// One character per phase per bucket of frames (the majority label in the
/// bucket): 0-9 then A-Z.
std::string ribbon_text(const std::vector<int>& labels, std::size_t width = 80);
/// Stacked ribbons (one row per named label track) as a standalone SVG.
std::string ribbon_svg(const std::vector<std::pair<std::string, std::vector<int>>>& tracks, std::size_t num_classes);

}  // namespace sprm::metrics
