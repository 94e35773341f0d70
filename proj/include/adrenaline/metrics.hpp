// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "adrenaline/model.hpp"
#include "json.hpp"

namespace adrenaline::metrics {

inline constexpr double kActivityThreshold = 0.5;
inline constexpr double kPadCost = 1e9;
inline constexpr std::size_t kUnassigned = std::numeric_limits<std::size_t>::max();

using Matrix = std::vector<std::vector<double>>;

struct Assignment {
  std::vector<std::size_t> row_to_col;  // kUnassigned for rows matched to padding
  double cost = 0.0;                    // over real pairs only
};

/// Minimum-cost matching. Rectangular inputs are padded to square with kPadCost.
Assignment hungarian(const Matrix& cost);

/// Percentage of frames whose count of activities > 0.5 equals the count of true
/// active slots. Inputs are flattened N x S.
double frame_recall(const std::vector<double>& activity_hat, const std::vector<double>& activity, std::size_t slots);

struct FrameMatch {
  std::vector<double> angles;  // one per matched pair, radians
  std::size_t predicted = 0;
  std::size_t truth = 0;
};

/// Matches predicted-active slots to true-active slots of one frame.
FrameMatch match_frame(const double* activity_hat, const double* az_hat, const double* el_hat, const double* activity,
                       const double* az, const double* el, std::size_t slots);

struct MannWhitney {
  double u = 0.0;  // U of the first sample
  double p_two_sided = 1.0;
  double p_less = 1.0;     // first sample stochastically smaller
  double p_greater = 1.0;  // first sample stochastically larger
  bool exact = false;
};

/// Midranks for ties; exact enumeration when both samples have at most 8
/// values, otherwise the tie-corrected normal approximation with continuity
/// correction. Identical pooled values give p = 1.
MannWhitney mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b);

struct FrameRecord {
  std::size_t file = 0;
  std::size_t chunk = 0;
  std::size_t frame = 0;
  FrameMatch match;
};

struct EvalReport {
  std::size_t frames = 0;
  std::size_t correct_frames = 0;
  double frame_recall = 0.0;  // percent
  std::vector<double> doa_errors;
  double median_doa = 0.0;  // radians, 0 when nothing matched
  double mean_doa = 0.0;
  std::size_t unmatched_predictions = 0;
  std::size_t unmatched_truths = 0;
  std::vector<FrameRecord> records;

  nlohmann::ordered_json to_json() const;
};

double median(std::vector<double> values);

/// Accumulates batches of outputs and targets (all B x K x S).
class Evaluator {
 public:
  void add(const model::SelOutput& output, const ad::Tensor& activity, const ad::Tensor& azimuth,
           const ad::Tensor& elevation, const std::vector<std::pair<std::size_t, std::size_t>>& provenance = {});
  EvalReport report() const;

 private:
  std::vector<FrameRecord> records_;
  std::size_t correct_ = 0;
};

/// CSV `file,chunk,frame,matched,angle_rad`, one row per matched angle
/// (frames without matches get one row with an empty angle).
void write_frame_csv(const std::filesystem::path& path, const EvalReport& report,
                     const std::vector<std::string>& file_names = {});

}  // namespace adrenaline::metrics
