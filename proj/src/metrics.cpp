// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "adrenaline/error.hpp"
#include "adrenaline/loss.hpp"

namespace adrenaline::metrics {

Assignment hungarian(const Matrix& cost) {
  const std::size_t rows = cost.size();
  const std::size_t cols = rows ? cost[0].size() : 0;
  for (const auto& r : cost) {
    if (r.size() != cols) throw ShapeError("hungarian: ragged cost matrix");
    for (double v : r) {
      if (std::isnan(v)) throw std::invalid_argument("hungarian: NaN cost");
    }
  }
  const std::size_t n = std::max(rows, cols);
  Assignment out;
  out.row_to_col.assign(rows, kUnassigned);
  if (n == 0) return out;
  auto at = [&](std::size_t i, std::size_t j) { return i < rows && j < cols ? cost[i][j] : kPadCost; };

  // Shortest augmenting paths with potentials, 1-based with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j] - 1;
    if (i < rows && j - 1 < cols) out.row_to_col[i] = j - 1;
  }
  for (std::size_t i = 0; i < rows; ++i) {
    if (out.row_to_col[i] != kUnassigned) out.cost += cost[i][out.row_to_col[i]];
  }
  return out;
}

double frame_recall(const std::vector<double>& activity_hat, const std::vector<double>& activity, std::size_t slots) {
  if (activity_hat.size() != activity.size() || slots == 0 || activity.size() % slots != 0) {
    throw ShapeError("frame_recall: mismatched activity arrays");
  }
  const std::size_t frames = activity.size() / slots;
  if (frames == 0) throw DataError("frame_recall: no frames");
  std::size_t correct = 0;
  for (std::size_t n = 0; n < frames; ++n) {
    std::size_t predicted = 0, truth = 0;
    for (std::size_t s = 0; s < slots; ++s) {
      predicted += activity_hat[n * slots + s] > kActivityThreshold;
      truth += activity[n * slots + s] > kActivityThreshold;
    }
    correct += predicted == truth;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(frames);
}

FrameMatch match_frame(const double* activity_hat, const double* az_hat, const double* el_hat, const double* activity,
                       const double* az, const double* el, std::size_t slots) {
  std::vector<std::size_t> pred, truth;
  for (std::size_t s = 0; s < slots; ++s) {
    if (activity_hat[s] > kActivityThreshold) pred.push_back(s);
    if (activity[s] > kActivityThreshold) truth.push_back(s);
  }
  FrameMatch m;
  m.predicted = pred.size();
  m.truth = truth.size();
  if (pred.empty() || truth.empty()) return m;
  Matrix cost(pred.size(), std::vector<double>(truth.size()));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < truth.size(); ++j) {
      cost[i][j] = loss::angular_distance(az_hat[pred[i]], el_hat[pred[i]], az[truth[j]], el[truth[j]]);
    }
  }
  const auto a = hungarian(cost);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (a.row_to_col[i] != kUnassigned) m.angles.push_back(cost[i][a.row_to_col[i]]);
  }
  return m;
}

namespace {

// Twice the midranks, so ties stay integral.
std::vector<long long> doubled_midranks(const std::vector<double>& pooled) {
  std::vector<std::size_t> order(pooled.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return pooled[a] < pooled[b]; });
  std::vector<long long> ranks(pooled.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && pooled[order[j]] == pooled[order[i]]) ++j;
    const long long twice = static_cast<long long>(i + 1 + j);  // (i+1) + j = 2 * mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = twice;
    i = j;
  }
  return ranks;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double clamp_p(double p) { return std::clamp(p, std::numeric_limits<double>::min(), 1.0); }

}  // namespace

MannWhitney mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("mann_whitney_u: both samples must be non-empty");
  const std::size_t n = a.size(), m = b.size(), N = n + m;
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  for (double v : pooled) {
    if (!std::isfinite(v)) throw std::invalid_argument("mann_whitney_u: non-finite value");
  }
  const auto ranks = doubled_midranks(pooled);
  const long long offset = static_cast<long long>(n * (n + 1));  // 2 * n(n+1)/2
  long long twice_rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) twice_rank_sum += ranks[i];
  const long long twice_u = twice_rank_sum - offset;

  MannWhitney r;
  r.u = static_cast<double>(twice_u) / 2.0;
  const bool identical = std::all_of(pooled.begin(), pooled.end(), [&](double v) { return v == pooled[0]; });
  if (identical) {
    r.exact = n <= 8 && m <= 8;
    return r;
  }

  if (n <= 8 && m <= 8) {
    r.exact = true;
    // enumerate every choice of n positions for the first sample
    std::vector<bool> pick(N, false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(n), true);
    std::size_t total = 0, le = 0, ge = 0;
    do {
      long long s = 0;
      for (std::size_t i = 0; i < N; ++i) {
        if (pick[i]) s += ranks[i];
      }
      const long long tu = s - offset;
      ++total;
      le += tu <= twice_u;
      ge += tu >= twice_u;
    } while (std::prev_permutation(pick.begin(), pick.end()));
    r.p_less = static_cast<double>(le) / static_cast<double>(total);
    r.p_greater = static_cast<double>(ge) / static_cast<double>(total);
  } else {
    std::vector<double> sorted(pooled);
    std::sort(sorted.begin(), sorted.end());
    double tie_term = 0.0;
    for (std::size_t i = 0; i < N;) {
      std::size_t j = i;
      while (j < N && sorted[j] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i);
      tie_term += t * t * t - t;
      i = j;
    }
    const double dn = static_cast<double>(n), dm = static_cast<double>(m), dN = static_cast<double>(N);
    const double mu = dn * dm / 2.0;
    const double var = dn * dm / 12.0 * ((dN + 1.0) - tie_term / (dN * (dN - 1.0)));
    const double sd = std::sqrt(var);
    r.p_less = normal_cdf((r.u - mu + 0.5) / sd);
    r.p_greater = 1.0 - normal_cdf((r.u - mu - 0.5) / sd);
  }
  r.p_less = clamp_p(r.p_less);
  r.p_greater = clamp_p(r.p_greater);
  r.p_two_sided = clamp_p(2.0 * std::min(r.p_less, r.p_greater));
  return r;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t h = values.size() / 2;
  return values.size() % 2 ? values[h] : 0.5 * (values[h - 1] + values[h]);
}

void Evaluator::add(const model::SelOutput& output, const ad::Tensor& activity, const ad::Tensor& azimuth,
                    const ad::Tensor& elevation, const std::vector<std::pair<std::size_t, std::size_t>>& provenance) {
  if (output.activity.shape() != activity.shape() || output.azimuth.shape() != azimuth.shape() ||
      output.elevation.shape() != elevation.shape() || activity.rank() != 3) {
    throw ShapeError("evaluator: outputs and targets must share a B x K x S shape");
  }
  const std::size_t B = activity.dim(0), K = activity.dim(1), S = activity.dim(2);
  if (!provenance.empty() && provenance.size() != B) throw ShapeError("evaluator: provenance size != batch size");
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t o = (b * K + k) * S;
      FrameRecord rec;
      if (!provenance.empty()) {
        rec.file = provenance[b].first;
        rec.chunk = provenance[b].second;
      }
      rec.frame = k;
      rec.match = match_frame(output.activity.data().data() + o, output.azimuth.data().data() + o,
                              output.elevation.data().data() + o, activity.data().data() + o,
                              azimuth.data().data() + o, elevation.data().data() + o, S);
      correct_ += rec.match.predicted == rec.match.truth;
      records_.push_back(std::move(rec));
    }
  }
}

EvalReport Evaluator::report() const {
  if (records_.empty()) throw DataError("evaluation: no frames");
  EvalReport r;
  r.frames = records_.size();
  r.correct_frames = correct_;
  r.frame_recall = 100.0 * static_cast<double>(correct_) / static_cast<double>(r.frames);
  for (const auto& rec : records_) {
    r.doa_errors.insert(r.doa_errors.end(), rec.match.angles.begin(), rec.match.angles.end());
    const std::size_t matched = rec.match.angles.size();
    r.unmatched_predictions += rec.match.predicted - matched;
    r.unmatched_truths += rec.match.truth - matched;
  }
  r.median_doa = median(r.doa_errors);
  r.mean_doa = r.doa_errors.empty()
                   ? 0.0
                   : std::accumulate(r.doa_errors.begin(), r.doa_errors.end(), 0.0) /
                         static_cast<double>(r.doa_errors.size());
  r.records = records_;
  return r;
}

nlohmann::ordered_json EvalReport::to_json() const {
  constexpr double deg = 180.0 / std::numbers::pi;
  nlohmann::ordered_json j;
  j["frames"] = frames;
  j["correct_frames"] = correct_frames;
  j["frame_recall"] = frame_recall;
  j["matched_pairs"] = doa_errors.size();
  j["median_doa_rad"] = median_doa;
  j["median_doa_deg"] = median_doa * deg;
  j["mean_doa_rad"] = mean_doa;
  j["mean_doa_deg"] = mean_doa * deg;
  j["unmatched_predictions"] = unmatched_predictions;
  j["unmatched_truths"] = unmatched_truths;
  return j;
}

void write_frame_csv(const std::filesystem::path& path, const EvalReport& report,
                     const std::vector<std::string>& file_names) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << "file,chunk,frame,matched,angle_rad\n";
  char buf[64];
  for (const auto& rec : report.records) {
    const std::string file = rec.file < file_names.size() ? file_names[rec.file] : std::to_string(rec.file);
    const std::string prefix = file + "," + std::to_string(rec.chunk) + "," + std::to_string(rec.frame) + ",";
    if (rec.match.angles.empty()) {
      os << prefix << "0,\n";
      continue;
    }
    for (double a : rec.match.angles) {
      std::snprintf(buf, sizeof buf, "%.9f", a);
      os << prefix << rec.match.angles.size() << "," << buf << "\n";
    }
  }
}

}  // namespace adrenaline::metrics
