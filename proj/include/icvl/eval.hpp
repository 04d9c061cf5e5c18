// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "icvl/labels.hpp"
#include "icvl/matrix.hpp"

namespace icvl::eval {

inline constexpr std::size_t kDefaultCandidates = 5;   // K
inline constexpr std::size_t kDefaultFutureLength = 20;  // Z
inline constexpr std::size_t kDefaultSegments = 8;     // N_seg
inline const std::vector<int> kDefaultHorizons = {25, 50, 75};
inline constexpr std::size_t kDefaultFreqThreshold = 10;

/// Optimal string alignment distance: insertions, deletions,
/// substitutions and adjacent transpositions, no substring edited twice.
template <class T>
std::size_t damerau_levenshtein(std::span<const T> a, std::span<const T> b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t cost = a[i - 1] == b[j - 1] ? 0 : 1;
      std::size_t best = std::min({at(i - 1, j) + 1, at(i, j - 1) + 1, at(i - 1, j - 1) + cost});
      if (i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1]) {
        best = std::min(best, at(i - 2, j - 2) + 1);
      }
      at(i, j) = best;
    }
  }
  return at(n, m);
}

template <class T>
std::size_t damerau_levenshtein(const std::vector<T>& a, const std::vector<T>& b) {
  return damerau_levenshtein(std::span<const T>(a), std::span<const T>(b));
}

enum class Field { kVerb, kNoun, kAction };

std::string to_string(Field field);

/// min over candidates of DL(candidate, gold) / max(|candidate|, |gold|),
/// after projecting onto the field. Actions compare as (verb, noun) pairs.
double min_over_k_ed(const std::vector<ActionSequence>& candidates, const ActionSequence& gold,
                     Field field);

struct VideoEd {
  std::string video_id;
  double verb_ed = 0.0;
  double noun_ed = 0.0;
  double action_ed = 0.0;
};

struct EdReport {
  double verb_ed = 0.0;
  double noun_ed = 0.0;
  double action_ed = 0.0;
  std::vector<VideoEd> per_video;

  std::string to_json() const;
  std::string to_csv() const;
};

// Annotation and prediction files.

struct TimedAction {
  ActionLabel label;
  double start = 0.0;
};

/// One gold video. `observed` / `future` are the anticipation split;
/// `actions` / `duration` drive the horizon protocol.
struct GoldVideo {
  std::string video_id;
  ActionSequence observed;
  ActionSequence future;
  std::string intention;
  double duration = 0.0;
  std::vector<TimedAction> actions;
};

struct PredictionRecord {
  std::string video_id;
  std::vector<ActionSequence> candidates;
};

std::vector<GoldVideo> read_gold(const std::filesystem::path& path);
void write_gold(const std::filesystem::path& path, const std::vector<GoldVideo>& gold);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& preds);

/// Mean of the per-video min-over-K distances; every gold video needs a
/// prediction record.
EdReport evaluate_ed(const std::vector<PredictionRecord>& predictions, const std::vector<GoldVideo>& gold);

/// AP with ranks by descending score, ties by ascending index. DataError
/// when no label is positive.
double average_precision(std::span<const double> scores, std::span<const int> labels);

struct HorizonSplit {
  ActionSequence observed;
  ActionSequence future;
  /// Distinct verb ids occurring in `future`, ascending.
  std::vector<std::size_t> future_verbs;
};

/// Actions starting strictly before p% of the duration are observed.
HorizonSplit horizon_split(const std::vector<TimedAction>& actions, double duration, int percent);

struct ClassSplit {
  std::set<std::size_t> freq_ids;
  std::set<std::size_t> rare_ids;
  std::size_t threshold = kDefaultFreqThreshold;
};

/// Classes with count >= threshold are frequent, the rest rare.
ClassSplit make_class_split(std::span<const std::size_t> class_counts,
                            std::size_t threshold = kDefaultFreqThreshold);

/// Verb occurrence counts over the given videos' actions.
std::vector<std::size_t> verb_counts(const std::vector<GoldVideo>& videos, std::size_t verb_count);

struct HorizonInput {
  int percent = 0;
  Matrix scores;   // videos × classes
  Matrix targets;  // videos × classes, entries 0 or 1
};

struct HorizonReport {
  int percent = 0;
  double all = 0.0;
  std::optional<double> freq;
  std::optional<double> rare;
  std::size_t scored_classes = 0;
  std::size_t freq_classes = 0;
  std::size_t rare_classes = 0;
  std::map<std::size_t, double> class_ap;
};

struct MapReport {
  double all = 0.0;
  std::optional<double> freq;
  std::optional<double> rare;
  std::vector<HorizonReport> horizons;

  std::string to_json() const;
  std::string to_csv() const;
};

/// Per horizon, AP of every class with at least one positive; ALL / FREQ /
/// RARE are means over the corresponding scored classes; headline values
/// are unweighted means across horizons (FREQ/RARE over the horizons where
/// that subset was scoreable).
MapReport map_report(const std::vector<HorizonInput>& horizons, const ClassSplit& split);

/// Targets matrix (videos × verb_count) for one horizon.
Matrix horizon_targets(const std::vector<GoldVideo>& videos, std::size_t verb_count, int percent);

}  // namespace icvl::eval
