// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icvl/labels.hpp"
#include "icvl/matrix.hpp"

namespace icvl::retrieval {

inline constexpr double kDefaultAlpha = 0.5;
/// Example counts: 3 is the reporting preset, 7 the larger sweep preset.
inline constexpr std::size_t kReportingExampleCount = 3;
inline constexpr std::size_t kSweepExampleCount = 7;

struct ExampleRecord {
  std::size_t record_id = 0;
  std::string video_id;
  ActionSequence observed;
  ActionSequence future;
  std::vector<double> pooled_visual;
  std::vector<double> pooled_textual;

  friend bool operator==(const ExampleRecord&, const ExampleRecord&) = default;
};

class ExampleStore {
 public:
  ExampleStore() = default;
  ExampleStore(std::size_t visual_dims, std::size_t textual_dims);

  /// Assigns record_id = position and checks the pooled widths.
  const ExampleRecord& add(ExampleRecord record);

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  std::size_t visual_dims() const noexcept { return visual_dims_; }
  std::size_t textual_dims() const noexcept { return textual_dims_; }
  const ExampleRecord& operator[](std::size_t id) const { return records_.at(id); }
  const std::vector<ExampleRecord>& records() const noexcept { return records_; }

  /// Directory layout: manifest.json, visual.icvlmat, textual.icvlmat,
  /// records.jsonl and, when a vocabulary is given, verbs.txt / nouns.txt.
  void save(const std::filesystem::path& dir, const Vocabulary* vocab = nullptr,
            double alpha_default = kDefaultAlpha) const;
  static ExampleStore load(const std::filesystem::path& dir);
  /// Vocabulary saved next to the store; nullopt when none was written.
  static std::optional<Vocabulary> load_vocabulary(const std::filesystem::path& dir);

  friend bool operator==(const ExampleStore&, const ExampleStore&) = default;

 private:
  std::size_t visual_dims_ = 0;
  std::size_t textual_dims_ = 0;
  std::vector<ExampleRecord> records_;
};

enum class Modality { kVisual, kTextual };
enum class SelectionMode { kFused, kVisual, kTextual };

SelectionMode parse_selection_mode(const std::string& name);
std::string to_string(SelectionMode mode);

/// Column means; DataError on an empty matrix.
std::vector<double> mean_pool(const Matrix& m);

struct Distance {
  std::size_t record_id = 0;
  double distance = 0.0;
};

/// Euclidean distance from `query` to every record, in store order.
std::vector<Distance> l2_distances(std::span<const double> query, const ExampleStore& store,
                                   Modality modality);

/// (s − min) / (max − min); all zeros when max == min.
std::vector<double> minmax_normalize(std::span<const double> scores);

/// α·s_t + (1 − α)·s_v elementwise. ConfigError when α is outside [0, 1].
std::vector<double> fuse_scores(std::span<const double> textual, std::span<const double> visual,
                                double alpha);

struct SimilarityRow {
  std::size_t record_id = 0;
  double s_v = 0.0;
  double s_t = 0.0;
  double s_v_norm = 0.0;
  double s_t_norm = 0.0;
  double s_fused = 0.0;
};

struct SelectOptions {
  double alpha = kDefaultAlpha;
  std::size_t k = kReportingExampleCount;
  std::optional<std::size_t> exclude;
  SelectionMode mode = SelectionMode::kFused;
  /// Worker threads for the scan; results do not depend on this.
  std::size_t threads = 1;
};

/// Scores every usable record (the excluded one is dropped before
/// normalisation) and returns the k best rows, ascending by the ranking
/// score and then by record id. Fused mode ranks by s_fused; visual and
/// textual modes rank by the raw single-modality distance.
std::vector<SimilarityRow> rank_examples(std::span<const double> query_visual,
                                         std::span<const double> query_textual,
                                         const ExampleStore& store, const SelectOptions& options);

std::vector<ExampleRecord> select_examples(std::span<const double> query_visual,
                                           std::span<const double> query_textual,
                                           const ExampleStore& store, const SelectOptions& options);

}  // namespace icvl::retrieval
