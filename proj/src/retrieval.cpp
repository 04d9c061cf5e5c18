// SPDX-License-Identifier: Apache-2.0

#include "icvl/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "icvl/error.hpp"
#include "icvl/matrix_io.hpp"

namespace icvl::retrieval {

using nlohmann::json;

namespace {

constexpr const char* kStoreFormat = "icvl-example-store";

json labels_json(const ActionSequence& seq) {
  json verbs = json::array();
  json nouns = json::array();
  for (const auto& a : seq) {
    verbs.push_back(a.verb_id);
    nouns.push_back(a.noun_id);
  }
  return {{"verbs", verbs}, {"nouns", nouns}};
}

ActionSequence labels_from_json(const json& j) {
  const auto verbs = j.at("verbs").get<std::vector<std::size_t>>();
  const auto nouns = j.at("nouns").get<std::vector<std::size_t>>();
  if (verbs.size() != nouns.size()) throw DataError("records.jsonl: verb and noun arrays differ in length");
  ActionSequence out;
  for (std::size_t i = 0; i < verbs.size(); ++i) out.push_back({verbs[i], nouns[i]});
  return out;
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

bool row_less(double sa, std::size_t ia, double sb, std::size_t ib) {
  return sa < sb || (sa == sb && ia < ib);
}

// Runs fn(begin, end) over `n` items split into at most `threads` shards.
template <class Fn>
void for_shards(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

ExampleStore::ExampleStore(std::size_t visual_dims, std::size_t textual_dims)
    : visual_dims_(visual_dims), textual_dims_(textual_dims) {}

const ExampleRecord& ExampleStore::add(ExampleRecord record) {
  if (record.pooled_visual.size() != visual_dims_ || record.pooled_textual.size() != textual_dims_) {
    throw ShapeError("example store: record '" + record.video_id + "' has pooled widths " +
                     std::to_string(record.pooled_visual.size()) + "/" +
                     std::to_string(record.pooled_textual.size()) + ", store expects " +
                     std::to_string(visual_dims_) + "/" + std::to_string(textual_dims_));
  }
  for (double v : record.pooled_visual)
    if (!std::isfinite(v)) throw NumericError("example store: non-finite visual embedding");
  for (double v : record.pooled_textual)
    if (!std::isfinite(v)) throw NumericError("example store: non-finite textual embedding");
  record.record_id = records_.size();
  records_.push_back(std::move(record));
  return records_.back();
}

void ExampleStore::save(const std::filesystem::path& dir, const Vocabulary* vocab,
                        double alpha_default) const {
  std::filesystem::create_directories(dir);
  Matrix visual(records_.size(), visual_dims_);
  Matrix textual(records_.size(), textual_dims_);
  std::ofstream jsonl(dir / "records.jsonl", std::ios::binary);
  if (!jsonl) throw IoError("cannot write " + (dir / "records.jsonl").string());
  for (const auto& r : records_) {
    std::copy(r.pooled_visual.begin(), r.pooled_visual.end(), visual.row(r.record_id).begin());
    std::copy(r.pooled_textual.begin(), r.pooled_textual.end(), textual.row(r.record_id).begin());
    jsonl << json{{"record_id", r.record_id},
                  {"video_id", r.video_id},
                  {"observed", labels_json(r.observed)},
                  {"future", labels_json(r.future)}}
                 .dump()
          << '\n';
  }
  write_matrix(dir / "visual.icvlmat", visual);
  write_matrix(dir / "textual.icvlmat", textual);
  json manifest = {{"format", kStoreFormat},
                   {"version", 1},
                   {"count", records_.size()},
                   {"visual_dims", visual_dims_},
                   {"textual_dims", textual_dims_},
                   {"alpha_default", alpha_default}};
  if (vocab != nullptr) {
    vocab->save(dir / "verbs.txt", dir / "nouns.txt");
    manifest["vocab"] = {{"verbs", "verbs.txt"}, {"nouns", "nouns.txt"}};
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

ExampleStore ExampleStore::load(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("example store: missing " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw IoError(std::string("example store manifest: ") + e.what());
  }
  if (manifest.value("format", "") != kStoreFormat) throw IoError("example store: unknown manifest format");
  const auto count = manifest.at("count").get<std::size_t>();
  ExampleStore store(manifest.at("visual_dims").get<std::size_t>(),
                     manifest.at("textual_dims").get<std::size_t>());
  const Matrix visual = read_matrix(dir / "visual.icvlmat");
  const Matrix textual = read_matrix(dir / "textual.icvlmat");
  if (visual.rows() != count || textual.rows() != count || visual.dims() != store.visual_dims_ ||
      textual.dims() != store.textual_dims_) {
    throw DataError("example store: matrix shapes disagree with manifest");
  }
  std::ifstream jsonl(dir / "records.jsonl");
  if (!jsonl) throw IoError("example store: missing records.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(jsonl, line)) {
    if (line.empty()) continue;
    if (n >= count) throw DataError("example store: more records than the manifest count");
    ExampleRecord r;
    try {
      const json j = json::parse(line);
      if (j.at("record_id").get<std::size_t>() != n) throw DataError("example store: record ids out of order");
      r.video_id = j.at("video_id").get<std::string>();
      r.observed = labels_from_json(j.at("observed"));
      r.future = labels_from_json(j.at("future"));
    } catch (const json::exception& e) {
      throw DataError(std::string("records.jsonl line ") + std::to_string(n + 1) + ": " + e.what());
    }
    r.pooled_visual.assign(visual.row(n).begin(), visual.row(n).end());
    r.pooled_textual.assign(textual.row(n).begin(), textual.row(n).end());
    store.add(std::move(r));
    ++n;
  }
  if (n != count) throw DataError("example store: manifest promises " + std::to_string(count) + " records, found " + std::to_string(n));
  return store;
}

std::optional<Vocabulary> ExampleStore::load_vocabulary(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "verbs.txt")) return std::nullopt;
  return Vocabulary::load(dir / "verbs.txt", dir / "nouns.txt");
}

SelectionMode parse_selection_mode(const std::string& name) {
  if (name == "fused") return SelectionMode::kFused;
  if (name == "visual") return SelectionMode::kVisual;
  if (name == "textual") return SelectionMode::kTextual;
  throw ConfigError("unknown selection mode '" + name + "' (expected fused, visual or textual)");
}

std::string to_string(SelectionMode mode) {
  switch (mode) {
    case SelectionMode::kFused: return "fused";
    case SelectionMode::kVisual: return "visual";
    case SelectionMode::kTextual: return "textual";
  }
  return "?";
}

std::vector<double> mean_pool(const Matrix& m) { return column_means(m); }

std::vector<Distance> l2_distances(std::span<const double> query, const ExampleStore& store,
                                   Modality modality) {
  const std::size_t dims = modality == Modality::kVisual ? store.visual_dims() : store.textual_dims();
  if (query.size() != dims) {
    throw ShapeError(std::string("l2_distances: ") + (modality == Modality::kVisual ? "visual" : "textual") +
                     " query has " + std::to_string(query.size()) + " dims, store has " + std::to_string(dims));
  }
  std::vector<Distance> out;
  out.reserve(store.size());
  for (const auto& r : store.records()) {
    out.push_back({r.record_id, distance(query, modality == Modality::kVisual ? r.pooled_visual : r.pooled_textual)});
  }
  return out;
}

std::vector<double> minmax_normalize(std::span<const double> scores) {
  std::vector<double> out(scores.size(), 0.0);
  if (scores.empty()) return out;
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  if (*hi == *lo) return out;
  const double range = *hi - *lo;
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - *lo) / range;
  return out;
}

std::vector<double> fuse_scores(std::span<const double> textual, std::span<const double> visual,
                                double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  if (textual.size() != visual.size()) throw ShapeError("fuse_scores: score lists differ in length");
  std::vector<double> out(textual.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * textual[i] + (1.0 - alpha) * visual[i];
  return out;
}

std::vector<SimilarityRow> rank_examples(std::span<const double> query_visual,
                                         std::span<const double> query_textual,
                                         const ExampleStore& store, const SelectOptions& options) {
  if (!(options.alpha >= 0.0 && options.alpha <= 1.0)) {
    throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(options.alpha));
  }
  if (options.k == 0) throw DataError("select_examples: k must be >= 1");
  if (query_visual.size() != store.visual_dims()) throw ShapeError("select_examples: visual query width mismatch");
  if (query_textual.size() != store.textual_dims()) throw ShapeError("select_examples: textual query width mismatch");
  const bool excluded = options.exclude && *options.exclude < store.size();
  const std::size_t usable = store.size() - (excluded ? 1 : 0);
  if (options.k > usable) {
    throw DataError("select_examples: k=" + std::to_string(options.k) + " exceeds the " +
                    std::to_string(usable) + " usable records");
  }

  std::vector<SimilarityRow> rows(usable);
  auto id_at = [&](std::size_t i) { return excluded && i >= *options.exclude ? i + 1 : i; };
  for_shards(usable, options.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const ExampleRecord& r = store[id_at(i)];
      rows[i].record_id = r.record_id;
      rows[i].s_v = distance(query_visual, r.pooled_visual);
      rows[i].s_t = distance(query_textual, r.pooled_textual);
    }
  });

  std::vector<double> sv(usable), st(usable);
  for (std::size_t i = 0; i < usable; ++i) {
    sv[i] = rows[i].s_v;
    st[i] = rows[i].s_t;
  }
  const auto sv_n = minmax_normalize(sv);
  const auto st_n = minmax_normalize(st);
  const auto fused = fuse_scores(st_n, sv_n, options.alpha);
  for (std::size_t i = 0; i < usable; ++i) {
    rows[i].s_v_norm = sv_n[i];
    rows[i].s_t_norm = st_n[i];
    rows[i].s_fused = fused[i];
  }

  auto key = [&](const SimilarityRow& r) {
    switch (options.mode) {
      case SelectionMode::kVisual: return r.s_v;
      case SelectionMode::kTextual: return r.s_t;
      case SelectionMode::kFused: break;
    }
    return r.s_fused;
  };
  auto less = [&](const SimilarityRow& a, const SimilarityRow& b) {
    return row_less(key(a), a.record_id, key(b), b.record_id);
  };

  // Per-shard top-k, then a merge; the (score, id) order is total so the
  // result does not depend on the shard count.
  const std::size_t shards = std::max<std::size_t>(1, std::min(options.threads, usable));
  const std::size_t chunk = (usable + shards - 1) / shards;
  std::vector<std::vector<SimilarityRow>> partial(shards);
  for_shards(shards, shards, [&](std::size_t sb, std::size_t se) {
    for (std::size_t s = sb; s < se; ++s) {
      const std::size_t begin = s * chunk;
      const std::size_t end = std::min(usable, begin + chunk);
      if (begin >= end) continue;
      std::vector<SimilarityRow> local(rows.begin() + static_cast<std::ptrdiff_t>(begin),
                                       rows.begin() + static_cast<std::ptrdiff_t>(end));
      const std::size_t keep = std::min(options.k, local.size());
      std::partial_sort(local.begin(), local.begin() + static_cast<std::ptrdiff_t>(keep), local.end(), less);
      local.resize(keep);
      partial[s] = std::move(local);
    }
  });
  std::vector<SimilarityRow> merged;
  for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
  std::sort(merged.begin(), merged.end(), less);
  merged.resize(options.k);
  return merged;
}

std::vector<ExampleRecord> select_examples(std::span<const double> query_visual,
                                           std::span<const double> query_textual,
                                           const ExampleStore& store, const SelectOptions& options) {
  std::vector<ExampleRecord> out;
  for (const auto& row : rank_examples(query_visual, query_textual, store, options)) {
    out.push_back(store[row.record_id]);
  }
  return out;
}

}  // namespace icvl::retrieval
