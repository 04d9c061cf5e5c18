// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "icvl/error.hpp"
#include "icvl/random.hpp"
#include "icvl/retrieval.hpp"

using namespace icvl;
using namespace icvl::retrieval;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  const Matrix m = random_normal(1, n, 1.0, rng);
  return {m.data().begin(), m.data().end()};
}

ExampleStore random_store(std::size_t n, std::size_t dv, std::size_t dt, Rng& rng) {
  ExampleStore store(dv, dt);
  for (std::size_t i = 0; i < n; ++i) {
    ExampleRecord r;
    r.video_id = "v" + std::to_string(i);
    r.observed = {{i % 3, i % 5}};
    r.future = {{(i + 1) % 3, (i + 2) % 5}, {i % 2, 0}};
    r.pooled_visual = random_vec(dv, rng);
    r.pooled_textual = random_vec(dt, rng);
    store.add(std::move(r));
  }
  return store;
}

double naive_l2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Full scan, full sort. Distances, normalisation and fusion are all
// recomputed here from the definitions.
std::vector<std::size_t> brute_force(std::span<const double> qv, std::span<const double> qt,
                                     const ExampleStore& store, double alpha, std::size_t k,
                                     std::optional<std::size_t> exclude) {
  std::vector<std::size_t> ids;
  std::vector<double> sv, st;
  for (const auto& r : store.records()) {
    if (exclude && r.record_id == *exclude) continue;
    ids.push_back(r.record_id);
    sv.push_back(naive_l2(qv, r.pooled_visual));
    st.push_back(naive_l2(qt, r.pooled_textual));
  }
  auto norm = [](std::vector<double> s) {
    const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    const double mn = *lo, mx = *hi;
    for (double& v : s) v = mx == mn ? 0.0 : (v - mn) / (mx - mn);
    return s;
  };
  const auto nv = norm(sv), nt = norm(st);
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < ids.size(); ++i) scored.emplace_back(alpha * nt[i] + (1 - alpha) * nv[i], ids[i]);
  std::sort(scored.begin(), scored.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(scored[i].second);
  return out;
}

std::vector<std::size_t> ids_of(const std::vector<SimilarityRow>& rows) {
  std::vector<std::size_t> out;
  for (const auto& r : rows) out.push_back(r.record_id);
  return out;
}

}  // namespace

TEST(MeanPool, Cases) {
  EXPECT_EQ(mean_pool(Matrix{{1, 2, 3}}), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(mean_pool(Matrix{{1, -2}, {-1, 2}}), (std::vector<double>{0, 0}));
  Rng rng(1);
  const Matrix m = random_normal(5, 3, 1.0, rng);
  const auto got = mean_pool(m);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < 5; ++r) s += m(r, c);
    EXPECT_NEAR(got[c], s / 5.0, 1e-12);
  }
  EXPECT_THROW(mean_pool(Matrix(0, 3)), DataError);
}

TEST(L2Distances, PythagorasAndOracle) {
  ExampleStore store(2, 1);
  store.add({0, "a", {}, {}, {3, 4}, {0}});
  store.add({0, "b", {}, {}, {0, 0}, {1}});
  const std::vector<double> q{0, 0};
  const auto d = l2_distances(q, store, Modality::kVisual);
  EXPECT_EQ(d[0].distance, 5.0);
  EXPECT_EQ(d[1].distance, 0.0);
  EXPECT_EQ(d[1].record_id, 1u);
  const std::vector<double> bad{1, 2, 3};
  EXPECT_THROW(l2_distances(bad, store, Modality::kVisual), ShapeError);

  Rng rng(2);
  const ExampleStore big = random_store(1000, 6, 4, rng);
  const auto qv = random_vec(6, rng);
  const auto dv = l2_distances(qv, big, Modality::kVisual);
  for (std::size_t i = 0; i < big.size(); ++i) EXPECT_NEAR(dv[i].distance, naive_l2(qv, big[i].pooled_visual), 1e-10);
}

TEST(MinMax, Cases) {
  EXPECT_EQ(minmax_normalize(std::vector<double>{2, 4, 6}), (std::vector<double>{0, 0.5, 1}));
  EXPECT_EQ(minmax_normalize(std::vector<double>{3, 3, 3}), (std::vector<double>{0, 0, 0}));
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto s = random_vec(15, rng);
    const auto n = minmax_normalize(s);
    std::vector<std::size_t> a(15), b(15);
    std::iota(a.begin(), a.end(), 0);
    std::iota(b.begin(), b.end(), 0);
    std::stable_sort(a.begin(), a.end(), [&](auto x, auto y) { return s[x] < s[y]; });
    std::stable_sort(b.begin(), b.end(), [&](auto x, auto y) { return n[x] < n[y]; });
    ASSERT_EQ(a, b);
    for (double v : n) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(FuseScores, Cases) {
  const std::vector<double> t{0.1, 0.7}, v{0.4, 0.2};
  EXPECT_EQ(fuse_scores(t, v, 1.0), t);
  EXPECT_EQ(fuse_scores(t, v, 0.0), v);
  EXPECT_EQ(fuse_scores(std::vector<double>{0, 1}, std::vector<double>{1, 0}, 0.5), (std::vector<double>{0.5, 0.5}));
  EXPECT_THROW(fuse_scores(t, v, 1.5), ConfigError);
  EXPECT_THROW(fuse_scores(t, v, -0.1), ConfigError);
}

TEST(Select, DuplicateRanksFirstAndWholeStore) {
  Rng rng(4);
  const ExampleStore store = random_store(12, 5, 3, rng);
  const auto& dup = store[7];
  SelectOptions opt;
  opt.k = 1;
  const auto rows = rank_examples(dup.pooled_visual, dup.pooled_textual, store, opt);
  EXPECT_EQ(rows[0].record_id, 7u);
  EXPECT_EQ(rows[0].s_fused, 0.0);
  opt.k = 12;
  const auto all = rank_examples(dup.pooled_visual, dup.pooled_textual, store, opt);
  EXPECT_EQ(all.size(), 12u);
  for (std::size_t i = 1; i < all.size(); ++i) EXPECT_LE(all[i - 1].s_fused, all[i].s_fused);
  opt.k = 13;
  EXPECT_THROW(rank_examples(dup.pooled_visual, dup.pooled_textual, store, opt), DataError);
  opt.k = 12;
  opt.exclude = 7;
  EXPECT_THROW(rank_examples(dup.pooled_visual, dup.pooled_textual, store, opt), DataError);
  opt.k = 3;
  const auto ex = rank_examples(dup.pooled_visual, dup.pooled_textual, store, opt);
  for (const auto& r : ex) EXPECT_NE(r.record_id, 7u);
}

TEST(Select, MatchesBruteForceOn1000Records) {
  Rng rng(5);
  const ExampleStore store = random_store(1000, 8, 6, rng);
  for (int q = 0; q < 20; ++q) {
    const auto qv = random_vec(8, rng), qt = random_vec(6, rng);
    for (double alpha : {0.0, 0.25, 0.5, 1.0}) {
      SelectOptions opt;
      opt.alpha = alpha;
      opt.k = 7;
      if (q % 3 == 0) opt.exclude = static_cast<std::size_t>(q * 13);
      ASSERT_EQ(ids_of(rank_examples(qv, qt, store, opt)), brute_force(qv, qt, store, alpha, 7, opt.exclude));
    }
  }
}

TEST(Select, TiesBreakByRecordId) {
  ExampleStore store(1, 1);
  for (int i = 0; i < 5; ++i) store.add({0, "v", {}, {}, {1.0}, {2.0}});
  SelectOptions opt;
  opt.k = 5;
  const std::vector<double> q{0.0};
  EXPECT_EQ(ids_of(rank_examples(q, q, store, opt)), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Select, ShardedScanIsDeterministic) {
  Rng rng(6);
  ExampleStore store = random_store(3000, 4, 4, rng);
  // Duplicates across shard boundaries exercise the id tie-break in merge.
  for (int i = 0; i < 50; ++i) store.add(store[static_cast<std::size_t>(i)]);
  const auto qv = random_vec(4, rng), qt = random_vec(4, rng);
  SelectOptions opt;
  opt.k = 40;
  const auto seq = rank_examples(qv, qt, store, opt);
  for (std::size_t threads : {2u, 3u, 7u, 16u}) {
    opt.threads = threads;
    const auto par = rank_examples(qv, qt, store, opt);
    ASSERT_EQ(ids_of(par), ids_of(seq)) << threads;
    for (std::size_t i = 0; i < par.size(); ++i) ASSERT_EQ(par[i].s_fused, seq[i].s_fused);
  }
}

TEST(Select, DegenerateAlphaEqualsSingleModality) {
  Rng rng(7);
  const ExampleStore store = random_store(300, 5, 5, rng);
  const auto qv = random_vec(5, rng), qt = random_vec(5, rng);
  SelectOptions fused;
  fused.k = 9;
  SelectOptions single = fused;
  fused.alpha = 1.0;
  single.mode = SelectionMode::kTextual;
  EXPECT_EQ(ids_of(rank_examples(qv, qt, store, fused)), ids_of(rank_examples(qv, qt, store, single)));
  fused.alpha = 0.0;
  single.mode = SelectionMode::kVisual;
  EXPECT_EQ(ids_of(rank_examples(qv, qt, store, fused)), ids_of(rank_examples(qv, qt, store, single)));
}

TEST(Select, AlphaMonotonicityForTextuallyWorseRecord) {
  // Records 0 and 1 share visual embeddings; record 1 is textually farther.
  ExampleStore store(2, 2);
  store.add({0, "a", {}, {}, {1, 0}, {0.2, 0}});
  store.add({0, "b", {}, {}, {1, 0}, {0.9, 0}});
  Rng rng(8);
  for (int i = 0; i < 30; ++i) store.add({0, "r", {}, {}, random_vec(2, rng), random_vec(2, rng)});
  const std::vector<double> qv{0.5, 0.5}, qt{0, 0};
  double prev_gap = -1.0;
  for (int step = 0; step <= 10; ++step) {
    SelectOptions opt;
    opt.alpha = step / 10.0;
    opt.k = store.size();
    const auto rows = rank_examples(qv, qt, store, opt);
    auto find = [&](std::size_t id) {
      return static_cast<std::size_t>(
          std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.record_id == id; }) - rows.begin());
    };
    // Equal visual scores: the pair ties at alpha 0 and record 1 falls
    // further behind as alpha grows.
    EXPECT_LT(find(0), find(1));
    const double gap = rows[find(1)].s_fused - rows[find(0)].s_fused;
    EXPECT_GE(gap, prev_gap);
    prev_gap = gap;
  }
}

TEST(Select, RowsCarryAllScores) {
  Rng rng(9);
  const ExampleStore store = random_store(20, 3, 3, rng);
  const auto qv = random_vec(3, rng), qt = random_vec(3, rng);
  SelectOptions opt;
  opt.k = 20;
  opt.alpha = 0.3;
  for (const auto& r : rank_examples(qv, qt, store, opt)) {
    EXPECT_NEAR(r.s_v, naive_l2(qv, store[r.record_id].pooled_visual), 1e-12);
    EXPECT_NEAR(r.s_t, naive_l2(qt, store[r.record_id].pooled_textual), 1e-12);
    EXPECT_GE(r.s_v_norm, 0.0);
    EXPECT_LE(r.s_t_norm, 1.0);
    EXPECT_NEAR(r.s_fused, 0.3 * r.s_t_norm + 0.7 * r.s_v_norm, 1e-15);
  }
  const auto recs = select_examples(qv, qt, store, opt);
  EXPECT_EQ(recs.front(), store[rank_examples(qv, qt, store, opt).front().record_id]);
}

TEST(ExampleStore, AddValidatesAndAssignsIds) {
  ExampleStore store(2, 3);
  const auto& r = store.add({99, "x", {}, {}, {1, 2}, {1, 2, 3}});
  EXPECT_EQ(r.record_id, 0u);
  EXPECT_THROW(store.add({0, "y", {}, {}, {1}, {1, 2, 3}}), ShapeError);
  EXPECT_THROW(store.add({0, "y", {}, {}, {1, 2}, {1, 2}}), ShapeError);
}

TEST(ExampleStore, DirectoryRoundTrip) {
  Rng rng(10);
  const ExampleStore store = random_store(25, 4, 6, rng);
  const Vocabulary vocab({"a", "b", "c"}, {"x", "y", "z", "w", "u"});
  const auto dir = std::filesystem::temp_directory_path() / "icvl_store_test";
  std::filesystem::remove_all(dir);
  store.save(dir, &vocab, 0.25);
  for (const char* f : {"manifest.json", "visual.icvlmat", "textual.icvlmat", "records.jsonl"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  const ExampleStore back = ExampleStore::load(dir);
  EXPECT_EQ(back, store);
  EXPECT_EQ(ExampleStore::load_vocabulary(dir).value(), vocab);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(ExampleStore::load(dir), IoError);
}

TEST(SelectionMode, Parse) {
  EXPECT_EQ(parse_selection_mode("fused"), SelectionMode::kFused);
  EXPECT_EQ(parse_selection_mode("textual"), SelectionMode::kTextual);
  EXPECT_EQ(to_string(SelectionMode::kVisual), "visual");
  EXPECT_THROW(parse_selection_mode("audio"), ConfigError);
  EXPECT_EQ(kReportingExampleCount, 3u);
  EXPECT_EQ(kSweepExampleCount, 7u);
  EXPECT_EQ(kDefaultAlpha, 0.5);
}
