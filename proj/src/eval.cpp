// SPDX-License-Identifier: Apache-2.0

#include "icvl/eval.hpp"

#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "icvl/error.hpp"

namespace icvl::eval {

using nlohmann::json;

namespace {

json actions_json(const ActionSequence& seq) {
  json out = json::array();
  for (const auto& a : seq) out.push_back({{"v", a.verb_id}, {"n", a.noun_id}});
  return out;
}

ActionSequence actions_from_json(const json& j) {
  ActionSequence out;
  for (const auto& a : j) out.push_back({a.at("v").get<std::size_t>(), a.at("n").get<std::size_t>()});
  return out;
}

template <class Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.filename().string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
}

void write_lines(const std::filesystem::path& path, const std::vector<json>& docs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& d : docs) out << d.dump() << '\n';
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s << std::setprecision(17) << *v;
  return s.str();
}

}  // namespace

std::string to_string(Field field) {
  switch (field) {
    case Field::kVerb: return "verb";
    case Field::kNoun: return "noun";
    case Field::kAction: return "action";
  }
  return "?";
}

double min_over_k_ed(const std::vector<ActionSequence>& candidates, const ActionSequence& gold,
                     Field field) {
  if (candidates.empty()) throw DataError("min_over_k_ed: no candidates");
  if (gold.empty()) throw DataError("min_over_k_ed: empty gold sequence");
  auto project = [field](const ActionSequence& seq) {
    std::vector<std::size_t> out;
    out.reserve(seq.size());
    for (const auto& a : seq) {
      switch (field) {
        case Field::kVerb: out.push_back(a.verb_id); break;
        case Field::kNoun: out.push_back(a.noun_id); break;
        case Field::kAction: break;
      }
    }
    return out;
  };
  double best = 1.0;
  for (const auto& cand : candidates) {
    const double len = static_cast<double>(std::max(cand.size(), gold.size()));
    const std::size_t d = field == Field::kAction ? damerau_levenshtein(cand, gold)
                                                  : damerau_levenshtein(project(cand), project(gold));
    best = std::min(best, static_cast<double>(d) / len);
  }
  return best;
}

std::string EdReport::to_json() const {
  json videos = json::array();
  for (const auto& v : per_video) {
    videos.push_back({{"video_id", v.video_id}, {"verb_ed", v.verb_ed}, {"noun_ed", v.noun_ed}, {"action_ed", v.action_ed}});
  }
  return json{{"verb_ed", verb_ed}, {"noun_ed", noun_ed}, {"action_ed", action_ed}, {"videos", per_video.size()},
              {"per_video", videos}}
      .dump(2);
}

std::string EdReport::to_csv() const {
  std::ostringstream out;
  out << std::setprecision(17) << "video_id,verb_ed,noun_ed,action_ed\n";
  for (const auto& v : per_video) out << v.video_id << ',' << v.verb_ed << ',' << v.noun_ed << ',' << v.action_ed << '\n';
  out << "ALL," << verb_ed << ',' << noun_ed << ',' << action_ed << '\n';
  return out.str();
}

std::vector<GoldVideo> read_gold(const std::filesystem::path& path) {
  std::vector<GoldVideo> out;
  for_each_jsonl(path, [&](const json& j) {
    GoldVideo g;
    g.video_id = j.at("video_id").get<std::string>();
    g.observed = actions_from_json(j.value("observed", json::array()));
    g.future = actions_from_json(j.value("future", json::array()));
    g.intention = j.value("intention", std::string());
    g.duration = j.value("duration", 0.0);
    for (const auto& a : j.value("actions", json::array())) {
      g.actions.push_back({{a.at("v").get<std::size_t>(), a.at("n").get<std::size_t>()}, a.at("start").get<double>()});
    }
    out.push_back(std::move(g));
  });
  return out;
}

void write_gold(const std::filesystem::path& path, const std::vector<GoldVideo>& gold) {
  std::vector<json> docs;
  for (const auto& g : gold) {
    json actions = json::array();
    for (const auto& a : g.actions) actions.push_back({{"v", a.label.verb_id}, {"n", a.label.noun_id}, {"start", a.start}});
    docs.push_back({{"video_id", g.video_id},
                    {"observed", actions_json(g.observed)},
                    {"future", actions_json(g.future)},
                    {"intention", g.intention},
                    {"duration", g.duration},
                    {"actions", actions}});
  }
  write_lines(path, docs);
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::vector<PredictionRecord> out;
  for_each_jsonl(path, [&](const json& j) {
    PredictionRecord p;
    p.video_id = j.at("video_id").get<std::string>();
    for (const auto& c : j.at("candidates")) p.candidates.push_back(actions_from_json(c));
    out.push_back(std::move(p));
  });
  return out;
}

void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& preds) {
  std::vector<json> docs;
  for (const auto& p : preds) {
    json cands = json::array();
    for (const auto& c : p.candidates) cands.push_back(actions_json(c));
    docs.push_back({{"video_id", p.video_id}, {"candidates", cands}});
  }
  write_lines(path, docs);
}

EdReport evaluate_ed(const std::vector<PredictionRecord>& predictions, const std::vector<GoldVideo>& gold) {
  if (gold.empty()) throw DataError("evaluate_ed: no gold videos");
  std::map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.video_id, &p).second) throw DataError("evaluate_ed: duplicate prediction for " + p.video_id);
  }
  EdReport report;
  for (const auto& g : gold) {
    auto it = by_id.find(g.video_id);
    if (it == by_id.end()) throw DataError("evaluate_ed: no prediction for video " + g.video_id);
    const auto& cands = it->second->candidates;
    VideoEd v{g.video_id, min_over_k_ed(cands, g.future, Field::kVerb), min_over_k_ed(cands, g.future, Field::kNoun),
              min_over_k_ed(cands, g.future, Field::kAction)};
    report.verb_ed += v.verb_ed;
    report.noun_ed += v.noun_ed;
    report.action_ed += v.action_ed;
    report.per_video.push_back(std::move(v));
  }
  const double n = static_cast<double>(gold.size());
  report.verb_ed /= n;
  report.noun_ed /= n;
  report.action_ed /= n;
  return report;
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("average_precision: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] != 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  if (hits == 0) throw DataError("average_precision: no positive labels");
  return sum / static_cast<double>(hits);
}

HorizonSplit horizon_split(const std::vector<TimedAction>& actions, double duration, int percent) {
  if (actions.empty()) throw DataError("horizon_split: video has no actions");
  if (!(duration > 0.0)) throw DataError("horizon_split: video duration must be positive");
  if (percent <= 0 || percent >= 100) throw ConfigError("horizon_split: percent must lie in (0, 100)");
  const double boundary = duration * static_cast<double>(percent) / 100.0;
  HorizonSplit out;
  std::set<std::size_t> verbs;
  for (const auto& a : actions) {
    if (a.start < boundary) {
      out.observed.push_back(a.label);
    } else {
      out.future.push_back(a.label);
      verbs.insert(a.label.verb_id);
    }
  }
  out.future_verbs.assign(verbs.begin(), verbs.end());
  return out;
}

ClassSplit make_class_split(std::span<const std::size_t> class_counts, std::size_t threshold) {
  ClassSplit s;
  s.threshold = threshold;
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    (class_counts[c] >= threshold ? s.freq_ids : s.rare_ids).insert(c);
  }
  return s;
}

std::vector<std::size_t> verb_counts(const std::vector<GoldVideo>& videos, std::size_t verb_count) {
  std::vector<std::size_t> counts(verb_count, 0);
  for (const auto& v : videos) {
    for (const auto& a : v.actions) {
      if (a.label.verb_id >= verb_count) throw DataError("verb_counts: verb id outside vocabulary");
      ++counts[a.label.verb_id];
    }
  }
  return counts;
}

Matrix horizon_targets(const std::vector<GoldVideo>& videos, std::size_t verb_count, int percent) {
  Matrix t(videos.size(), verb_count);
  for (std::size_t i = 0; i < videos.size(); ++i) {
    for (std::size_t v : horizon_split(videos[i].actions, videos[i].duration, percent).future_verbs) {
      if (v >= verb_count) throw DataError("horizon_targets: verb id outside vocabulary");
      t(i, v) = 1.0;
    }
  }
  return t;
}

MapReport map_report(const std::vector<HorizonInput>& horizons, const ClassSplit& split) {
  if (horizons.empty()) throw DataError("map_report: no horizons");
  MapReport report;
  std::vector<double> freq_values, rare_values;
  for (const auto& h : horizons) {
    if (h.scores.rows() != h.targets.rows() || h.scores.dims() != h.targets.dims()) {
      throw ShapeError("map_report: horizon " + std::to_string(h.percent) + " scores " + h.scores.shape_string() +
                       " vs targets " + h.targets.shape_string());
    }
    if (h.scores.dims() != horizons.front().scores.dims()) throw ShapeError("map_report: class count differs across horizons");
    HorizonReport hr;
    hr.percent = h.percent;
    std::vector<double> scores(h.scores.rows());
    std::vector<int> labels(h.scores.rows());
    double all = 0.0, freq = 0.0, rare = 0.0;
    for (std::size_t c = 0; c < h.scores.dims(); ++c) {
      int positives = 0;
      for (std::size_t r = 0; r < h.scores.rows(); ++r) {
        scores[r] = h.scores(r, c);
        labels[r] = h.targets(r, c) != 0.0 ? 1 : 0;
        positives += labels[r];
      }
      if (positives == 0) continue;
      const double ap = average_precision(scores, labels);
      hr.class_ap[c] = ap;
      all += ap;
      if (split.freq_ids.count(c)) {
        freq += ap;
        ++hr.freq_classes;
      } else {
        rare += ap;
        ++hr.rare_classes;
      }
    }
    hr.scored_classes = hr.class_ap.size();
    if (hr.scored_classes == 0) throw DataError("map_report: horizon " + std::to_string(h.percent) + " has no scoreable class");
    hr.all = all / static_cast<double>(hr.scored_classes);
    if (hr.freq_classes > 0) hr.freq = freq / static_cast<double>(hr.freq_classes);
    if (hr.rare_classes > 0) hr.rare = rare / static_cast<double>(hr.rare_classes);
    report.all += hr.all;
    if (hr.freq) freq_values.push_back(*hr.freq);
    if (hr.rare) rare_values.push_back(*hr.rare);
    report.horizons.push_back(std::move(hr));
  }
  report.all /= static_cast<double>(horizons.size());
  auto mean = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  report.freq = mean(freq_values);
  report.rare = mean(rare_values);
  return report;
}

std::string MapReport::to_json() const {
  json hs = json::array();
  for (const auto& h : horizons) {
    json ap = json::object();
    for (const auto& [c, v] : h.class_ap) ap[std::to_string(c)] = v;
    hs.push_back({{"percent", h.percent},
                  {"all", h.all},
                  {"freq", optional_json(h.freq)},
                  {"rare", optional_json(h.rare)},
                  {"scored_classes", h.scored_classes},
                  {"freq_classes", h.freq_classes},
                  {"rare_classes", h.rare_classes},
                  {"class_ap", ap}});
  }
  return json{{"all", all}, {"freq", optional_json(freq)}, {"rare", optional_json(rare)}, {"horizons", hs}}.dump(2);
}

std::string MapReport::to_csv() const {
  std::ostringstream out;
  out << "horizon,all,freq,rare,scored_classes,freq_classes,rare_classes\n";
  for (const auto& h : horizons) {
    out << h.percent << ',' << csv_number(h.all) << ',' << csv_number(h.freq) << ',' << csv_number(h.rare) << ','
        << h.scored_classes << ',' << h.freq_classes << ',' << h.rare_classes << '\n';
  }
  out << "mean," << csv_number(all) << ',' << csv_number(freq) << ',' << csv_number(rare) << ",,,\n";
  return out.str();
}

}  // namespace icvl::eval
