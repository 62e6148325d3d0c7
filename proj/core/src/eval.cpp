#include "krone/eval.hpp"

#include <cstdio>
#include <set>

#include "krone/error.hpp"

namespace krone {

using json = nlohmann::json;

MetricsReport MetricsReport::from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  MetricsReport m{tp, fp, tn, fn, 0, 0, 0};
  if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (m.precision + m.recall > 0) m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

json MetricsReport::to_json() const {
  return {{"tp", tp}, {"fp", fp}, {"tn", tn}, {"fn", fn}, {"precision", precision}, {"recall", recall}, {"f1", f1}};
}

MetricsReport compute_metrics(std::span<const bool> predictions, std::span<const bool> labels) {
  if (predictions.size() != labels.size())
    throw ContractError("predictions (" + std::to_string(predictions.size()) + ") and labels (" +
                        std::to_string(labels.size()) + ") differ in length");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i]) {
      (labels[i] ? tp : fp)++;
    } else {
      (labels[i] ? fn : tn)++;
    }
  }
  return MetricsReport::from_counts(tp, fp, tn, fn);
}

MetricsReport compute_metrics(std::span<const SequenceReport> reports) {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (const auto& r : reports) {
    if (!r.label) continue;
    if (r.final_verdict) {
      (*r.label ? tp : fp)++;
    } else {
      (*r.label ? fn : tn)++;
    }
  }
  return MetricsReport::from_counts(tp, fp, tn, fn);
}

json StructureReport::to_json() const {
  json lv = json::object();
  for (auto level : kBottomUpLevels) {
    const auto& s = levels[level_slot(level)];
    lv[std::string(to_string(level))] = {
        {"nodes", s.nodes}, {"unique_seqs", s.unique_seqs}, {"occurrences", s.occurrences}, {"reuse", s.reuse}};
  }
  auto by_set = [](const std::array<std::size_t, 3>& a) { return json{{"S", a[0]}, {"SA", a[1]}, {"SAE", a[2]}}; };
  return {{"levels", std::move(lv)},
          {"raw_test_keys", raw_test_keys},
          {"test_sequences", test_sequences},
          {"key_counts", by_set(key_counts)},
          {"unique_key_counts", by_set(unique_key_counts)},
          {"evaluated_key_counts", by_set(evaluated_key_counts)},
          {"llm_calls", llm_calls},
          {"llm_call_ratio", llm_call_ratio}};
}

StructureReport structure_report(const KbSet& kbs, const KroneTree& tree,
                                 std::span<const DecompositionResult> test_decompositions,
                                 std::span<const SequenceReport> reports) {
  StructureReport out;
  for (auto level : kBottomUpLevels) {
    auto& s = out.levels[level_slot(level)];
    s.nodes = tree.count(level);
    for (const auto& e : kbs.train_kb(level).entries()) {
      ++s.unique_seqs;
      s.occurrences += e.occurrence_count;
    }
    s.reuse = s.unique_seqs ? static_cast<double>(s.occurrences) / static_cast<double>(s.unique_seqs) : 0.0;
  }

  std::array<std::size_t, 3> per_level{};
  std::array<std::size_t, 3> per_level_unique{};
  std::array<std::set<std::string>, 3> seen;
  for (const auto& d : test_decompositions) {
    ++out.test_sequences;
    out.raw_test_keys += d.e_seq.chunk.size();
    for (const auto* seq : bottom_up(d)) {
      const auto slot = level_slot(seq->level);
      per_level[slot] += seq->chunk.size();
      if (seen[slot].insert(seq->signature + "\x1f" + chunk_key(seq->chunk)).second)
        per_level_unique[slot] += seq->chunk.size();
    }
  }
  std::array<std::size_t, 3> evaluated{};
  for (const auto& r : reports) {
    out.llm_calls += r.counters.llm_calls;
    for (std::size_t i = 0; i < 3; ++i) evaluated[i] += r.counters.keys_processed[i];
  }
  for (std::size_t i = 0; i < 3; ++i) {
    out.key_counts[i] = (i ? out.key_counts[i - 1] : 0) + per_level[i];
    out.unique_key_counts[i] = (i ? out.unique_key_counts[i - 1] : 0) + per_level_unique[i];
    out.evaluated_key_counts[i] = (i ? out.evaluated_key_counts[i - 1] : 0) + evaluated[i];
  }
  const auto n = reports.empty() ? out.test_sequences : reports.size();
  out.llm_call_ratio = n ? static_cast<double>(out.llm_calls) / static_cast<double>(n) : 0.0;
  return out;
}

std::string attribution_bucket(std::span<const Level> levels) {
  std::string out;
  for (auto [level, tag] : {std::pair{Level::status, "S"}, std::pair{Level::action, "A"}, std::pair{Level::entity, "E"}}) {
    for (auto l : levels) {
      if (l == level) {
        if (!out.empty()) out += '+';
        out += tag;
        break;
      }
    }
  }
  return out.empty() ? "none" : out;
}

AttributionReport attribution_report(std::span<const SequenceReport> reports) {
  AttributionReport out;
  for (const auto& r : reports) {
    if (!r.label || !*r.label) continue;
    ++out.anomalies;
    ++out.buckets[attribution_bucket(r.abnormal_levels())];
  }
  return out;
}

double AttributionReport::fraction(const std::string& bucket) const {
  auto it = buckets.find(bucket);
  if (it == buckets.end() || anomalies == 0) return 0.0;
  return static_cast<double>(it->second) / static_cast<double>(anomalies);
}

json AttributionReport::to_json() const {
  json b = json::object();
  for (const auto& [name, count] : buckets) b[name] = {{"count", count}, {"fraction", fraction(name)}};
  return {{"anomalies", anomalies}, {"buckets", std::move(b)}};
}

std::string format_summary(const MetricsReport& m, const StructureReport* s) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-10s %8s %8s %8s %8s\n", "", "TP", "FP", "TN", "FN");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %8zu %8zu %8zu %8zu\n", "counts", m.tp, m.fp, m.tn, m.fn);
  out += buf;
  std::snprintf(buf, sizeof buf, "precision %.4f  recall %.4f  f1 %.4f\n", m.precision, m.recall, m.f1);
  out += buf;
  if (s) {
    std::snprintf(buf, sizeof buf, "%-10s %8s %8s %12s %8s\n", "level", "nodes", "unique", "occurrences", "reuse");
    out += buf;
    for (auto level : kBottomUpLevels) {
      const auto& l = s->levels[level_slot(level)];
      std::snprintf(buf, sizeof buf, "%-10s %8zu %8zu %12zu %8.2f\n", std::string(to_string(level)).c_str(), l.nodes,
                    l.unique_seqs, l.occurrences, l.reuse);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "keys raw %zu  S %zu  SA %zu  SAE %zu  llm calls %zu\n", s->raw_test_keys,
                  s->evaluated_key_counts[0], s->evaluated_key_counts[1], s->evaluated_key_counts[2], s->llm_calls);
    out += buf;
  }
  return out;
}

}  // namespace krone
