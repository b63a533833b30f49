#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gradenet/parallel.hpp"
#include "gradenet/rng.hpp"
#include "gradenet/sample.hpp"

namespace gradenet {

struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }

  void add(int truth, int predicted) {
    if (truth == 1) {
      (predicted == 1 ? tp : fn)++;
    } else {
      (predicted == 1 ? fp : tn)++;
    }
  }

  /// Same matrix with the positive and negative classes exchanged.
  ConfusionMatrix swapped() const { return {tn, fn, tp, fp}; }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct Metrics {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  double sensitivity = 0, specificity = 0;
  bool precision_undefined = false, recall_undefined = false, f1_undefined = false;
  bool specificity_undefined = false;
};

/// Ratios with a zero denominator are reported as 0 and flagged.
inline Metrics metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw DataError("metrics of an empty confusion matrix");
  Metrics m;
  auto ratio = [](double num, double den, bool& undefined) {
    undefined = den == 0;
    return undefined ? 0.0 : num / den;
  };
  m.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  m.precision = ratio(static_cast<double>(cm.tp), static_cast<double>(cm.tp + cm.fp), m.precision_undefined);
  m.recall = ratio(static_cast<double>(cm.tp), static_cast<double>(cm.tp + cm.fn), m.recall_undefined);
  m.f1 = ratio(2 * m.precision * m.recall, m.precision + m.recall, m.f1_undefined);
  m.f1_undefined = m.f1_undefined || m.precision_undefined || m.recall_undefined;
  m.sensitivity = m.recall;
  m.specificity = ratio(static_cast<double>(cm.tn), static_cast<double>(cm.tn + cm.fp), m.specificity_undefined);
  return m;
}

// ---------------------------------------------------------------------------
// Voting

enum class Vote { negative, positive, ambiguous };

inline const char* to_string(Vote v) {
  switch (v) {
    case Vote::negative: return "negative";
    case Vote::positive: return "positive";
    case Vote::ambiguous: return "ambiguous";
  }
  return "?";
}

struct VoteResult {
  Vote vote = Vote::ambiguous;
  std::size_t positive = 0, negative = 0;
};

inline constexpr double kDecisionThreshold = 0.5;

/// Each probability >= threshold votes positive; an exact tie is ambiguous.
inline VoteResult majority_vote(std::span<const double> probabilities, double threshold = kDecisionThreshold) {
  if (probabilities.empty()) throw DataError("majority vote over an empty list");
  VoteResult r;
  for (double p : probabilities) (p >= threshold ? r.positive : r.negative)++;
  r.vote = r.positive > r.negative ? Vote::positive : r.negative > r.positive ? Vote::negative : Vote::ambiguous;
  return r;
}

enum class Verdict { correct, incorrect, ambiguous };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::correct: return "correct";
    case Verdict::incorrect: return "incorrect";
    case Verdict::ambiguous: return "ambiguous";
  }
  return "?";
}

struct PatientVerdict {
  std::string patient_id;
  int label = 0;
  Verdict verdict = Verdict::ambiguous;
  std::size_t positive_votes = 0, negative_votes = 0;

  friend bool operator==(const PatientVerdict&, const PatientVerdict&) = default;
};

inline PatientVerdict make_verdict(const std::string& id, int label, std::span<const double> probabilities,
                                   double threshold = kDecisionThreshold) {
  const auto v = majority_vote(probabilities, threshold);
  PatientVerdict out{id, label, Verdict::ambiguous, v.positive, v.negative};
  if (v.vote != Vote::ambiguous) out.verdict = (v.vote == Vote::positive) == (label == 1) ? Verdict::correct : Verdict::incorrect;
  return out;
}

/// One verdict per patient (sorted by id) from per-item probabilities
/// aligned with `items`.
template <class Item>
std::vector<PatientVerdict> patient_verdicts(const std::vector<Item>& items, std::span<const double> probabilities,
                                             double threshold = kDecisionThreshold) {
  if (items.size() != probabilities.size()) throw ShapeError("one probability per item expected");
  std::map<std::string, std::pair<int, std::vector<double>>> groups;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& g = groups[items[i].patient_id];
    if (!g.second.empty() && g.first != items[i].label)
      throw DataError("patient " + items[i].patient_id + " has samples with conflicting labels");
    g.first = items[i].label;
    g.second.push_back(probabilities[i]);
  }
  std::vector<PatientVerdict> out;
  for (const auto& [id, g] : groups) out.push_back(make_verdict(id, g.first, g.second, threshold));
  return out;
}

// ---------------------------------------------------------------------------
// Summary rows

struct LopoSummary {
  std::string model;
  std::size_t classified = 0, misclassified = 0, ambiguous = 0;

  std::size_t total() const { return classified + misclassified + ambiguous; }
  double accuracy() const {
    if (total() == 0) throw DataError("summary over zero patients");
    return static_cast<double>(classified) / static_cast<double>(total());
  }
};

inline LopoSummary summarize(const std::string& model, const std::vector<PatientVerdict>& verdicts) {
  LopoSummary s{model};
  for (const auto& v : verdicts) {
    if (v.verdict == Verdict::correct) ++s.classified;
    else if (v.verdict == Verdict::incorrect) ++s.misclassified;
    else ++s.ambiguous;
  }
  return s;
}

/// Percentage with two decimals, e.g. 0.971929.. -> "97.19".
inline std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

// ---------------------------------------------------------------------------
// Protocols

struct LopoResult {
  std::vector<PatientVerdict> verdicts;     // patient-id order
  LopoSummary summary;
  std::vector<std::vector<std::string>> fold_training_patients;  // per verdict
};

/// Leave-one-patient-out. `trainer(train_set, test_set, fold_seed)` returns
/// one probability per test item. Folds may run in parallel; the fold seed
/// is derived from (seed, patient index) so results do not depend on `jobs`.
template <class Trainer>
LopoResult lopo_run(const Dataset& data, Trainer&& trainer, std::uint64_t seed, const std::string& model = "",
                    std::size_t jobs = 1, double threshold = kDecisionThreshold,
                    const std::vector<std::string>& cohort = {}) {
  const auto ids = patient_ids(data);
  if (!cohort.empty()) {
    const std::set<std::string> present(ids.begin(), ids.end());
    for (const auto& c : cohort)
      if (!present.count(c)) throw DataError("patient " + c + " has zero samples");
  }
  if (ids.size() < 2) throw DataError("LOPO needs at least 2 patients, got " + std::to_string(ids.size()));
  LopoResult out;
  out.verdicts.resize(ids.size());
  out.fold_training_patients.resize(ids.size());
  parallel_for(ids.size(), jobs, [&](std::size_t k) {
    Dataset train_set, test_set;
    for (const auto& s : data) (s.patient_id == ids[k] ? test_set : train_set).push_back(s);
    out.fold_training_patients[k] = patient_ids(train_set);
    const std::vector<double> probs = trainer(std::as_const(train_set), std::as_const(test_set), derive_seed(seed, {k}));
    const auto v = patient_verdicts(test_set, probs, threshold);
    if (v.size() != 1) throw DataError("fold " + ids[k] + " produced no verdict");
    out.verdicts[k] = v.front();
  });
  out.summary = summarize(model, out.verdicts);
  return out;
}

struct HoldoutReport {
  std::vector<PatientVerdict> verdicts;
  ConfusionMatrix matrix;  // ambiguous patients excluded
  std::size_t ambiguous = 0;
  LopoSummary summary;

  /// classified / all holdout patients (ambiguous count as not classified).
  double accuracy() const { return summary.accuracy(); }
};

inline void check_disjoint(const std::vector<std::string>& holdout, const std::vector<std::string>& training) {
  const std::set<std::string> t(training.begin(), training.end());
  for (const auto& id : holdout)
    if (t.count(id)) throw DataError("holdout patient " + id + " also appears in the training set");
}

/// Patient-level holdout report from per-item probabilities aligned with
/// `holdout`. Patient ids must be disjoint from `training_patients`.
inline HoldoutReport holdout_eval(const Dataset& holdout, std::span<const double> probabilities,
                                  const std::vector<std::string>& training_patients, const std::string& model = "",
                                  double threshold = kDecisionThreshold) {
  if (holdout.empty()) throw DataError("empty holdout set");
  check_disjoint(patient_ids(holdout), training_patients);
  HoldoutReport r;
  r.verdicts = patient_verdicts(holdout, probabilities, threshold);
  for (const auto& v : r.verdicts) {
    if (v.verdict == Verdict::ambiguous) {
      ++r.ambiguous;
      continue;
    }
    const int predicted = v.verdict == Verdict::correct ? v.label : 1 - v.label;
    r.matrix.add(v.label, predicted);
  }
  r.summary = summarize(model, r.verdicts);
  return r;
}

// ---------------------------------------------------------------------------
// Reports

inline void write_summary_csv(const std::filesystem::path& path, const std::vector<LopoSummary>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << "model,classified,misclassified,ambiguous,accuracy\n";
  for (const auto& r : rows)
    os << r.model << ',' << r.classified << ',' << r.misclassified << ',' << r.ambiguous << ','
       << format_percent(r.accuracy()) << '\n';
}

inline void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << "actual,predicted_positive,predicted_negative\n"
     << "positive," << cm.tp << ',' << cm.fn << '\n'
     << "negative," << cm.fp << ',' << cm.tn << '\n';
}

inline void write_metrics_csv(const std::filesystem::path& path, const Metrics& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  char buf[256];
  std::snprintf(buf, sizeof buf, "accuracy,%.6f\nprecision,%.6f\nrecall,%.6f\nf1,%.6f\nsensitivity,%.6f\nspecificity,%.6f\n",
                m.accuracy, m.precision, m.recall, m.f1, m.sensitivity, m.specificity);
  os << "metric,value\n" << buf;
}

inline void write_verdicts_tsv(const std::filesystem::path& path, const std::vector<PatientVerdict>& verdicts) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& v : verdicts)
    os << v.patient_id << '\t' << v.label << '\t' << to_string(v.verdict) << '\t' << v.positive_votes << '\t'
       << v.negative_votes << '\n';
}

}  // namespace gradenet
