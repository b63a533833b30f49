#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "gradenet/error.hpp"
#include "gradenet/tensor.hpp"

namespace gradenet {

/// Patient-level class labels. HGG and codeleted are the positive class (1)
/// of their respective binary tasks.
enum class Grade { hgg, lgg, codeleted, non_deleted };

inline const char* to_string(Grade g) {
  switch (g) {
    case Grade::hgg: return "HGG";
    case Grade::lgg: return "LGG";
    case Grade::codeleted: return "codeleted";
    case Grade::non_deleted: return "non-deleted";
  }
  return "?";
}

inline Grade parse_grade(const std::string& s) {
  if (s == "HGG") return Grade::hgg;
  if (s == "LGG") return Grade::lgg;
  if (s == "codeleted") return Grade::codeleted;
  if (s == "non-deleted") return Grade::non_deleted;
  throw DataError("unknown grade label '" + s + "'");
}

inline int binary_label(Grade g) { return g == Grade::hgg || g == Grade::codeleted ? 1 : 0; }

/// One training/evaluation item: a [C,H,W] stack per network branch.
struct Sample {
  std::string patient_id;
  int label = 0;
  std::vector<Tensor<float>> inputs;
};

using Dataset = std::vector<Sample>;

template <class Item>
std::vector<std::string> patient_ids(const std::vector<Item>& items) {
  std::set<std::string> ids;
  for (const auto& s : items) ids.insert(s.patient_id);
  return {ids.begin(), ids.end()};
}

}  // namespace gradenet
