#pragma once

#include <string>
#include <vector>

#include "icemamba/types.hpp"

namespace icemamba {

struct YearRange {
  int first = 0;
  int last = 0;

  Month begin() const { return {first, 1}; }
  Month end() const { return {last, 12}; }
  bool contains(Month m) const { return m.year >= first && m.year <= last; }
  std::string str() const { return std::to_string(first) + "-" + std::to_string(last); }
  bool operator==(const YearRange&) const = default;
};

struct Splits {
  YearRange train;
  YearRange valid;
  YearRange test;

  /// Ordered, non-empty, gap-free and disjoint.
  void validate() const {
    for (const auto* r : {&train, &valid, &test}) {
      if (r->first > r->last) throw UsageError("split range " + r->str() + " is empty");
    }
    if (valid.first != train.last + 1 || test.first != valid.last + 1) {
      throw UsageError("splits must be consecutive: train " + train.str() + ", valid " + valid.str() +
                       ", test " + test.str());
    }
  }
};

/// 1979-2010 train, 2011-2014 valid, 2015-2022 test.
inline Splits fixed_splits() { return {{1979, 2010}, {2011, 2014}, {2015, 2022}}; }

/// Rolling recalibration for target year Y: train Jan 1979 - Dec Y-5,
/// valid Jan Y-4 - Dec Y-1, test Y.
inline Splits rolling_splits(int target_year) {
  if (target_year < 1984) {
    throw UsageError("rolling splits need target year >= 1984, got " + std::to_string(target_year));
  }
  Splits s{{1979, target_year - 5}, {target_year - 4, target_year - 1}, {target_year, target_year}};
  s.validate();
  return s;
}

inline Splits custom_splits(YearRange train, YearRange valid, YearRange test) {
  Splits s{train, valid, test};
  s.validate();
  return s;
}

/// Initialisations whose whole input history (`history` months) and all
/// `leads` target months fall inside `range`.
inline std::vector<Month> sample_inits(const YearRange& range, std::size_t leads, std::size_t history = kSicLags) {
  std::vector<Month> out;
  const long first = range.begin().index() + static_cast<long>(history);
  const long last = range.end().index() - static_cast<long>(leads) + 1;
  for (long m = first; m <= last; ++m) out.push_back(Month::from_index(m));
  return out;
}

}  // namespace icemamba
