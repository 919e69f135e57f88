#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "loclesion/common.hpp"

namespace loclesion {

/// One coordinate of a block's output hidden state.
struct Unit {
  std::uint32_t block = 0;
  std::uint32_t index = 0;

  friend auto operator<=>(const Unit&, const Unit&) = default;
};

/// Binary M x H selection, stored as the sorted list of selected units.
struct UnitMask {
  std::string model_id;
  std::uint32_t blocks = 0;
  std::uint32_t hidden = 0;
  std::vector<Unit> selected;
  Selection condition = Selection::Top;
  Percent k_percent;
  std::optional<std::uint64_t> seed;
  Localizer localizer = Localizer::None;

  std::size_t unit_count() const { return static_cast<std::size_t>(blocks) * hidden; }

  bool contains(Unit u) const { return std::binary_search(selected.begin(), selected.end(), u); }

  /// Raises InvariantViolation when the mask is internally inconsistent.
  void validate() const {
    auto bad = [](const std::string& what) { fail(ErrorCode::InvariantViolation, "mask: " + what); };
    if (blocks == 0 || hidden == 0) bad("dimensions must be positive");
    if (!k_percent.valid()) bad("k_percent must be in (0, 100]");
    for (std::size_t n = 0; n < selected.size(); ++n) {
      const Unit& u = selected[n];
      if (u.block >= blocks || u.index >= hidden)
        bad("unit (" + std::to_string(u.block) + ", " + std::to_string(u.index) + ") out of range");
      if (n > 0 && !(selected[n - 1] < u)) bad("selected units must be unique and sorted ascending");
    }
    if (selected.size() != k_percent.count_of(unit_count()))
      bad("holds " + std::to_string(selected.size()) + " units, expected " +
          std::to_string(k_percent.count_of(unit_count())));
    if (condition == Selection::Random && !seed) bad("random mask without seed");
  }

  friend bool operator==(const UnitMask&, const UnitMask&) = default;
};

}  // namespace loclesion
