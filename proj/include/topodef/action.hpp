#pragma once

#include <string>

#include "topodef/scenario.hpp"

namespace topodef {

/// Per-host action enumeration; decoys occupy 3..9 in DecoyKind order.
enum class LocalAction : int { Analyse = 0, Remove = 1, Restore = 2, DecoyFirst = 3 };
enum class GlobalAction : int { Sleep = 0, Monitor = 1 };

inline constexpr int kLocalActions = 10;
inline constexpr int kGlobalActions = 2;
inline constexpr int kGlobalNode = -1;

/// A blue (defender) action. Global actions carry node == kGlobalNode and
/// index in GlobalAction; per-host actions carry the node and a LocalAction
/// index. Local indices beyond the ten defined kinds are accepted as per-host
/// no-ops so that wider policy heads stay runnable.
struct BlueAction {
  int node = kGlobalNode;
  int index = 0;

  static BlueAction sleep() { return {kGlobalNode, static_cast<int>(GlobalAction::Sleep)}; }
  static BlueAction monitor() { return {kGlobalNode, static_cast<int>(GlobalAction::Monitor)}; }
  static BlueAction analyse(int node) { return {node, static_cast<int>(LocalAction::Analyse)}; }
  static BlueAction remove(int node) { return {node, static_cast<int>(LocalAction::Remove)}; }
  static BlueAction restore(int node) { return {node, static_cast<int>(LocalAction::Restore)}; }
  static BlueAction decoy(int node, DecoyKind kind) {
    return {node, static_cast<int>(LocalAction::DecoyFirst) + static_cast<int>(kind)};
  }

  bool is_global() const { return node == kGlobalNode; }
  bool is(LocalAction a) const { return !is_global() && index == static_cast<int>(a); }
  bool is(GlobalAction a) const { return is_global() && index == static_cast<int>(a); }
  bool is_decoy() const {
    return !is_global() && index >= static_cast<int>(LocalAction::DecoyFirst) &&
           index < static_cast<int>(LocalAction::DecoyFirst) + kDecoyKinds;
  }
  DecoyKind decoy_kind() const { return static_cast<DecoyKind>(index - static_cast<int>(LocalAction::DecoyFirst)); }

  bool operator==(const BlueAction&) const = default;
};

/// Human-readable label, e.g. "Restore(User1)" or "Sleep".
std::string describe(const BlueAction& a, const Scenario& s);

}  // namespace topodef
