#pragma once

#include <array>
#include <vector>

#include "tetmf/mesh.hpp"

namespace tetmf {

// Abstract loop skeleton of one macro sweep. A sweep is a triple nest
//   for z in [0, n - zCut)
//     for y in [0, n - z - yCut)
//       for x in [0, n - z - y - xCut)   <- batchable
// with element bodies inside the x loop, optional tail bodies executed per
// (z,y) row at fixed positions x = n - z - y - tailOffset, and (cubes only)
// a degenerate length-one row that carries just the final WU element.
struct LoopNest {
  struct ElementBody {
    Orientation orientation;
    // 0: x comes from the loop counter; 1 or 2: body sits at the fixed row
    // position x = n - z - y - tailOffset
    int tailOffset = 0;
  };

  struct Sweep {
    int zCut = 0, yCut = 0, xCut = 0;
    std::vector<ElementBody> loopBodies; // inside the x loop
    std::vector<ElementBody> tails;      // after the x loop, per row
    bool shortRowWU = false;             // cubes: WU at (0, n - z - 1, z)
  };

  Strategy strategy = Strategy::sawtooth;
  int level = 0;
  std::vector<Sweep> sweeps;

  TraversalOrder flatten(int macroId) const;

  // number of x iterations executing all six orientations (cubes)
  long complete_cube_count() const;
};

inline constexpr std::array<Orientation, 5> kCubesTailOrientations = {
    Orientation::WU, Orientation::GU, Orientation::GD, Orientation::BU, Orientation::BD};

LoopNest build_nest(Strategy strategy, int level);

} // namespace tetmf
