#include "tetmf/loops.hpp"

#include <stdexcept>

namespace tetmf {

LoopNest build_nest(Strategy strategy, int level) {
  if (level < 1) throw std::invalid_argument("build_nest: level >= 1 required");
  LoopNest nest;
  nest.strategy = strategy;
  nest.level = level;

  if (strategy == Strategy::sawtooth) {
    for (Orientation o : kAllOrientations) {
      LoopNest::Sweep s;
      int c = 0;
      switch (o) {
        case Orientation::WU: c = 0; break;
        case Orientation::WD: c = 2; break;
        default: c = 1; break;
      }
      s.zCut = s.yCut = s.xCut = c;
      s.loopBodies.push_back({o, 0});
      nest.sweeps.push_back(std::move(s));
    }
    return nest;
  }

  LoopNest::Sweep s;
  s.zCut = 0;
  s.yCut = 1; // rows of length one are handled by the shortRowWU body
  s.xCut = 2;
  for (Orientation o : kAllOrientations) s.loopBodies.push_back({o, 0});
  for (Orientation o : kCubesTailOrientations) s.tails.push_back({o, 2});
  s.tails.push_back({Orientation::WU, 1});
  s.shortRowWU = true;
  nest.sweeps.push_back(std::move(s));
  return nest;
}

TraversalOrder LoopNest::flatten(int macroId) const {
  const int n = lattice_extent(level);
  TraversalOrder order;
  order.strategy = strategy;
  for (const Sweep& s : sweeps) {
    for (int z = 0; z < n - s.zCut; ++z) {
      for (int y = 0; y < n - z - s.yCut; ++y) {
        for (int x = 0; x < n - z - y - s.xCut; ++x)
          for (const auto& b : s.loopBodies)
            order.elements.push_back({b.orientation, x, y, z, level, macroId});
        for (const auto& b : s.tails)
          order.elements.push_back({b.orientation, n - z - y - b.tailOffset, y, z, level, macroId});
      }
      if (s.shortRowWU)
        order.elements.push_back({Orientation::WU, 0, n - z - 1, z, level, macroId});
    }
  }
  return order;
}

long LoopNest::complete_cube_count() const {
  if (strategy != Strategy::cubes) return 0;
  const int n = lattice_extent(level);
  long count = 0;
  const Sweep& s = sweeps.front();
  for (int z = 0; z < n - s.zCut; ++z)
    for (int y = 0; y < n - z - s.yCut; ++y)
      count += std::max(n - z - y - s.xCut, 0);
  return count;
}

} // namespace tetmf
