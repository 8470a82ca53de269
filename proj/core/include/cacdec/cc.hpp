// Connected component labeling on 3D grids (6 or 26 connectivity).

#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace cacdec {

struct ComponentLabels {
  std::vector<int32_t> labels;  // 0 = background, components numbered from 1
  int count = 0;
};

inline ComponentLabels connected_components(const std::vector<uint8_t>& fg, int nx, int ny,
                                            int nz, int connectivity = 26) {
  if (connectivity != 6 && connectivity != 26)
    throw std::invalid_argument("connected_components: connectivity must be 6 or 26");
  ComponentLabels out;
  out.labels.assign(fg.size(), 0);
  std::vector<size_t> stack;
  auto idx = [nx, ny](int x, int y, int z) {
    return static_cast<size_t>(z) * ny * nx + static_cast<size_t>(y) * nx + x;
  };
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        size_t i = idx(x, y, z);
        if (!fg[i] || out.labels[i]) continue;
        int32_t lab = ++out.count;
        out.labels[i] = lab;
        stack.push_back(i);
        while (!stack.empty()) {
          size_t cur = stack.back();
          stack.pop_back();
          int cz = static_cast<int>(cur / (static_cast<size_t>(ny) * nx));
          int rem = static_cast<int>(cur % (static_cast<size_t>(ny) * nx));
          int cy = rem / nx, cx = rem % nx;
          for (int dz = -1; dz <= 1; ++dz) {
            for (int dy = -1; dy <= 1; ++dy) {
              for (int dx = -1; dx <= 1; ++dx) {
                if (dx == 0 && dy == 0 && dz == 0) continue;
                if (connectivity == 6 && std::abs(dx) + std::abs(dy) + std::abs(dz) != 1)
                  continue;
                int nx2 = cx + dx, ny2 = cy + dy, nz2 = cz + dz;
                if (nx2 < 0 || nx2 >= nx || ny2 < 0 || ny2 >= ny || nz2 < 0 || nz2 >= nz)
                  continue;
                size_t j = idx(nx2, ny2, nz2);
                if (fg[j] && !out.labels[j]) {
                  out.labels[j] = lab;
                  stack.push_back(j);
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

}  // namespace cacdec
