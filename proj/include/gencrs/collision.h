#pragma once

#include <set>
#include <vector>

#include "gencrs/common.h"
#include "gencrs/rqvae.h"

namespace gencrs {

// d[i][l][k] = squared distance between item i's level-l residual and codeword k.
class DistanceTensor {
 public:
  DistanceTensor(int n, int levels, int k) : n_(n), levels_(levels), k_(k),
      d_(static_cast<std::size_t>(n) * levels * k, 0.0) {}

  int items() const { return n_; }
  int levels() const { return levels_; }
  int codebook_size() const { return k_; }
  double& at(int i, int l, int k) { return d_[(static_cast<std::size_t>(i) * levels_ + l) * k_ + k]; }
  double at(int i, int l, int k) const { return d_[(static_cast<std::size_t>(i) * levels_ + l) * k_ + k]; }

 private:
  int n_, levels_, k_;
  std::vector<double> d_;
};

DistanceTensor compute_distance_tensor(const std::vector<QuantizationResult>& results,
                                       const std::vector<std::vector<double>>& codebooks, int codebook_size);

struct IdAssignment {
  std::vector<Codes> codes_by_item;
  std::set<std::size_t> changed;
};

// Makes every item's ID unique. Items whose raw ID is already unique are never
// touched; colliding items are reassigned at the last level first, backtracking
// toward level 1 in distance order. Throws kCapacityExceeded when items > K^L.
IdAssignment resolve_collisions(const std::vector<Codes>& raw, const std::vector<QuantizationResult>& results,
                                const std::vector<std::vector<double>>& codebooks, int codebook_size);

bool verify_unique(const IdAssignment& assignment, std::size_t total_items);

}  // namespace gencrs
