#include "gencrs/collision.h"

#include <algorithm>
#include <map>
#include <numeric>

namespace gencrs {

DistanceTensor compute_distance_tensor(const std::vector<QuantizationResult>& results,
                                       const std::vector<std::vector<double>>& codebooks, int codebook_size) {
  const int levels = static_cast<int>(codebooks.size());
  DistanceTensor d(static_cast<int>(results.size()), levels, codebook_size);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (static_cast<int>(r.residuals.size()) < levels) {
      throw Error(ErrorCode::kMismatch, "distance tensor: item " + std::to_string(i) + " has " +
                                            std::to_string(r.residuals.size()) + " residual levels, need " +
                                            std::to_string(levels));
    }
    for (int l = 0; l < levels; ++l) {
      const std::size_t dim = r.residuals[l].size();
      if (codebooks[l].size() != dim * static_cast<std::size_t>(codebook_size)) {
        throw Error(ErrorCode::kMismatch, "distance tensor: residual dimension does not match codebook level " +
                                              std::to_string(l));
      }
      for (int k = 0; k < codebook_size; ++k) {
        d.at(static_cast<int>(i), l, k) =
            squared_distance(r.residuals[l], std::span<const double>(codebooks[l].data() + k * dim, dim));
      }
    }
  }
  return d;
}

namespace {

// Codeword indices for one item and level, nearest first, ties by index.
std::vector<int> ranking(const DistanceTensor& d, int item, int level) {
  std::vector<int> order(static_cast<std::size_t>(d.codebook_size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return d.at(item, level, a) < d.at(item, level, b); });
  return order;
}

bool exceeds_capacity(std::size_t items, int k, int levels) {
  long double cap = 1.0L;
  for (int l = 0; l < levels; ++l) cap *= static_cast<long double>(k);
  return static_cast<long double>(items) > cap;
}

}  // namespace

IdAssignment resolve_collisions(const std::vector<Codes>& raw, const std::vector<QuantizationResult>& results,
                                const std::vector<std::vector<double>>& codebooks, int codebook_size) {
  const int levels = static_cast<int>(codebooks.size());
  if (raw.size() != results.size()) {
    throw Error(ErrorCode::kMismatch, "resolve_collisions: raw codes and quantization results differ in length");
  }
  if (exceeds_capacity(raw.size(), codebook_size, levels)) {
    throw Error(ErrorCode::kCapacityExceeded, "resolve_collisions: " + std::to_string(raw.size()) +
                                                  " items exceed the ID capacity " + std::to_string(codebook_size) +
                                                  "^" + std::to_string(levels));
  }

  std::map<Codes, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (static_cast<int>(raw[i].size()) != levels)
      throw Error(ErrorCode::kMismatch, "resolve_collisions: item " + std::to_string(i) + " has wrong code length");
    by_id[raw[i]].push_back(i);
  }

  IdAssignment out;
  out.codes_by_item = raw;
  std::set<Codes> occupied;
  std::vector<const std::vector<std::size_t>*> groups;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& members = by_id.at(raw[i]);
    if (members.size() == 1) {
      occupied.insert(raw[i]);
    } else if (members.front() == i) {
      groups.push_back(&members);  // ordered by first catalog position
    }
  }

  for (const auto* group : groups) {
    std::vector<QuantizationResult> group_results;
    for (std::size_t pos : *group) group_results.push_back(results[pos]);
    const DistanceTensor d = compute_distance_tensor(group_results, codebooks, codebook_size);
    const int n = static_cast<int>(group->size());

    // Most confident last-level assignment first; ties by catalog position.
    std::vector<double> confidence(n);
    for (int i = 0; i < n; ++i) {
      double best = d.at(i, levels - 1, 0);
      for (int k = 1; k < codebook_size; ++k) best = std::min(best, d.at(i, levels - 1, k));
      confidence[i] = best;
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return confidence[a] < confidence[b]; });

    for (int i : order) {
      std::vector<std::vector<int>> ranked(levels);
      for (int l = 0; l < levels; ++l) ranked[l] = ranking(d, i, l);

      // Depth-first over rank tuples, last level fastest: exhausting level l
      // advances level l-1 to its next-nearest codeword and resets deeper levels.
      std::vector<int> rank(levels, 0);
      Codes candidate(levels);
      bool placed = false;
      while (!placed) {
        for (int l = 0; l < levels; ++l) candidate[l] = ranked[l][rank[l]];
        if (!occupied.count(candidate)) {
          placed = true;
          break;
        }
        int l = levels - 1;
        while (l >= 0 && ++rank[l] == codebook_size) {
          rank[l] = 0;
          --l;
        }
        if (l < 0) break;
      }
      if (!placed) {
        throw Error(ErrorCode::kCapacityExceeded, "resolve_collisions: no free ID left for item " +
                                                      std::to_string((*group)[i]));
      }
      occupied.insert(candidate);
      const std::size_t pos = (*group)[i];
      if (candidate != raw[pos]) out.changed.insert(pos);
      out.codes_by_item[pos] = candidate;
    }
  }
  return out;
}

bool verify_unique(const IdAssignment& assignment, std::size_t total_items) {
  if (assignment.codes_by_item.size() != total_items) return false;
  std::set<Codes> seen(assignment.codes_by_item.begin(), assignment.codes_by_item.end());
  return seen.size() == total_items;
}

}  // namespace gencrs
