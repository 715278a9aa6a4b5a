#pragma once

#include <filesystem>
#include <vector>

#include "fedskd/tensor.hpp"

namespace fedskd {

// Region id per spatial position (row-major), 1..regions, 0 = unassigned.
struct RegionMaskSet {
    Shape spatial;
    std::vector<int> assignments;
    int regions = 0;

    // Throws EmptyRegionError / MismatchError when the invariants fail.
    void validate() const;
    std::vector<std::size_t> region_sizes() const;
};

// Nearest-neighbour resampling to another spatial shape of the same rank:
// src = min(floor(dst * in / out), in - 1) per axis. Throws EmptyRegionError
// when a region vanishes at the target resolution.
RegionMaskSet resample_masks(const RegionMaskSet& masks, const Shape& target);

// Text archive:
//   FEDSKD-REGIONS 1 <d> <s1> ... <sd> <r>
//   <prod(s) region ids, row-major, whitespace separated>
// Lines starting with '#' are ignored.
void save_region_masks(const RegionMaskSet& masks, const std::filesystem::path& path);
RegionMaskSet load_region_masks(const std::filesystem::path& path);

}  // namespace fedskd
