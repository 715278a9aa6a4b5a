#include "fedskd/region_masks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fedskd/errors.hpp"

namespace fedskd {

void RegionMaskSet::validate() const {
    if (regions < 1) throw MismatchError("region masks: region count must be >= 1");
    if (assignments.size() != shape_numel(spatial)) {
        throw MismatchError("region masks: " + std::to_string(assignments.size()) + " ids for spatial shape " +
                            shape_to_string(spatial));
    }
    for (int id : assignments) {
        if (id < 0 || id > regions) {
            throw MismatchError("region masks: id " + std::to_string(id) + " outside 0.." + std::to_string(regions));
        }
    }
    const auto sizes = region_sizes();
    for (int k = 0; k < regions; ++k) {
        if (sizes[k] == 0) {
            throw EmptyRegionError("region " + std::to_string(k + 1) + " is empty at spatial shape " +
                                   shape_to_string(spatial));
        }
    }
}

std::vector<std::size_t> RegionMaskSet::region_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(std::max(regions, 0)), 0);
    for (int id : assignments) {
        if (id >= 1 && id <= regions) ++sizes[id - 1];
    }
    return sizes;
}

RegionMaskSet resample_masks(const RegionMaskSet& masks, const Shape& target) {
    if (target.size() != masks.spatial.size()) {
        throw ShapeRankError("region masks: rank " + std::to_string(masks.spatial.size()) +
                             " cannot be resampled to " + shape_to_string(target));
    }
    if (target == masks.spatial) return masks;

    const std::size_t d = target.size();
    std::vector<std::vector<std::size_t>> src_index(d);
    for (std::size_t a = 0; a < d; ++a) {
        const double scale = static_cast<double>(masks.spatial[a]) / static_cast<double>(target[a]);
        src_index[a].resize(target[a]);
        for (std::size_t o = 0; o < target[a]; ++o) {
            const auto s = static_cast<std::size_t>(std::floor(static_cast<double>(o) * scale));
            src_index[a][o] = std::min(s, masks.spatial[a] - 1);
        }
    }

    RegionMaskSet out{target, std::vector<int>(shape_numel(target)), masks.regions};
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t flat = 0; flat < out.assignments.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t a = 0; a < d; ++a) src = src * masks.spatial[a] + src_index[a][idx[a]];
        out.assignments[flat] = masks.assignments[src];
        for (std::size_t a = d; a-- > 0;) {
            if (++idx[a] < target[a]) break;
            idx[a] = 0;
        }
    }
    out.validate();
    return out;
}

void save_region_masks(const RegionMaskSet& masks, const std::filesystem::path& path) {
    masks.validate();
    std::ofstream os(path);
    if (!os) throw Error("cannot write region masks to " + path.string());
    os << "FEDSKD-REGIONS 1 " << masks.spatial.size();
    for (auto s : masks.spatial) os << ' ' << s;
    os << ' ' << masks.regions << '\n';
    const std::size_t row = masks.spatial.back();
    for (std::size_t i = 0; i < masks.assignments.size(); ++i) {
        os << masks.assignments[i] << ((i + 1) % row == 0 ? '\n' : ' ');
    }
}

RegionMaskSet load_region_masks(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open region masks " + path.string());
    std::stringstream body;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line[0] == '#') continue;
        body << line << '\n';
    }
    std::string magic;
    int version = 0;
    std::size_t rank = 0;
    body >> magic >> version >> rank;
    if (magic != "FEDSKD-REGIONS" || version != 1 || (rank != 2 && rank != 3)) {
        throw MismatchError("region masks: bad header in " + path.string());
    }
    RegionMaskSet masks;
    masks.spatial.resize(rank);
    for (auto& s : masks.spatial) body >> s;
    body >> masks.regions;
    masks.assignments.resize(shape_numel(masks.spatial));
    for (auto& id : masks.assignments) {
        if (!(body >> id)) throw MismatchError("region masks: truncated id list in " + path.string());
    }
    masks.validate();
    return masks;
}

}  // namespace fedskd
