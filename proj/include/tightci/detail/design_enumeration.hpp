#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

namespace tightci {

template <typename Visitor>
bool for_each_within_group_permutation(const MbcrLayout& layout, std::uint64_t budget, Visitor&& visit) {
    if (mbcr_within_group_space(layout) > budget) return false;

    std::vector<std::size_t> beta(layout.n);
    std::iota(beta.begin(), beta.end(), std::size_t{0});
    const std::size_t groups = layout.total_groups();

    // Odometer over groups; the last group turns fastest.
    while (true) {
        visit(static_cast<const std::vector<std::size_t>&>(beta));
        std::size_t g = groups;
        bool advanced = false;
        while (g > 0) {
            --g;
            auto first = beta.begin() + static_cast<std::ptrdiff_t>(layout.group_begin(g));
            auto last = first + static_cast<std::ptrdiff_t>(layout.group_size(g));
            if (std::next_permutation(first, last)) {
                advanced = true;
                break;
            }
        }
        if (!advanced) return true;
    }
}

}  // namespace tightci
