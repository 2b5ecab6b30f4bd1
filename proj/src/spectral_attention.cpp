// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#include "csipred/spectral_attention.hpp"

#include <algorithm>

namespace csipred {

std::vector<FrequencyIndex> zigzag_order(Index height, Index width) {
    std::vector<FrequencyIndex> order;
    order.reserve(static_cast<std::size_t>(height * width));
    for (Index s = 0; s <= height + width - 2; ++s) {
        const Index u_lo = std::max<Index>(0, s - (width - 1));
        const Index u_hi = std::min(s, height - 1);
        if (s % 2 == 0) {
            for (Index u = u_hi; u >= u_lo; --u) order.push_back({u, s - u});
        } else {
            for (Index u = u_lo; u <= u_hi; ++u) order.push_back({u, s - u});
        }
    }
    return order;
}

std::vector<FrequencyIndex> select_frequencies(Index n, Index height, Index width, FrequencySelection strategy,
                                               const std::vector<FrequencyIndex>& explicit_list) {
    if (height < 1 || width < 1) throw std::invalid_argument("select_frequencies: grid must be non-empty");
    if (n < 1 || n > height * width)
        throw std::invalid_argument("select_frequencies: n = " + std::to_string(n) + " outside 1.." +
                                    std::to_string(height * width));
    if (strategy == FrequencySelection::ZigzagLow) {
        auto order = zigzag_order(height, width);
        order.resize(static_cast<std::size_t>(n));
        return order;
    }
    if (static_cast<Index>(explicit_list.size()) != n)
        throw std::invalid_argument("select_frequencies: explicit list has " + std::to_string(explicit_list.size()) +
                                    " entries, expected " + std::to_string(n));
    std::set<FrequencyIndex> seen;
    for (const auto& f : explicit_list) {
        if (f.u < 0 || f.u >= height || f.v < 0 || f.v >= width)
            throw std::out_of_range("select_frequencies: index (" + std::to_string(f.u) + ", " + std::to_string(f.v) +
                                    ") outside the grid");
        if (!seen.insert(f).second)
            throw std::invalid_argument("select_frequencies: duplicate index (" + std::to_string(f.u) + ", " +
                                        std::to_string(f.v) + ")");
    }
    return explicit_list;
}

}  // namespace csipred
