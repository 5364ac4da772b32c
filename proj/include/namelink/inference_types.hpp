#pragma once

#include <string>
#include <utility>
#include <vector>

namespace namelink {

struct Prediction {
    std::string example_id;
    std::vector<std::pair<int, int>> assignments;  // (person_index, detection_index)
    std::string method;

    // -1 when the person is unassigned.
    int assigned_to(int person_index) const {
        for (const auto& [p, d] : assignments)
            if (p == person_index) return d;
        return -1;
    }
};

}  // namespace namelink
