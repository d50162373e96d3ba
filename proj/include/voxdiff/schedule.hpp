#pragma once

#include <string>
#include <vector>

namespace voxdiff {

// Precomputed cosine variance schedule. Arrays are indexed 1..T; index 0 is
// the alpha_bar[0] == 1 convention.
struct Schedule {
    int T = 0;
    double s = 0.0;
    std::vector<double> alpha_bar;  // size T+1, alpha_bar[0] == 1
    std::vector<double> alpha;      // size T+1, [0] unused
    std::vector<double> beta;       // size T+1, [0] unused
    std::vector<double> sigma;      // size T+1, [0] unused
};

struct ScheduleReport {
    bool ok = true;
    std::string first_violation;
};

Schedule cosine_schedule(int T, double s);
ScheduleReport validate(const Schedule& sch);

}  // namespace voxdiff
