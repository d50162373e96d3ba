#include "voxdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "voxdiff/errors.hpp"

namespace voxdiff {

namespace {

double cosine_f(double t, double T, double s) {
    const double arg = (t / T + s) / (1.0 + s) * (std::numbers::pi / 2.0);
    const double c = std::cos(arg);
    return c * c;
}

}  // namespace

Schedule cosine_schedule(int T, double s) {
    if (T < 1) throw ConfigError("cosine_schedule: T must be >= 1");
    if (!(s > 0.0)) throw ConfigError("cosine_schedule: s must be > 0");

    Schedule sch;
    sch.T = T;
    sch.s = s;
    sch.alpha_bar.assign(T + 1, 0.0);
    sch.alpha.assign(T + 1, 0.0);
    sch.beta.assign(T + 1, 0.0);
    sch.sigma.assign(T + 1, 0.0);

    const double f0 = cosine_f(0.0, T, s);
    sch.alpha_bar[0] = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double raw = cosine_f(t, T, s) / f0;
        const double beta = std::min(1.0 - raw / sch.alpha_bar[t - 1], 0.999);
        sch.beta[t] = beta;
        sch.alpha[t] = 1.0 - beta;
        sch.sigma[t] = std::sqrt(beta);
        // alpha_bar kept consistent with the (possibly clamped) beta chain.
        sch.alpha_bar[t] = sch.alpha_bar[t - 1] * sch.alpha[t];
    }
    return sch;
}

ScheduleReport validate(const Schedule& sch) {
    auto fail = [](const std::string& what) { return ScheduleReport{false, what}; };
    if (sch.T < 1) return fail("T < 1");
    const std::size_t n = static_cast<std::size_t>(sch.T) + 1;
    if (sch.alpha_bar.size() != n || sch.alpha.size() != n || sch.beta.size() != n ||
        sch.sigma.size() != n)
        return fail("array sizes");
    if (sch.alpha_bar[0] != 1.0) return fail("alpha_bar[0] convention");

    double product = 1.0;
    for (int t = 1; t <= sch.T; ++t) {
        if (!(sch.alpha_bar[t] > 0.0 && sch.alpha_bar[t] < 1.0))
            return fail("alpha_bar range at t=" + std::to_string(t));
        if (!(sch.alpha_bar[t] < sch.alpha_bar[t - 1]))
            return fail("monotonicity at t=" + std::to_string(t));
        if (!(sch.beta[t] > 0.0 && sch.beta[t] <= 0.999))
            return fail("beta range at t=" + std::to_string(t));
        if (std::abs(sch.alpha[t] - (1.0 - sch.beta[t])) > 1e-12)
            return fail("alpha/beta consistency at t=" + std::to_string(t));
        if (std::abs(sch.sigma[t] - std::sqrt(sch.beta[t])) > 1e-12)
            return fail("sigma definition at t=" + std::to_string(t));
        product *= sch.alpha[t];
        if (std::abs(product - sch.alpha_bar[t]) > 1e-6 * std::abs(sch.alpha_bar[t]))
            return fail("product consistency at t=" + std::to_string(t));
    }
    return {};
}

}  // namespace voxdiff
