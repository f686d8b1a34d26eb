#pragma once

#include <cmath>
#include <vector>

// Loop-based reimplementation of the contrastive losses, independent of the
// tape path. Shared by the unit tests and the acceptance suite; it must stay
// free of any figclip loss code.
namespace loss_oracle {

using vecd = std::vector<double>;

inline vecd normalize(vecd v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    const double n = std::sqrt(ss);
    if (n > 0)
        for (double& x : v) x /= n;
    return v;
}

inline double dot(const vecd& a, const vecd& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline vecd mean_of(const std::vector<vecd>& rows) {
    vecd out(rows[0].size(), 0.0);
    for (const auto& r : rows)
        for (size_t i = 0; i < r.size(); ++i) out[i] += r[i];
    for (double& x : out) x /= static_cast<double>(rows.size());
    return out;
}

// Symmetric InfoNCE with optional per-row (strip) or pooled extra negatives
// in the visual->text direction; mirrors them into the text rows when
// hn_both is set.
inline double symmetric_nce(const std::vector<vecd>& q, const std::vector<vecd>& k,
                            const std::vector<std::vector<vecd>>& extras, bool pool_extras, double scale,
                            bool hn_both) {
    const size_t n = q.size();
    std::vector<vecd> flat;
    if (pool_extras)
        for (const auto& per_row : extras)
            for (const auto& e : per_row) flat.push_back(e);

    auto direction = [&](bool visual_to_text, bool with_extras) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double denom = 0.0;
            for (size_t j = 0; j < n; ++j)
                denom += std::exp(scale * (visual_to_text ? dot(q[i], k[j]) : dot(k[i], q[j])));
            if (with_extras && !extras.empty()) {
                if (pool_extras) {
                    for (const auto& e : flat) denom += std::exp(scale * dot(q[i], e));
                } else {
                    for (const auto& e : extras[i]) denom += std::exp(scale * dot(q[i], e));
                }
            }
            const double pos = scale * (visual_to_text ? dot(q[i], k[i]) : dot(k[i], q[i]));
            total += std::log(denom) - pos;
        }
        return total / static_cast<double>(n);
    };
    return direction(true, true) + direction(false, hn_both);
}

}  // namespace loss_oracle
