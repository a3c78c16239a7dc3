#include "procver/levenshtein.hpp"

#include <algorithm>

namespace procver {

std::size_t levenshtein(const std::vector<StepToken>& a, const std::vector<StepToken>& b) {
    const std::size_t m = a.size(), n = b.size();
    if (m == 0) {
        return n;
    }
    if (n == 0) {
        return m;
    }
    // rolling single row
    std::vector<std::size_t> row(n + 1);
    for (std::size_t j = 0; j <= n; ++j) {
        row[j] = j;
    }
    for (std::size_t i = 1; i <= m; ++i) {
        std::size_t diag = row[0]; // dp[i-1][j-1]
        row[0] = i;
        for (std::size_t j = 1; j <= n; ++j) {
            const std::size_t up = row[j];
            const std::size_t subst = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
            row[j] = std::min({row[j - 1] + 1, up + 1, subst});
            diag = up;
        }
    }
    return row[n];
}

} // namespace procver
