#pragma once

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tightci/design.hpp"
#include "tightci/estimator.hpp"

namespace tightci::testing {

// Written out from the estimator's definition without the library's slot
// helpers: build the allocation vector by hand, then sum slot by slot.
inline double reference_batched_estimate(const std::vector<double>& y, std::size_t T, std::size_t G,
                                         std::size_t Gbar, std::size_t nbar1, const std::vector<std::size_t>& beta,
                                         const std::vector<std::size_t>& eta) {
    const std::size_t n = y.size();
    std::vector<int> a;
    for (std::size_t t = 0; t < T; ++t) {
        a.push_back(1);
        for (std::size_t k = 1; k < G; ++k) a.push_back(0);
    }
    for (std::size_t k = 0; k < Gbar; ++k) a.push_back(k < nbar1 ? 1 : 0);

    std::vector<std::size_t> unit_in_slot(n);
    for (std::size_t j = 0; j < n; ++j) unit_in_slot[eta[j]] = j;

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = i < T * G ? 1.0 / static_cast<double>(G)
                                   : static_cast<double>(nbar1) / static_cast<double>(Gbar);
        const int treat = a[beta[i]];
        total += y[unit_in_slot[i]] * (treat / p - (1 - treat) / (1.0 - p));
    }
    return total / static_cast<double>(n);
}

inline double mean_effect(const PotentialTable& t) {
    long double s = 0.0L;
    for (std::size_t i = 0; i < t.size(); ++i) s += static_cast<long double>(t.y1()[i]) - t.y0()[i];
    return static_cast<double>(s / t.size());
}

class TempDir {
  public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("tightci-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream f(p, std::ios::binary);
    f << content;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace tightci::testing
