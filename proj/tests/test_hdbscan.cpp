#include "support.hpp"

#include "alner/hdbscan.hpp"

#include <gtest/gtest.h>

#include <map>

using namespace alner;

namespace {

std::vector<double> planar_blobs(const std::vector<std::pair<double, double>>& centres, const std::vector<std::size_t>& sizes, double sigma,
                                 std::uint64_t seed, std::vector<int>& membership) {
    Rng rng(seed);
    std::vector<double> data;
    for (std::size_t b = 0; b < centres.size(); ++b) {
        for (std::size_t i = 0; i < sizes[b]; ++i) {
            data.push_back(centres[b].first + sigma * rng.normal());
            data.push_back(centres[b].second + sigma * rng.normal());
            membership.push_back(static_cast<int>(b));
        }
    }
    return data;
}

}

TEST(Hdbscan, RecoversBlobsOfUnequalSize) {
    std::vector<int> membership;
    const auto data = planar_blobs({{0, 0}, {30, 0}, {0, 30}}, {800, 100, 100}, 1.0, 1, membership);
    const auto result = hdbscan(data, 2, {15, 15});
    const auto& a = result.assignment;
    ASSERT_EQ(a.cluster_count(), 3u);
    std::map<std::pair<int, int>, std::size_t> contingency;
    for (std::size_t i = 0; i < membership.size(); ++i) {
        contingency[{membership[i], a.labels[i]}] += 1;
    }
    for (int blob = 0; blob < 3; ++blob) {
        std::size_t best = 0;
        for (int label = 0; label < 3; ++label) {
            best = std::max(best, contingency[{blob, label}]);
        }
        EXPECT_GE(static_cast<double>(best), 0.95 * (blob == 0 ? 800 : 100));
    }
    const auto largest = std::max_element(a.sizes.begin(), a.sizes.end()) - a.sizes.begin();
    EXPECT_EQ(a.labels[0], largest);
    for (double s : result.outlier_scores) {
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
    }
}

TEST(Hdbscan, UniformNoiseWithStrictMinimumIsAllNoise) {
    Rng rng(2);
    std::vector<double> data;
    for (int i = 0; i < 200; ++i) {
        data.push_back(rng.uniform01());
        data.push_back(rng.uniform01());
    }
    const auto result = hdbscan(data, 2, {150, 15});
    EXPECT_EQ(result.assignment.cluster_count(), 0u);
    EXPECT_EQ(result.assignment.noise_count, 200u);
}

TEST(Hdbscan, PlantedOutlierHasTopScore) {
    std::vector<int> membership;
    auto data = planar_blobs({{0, 0}, {12, 0}}, {400, 100}, 1.0, 3, membership);
    data.push_back(6.0);
    data.push_back(40.0);
    const auto result = hdbscan(data, 2, {15, 15});
    const std::size_t planted = membership.size();
    std::size_t above = 0;
    for (std::size_t i = 0; i < planted; ++i) {
        above += result.outlier_scores[i] > result.outlier_scores[planted];
    }
    EXPECT_LT(above, 6u);
}

TEST(Hdbscan, CoincidentPointsAreOneCluster) {
    const std::vector<double> data(40, 1.5);
    const auto result = hdbscan(data, 2, {5, 5});
    EXPECT_TRUE(result.assignment.degenerate);
    EXPECT_EQ(result.assignment.cluster_count(), 1u);
}

TEST(Hdbscan, DeterministicLabels) {
    std::vector<int> membership;
    const auto data = planar_blobs({{0, 0}, {10, 10}}, {80, 60}, 1.0, 4, membership);
    const auto a = hdbscan(data, 2, {10, 10});
    const auto b = hdbscan(data, 2, {10, 10});
    EXPECT_EQ(a.assignment.labels, b.assignment.labels);
    EXPECT_EQ(a.outlier_scores, b.outlier_scores);
}

TEST(Hdbscan, RejectsBadParameters) {
    const std::vector<double> data(20, 0.0);
    EXPECT_THROW(hdbscan(data, 2, {1, 1}), ArgumentError);
    EXPECT_THROW(hdbscan(data, 2, {50, 5}), ArgumentError);
    EXPECT_THROW(hdbscan(data, 3, {2, 2}), ArgumentError);
}
