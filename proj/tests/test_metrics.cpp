// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "metrics_oracle.hpp"
#include "seqsplat/metrics.hpp"
#include "seqsplat/util.hpp"

using namespace seqsplat;

namespace {

std::vector<double> bits(std::initializer_list<int> v) {
    std::vector<double> out;
    for (int b : v)
        out.push_back(static_cast<double>(b));
    return out;
}

scene::AffordanceMask mask_of(std::vector<double> scores) {
    scene::AffordanceMask m;
    m.scores = std::move(scores);
    return m;
}

}  // namespace

TEST_CASE("iou known values") {
    CHECK(metrics::iou(bits({1, 1, 0, 0}), bits({1, 1, 0, 0})) == 1.0);
    CHECK(metrics::iou(bits({1, 1, 0, 0}), bits({1, 0, 1, 0})) == doctest::Approx(1.0 / 3));
    CHECK(metrics::iou(bits({0, 0, 0}), bits({0, 0, 0})) == 1.0);  // both empty
    CHECK(metrics::iou(bits({0, 0, 0}), bits({0, 1, 0})) == 0.0);  // one empty
    CHECK_THROWS_AS(metrics::iou(bits({1}), bits({1, 0})), std::runtime_error);
}

TEST_CASE("auc known values") {
    CHECK(metrics::auc({0.9, 0.8, 0.1}, bits({1, 1, 0})) == 1.0);
    CHECK(metrics::auc({0.9, 0.8, 0.3}, bits({1, 0, 1})) == 0.5);
    CHECK(metrics::auc({0.4, 0.4, 0.4}, bits({1, 0, 1})) == 0.5);  // ties
    // constant gt conventions
    CHECK(metrics::auc({0.9, 0.8}, bits({1, 1})) == 1.0);
    CHECK(metrics::auc({0.9, 0.2}, bits({1, 1})) == 0.0);
    CHECK(metrics::auc({0.1, 0.2}, bits({0, 0})) == 1.0);
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
    RngStream rng(3, "auc-mono");
    for (int trial = 0; trial < 40; ++trial) {
        size_t n = 2 + rng.index(30);
        std::vector<double> pred(n), gt(n);
        bool has0 = false, has1 = false;
        for (size_t i = 0; i < n; ++i) {
            pred[i] = rng.uniform();
            gt[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
            (gt[i] == 0.0 ? has0 : has1) = true;
        }
        if (!has0 || !has1)
            continue;
        std::vector<double> warped(n);
        for (size_t i = 0; i < n; ++i)
            warped[i] = std::exp(3.0 * pred[i]) + 1.0;  // strictly increasing
        CHECK(metrics::auc(pred, gt) == metrics::auc(warped, gt));
    }
}

TEST_CASE("sim known values") {
    CHECK(metrics::sim({0.2, 0.8, 0.0}, {0.2, 0.8, 0.0}) == doctest::Approx(1.0));
    CHECK(metrics::sim(bits({1, 1, 0, 0}), bits({0, 0, 1, 1})) == 0.0);  // disjoint
    // uniform vs one-hot -> 1/N
    CHECK(metrics::sim(bits({1, 1, 1, 1}), bits({0, 0, 1, 0})) == doctest::Approx(0.25));
    CHECK(metrics::sim(bits({0, 0}), bits({0, 0})) == 1.0);
    CHECK(metrics::sim(bits({0, 0}), bits({0, 1})) == 0.0);
    CHECK_THROWS_WITH_AS(metrics::sim({-0.1, 0.2}, {0.1, 0.2}),
                         doctest::Contains("negative"), std::runtime_error);
}

TEST_CASE("mae known values") {
    CHECK(metrics::mae({0.3, 0.7}, {0.3, 0.7}) == 0.0);
    CHECK(metrics::mae(bits({0, 0}), bits({1, 1})) == 1.0);
    CHECK(metrics::mae({0.2, 0.8}, {0.0, 1.0}) == doctest::Approx(0.2));
}

TEST_CASE("iou and sim are symmetric on binary inputs") {
    RngStream rng(5, "sym");
    for (int trial = 0; trial < 60; ++trial) {
        size_t n = 1 + rng.index(20);
        std::vector<double> a(n), b(n);
        for (size_t i = 0; i < n; ++i) {
            a[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
            b[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
        }
        CHECK(metrics::iou(a, b) == metrics::iou(b, a));
        CHECK(metrics::sim(a, b) == metrics::sim(b, a));
    }
}

TEST_CASE("all four metrics match the brute-force oracles exactly, exhaustive N<=8") {
    for (size_t n = 1; n <= 8; ++n) {
        size_t lim = size_t{1} << n;
        for (size_t pa = 0; pa < lim; ++pa)
            for (size_t gb = 0; gb < lim; ++gb) {
                std::vector<double> pred(n), gt(n);
                for (size_t i = 0; i < n; ++i) {
                    pred[i] = (pa >> i) & 1 ? 1.0 : 0.0;
                    gt[i] = (gb >> i) & 1 ? 1.0 : 0.0;
                }
                REQUIRE(metrics::iou(pred, gt) == oracle::iou_sets(pred, gt));
                REQUIRE(metrics::auc(pred, gt) == oracle::auc_pairs(pred, gt));
                REQUIRE(metrics::sim(pred, gt) == oracle::sim_naive(pred, gt));
                REQUIRE(metrics::mae(pred, gt) == oracle::mae_naive(pred, gt));
            }
    }
}

TEST_CASE("metrics match the oracles on random soft scores up to N=256") {
    RngStream rng(7, "oracle-random");
    for (int trial = 0; trial < 300; ++trial) {
        size_t n = 1 + rng.index(256);
        std::vector<double> pred(n), gt(n);
        for (size_t i = 0; i < n; ++i) {
            pred[i] = rng.uniform();
            gt[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        }
        CHECK(metrics::iou(pred, gt) == oracle::iou_sets(pred, gt));
        CHECK(metrics::auc(pred, gt) == oracle::auc_pairs(pred, gt));
        CHECK(metrics::sim(pred, gt) == oracle::sim_naive(pred, gt));
        CHECK(metrics::mae(pred, gt) == oracle::mae_naive(pred, gt));
    }
}

TEST_CASE("metric outputs stay in range on arbitrary valid inputs") {
    RngStream rng(11, "range");
    for (int trial = 0; trial < 200; ++trial) {
        size_t n = 1 + rng.index(64);
        std::vector<double> pred(n), gt(n);
        for (size_t i = 0; i < n; ++i) {
            pred[i] = rng.uniform();
            gt[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
        }
        auto s = metrics::step_scores(pred, gt);
        CHECK(s.iou >= 0.0);
        CHECK(s.iou <= 1.0);
        CHECK(s.auc >= 0.0);
        CHECK(s.auc <= 1.0);
        CHECK(s.sim >= 0.0);
        CHECK(s.sim <= 1.0 + 1e-12);
        CHECK(s.mae >= 0.0);
        CHECK(s.mae <= 1.0);
    }
}

TEST_CASE("align_sequences pads the shorter side with empty frames") {
    std::vector<scene::AffordanceMask> pred = {mask_of(bits({1, 0})), mask_of(bits({0, 1}))};
    std::vector<scene::AffordanceMask> gt = {mask_of(bits({1, 0})), mask_of(bits({0, 1})),
                                             mask_of(bits({1, 1}))};
    auto [p, g] = metrics::align_sequences(pred, gt);
    REQUIRE(p.size() == 3);
    REQUIRE(g.size() == 3);
    CHECK(p[2].cardinality() == 0);

    auto [p2, g2] = metrics::align_sequences(pred, {gt[0], gt[1]});
    CHECK(p2.size() == 2);  // equal lengths unchanged
    CHECK(g2.size() == 2);

    // empty prediction: every padded frame scores iou 0 against nonempty gt
    auto [p3, g3] = metrics::align_sequences({}, gt);
    REQUIRE(p3.size() == 3);
    for (size_t t = 0; t < 3; ++t)
        CHECK(metrics::iou(p3[t].scores, g3[t].scores) == 0.0);
}

TEST_CASE("sequential metrics on identical sequences are (1,1,1,0)") {
    std::vector<scene::AffordanceMask> seq = {mask_of(bits({1, 0, 1})),
                                              mask_of(bits({0, 1, 0}))};
    auto s = metrics::sequential_metrics(seq, seq);
    CHECK(s.siou == 1.0);
    CHECK(s.sauc == 1.0);
    CHECK(s.ssim == doctest::Approx(1.0));
    CHECK(s.smae == 0.0);
    CHECK(s.aligned_length == 2);
}

TEST_CASE("an extra nonempty gt step lowers siou to 2/3") {
    std::vector<scene::AffordanceMask> pred = {mask_of(bits({1, 0})), mask_of(bits({0, 1}))};
    std::vector<scene::AffordanceMask> gt = pred;
    gt.push_back(mask_of(bits({1, 1})));
    auto s = metrics::sequential_metrics(pred, gt);
    CHECK(s.siou == doctest::Approx(2.0 / 3));
    CHECK(s.aligned_length == 3);
}

TEST_CASE("sequential metrics equal per-step recomputation exactly") {
    RngStream rng(13, "seq-oracle");
    for (int trial = 0; trial < 50; ++trial) {
        size_t n = 2 + rng.index(40);
        size_t tp = 1 + rng.index(5), tg = 1 + rng.index(5);
        std::vector<scene::AffordanceMask> pred, gt;
        for (size_t t = 0; t < tp; ++t) {
            std::vector<double> v(n);
            for (auto& x : v)
                x = rng.uniform();
            pred.push_back(mask_of(v));
        }
        for (size_t t = 0; t < tg; ++t) {
            std::vector<double> v(n);
            for (auto& x : v)
                x = rng.uniform() < 0.4 ? 1.0 : 0.0;
            gt.push_back(mask_of(v));
        }
        auto s = metrics::sequential_metrics(pred, gt);
        auto o = oracle::sequential_naive(pred, gt);
        CHECK(s.siou == o.siou);
        CHECK(s.sauc == o.sauc);
        CHECK(s.ssim == o.ssim);
        CHECK(s.smae == o.smae);
    }
}

TEST_CASE("length mismatch strictly lowers siou versus truncation to min length") {
    RngStream rng(17, "penalty");
    for (int trial = 0; trial < 30; ++trial) {
        size_t n = 3 + rng.index(20);
        size_t t = 1 + rng.index(4);
        std::vector<scene::AffordanceMask> pred, gt;
        for (size_t k = 0; k < t; ++k) {
            std::vector<double> v(n, 0.0);
            v[rng.index(n)] = 1.0;
            pred.push_back(mask_of(v));
            gt.push_back(pred.back());
        }
        // gt gains an extra nonempty unmatched step
        std::vector<double> extra(n, 0.0);
        extra[rng.index(n)] = 1.0;
        gt.push_back(mask_of(extra));
        double padded = metrics::sequential_metrics(pred, gt).siou;
        // truncated-to-min comparison scores the common prefix only
        std::vector<scene::AffordanceMask> gt_trunc(gt.begin(), gt.begin() + t);
        double trunc = metrics::sequential_metrics(pred, gt_trunc).siou;
        CHECK(padded < trunc);
    }
}

TEST_CASE("sequential metrics reject empty-vs-empty input") {
    CHECK_THROWS_AS(metrics::sequential_metrics({}, {}), std::runtime_error);
}
