#include <algorithm>
#include <cstring>
#include <map>
#include <vector>

#include <doctest.h>

#include "gatn/errors.hpp"
#include "gatn/synthdata.hpp"
#include "gatn/training.hpp"

using namespace gatn;

namespace {

// least-squares one-vs-rest linear classifier on tiny feature vectors; the
// adversary for the "no global shortcut" property
struct TinyLinear {
    Eigen::MatrixXd weights; // (K, d+1)

    void fit(const Eigen::MatrixXd& x, const std::vector<int>& labels, int k) {
        Eigen::MatrixXd xb(x.rows(), x.cols() + 1);
        xb << x, Eigen::VectorXd::Ones(x.rows());
        Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(x.rows(), k);
        for (int i = 0; i < x.rows(); ++i) targets(i, labels[static_cast<std::size_t>(i)]) = 1.0;
        Eigen::MatrixXd gram = xb.transpose() * xb +
                               1e-9 * Eigen::MatrixXd::Identity(xb.cols(), xb.cols());
        weights = gram.ldlt().solve(xb.transpose() * targets).transpose();
    }

    double accuracy(const Eigen::MatrixXd& x, const std::vector<int>& labels) const {
        int hits = 0;
        for (int i = 0; i < x.rows(); ++i) {
            Eigen::VectorXd xb(x.cols() + 1);
            xb << x.row(i).transpose(), 1.0;
            Eigen::VectorXd scores = weights * xb;
            int best = 0;
            for (int k = 1; k < scores.size(); ++k) {
                if (scores[k] > scores[best]) best = k;
            }
            if (best == labels[static_cast<std::size_t>(i)]) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(x.rows());
    }
};

InstanceBox union_bounds(const std::vector<InstanceBox>& boxes) {
    InstanceBox u = boxes.front();
    for (const auto& b : boxes) {
        u.row0 = std::min(u.row0, b.row0);
        u.col0 = std::min(u.col0, b.col0);
        u.row1 = std::max(u.row1, b.row1);
        u.col1 = std::max(u.col1, b.col1);
    }
    return u;
}

} // namespace

TEST_CASE("gen_sample: bit-identical for identical seeds, distinct across seeds") {
    SynthConfig cfg;
    SynthSample a = gen_sample(99, 2, cfg);
    SynthSample b = gen_sample(99, 2, cfg);
    CHECK(std::memcmp(a.image.data.data(), b.image.data.data(),
                      sizeof(double) * a.image.size()) == 0);
    REQUIRE(a.gt_boxes.size() == b.gt_boxes.size());
    for (std::size_t i = 0; i < a.gt_boxes.size(); ++i) CHECK(a.gt_boxes[i] == b.gt_boxes[i]);

    SynthSample c = gen_sample(100, 2, cfg);
    CHECK((a.image.data - c.image.data).abs().maxCoeff() > 0.0);
}

TEST_CASE("gen_sample: boxes inside the frame, disjoint, count within bounds") {
    SynthConfig cfg;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        for (int klass = 0; klass < cfg.num_classes; ++klass) {
            SynthSample s = gen_sample(seed, klass, cfg);
            CHECK(s.gt_boxes.size() >= 1);
            CHECK(s.gt_boxes.size() <= static_cast<std::size_t>(cfg.max_instances));
            for (std::size_t i = 0; i < s.gt_boxes.size(); ++i) {
                const auto& b = s.gt_boxes[i];
                CHECK(b.row0 >= 0);
                CHECK(b.col0 >= 0);
                CHECK(b.row1 <= cfg.image_size);
                CHECK(b.col1 <= cfg.image_size);
                CHECK(b.row0 < b.row1);
                CHECK(b.col0 < b.col1);
                for (std::size_t j = i + 1; j < s.gt_boxes.size(); ++j) {
                    const auto& o = s.gt_boxes[j];
                    const bool overlap = b.row0 < o.row1 && o.row0 < b.row1 &&
                                         b.col0 < o.col1 && o.col0 < b.col1;
                    CHECK(!overlap);
                }
            }
            CHECK(s.image.data.minCoeff() >= 0.0);
            CHECK(s.image.data.maxCoeff() <= 1.0);
        }
    }
}

TEST_CASE("gen_sample: usage error for an out-of-range class") {
    SynthConfig cfg;
    CHECK_THROWS_AS(gen_sample(1, cfg.num_classes, cfg), UsageError);
    CHECK_THROWS_AS(gen_sample(1, -1, cfg), UsageError);
}

TEST_CASE("gen_dataset: balanced, seed ranges disjoint across splits") {
    SynthConfig cfg;
    auto train_set = gen_dataset(10, 1000, cfg);
    auto test_set = gen_dataset(5, 1000 + 40, cfg); // past the train range
    CHECK(train_set.size() == 40);
    CHECK(test_set.size() == 20);

    std::map<int, int> histogram;
    for (const auto& s : train_set) histogram[s.label]++;
    for (auto& [label, count] : histogram) {
        (void)label;
        CHECK(count == 10);
    }

    std::uint64_t max_train_seed = 0;
    for (const auto& s : train_set) max_train_seed = std::max(max_train_seed, s.seed);
    std::uint64_t min_test_seed = ~0ULL;
    for (const auto& s : test_set) min_test_seed = std::min(min_test_seed, s.seed);
    CHECK(max_train_seed < min_test_seed);
}

TEST_CASE("synthdata: class-conditional image means stay within 0.01") {
    SynthConfig cfg;
    const int per_class = 200;
    std::vector<double> class_means(static_cast<std::size_t>(cfg.num_classes), 0.0);
    for (int klass = 0; klass < cfg.num_classes; ++klass) {
        double acc = 0.0;
        for (int i = 0; i < per_class; ++i) {
            const std::uint64_t seed = 20000 + static_cast<std::uint64_t>(klass) * per_class +
                                       static_cast<std::uint64_t>(i);
            acc += gen_sample(seed, klass, cfg).image.data.mean();
        }
        class_means[static_cast<std::size_t>(klass)] = acc / per_class;
    }
    const auto [lo, hi] = std::minmax_element(class_means.begin(), class_means.end());
    CHECK(*hi - *lo < 0.01);
}

TEST_CASE("synthdata: (mean, variance) carries almost no label information") {
    SynthConfig cfg;
    const int per_class = 100; // 400 samples
    Eigen::MatrixXd features(per_class * cfg.num_classes, 2);
    std::vector<int> labels;
    int row = 0;
    for (int klass = 0; klass < cfg.num_classes; ++klass) {
        for (int i = 0; i < per_class; ++i) {
            const std::uint64_t seed = 31000 + static_cast<std::uint64_t>(klass) * per_class +
                                       static_cast<std::uint64_t>(i);
            SynthSample s = gen_sample(seed, klass, cfg);
            const double mean = s.image.data.mean();
            const double var = (s.image.data - mean).square().mean();
            features(row, 0) = mean;
            features(row, 1) = var;
            labels.push_back(klass);
            ++row;
        }
    }
    TinyLinear clf;
    clf.fit(features, labels, cfg.num_classes);
    const double acc = clf.accuracy(features, labels);
    INFO("global-statistic classifier accuracy: ", acc);
    CHECK(acc < 0.35);
}

TEST_CASE("synthdata: oracle crops of the instances are sufficient to classify") {
    SynthConfig cfg;
    const int crop_size = 32;

    auto crop_dataset = [&](int per_class, std::uint64_t base) {
        Dataset crops;
        for (int klass = 0; klass < cfg.num_classes; ++klass) {
            for (int i = 0; i < per_class; ++i) {
                const std::uint64_t seed = base + static_cast<std::uint64_t>(klass) * per_class +
                                           static_cast<std::uint64_t>(i);
                SynthSample s = gen_sample(seed, klass, cfg);
                SynthSample crop;
                crop.image = crop_resize(s.image, union_bounds(s.gt_boxes), crop_size);
                crop.label = klass;
                crop.seed = seed;
                crops.push_back(std::move(crop));
            }
        }
        return crops;
    };
    Dataset train_set = crop_dataset(40, 41000);
    Dataset test_set = crop_dataset(20, 41000 + 160);

    ModelConfig mcfg;
    mcfg.num_classes = cfg.num_classes;
    mcfg.global_backbone = {{8, 16}, crop_size};
    mcfg.instance_backbone = {{8, 16}, 8};
    mcfg.localizer.patch_size = 8;
    mcfg.localizer.top_k = 1;
    mcfg.attention.hidden_channels = 16;

    TrainConfig tcfg;
    tcfg.epochs = 30;
    tcfg.lr0 = 0.05;
    tcfg.seed = 5;
    tcfg.global_only = true;

    TrainResult result = train(train_set, mcfg, tcfg);
    Metrics m = evaluate(test_set, result.params, mcfg, /*global_only=*/true);
    INFO("oracle-crop test accuracy: ", m.accuracy);
    CHECK(m.accuracy >= 0.9);
}
