#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "nkd/data.hpp"
#include "nkd/rng.hpp"

using namespace nkd;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

Dataset random_byte_dataset(Rng& rng, int count, int h, int w, int classes) {
    Dataset ds;
    ds.count = count;
    ds.channels = 1;
    ds.height = h;
    ds.width = w;
    ds.images.resize(static_cast<std::size_t>(count) * h * w);
    for (double& v : ds.images) v = static_cast<double>(rng.below(256)) / 255.0;
    ds.labels.resize(count);
    for (int& l : ds.labels) l = static_cast<int>(rng.below(classes));
    return ds;
}

} // namespace

TEST(LoadIdx, SinglePixelScaling) {
    Dataset ds;
    ds.count = 1;
    ds.channels = 1;
    ds.height = 1;
    ds.width = 1;
    ds.images = {1.0}; // byte value 255
    ds.labels = {3};
    std::string ip = tmp_path("one-images-idx3-ubyte"), lp = tmp_path("one-labels-idx1-ubyte");
    write_idx(ip, lp, ds);
    Dataset back = load_idx(ip, lp);
    EXPECT_EQ(back.count, 1);
    EXPECT_DOUBLE_EQ(back.images[0], 1.0);
    EXPECT_EQ(back.labels[0], 3);
    std::remove(ip.c_str());
    std::remove(lp.c_str());
}

TEST(LoadIdx, MismatchedCountsRejected) {
    Rng rng(50);
    Dataset a = random_byte_dataset(rng, 4, 3, 3, 10);
    Dataset b = random_byte_dataset(rng, 5, 3, 3, 10);
    std::string ia = tmp_path("a-images"), la = tmp_path("a-labels");
    std::string ib = tmp_path("b-images"), lb = tmp_path("b-labels");
    write_idx(ia, la, a);
    write_idx(ib, lb, b);
    EXPECT_THROW(load_idx(ia, lb), FormatError); // 4 images vs 5 labels
    for (auto& p : {ia, la, ib, lb}) std::remove(p.c_str());
}

TEST(LoadIdx, BadMagicRejected) {
    std::string p = tmp_path("junk-idx");
    {
        std::ofstream os(p, std::ios::binary);
        os << "not an idx file at all";
    }
    EXPECT_THROW(load_idx(p, p), FormatError);
    std::remove(p.c_str());
}

TEST(LoadIdx, RoundTripIsIdentity) {
    Rng rng(51);
    Dataset ds = random_byte_dataset(rng, 25, 6, 7, 10);
    std::string ip = tmp_path("rt-images"), lp = tmp_path("rt-labels");
    write_idx(ip, lp, ds);
    Dataset back = load_idx(ip, lp);
    EXPECT_EQ(back.count, ds.count);
    EXPECT_EQ(back.height, ds.height);
    EXPECT_EQ(back.width, ds.width);
    EXPECT_EQ(back.labels, ds.labels);
    ASSERT_EQ(back.images.size(), ds.images.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i)
        EXPECT_DOUBLE_EQ(back.images[i], ds.images[i]);
    std::remove(ip.c_str());
    std::remove(lp.c_str());
}

TEST(LoadCifar, ParsesRecords) {
    std::string p = tmp_path("cifar.bin");
    {
        std::ofstream os(p, std::ios::binary);
        for (int rec = 0; rec < 2; ++rec) {
            unsigned char label = static_cast<unsigned char>(rec + 1);
            os.write(reinterpret_cast<char*>(&label), 1);
            for (int i = 0; i < 3072; ++i) {
                unsigned char v = static_cast<unsigned char>((i + rec) % 256);
                os.write(reinterpret_cast<char*>(&v), 1);
            }
        }
    }
    Dataset ds = load_cifar_binary(p);
    EXPECT_EQ(ds.count, 2);
    EXPECT_EQ(ds.channels, 3);
    EXPECT_EQ(ds.height, 32);
    EXPECT_EQ(ds.width, 32);
    EXPECT_EQ(ds.labels[0], 1);
    EXPECT_EQ(ds.labels[1], 2);
    EXPECT_DOUBLE_EQ(ds.images[0], 0.0);
    EXPECT_DOUBLE_EQ(ds.images[1], 1.0 / 255.0);
    std::remove(p.c_str());
}

TEST(LoadCifar, TruncatedFileRejected) {
    std::string p = tmp_path("cifar_trunc.bin");
    {
        std::ofstream os(p, std::ios::binary);
        for (int i = 0; i < 3073 + 100; ++i) {
            char c = 0;
            os.write(&c, 1);
        }
    }
    EXPECT_THROW(load_cifar_binary(p), FormatError);
    std::remove(p.c_str());
}

TEST(SmoothLabels, ZeroEpsilonIsOneHot) {
    Vec v = smooth_labels(2, 5, 0.0);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(v[i], i == 2 ? 1.0 : 0.0);
}

TEST(SmoothLabels, ExactArithmetic) {
    Vec v = smooth_labels(0, 4, 0.1);
    EXPECT_NEAR(v[0], 0.925, 1e-15);
    for (std::size_t i = 1; i < 4; ++i) EXPECT_NEAR(v[i], 0.025, 1e-15);
}

TEST(SmoothLabels, AlwaysAValidDistribution) {
    for (std::size_t c : {2u, 3u, 10u, 100u})
        for (double eps : {0.0, 0.05, 0.1, 0.5, 0.9})
            for (std::size_t t = 0; t < c; t += (c > 4 ? 3 : 1)) {
                Vec v = smooth_labels(t, c, eps);
                // extended-precision accumulation so the check measures the
                // stored values, not the test's own summation error
                long double sum = 0.0L;
                for (double x : v) {
                    EXPECT_GE(x, 0.0);
                    sum += x;
                }
                EXPECT_NEAR(static_cast<double>(sum), 1.0, 1e-15);
            }
}

TEST(EpochBatches, DeterministicAndCoversAll) {
    BatchPlan plan{99, 7, 3};
    auto a = epoch_batches(23, plan);
    auto b = epoch_batches(23, plan);
    EXPECT_EQ(a, b);

    std::multiset<int> seen;
    std::size_t batches = 0;
    for (auto& batch : a) {
        seen.insert(batch.begin(), batch.end());
        ++batches;
    }
    EXPECT_EQ(batches, 4u); // 7+7+7+2, last partial kept
    EXPECT_EQ(a.back().size(), 2u);
    EXPECT_EQ(seen.size(), 23u);
    for (int i = 0; i < 23; ++i) EXPECT_EQ(seen.count(i), 1u);
}

TEST(EpochBatches, EpochsGetDistinctPermutations) {
    std::set<std::vector<int>> orders;
    for (int epoch = 0; epoch < 100; ++epoch) {
        BatchPlan plan{4242, 64, epoch};
        auto batches = epoch_batches(64, plan);
        orders.insert(batches[0]);
    }
    EXPECT_EQ(orders.size(), 100u);
}

TEST(EpochBatches, OversizedBatchRejected) {
    EXPECT_THROW(epoch_batches(5, BatchPlan{1, 6, 0}), UsageError);
    EXPECT_THROW(epoch_batches(5, BatchPlan{1, 0, 0}), UsageError);
}

TEST(NormStats, KnownSmallDataset) {
    Dataset ds;
    ds.count = 2;
    ds.channels = 1;
    ds.height = 1;
    ds.width = 2;
    ds.images = {0.0, 0.5, 1.0, 0.5};
    ds.labels = {0, 1};
    Vec mean, stddev;
    compute_norm_stats(ds, mean, stddev);
    EXPECT_NEAR(mean[0], 0.5, 1e-15);
    EXPECT_NEAR(stddev[0], std::sqrt(0.125), 1e-12);

    Tensor batch = make_batch(ds, {0, 1}, mean, stddev);
    EXPECT_NEAR(batch.data[0], -0.5 / std::sqrt(0.125), 1e-12);
    EXPECT_NEAR(batch.data[1], 0.0, 1e-15);
}

TEST(NormStats, ConstantChannelGetsFlooredStd) {
    Dataset ds;
    ds.count = 3;
    ds.channels = 1;
    ds.height = 2;
    ds.width = 2;
    ds.images.assign(12, 0.25);
    ds.labels = {0, 1, 2};
    Vec mean, stddev;
    compute_norm_stats(ds, mean, stddev);
    EXPECT_NEAR(mean[0], 0.25, 1e-15);
    EXPECT_GT(stddev[0], 0.0);
}
