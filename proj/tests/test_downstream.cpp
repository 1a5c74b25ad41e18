// SPDX-License-Identifier: Apache-2.0
#include "helpers.hpp"

#include <gtest/gtest.h>

#include <bit>

using namespace dmae;
using dmae::testing::random_tensor;
using dmae::testing::tiny_config;

namespace {

TaskSpec cls_task(std::size_t n) { return {TaskKind::classification, n, 0, std::nullopt}; }

}  // namespace

TEST(Pool, MeanOverTime) {
    Tape<double> t;
    Tensor<double> z({1, 3, 2}, std::vector<double>{1, 5, 1, 5, 1, 5});
    const auto p = ops::mean_time(t.constant(z)).value();
    EXPECT_EQ(p[0], 1.0);
    EXPECT_EQ(p[1], 5.0);
    const auto one = random_tensor({2, 1, 4}, 1);
    EXPECT_TRUE(ops::mean_time(t.constant(one)).value() == one.reshaped({2, 4}));
    auto z2 = random_tensor({1, 4, 3}, 2);
    const auto a = ops::mean_time(t.constant(z2)).value();
    for (std::size_t d = 0; d < 3; ++d) std::swap(z2[d], z2[9 + d]);
    const auto b = ops::mean_time(t.constant(z2)).value();
    for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(a[d], b[d], 1e-15);
}

TEST(Head, ZeroWeightsGiveBias) {
    Model<double> m(tiny_config());
    m.attach_head(3);
    for (auto& v : m.params().find("head.weight")->value.data()) v = 0.0;
    Tape<double> t;
    const auto y = m.head(t, t.constant(random_tensor({2, 16}, 3))).value();
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(y.at(b, k), m.params().find("head.bias")->value[k]);
    EXPECT_THROW(m.head(t, t.constant(random_tensor({2, 15}, 4))), ShapeError);
    const auto z0 = m.head(t, t.constant(Tensor<double>({1, 16}))).value();
    EXPECT_EQ(z0[0], m.params().find("head.bias")->value[0]);
}

TEST(Head, GradCheckThroughTaskLoss) {
    Model<double> m(tiny_config());
    m.attach_head(3);
    auto& z = m.params().add("z_o", random_tensor({4, 16}, 5));
    auto fn = [&](Tape<double>& t) { return ops::cross_entropy(m.head(t, t.param(z)), {0, 2, 1, 1}); };
    EXPECT_LT(grad_check<double>(fn, {m.params().find("head.weight"), m.params().find("head.bias"), &z}).max_rel_error,
              1e-4);
}

TEST(Metrics, PerfectPredictors) {
    const Tensor<double> logits({2, 2}, std::vector<double>{3, 1, 0, 2});
    EXPECT_EQ(*compute_metrics(logits, cls_task(2), {0, 1}, {}).accuracy, 1.0);
    const Tensor<double> y({2, 1}, std::vector<double>{1.5, -2});
    const auto r = compute_metrics(y, {TaskKind::regression, 1, 0, std::nullopt}, {}, y);
    EXPECT_EQ(*r.rmse, 0.0);
    const auto f = compute_metrics(y, {TaskKind::forecasting, 1, 1, std::nullopt}, {}, y);
    EXPECT_EQ(*f.mse, 0.0);
    EXPECT_EQ(*f.mae, 0.0);
}

TEST(Metrics, ConstantClassOnBalancedSet) {
    const Tensor<double> logits({4, 2}, std::vector<double>{1, 0, 1, 0, 1, 0, 1, 0});
    EXPECT_EQ(*compute_metrics(logits, cls_task(2), {0, 1, 0, 1}, {}).accuracy, 0.5);
}

TEST(Metrics, ForecastOffsetByOne) {
    const auto y = random_tensor({3, 6}, 6);
    Tensor<double> yh = y;
    for (auto& v : yh.data()) v += 1.0;
    const auto m = compute_metrics(yh, {TaskKind::forecasting, 6, 3, std::nullopt}, {}, y);
    EXPECT_NEAR(*m.mse, 1.0, 1e-12);
    EXPECT_NEAR(*m.mae, 1.0, 1e-12);
}

TEST(Metrics, ArgmaxShiftInvarianceAndRepeatability) {
    auto logits = random_tensor({5, 3}, 7);
    const std::vector<int> labels{0, 1, 2, 1, 0};
    const auto a = compute_metrics(logits, cls_task(3), labels, {});
    for (std::size_t k = 0; k < 3; ++k) logits[3 + k] += 100.0;
    const auto b = compute_metrics(logits, cls_task(3), labels, {});
    EXPECT_EQ(*a.accuracy, *b.accuracy);
    const auto c = compute_metrics(logits, cls_task(3), labels, {});
    EXPECT_EQ(std::bit_cast<std::uint64_t>(b.loss), std::bit_cast<std::uint64_t>(c.loss));
    EXPECT_THROW(compute_metrics(Tensor<double>({0, 3}), cls_task(3), {}, {}), std::invalid_argument);
}

TEST(Task, ForecastWidthAndChannel) {
    SeriesBatch x;
    x.values = random_tensor({2, 3, 5}, 8);
    x.sample_ids = {"a", "b"};
    SeriesBatch h;
    h.values = random_tensor({2, 3, 2}, 9);
    h.sample_ids = {"a", "b"};
    attach_horizon(x, h);
    const auto t = task_from_labels(x);
    EXPECT_EQ(t.n, 6u);
    const auto tg = task_targets<double>(x, t, {1});
    EXPECT_TRUE(tg.reshaped({3, 2}) == Tensor<double>({3, 2}, std::vector<double>(h.values.ptr() + 6, h.values.ptr() + 12)));
    const auto single = task_from_labels(x, 1);
    EXPECT_EQ(single.n, 2u);
    const auto ts = task_targets<double>(x, single, {0});
    EXPECT_EQ(ts[0], h.values.at(0, 1, 0));
    EXPECT_EQ(ts[1], h.values.at(0, 1, 1));
}

TEST(Finetune, TwoClassSyntheticReachesHighAccuracy) {
    const auto train = generate_synthetic(SyntheticKind::two_class_frequency, 2, 32, 64, 1, {.noise = 0.2});
    const auto val = generate_synthetic(SyntheticKind::two_class_frequency, 2, 32, 32, 2, {.noise = 0.2});
    auto c = tiny_config(2, 32);
    Model<double> m(c);
    FinetuneConfig fc;
    fc.epochs = 30;
    fc.lr = 1e-2;  // at width 16 the default rate memorizes noise before finding the frequency
    const auto r = finetune(m, train, val, task_from_labels(train), fc, 3);
    EXPECT_GE(*r.best_val.accuracy, 0.95);
    EXPECT_EQ(*evaluate(m, val, task_from_labels(val)).accuracy, *r.best_val.accuracy);
}

TEST(Finetune, LinearProbeTrainsOnlyHead) {
    const auto train = generate_synthetic(SyntheticKind::two_class_frequency, 2, 16, 16, 1);
    const auto val = generate_synthetic(SyntheticKind::two_class_frequency, 2, 16, 8, 2);
    Model<double> m(tiny_config(2, 16));
    const auto before = m.params().find("encoder.0.ffn.fc1.weight")->value;
    const auto rm = m.params().find("encoder.0.norm1.running_mean")->value;
    FinetuneConfig fc;
    fc.epochs = 3;
    fc.linear_probe = true;
    finetune(m, train, val, task_from_labels(train), fc, 3);
    EXPECT_TRUE(m.params().find("encoder.0.ffn.fc1.weight")->value == before);
    EXPECT_TRUE(m.params().find("encoder.0.norm1.running_mean")->value == rm);
    for (const auto& p : m.params()) EXPECT_FALSE(p->frozen) << p->name;
}

TEST(Finetune, LeavesPretrainOnlyTensorsUntouched) {
    const auto train = generate_synthetic(SyntheticKind::two_class_frequency, 2, 16, 16, 1);
    const auto val = generate_synthetic(SyntheticKind::two_class_frequency, 2, 16, 8, 2);
    Model<double> m(tiny_config(2, 16));
    const auto dec = m.params().find("decoder.weight")->value;
    FinetuneConfig fc;
    fc.epochs = 2;
    finetune(m, train, val, task_from_labels(train), fc, 3);
    EXPECT_TRUE(m.params().find("decoder.weight")->value == dec);
    EXPECT_FALSE(m.params().find("embed.weight")->value == Model<double>(tiny_config(2, 16)).params().find("embed.weight")->value);
}

TEST(Finetune, RejectsTaskMismatch) {
    const auto train = generate_synthetic(SyntheticKind::two_class_frequency, 2, 16, 8, 1);
    Model<double> m(tiny_config(2, 16));
    EXPECT_THROW(finetune(m, train, train, {TaskKind::regression, 1, 0, std::nullopt}, {}, 1), std::invalid_argument);
    const auto unlabeled = generate_synthetic(SyntheticKind::ar_process, 2, 16, 8, 1);
    EXPECT_THROW(finetune(m, unlabeled, unlabeled, cls_task(2), {}, 1), std::invalid_argument);
}

TEST(Finetune, RegressionRunsAndReportsRmse) {
    auto train = generate_synthetic(SyntheticKind::ar_process, 2, 16, 12, 1);
    std::vector<std::pair<std::string, std::string>> pairs;
    for (std::size_t i = 0; i < train.size(); ++i) pairs.emplace_back(train.sample_ids[i], std::to_string(train.values.at(i, 0, 0)));
    attach_labels(train, pairs, TaskKind::regression);
    Model<double> m(tiny_config(2, 16));
    FinetuneConfig fc;
    fc.epochs = 2;
    const auto r = finetune(m, train, train, task_from_labels(train), fc, 1);
    ASSERT_TRUE(r.best_val.rmse.has_value());
    EXPECT_GE(*r.best_val.rmse, 0.0);
}
