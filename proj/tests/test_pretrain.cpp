// SPDX-License-Identifier: Apache-2.0
#include "helpers.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <cmath>

using namespace dmae;
using dmae::testing::random_tensor;
using dmae::testing::tiny_config;

namespace {

Tensor<double> mask_from(Shape s, std::vector<double> bits) { return Tensor<double>(std::move(s), std::move(bits)); }

TrainConfig tiny_train_config() {
    TrainConfig c;
    c.epochs = 3;
    c.batch_size = 4;
    c.seed = 5;
    c.model.d_model = 16;
    c.model.n_blocks = 1;
    c.model.n_heads = 2;
    c.model.d_attn = 16;
    c.model.d_ffn = 32;
    return c;
}

struct Sets {
    SeriesBatch train, val;
};

Sets tiny_sets() {
    const auto d = generate_synthetic(SyntheticKind::sinusoid_mix, 3, 12, 12, 2);
    auto [train, val] = split_holdout(d, 0.25, 1);
    return {train, val};
}

}  // namespace

TEST(LossDec, ExactReconstructionIsZero) {
    Tape<double> t;
    const auto x = random_tensor({1, 2, 2}, 1);
    const auto m = mask_from({1, 2, 2}, {0, 1, 0, 1});
    EXPECT_EQ(loss_dec(t.constant(x), x, m).value()[0], 0.0);
}

TEST(LossDec, SingleMaskedCell) {
    Tape<double> t;
    const auto x = mask_from({1, 2, 2}, {1, 5, 6, 7});
    const auto y = mask_from({1, 2, 2}, {0, -3, 2, 9});
    const auto m = mask_from({1, 2, 2}, {0, 1, 1, 1});
    EXPECT_EQ(loss_dec(t.constant(y), x, m).value()[0], 1.0);
}

TEST(LossDec, VisibleCellsDoNotMatter) {
    Tape<double> t;
    auto x = random_tensor({2, 3, 2}, 2);
    const auto y = random_tensor({2, 3, 2}, 3);
    const auto m = mask_from({2, 3, 2}, {0, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 1});
    const double a = loss_dec(t.constant(y), x, m).value()[0];
    for (std::size_t i = 0; i < x.size(); ++i)
        if (m[i] == 1) x[i] *= 2;
    EXPECT_EQ(loss_dec(t.constant(y), x, m).value()[0], a);
}

TEST(LossDec, DegenerateMaskThrows) {
    Tape<double> t;
    const auto x = random_tensor({1, 2, 2}, 4);
    EXPECT_THROW(loss_dec(t.constant(x), x, Tensor<double>({1, 2, 2}, 1.0)), std::invalid_argument);
}

TEST(LossAli, PerfectAlignmentIsZero) {
    Tape<double> t;
    const auto z = random_tensor({1, 3, 4}, 5);
    const auto m = mask_from({1, 3, 2}, {0, 1, 1, 1, 1, 0});
    EXPECT_EQ(loss_ali(t.constant(z), t.constant(z), m).value()[0], 0.0);
}

TEST(LossAli, ConstantOffsetGivesSquare) {
    Tape<double> t;
    const auto z = random_tensor({1, 3, 4}, 6);
    Tensor<double> zp = z;
    for (auto& v : zp.data()) v += 0.5;
    const auto m = mask_from({1, 3, 2}, {0, 1, 1, 0, 0, 0});
    EXPECT_NEAR(loss_ali(t.constant(z), t.constant(zp), m).value()[0], 0.25, 1e-15);
}

TEST(LossAli, TimestepsOutsideSupportDoNotMatter) {
    Tape<double> t;
    const auto z = random_tensor({1, 3, 4}, 7);
    auto zp = random_tensor({1, 3, 4}, 8);
    const auto m = mask_from({1, 3, 2}, {0, 1, 1, 1, 1, 0});  // t = 1 fully visible
    const double a = loss_ali(t.constant(z), t.constant(zp), m).value()[0];
    for (std::size_t d = 0; d < 4; ++d) zp.at(0, 1, d) += 10.0;
    EXPECT_EQ(loss_ali(t.constant(z), t.constant(zp), m).value()[0], a);
    // Normalized by D * |S| = 4 * 2.
    double s = 0;
    for (std::size_t tt : {0u, 2u})
        for (std::size_t d = 0; d < 4; ++d) s += std::pow(z.at(0, tt, d) - zp.at(0, tt, d), 2);
    EXPECT_NEAR(a, s / 8, 1e-15);
}

TEST(LossAli, EmptySupportThrowsAndTeacherIsConstant) {
    Tape<double> t;
    ParamStore<double> ps;
    auto& zt = ps.add("zt", random_tensor({1, 2, 3}, 9));
    auto& zp = ps.add("zp", random_tensor({1, 2, 3}, 10));
    EXPECT_THROW(loss_ali(t.param(zt), t.param(zp), Tensor<double>({1, 2, 2}, 1.0)), std::invalid_argument);
    t.backward(loss_ali(t.param(zt), t.param(zp), Tensor<double>({1, 2, 2})));
    for (double g : zt.grad.data()) EXPECT_EQ(g, 0.0);
    double n = 0;
    for (double g : zp.grad.data()) n += std::abs(g);
    EXPECT_GT(n, 0.0);
}

TEST(TotalLoss, LambdaCombination) {
    Tape<double> t;
    const auto dec = t.constant(Tensor<double>({1}, 0.7)), ali = t.constant(Tensor<double>({1}, 0.2));
    EXPECT_EQ(total_loss(dec, ali, 0.0).value()[0], 0.7);
    EXPECT_NEAR(total_loss(dec, ali, 1.0).value()[0], 0.9, 1e-15);
    const double l1 = total_loss(dec, ali, 1.0).value()[0], l3 = total_loss(dec, ali, 3.0).value()[0];
    EXPECT_NEAR(l3 - l1, 2 * 0.2, 1e-15);
    EXPECT_NEAR(total_loss(dec, ali, 2.0, false).value()[0], 0.4, 1e-15);
}

TEST(Adam, ZeroGradientLeavesParameters) {
    std::vector<double> w{1.0, -2.0}, g{0.0, 0.0};
    AdamState st;
    for (std::size_t s = 1; s <= 5; ++s) adam_step<double>(w, g, st, s, 0.1);
    EXPECT_EQ(w[0], 1.0);
    EXPECT_EQ(w[1], -2.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    std::vector<double> w{0.3}, g{-4.2};
    AdamState st;
    adam_step<double>(w, g, st, 1, 1e-3);
    // m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
    EXPECT_NEAR(w[0] - 0.3, 1e-3 * 4.2 / (4.2 + 1e-8), 1e-15);
}

TEST(Adam, QuadraticBowlMatchesReferenceRecurrence) {
    std::vector<double> w{1.0};
    AdamState st;
    double rw = 1.0, m = 0, v = 0;
    for (std::size_t s = 1; s <= 200; ++s) {
        std::vector<double> g{2 * w[0]};
        adam_step<double>(w, g, st, s, 0.1);
        const double rg = 2 * rw;
        m = 0.9 * m + 0.1 * rg;
        v = 0.999 * v + 0.001 * rg * rg;
        rw -= 0.1 * (m / (1 - std::pow(0.9, s))) / (std::sqrt(v / (1 - std::pow(0.999, s))) + 1e-8);
    }
    EXPECT_LT(std::abs(w[0]), 1e-2);
    EXPECT_NEAR(w[0], rw, 1e-12);
}

TEST(Adam, SkipsFrozenAndBuffers) {
    ParamStore<double> ps;
    auto& a = ps.add("a", Tensor<double>({1}, 1.0));
    auto& b = ps.add("b", Tensor<double>({1}, 1.0), false);
    auto& c = ps.add("c", Tensor<double>({1}, 1.0));
    c.frozen = true;
    for (auto* p : {&a, &b, &c}) p->grad = Tensor<double>({1}, 1.0);
    Adam<double> opt;
    opt.step(ps, 0.1);
    EXPECT_LT(a.value[0], 1.0);
    EXPECT_EQ(b.value[0], 1.0);
    EXPECT_EQ(c.value[0], 1.0);
}

TEST(Schedule, CosineEndsAtZero) {
    EXPECT_EQ(scheduled_lr(0.1, Schedule::constant, 50, 100), 0.1);
    EXPECT_NEAR(scheduled_lr(0.1, Schedule::cosine, 0, 101), 0.1, 1e-15);
    EXPECT_NEAR(scheduled_lr(0.1, Schedule::cosine, 50, 101), 0.05, 1e-15);
    EXPECT_NEAR(scheduled_lr(0.1, Schedule::cosine, 100, 101), 0.0, 1e-15);
}

TEST(ClipGradNorm, ScalesToMaximum) {
    ParamStore<double> ps;
    auto& a = ps.add("a", Tensor<double>({2}));
    a.grad = Tensor<double>({2}, std::vector<double>{3.0, 4.0});
    EXPECT_EQ(clip_grad_norm(ps, 1.0), 5.0);
    EXPECT_NEAR(a.grad[0], 0.6, 1e-15);
    EXPECT_NEAR(a.grad[1], 0.8, 1e-15);
}

TEST(Masks, FreshPerStepFixedForValidation) {
    const auto s = tiny_sets();
    const auto cfg = tiny_train_config();
    std::vector<std::size_t> idx{0, 1, 2};
    EXPECT_NE(step_masks(s.train, idx, cfg, 0), step_masks(s.train, idx, cfg, 1));
    EXPECT_EQ(step_masks(s.train, idx, cfg, 4), step_masks(s.train, idx, cfg, 4));
    EXPECT_EQ(validation_masks(s.val, cfg), validation_masks(s.val, cfg));
}

TEST(Pretrain, DeterministicRunRecord) {
    const auto s = tiny_sets();
    const auto cfg = tiny_train_config();
    auto run = [&] {
        Model<double> m(cfg.model_config(3, 12));
        return pretrain(m, s.train, s.val, cfg);
    };
    const auto a = run(), b = run();
    ASSERT_EQ(a.steps.size(), b.steps.size());
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        EXPECT_EQ(a.steps[i].total, b.steps[i].total);
        EXPECT_EQ(a.steps[i].dec, b.steps[i].dec);
        EXPECT_EQ(a.steps[i].ali, b.steps[i].ali);
    }
    for (std::size_t e = 0; e < a.epochs.size(); ++e) EXPECT_EQ(*a.epochs[e].val_loss, *b.epochs[e].val_loss);
    EXPECT_EQ(a.selected_epoch, b.selected_epoch);
}

TEST(Pretrain, SelectsMinimumValidationLoss) {
    const auto s = tiny_sets();
    auto cfg = tiny_train_config();
    cfg.epochs = 6;
    cfg.lr = 3e-2;  // large enough that validation loss is not monotone
    Model<double> m(cfg.model_config(3, 12));
    const auto rec = pretrain(m, s.train, s.val, cfg);
    double best = 1e300;
    std::size_t best_epoch = 0;
    for (const auto& e : rec.epochs) {
        EXPECT_GE(e.loss, 0.0);
        EXPECT_GE(e.dec, 0.0);
        EXPECT_GE(e.ali, 0.0);
        if (*e.val_loss < best) best = *e.val_loss, best_epoch = e.epoch;
    }
    EXPECT_EQ(rec.selected_epoch, best_epoch);
    EXPECT_EQ(rec.best_val_loss, best);
    // The model holds the selected parameters.
    const auto v = evaluate_pretrain_loss(m, s.val, validation_masks(s.val, cfg), cfg);
    EXPECT_EQ(v.total(cfg.lambda), best);
}

TEST(Pretrain, LambdaZeroMatchesTeacherlessGradients) {
    Model<double> m(tiny_config());
    const auto x = random_tensor({2, 8, 3}, 11);
    const auto mt = mask_tensor<double>(dmae::testing::random_masks(2, 3, 8, 12));
    auto grads = [&](bool teacher) {
        m.params().zero_grad();
        Tape<double> t;
        const auto o = m.forward_pretrain(t, x, mt, Mode::eval, nullptr, teacher);
        const auto dec = loss_dec(o.y, x, mt);
        if (teacher) {
            const auto ali = loss_ali(o.z_tea, o.z_pre, mt);
            EXPECT_GT(ali.value()[0], 0.0);
            t.backward(total_loss(dec, ali, 0.0));
        } else {
            t.backward(dec);
        }
        std::vector<Tensor<double>> g;
        for (const auto& p : m.params()) g.push_back(p->grad);
        return g;
    };
    const auto a = grads(true), b = grads(false);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i] == b[i]);
}

TEST(Pretrain, NonFiniteLossAbortsWithStep) {
    const auto s = tiny_sets();
    const auto cfg = tiny_train_config();
    Model<double> m(cfg.model_config(3, 12));
    m.params().find("decoder.bias")->value[0] = std::nan("");
    try {
        pretrain(m, s.train, s.val, cfg);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("L_dec"), std::string::npos) << e.what();
    }
}

TEST(Pretrain, RejectsVariableMismatch) {
    const auto s = tiny_sets();
    const auto cfg = tiny_train_config();
    Model<double> m(cfg.model_config(4, 12));
    EXPECT_THROW(pretrain(m, s.train, s.val, cfg), ShapeError);
}

TEST(Pretrain, GradientMatchesFiniteDifferences) {
    Model<double> m(tiny_config());
    const auto x = random_tensor({2, 8, 3}, 13);
    const auto mt = mask_tensor<double>(dmae::testing::random_masks(2, 3, 8, 14, {.r = 0.3}));
    TeacherTargets<double> tt;
    {
        Tape<double> t;
        const auto o = m.forward_pretrain(t, x, mt, Mode::train);
        tt = {o.u_tea.value(), o.z_tea.value()};
    }
    auto fn = [&](Tape<double>& t) {
        const auto o = m.forward_pretrain(t, x, mt, Mode::train, &tt);
        return total_loss(loss_dec(o.y, x, mt), loss_ali(o.z_tea, o.z_pre, mt), 1.0);
    };
    const auto rep = grad_check<double>(fn, dmae::testing::all_params(m));
    EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst_param;
}

TEST(RunRecord, CsvAndJson) {
    RunRecord r;
    r.epochs.push_back({1, 2.0, 1.5, 0.5, 1.25, 1.0, 0.25, 0.1});
    r.selected_epoch = 1;
    EXPECT_EQ(r.epoch_csv(), "epoch,L,L_dec,L_ali,val_L\n1,2,1.5,0.5,1.25\n");
    EXPECT_EQ(r.to_json()["selected_epoch"], 1);
}

TEST(Config, PretrainConfigValidation) {
    auto c = tiny_train_config();
    c.lr = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_train_config();
    c.lambda = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_train_config();
    c.epochs = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}
