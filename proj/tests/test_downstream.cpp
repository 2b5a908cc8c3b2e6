#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "support.hpp"

using namespace di3cl;
namespace fs = std::filesystem;

namespace {

LabelMap random_labels(Rng& rng, int h, int w, int k) {
    LabelMap m(h, w);
    for (auto& v : m.data) v = static_cast<std::uint8_t>(uniform_index(rng, static_cast<std::size_t>(k)));
    return m;
}

Tensor<double> random_logits(Rng& rng, int k, int n, int h, int w) {
    Tensor<double> t(k, n, h, w);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(rng, -2.0, 2.0);
    return t;
}

Tensor<double> one_hot(const std::vector<std::uint8_t>& labels, int k, int h, int w) {
    Tensor<double> p(k, 1, h, w);
    for (std::size_t i = 0; i < labels.size(); ++i) p[labels[i] * labels.size() + i] = 1.0;
    return p;
}

}  // namespace

TEST(Metrics, WorkedConfusion) {
    const auto r = compute_metrics(ConfusionMatrix::from_rows({{40, 10}, {20, 30}}));
    EXPECT_DOUBLE_EQ(r.oa, 0.70);
    EXPECT_NEAR(r.kappa, 0.40, 1e-12);
    EXPECT_NEAR(r.per_class_iou[0], 40.0 / 70.0, 1e-12);
    EXPECT_NEAR(r.per_class_iou[1], 0.5, 1e-12);
    EXPECT_NEAR(r.miou, (40.0 / 70.0 + 0.5) / 2, 1e-12);
    EXPECT_NEAR(r.miou, 0.5357, 1e-4);
    ASSERT_TRUE(r.binary);
    EXPECT_NEAR(r.precision, 30.0 / 40.0, 1e-12);
    EXPECT_NEAR(r.recall, 30.0 / 50.0, 1e-12);
}

TEST(Metrics, PerfectAndChance) {
    const auto perfect = compute_metrics(ConfusionMatrix::from_rows({{50, 0}, {0, 50}}));
    EXPECT_EQ(perfect.oa, 1.0);
    EXPECT_EQ(perfect.kappa, 1.0);
    EXPECT_EQ(perfect.miou, 1.0);
    for (double f : perfect.per_class_f1) EXPECT_EQ(f, 1.0);
    EXPECT_EQ(compute_metrics(ConfusionMatrix::from_rows({{25, 25}, {25, 25}})).kappa, 0.0);

    const auto diag = compute_metrics(ConfusionMatrix::from_rows({{3, 0, 0}, {0, 7, 0}, {0, 0, 1}}));
    EXPECT_EQ(diag.kappa, 1.0);
    EXPECT_EQ(diag.miou, 1.0);
    // Independent marginals: outer product of row and column totals.
    const auto indep = compute_metrics(ConfusionMatrix::from_rows({{6, 2, 2}, {12, 4, 4}, {6, 2, 2}}));
    EXPECT_NEAR(indep.kappa, 0.0, 1e-12);
}

TEST(Metrics, AbsentClassIsNanAndSkippedInMean) {
    const auto r = compute_metrics(ConfusionMatrix::from_rows({{5, 1, 0}, {2, 4, 0}, {0, 0, 0}}));
    EXPECT_TRUE(std::isnan(r.per_class_iou[2]));
    EXPECT_NEAR(r.miou, (5.0 / 8.0 + 4.0 / 7.0) / 2, 1e-12);
    EXPECT_THROW(compute_metrics(ConfusionMatrix(3)), StateError);
}

TEST(Metrics, MatchesBruteForceOnRandomMasks) {
    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
        const int k = 2 + static_cast<int>(uniform_index(rng, 5));
        auto truth = random_labels(rng, 16, 16, k);
        const auto pred = random_labels(rng, 16, 16, k);
        truth.data[uniform_index(rng, truth.data.size())] = LabelMap::kIgnore;
        ConfusionMatrix cm(k);
        cm.add(truth, pred);
        const auto r = compute_metrics(cm);
        const auto b = di3cl::testing::brute_force_metrics({truth}, {pred}, k);
        EXPECT_EQ(cm.total(), 255);
        EXPECT_DOUBLE_EQ(r.oa, b.oa);
        EXPECT_DOUBLE_EQ(r.kappa, b.kappa);
        EXPECT_DOUBLE_EQ(r.miou, b.miou);
    }
}

TEST(Metrics, MiouIsPermutationEquivariant) {
    const std::vector<std::vector<std::int64_t>> rows{{9, 2, 1}, {3, 8, 0}, {1, 4, 6}};
    const std::vector<int> perm{2, 0, 1};
    std::vector<std::vector<std::int64_t>> permuted(3, std::vector<std::int64_t>(3));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) permuted[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])][static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])] = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    EXPECT_NEAR(compute_metrics(ConfusionMatrix::from_rows(rows)).miou, compute_metrics(ConfusionMatrix::from_rows(permuted)).miou, 1e-12);
}

TEST(Metrics, LabelOutOfRangeIsDataError) {
    ConfusionMatrix cm(2);
    LabelMap t(1, 2), p(1, 2);
    t.data = {0, 3};
    EXPECT_THROW(cm.add(t, p), DataError);
}

TEST(PolyLr, WorkedExamples) {
    EXPECT_EQ(poly_lr(0, 100, 0.01), 0.01);
    EXPECT_EQ(poly_lr(100, 100, 0.01), 0.0);
    EXPECT_NEAR(poly_lr(50, 100, 0.01, 0.9), 0.01 * std::pow(0.5, 0.9), 1e-15);
    EXPECT_NEAR(poly_lr(50, 100, 1.0, 0.9), 0.5359, 1e-4);
}

TEST(Dice, OneHotAndDisjoint) {
    std::vector<std::uint8_t> l(64);
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = static_cast<std::uint8_t>(i % 2);
    EXPECT_NEAR(dice_loss(one_hot(l, 2, 8, 8), l), 0.0, 1e-12);
    std::vector<std::uint8_t> flipped(l);
    for (auto& v : flipped) v = static_cast<std::uint8_t>(1 - v);
    EXPECT_GT(dice_loss(one_hot(flipped, 2, 8, 8), l), 0.95);
}

TEST(Dice, UniformProbsMatchDirectSum) {
    std::vector<std::uint8_t> l(64);
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = i < 32 ? 0 : 1;
    Tensor<double> p(2, 1, 8, 8, 0.5);
    double mean = 0;
    for (int c = 0; c < 2; ++c) {
        double inter = 0, sp = 0, sg = 0;
        for (std::size_t i = 0; i < 64; ++i) {
            const double g = l[i] == c ? 1 : 0;
            inter += 0.5 * g;
            sp += 0.5;
            sg += g;
        }
        mean += (2 * inter + 1) / (sp + sg + 1) / 2;
    }
    EXPECT_NEAR(dice_loss(p, l), 1 - mean, 1e-12);
    EXPECT_NEAR(dice_loss(p, l), 1 - 33.0 / 65.0, 1e-12);
}

TEST(Losses, CrossEntropyAndDiceGradientsMatchFiniteDifferences) {
    Rng rng(2);
    const auto logits = random_logits(rng, 3, 2, 4, 5);
    std::vector<std::uint8_t> l(40);
    for (auto& v : l) v = static_cast<std::uint8_t>(uniform_index(rng, 3));
    l[7] = LabelMap::kIgnore;
    Tensor<double> gce, gd;
    const auto probs = softmax_classes(logits);
    cross_entropy(probs, l, &gce);
    dice_loss(probs, l, &gd);
    const double h = 1e-6;
    for (std::size_t i = 0; i < logits.size(); i += 3) {
        Tensor<double> a = logits, b = logits;
        a[i] += h;
        b[i] -= h;
        const auto pa = softmax_classes(a), pb = softmax_classes(b);
        EXPECT_NEAR(gce[i], (cross_entropy<double>(pa, l, nullptr) - cross_entropy<double>(pb, l, nullptr)) / (2 * h), 1e-7);
        EXPECT_NEAR(gd[i], (dice_loss<double>(pa, l) - dice_loss<double>(pb, l)) / (2 * h), 1e-7);
    }
    // Ignored pixel contributes no gradient.
    for (int c = 0; c < 3; ++c) EXPECT_EQ(gce[static_cast<std::size_t>(c) * 40 + 7], 0.0);
}

TEST(Sixfold, CountsRotationsAndClassHistograms) {
    const auto base = di3cl::testing::synth_labeled(1, 3, 16);
    const auto six = sixfold_augment(base);
    ASSERT_EQ(six.size(), 6u);
    std::map<int, int> hist;
    for (auto v : base[0].mask.data) ++hist[v];
    for (const auto& s : six) {
        std::map<int, int> h;
        for (auto v : s.mask.data) ++h[v];
        EXPECT_EQ(h, hist);
    }
    const int n = 16;
    EXPECT_EQ(dihedral_map(Dihedral::rot90, 0, 0, n), std::make_pair(0, n - 1));
    LabeledSample s = base[0];
    for (int i = 0; i < 4; ++i) s = apply_dihedral(s, Dihedral::rot90);
    EXPECT_EQ(s.mask, base[0].mask);
    EXPECT_EQ(s.image.storage(), base[0].image.storage());
    // rot90 output agrees with the index-permutation oracle.
    const auto r = apply_dihedral(base[0], Dihedral::rot90);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) ASSERT_EQ(r.mask.at(x, n - 1 - y), base[0].mask.at(y, x));
    LabeledSample rect{make_image<float>(4, 6), LabelMap(4, 6)};
    EXPECT_THROW(apply_dihedral(rect, Dihedral::rot90), GeometryError);
}

TEST(SegModel, LogitShapes) {
    Rng rng(4);
    auto ten = attach_seg_head(Backbone<float>(BackboneConfig::tiny(), rng), 10, rng);
    const auto y = ten.forward(Tensor<float>(1, 1, 512, 512), nn::Mode::eval());
    EXPECT_EQ(y.shape(), (Tensor<float>::Shape{10, 1, 512, 512}));
    auto bin = attach_seg_head(Backbone<float>(BackboneConfig::tiny(), rng), 2, rng);
    EXPECT_EQ(bin.forward(Tensor<float>(1, 3, 96, 80), nn::Mode::eval()).shape(), (Tensor<float>::Shape{2, 3, 96, 80}));
    EXPECT_THROW(attach_seg_head(Backbone<float>(BackboneConfig::micro(), rng), 1, rng), ConfigError);
}

TEST(SegModel, PretrainedBackboneIsLoadedExactly) {
    const auto dir = di3cl::testing::scratch_dir("seg_init");
    PretrainConfig pc = di3cl::testing::desk_pretrain_config();
    pc.seed = 9;
    TrainState<float> st(pc);
    export_backbone(dir / "bb.bin", st, pc);
    FinetuneConfig fc;
    fc.init = (dir / "bb.bin").string();
    auto model = make_seg_model<float>(fc, BackboneConfig::micro());
    nn::ParamList<float> a, b;
    model.backbone().params(a);
    st.pair.online.backbone.params(b);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
}

TEST(SegModel, SaveLoadRoundTrip) {
    const auto dir = di3cl::testing::scratch_dir("seg_rt");
    Rng rng(5);
    auto m = attach_seg_head(Backbone<float>(BackboneConfig::tiny(), rng), 3, rng, 16);
    save_seg_model(dir / "m.seg", m, "x = 1\n");
    auto back = load_seg_model<float>(dir / "m.seg");
    EXPECT_EQ(back.num_classes(), 3);
    EXPECT_EQ(back.decoder_dim(), 16);
    Tensor<float> x(1, 2, 32, 32);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = uniform(rng, 0.0f, 1.0f);
    EXPECT_EQ(m.forward(x, nn::Mode::eval()).storage(), back.forward(x, nn::Mode::eval()).storage());
}

TEST(Finetune, PatienceOneStopsAfterFirstNonImprovingEpoch) {
    const auto train = di3cl::testing::synth_labeled(8, 100, 32, 2);
    const auto val = di3cl::testing::synth_labeled(4, 200, 32, 2);
    FinetuneConfig cfg;
    cfg.base_lr = 0.0;  // frozen weights
    cfg.patience = 1;
    cfg.epochs = 30;
    cfg.batch_size = 8;
    const auto res = finetune<float>(cfg, train, val, make_seg_model<float>(cfg, BackboneConfig::tiny()));
    EXPECT_LT(res.epochs_run, cfg.epochs);
    EXPECT_EQ(res.epochs_run, res.best_epoch + 2);
    EXPECT_LE(res.history.back().val_miou, res.report.miou);
}

TEST(Finetune, DeterministicUnderSeed) {
    const auto train = di3cl::testing::synth_labeled(16, 300, 32, 2);
    const auto val = di3cl::testing::synth_labeled(8, 400, 32, 2);
    FinetuneConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.seed = 3;
    const auto a = finetune<float>(cfg, train, val, make_seg_model<float>(cfg, BackboneConfig::tiny()));
    const auto b = finetune<float>(cfg, train, val, make_seg_model<float>(cfg, BackboneConfig::tiny()));
    EXPECT_EQ(a.best_epoch, b.best_epoch);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
}

TEST(Finetune, BeatsMajorityClassPredictor) {
    const auto train = di3cl::testing::synth_labeled(32, 500, 64, 2);
    const auto val = di3cl::testing::synth_labeled(16, 600, 64, 2);
    FinetuneConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 16;
    cfg.base_lr = 0.02;
    const auto res = finetune<float>(cfg, train, val, make_seg_model<float>(cfg, BackboneConfig::tiny()));

    std::vector<LabelMap> truth, majority;
    std::int64_t ones = 0, total = 0;
    for (const auto& s : val)
        for (auto v : s.mask.data) {
            ones += v == 1;
            ++total;
        }
    const std::uint8_t maj = ones * 2 > total ? 1 : 0;
    for (const auto& s : val) {
        truth.push_back(s.mask);
        majority.emplace_back(s.mask.height, s.mask.width, maj);
    }
    const double chance = di3cl::testing::brute_force_metrics(truth, majority, 2).miou;
    EXPECT_GT(res.report.miou, chance);
}

TEST(Finetune, EmptySetsAndClassMismatch) {
    const auto some = di3cl::testing::synth_labeled(2, 1, 32, 2);
    FinetuneConfig cfg;
    auto model = make_seg_model<float>(cfg, BackboneConfig::micro());
    EXPECT_THROW(finetune<float>(cfg, {}, some, model), DataError);
    EXPECT_THROW(finetune<float>(cfg, some, {}, model), DataError);
    cfg.num_classes = 3;
    EXPECT_THROW(finetune<float>(cfg, some, some, model), ConfigError);
    EXPECT_THROW(evaluate(model, std::span<const LabeledSample>{}), DataError);
}
