#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "tbe/checkpoint.hpp"
#include "tbe/errors.hpp"
#include "tbe/ops.hpp"
#include "tbe/optim.hpp"
#include "tbe/rng.hpp"
#include "tbe/tensor.hpp"
#include "fd.hpp"

using namespace tbe;

TEST(Tensor, ShapeAndDataAgree) {
    Tensor t(Shape{2, 3, 4}, 1.5f);
    EXPECT_EQ(t.numel(), 24u);
    EXPECT_EQ(t.data().size(), 24u);
    EXPECT_EQ(t.rank(), 3u);
    EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
}

TEST(Tensor, CopiesShareStorageCloneDoesNot) {
    Tensor a(Shape{3}, std::vector<float>{1, 2, 3});
    Tensor b = a;
    Tensor c = a.clone();
    EXPECT_TRUE(a.same_storage(b));
    EXPECT_FALSE(a.same_storage(c));
    c.mutable_data()[0] = 9.0f;
    EXPECT_EQ(a.at(0), 1.0f);
}

TEST(Tensor, GradLengthMatchesData) {
    Tensor w(Shape{2, 2}, std::vector<float>{1, 2, 3, 4});
    w.set_requires_grad(true);
    Tensor y = scale(w, 2.0f);
    Tensor total = mean_rows(y);  // [1,2]
    total.backward(std::vector<float>{1.0f, 1.0f});
    ASSERT_TRUE(w.has_grad());
    EXPECT_EQ(w.grad().size(), w.numel());
    for (float g : w.grad()) EXPECT_FLOAT_EQ(g, 1.0f);  // d/dw of mean over 2 rows of 2w
}

TEST(Autograd, DiamondGraphVisitsEachNodeOnce) {
    // x feeds two paths that rejoin; the shared node must pass its gradient
    // on exactly once, after both consumers have contributed.
    Tensor x(Shape{1, 3}, std::vector<float>{1, -2, 3});
    x.set_requires_grad(true);
    Tensor h = scale(x, 3.0f);
    Tensor y = add(relu(h), scale(h, 0.5f));
    y.backward(std::vector<float>{1, 1, 1});
    const std::vector<float> expect{3.0f * 1.5f, 3.0f * 0.5f, 3.0f * 1.5f};
    for (std::size_t i = 0; i < 3; ++i) EXPECT_FLOAT_EQ(x.grad()[i], expect[i]);
}

TEST(Autograd, GradientsAccumulateAcrossBackwardCalls) {
    Tensor x(Shape{1, 2}, std::vector<float>{1, 2});
    x.set_requires_grad(true);
    scale(x, 2.0f).backward(std::vector<float>{1, 1});
    scale(x, 2.0f).backward(std::vector<float>{1, 1});
    EXPECT_FLOAT_EQ(x.grad()[0], 4.0f);
    x.zero_grad();
    EXPECT_FLOAT_EQ(x.grad()[0], 0.0f);
}

TEST(Autograd, LongChainDoesNotRecurse) {
    Tensor x(Shape{1, 1}, 1.0f);
    x.set_requires_grad(true);
    Tensor y = x;
    for (int i = 0; i < 20000; ++i) y = scale(y, 1.0f);
    y.backward(std::vector<float>{1.0f});
    EXPECT_FLOAT_EQ(x.grad()[0], 1.0f);
}

TEST(Autograd, NoGradGuardBuildsNoGraph) {
    Tensor x(Shape{1, 2}, 1.0f);
    x.set_requires_grad(true);
    {
        NoGradGuard g;
        EXPECT_FALSE(grad_enabled());
        Tensor y = scale(x, 2.0f);
        EXPECT_FALSE(y.requires_grad());
        EXPECT_TRUE(y.is_leaf());
    }
    EXPECT_TRUE(grad_enabled());
    EXPECT_TRUE(scale(x, 2.0f).requires_grad());
}

TEST(Autograd, NonFiniteForwardIsAnError) {
    Tensor x(Shape{1, 2}, std::vector<float>{1.0f, std::nanf("")});
    EXPECT_THROW(check_finite(x.data(), "x"), NonFiniteError);
}

TEST(ConcatSplit, RoundTripIsExact) {
    std::mt19937_64 rng(5);
    Tensor a = fd::random({2, 3, 4, 4}, rng);
    Tensor b = fd::random({2, 5, 4, 4}, rng);
    const std::vector<Tensor> parts{a, b};
    Tensor c = concat(parts, 1);
    const std::vector<std::size_t> sizes{3, 5};
    auto back = split(c, 1, sizes);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), back[0].data().begin()));
    EXPECT_TRUE(std::equal(b.data().begin(), b.data().end(), back[1].data().begin()));
}

TEST(Sgd, PlainStepMovesByLearningRate) {
    Sgd opt(0.01f, 0.0f);
    std::vector<float> p{1.0f};
    const std::vector<float> g{1.0f};
    opt.step("p", p, g);
    EXPECT_NEAR(p[0], 0.99f, 1e-7);
}

TEST(Sgd, MomentumSecondStepIs0019) {
    Sgd opt(0.01f, 0.9f);
    std::vector<float> p{0.0f};
    const std::vector<float> g{1.0f};
    opt.step("p", p, g);
    const float after_first = p[0];
    opt.step("p", p, g);
    EXPECT_NEAR(after_first - p[0], 0.019f, 1e-7);
}

TEST(Sgd, ZeroGradientDecaysVelocityOnly) {
    Sgd opt(0.1f, 0.9f);
    std::vector<float> p{0.0f};
    opt.step("p", p, std::vector<float>{1.0f});
    const float v0 = opt.velocity().at("p")[0];
    const float p0 = p[0];
    opt.step("p", p, std::vector<float>{0.0f});
    EXPECT_NEAR(opt.velocity().at("p")[0], 0.9f * v0, 1e-8);
    // p moves by the decayed velocity, not by any new gradient
    EXPECT_NEAR(p[0], p0 + 0.9f * v0, 1e-8);
    Sgd still(0.1f, 0.9f);
    std::vector<float> q{2.0f};
    still.step("q", q, std::vector<float>{0.0f});
    EXPECT_EQ(q[0], 2.0f);
}

TEST(Sgd, RejectsBadArguments) {
    EXPECT_THROW(Sgd(0.0f, 0.5f), ParameterError);
    EXPECT_THROW(Sgd(0.1f, 1.0f), ParameterError);
    Sgd opt(0.1f, 0.0f);
    std::vector<float> p{1.0f, 2.0f};
    EXPECT_THROW(opt.step("p", p, std::vector<float>{1.0f}), DimensionError);
}

TEST(Sgd, ClipGradNormRescalesJointly) {
    ParamMap params;
    Tensor a(Shape{2}, 0.0f), b(Shape{1}, 0.0f);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    a.mutable_grad()[0] = 3.0f;
    b.mutable_grad()[0] = 4.0f;
    params["a"] = a;
    params["b"] = b;
    EXPECT_DOUBLE_EQ(clip_grad_norm(params, 10.0), 5.0);
    EXPECT_FLOAT_EQ(a.grad()[0], 3.0f);
    EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
    EXPECT_NEAR(a.grad()[0], 0.6f, 1e-7);
    EXPECT_NEAR(b.grad()[0], 0.8f, 1e-7);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    std::mt19937_64 rng(11);
    NamedTensors w;
    w["conv.w"] = fd::random({4, 3, 3, 3}, rng);
    w["conv.b"] = fd::random({4}, rng);
    w["odd"] = Tensor(Shape{1}, std::vector<float>{-0.0f});
    std::stringstream buf;
    write_weights(buf, w);
    const std::string bytes = buf.str();
    EXPECT_EQ(bytes.substr(0, 5), "TBEW1");
    NamedTensors back = read_weights(buf);
    ASSERT_EQ(back.size(), w.size());
    for (const auto& [name, t] : w) {
        const Tensor& r = back.at(name);
        EXPECT_EQ(r.shape(), t.shape());
        EXPECT_EQ(std::memcmp(r.data().data(), t.data().data(), t.numel() * sizeof(float)), 0);
    }
    std::stringstream again;
    write_weights(again, back);
    EXPECT_EQ(again.str(), bytes);
}

TEST(Checkpoint, TruncatedOrForeignFilesAreRejected) {
    NamedTensors w;
    w["x"] = Tensor(Shape{8}, 1.0f);
    std::stringstream buf;
    write_weights(buf, w);
    std::string bytes = buf.str();
    std::stringstream cut(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_weights(cut), IoError);
    std::stringstream foreign("GIF89a....");
    EXPECT_THROW(read_weights(foreign), IoError);
}

TEST(Rng, StreamsAreIndependentAndStable) {
    EXPECT_EQ(derive_seed(1, "blur", {3}), derive_seed(1, "blur", {3}));
    EXPECT_NE(derive_seed(1, "blur", {3}), derive_seed(1, "blur", {4}));
    EXPECT_NE(derive_seed(1, "blur"), derive_seed(1, "mining"));
    EXPECT_NE(derive_seed(1, "blur"), derive_seed(2, "blur"));
    auto a = make_rng(9, "init/x");
    auto b = make_rng(9, "init/x");
    for (int i = 0; i < 10; ++i) EXPECT_EQ(a(), b());
}
