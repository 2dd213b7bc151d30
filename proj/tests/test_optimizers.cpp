#include <doctest.h>

#include <cmath>
#include <random>

#include "kooptrain/errors.hpp"
#include "kooptrain/nn_engine.hpp"
#include "kooptrain/optimizers.hpp"

using namespace koop;

TEST_CASE("sgd is exactly w - eta * g") {
    OptimizerHyper hyper;
    hyper.lr = LrSchedule::constant(0.1);
    OptimizerState st(OptimizerKind::Sgd, hyper);
    ParamVector w(1), g(1);
    w << 1.0;
    g << 2.0;
    step(st, w, g);
    CHECK(w(0) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(st.t == 1);
}

TEST_CASE("adadelta first step matches the hand-evaluated update") {
    OptimizerHyper hyper;
    hyper.lr = LrSchedule::constant(1.0);
    hyper.rho = 0.9;
    hyper.eps = 1e-6;
    OptimizerState st(OptimizerKind::Adadelta, hyper);
    ParamVector w(1), g(1);
    w << 0.0;
    g << 1.0;
    step(st, w, g);
    CHECK(st.v(0) == doctest::Approx(0.1).epsilon(1e-12));        // E[g^2]
    const double delta = -std::sqrt(1e-6 / (0.1 + 1e-6));
    CHECK(w(0) == doctest::Approx(delta).epsilon(1e-9));          // ~ -3.1623e-3
    CHECK(st.u(0) == doctest::Approx(0.1 * delta * delta).epsilon(1e-9));
}

TEST_CASE("adam first step with the paper's beta ordering") {
    OptimizerHyper hyper;
    hyper.lr = LrSchedule::constant(0.01);
    hyper.beta1 = 0.999;
    hyper.beta2 = 0.9999;
    hyper.eps = 1e-8;
    OptimizerState st(OptimizerKind::Adam, hyper);
    ParamVector w(1), g(1);
    w << 0.0;
    g << 1.0;
    step(st, w, g);
    // Bias correction makes m_hat = v_hat = 1 on the first step.
    CHECK(w(0) == doctest::Approx(-0.01 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("decay schedule 8/(1000+t) starts at 0.008 and strictly decreases") {
    const LrSchedule lr = LrSchedule::decay(8.0, 1000.0);
    CHECK(lr.eta(0) == doctest::Approx(0.008).epsilon(1e-15));
    double prev = lr.eta(0);
    for (std::uint64_t t = 1; t <= 60000; ++t) {
        const double cur = lr.eta(t);
        REQUIRE(cur > 0);
        REQUIRE(cur < prev);
        prev = cur;
    }
}

TEST_CASE("gamma decays the rate once per epoch") {
    OptimizerHyper hyper;
    hyper.lr = LrSchedule::constant(1.0);
    hyper.gamma = 0.7;
    OptimizerState st(OptimizerKind::Adadelta, hyper);
    CHECK(st.effective_lr() == doctest::Approx(1.0));
    st.end_epoch();
    CHECK(st.effective_lr() == doctest::Approx(0.7));
    st.end_epoch();
    CHECK(st.effective_lr() == doctest::Approx(0.49));
}

TEST_CASE("squared accumulators never go negative, adam moments stay bounded") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> dist(0.0, 2.0);
    OptimizerHyper hyper;
    hyper.lr = LrSchedule::constant(0.001);
    for (const OptimizerKind kind :
         {OptimizerKind::Adam, OptimizerKind::Adagrad, OptimizerKind::Adadelta}) {
        OptimizerState st(kind, hyper);
        ParamVector w = Eigen::VectorXd::Zero(8);
        double gmax = 0;
        for (int i = 0; i < 200; ++i) {
            ParamVector g = Eigen::VectorXd::NullaryExpr(8, [&] { return dist(rng); });
            gmax = std::max(gmax, g.cwiseAbs().maxCoeff());
            step(st, w, g);
            if (st.v.size() > 0) CHECK(st.v.minCoeff() >= 0);
            if (st.u.size() > 0) CHECK(st.u.minCoeff() >= 0);
            if (kind == OptimizerKind::Adam) {
                CHECK(st.m.cwiseAbs().maxCoeff() <= gmax + 1e-12);
                CHECK(st.v.maxCoeff() <= gmax * gmax + 1e-12);
            }
        }
        CHECK(st.t == 200);
    }
}

TEST_CASE("non-finite updates are reported with an index") {
    OptimizerHyper hyper;
    hyper.lr = LrSchedule::constant(1.0);
    OptimizerState st(OptimizerKind::Sgd, hyper);
    ParamVector w = Eigen::VectorXd::Zero(3);
    ParamVector g(3);
    g << 0.0, std::numeric_limits<double>::infinity(), 0.0;
    CHECK_THROWS_WITH_AS(step(st, w, g),
                         "optimizer step produced non-finite parameter at index 1",
                         NumericError);
}

// ---------------------------------------------------------------------------
// Perceptron rule
// ---------------------------------------------------------------------------

TEST_CASE("threshold unit fires only above drive 1") {
    Eigen::MatrixXd w(1, 4);
    w << 0.6, 0.6, 0.0, 0.0;
    Eigen::VectorXd x(4);
    x << 1, 1, 0, 0;
    CHECK(perceptron_output(w, x)(0) == 1.0);  // drive 1.2 > 1
    x << 1, 0, 0, 0;
    CHECK(perceptron_output(w, x)(0) == 0.0);  // drive 0.6
}

TEST_CASE("matching prediction leaves weights unchanged") {
    Eigen::MatrixXd w(2, 4);
    w << 2.0, 0.1, 0.1, 0.1, 0.1, 0.1, 2.0, 0.1;
    const Eigen::MatrixXd before = w;
    Eigen::VectorXd x(4), y(2);
    x << 1, 0, 1, 0;
    y << 1, 1;  // both drives 2.0+..., both fire
    perceptron_step(w, x, y, 0.005);
    CHECK(w == before);
}

TEST_CASE("false positive pushes the active weight down by eta") {
    Eigen::MatrixXd w(1, 4);
    w << 1.5, 0.0, 0.0, 0.0;
    Eigen::VectorXd x(4), y(1);
    x << 1, 0, 0, 0;
    y << 0;  // but the unit fires (drive 1.5)
    perceptron_step(w, x, y, 0.005);
    CHECK(w(0, 0) == doctest::Approx(1.495).epsilon(1e-15));
    CHECK(w(0, 1) == 0.0);
    CHECK(w(0, 2) == 0.0);
    CHECK(w(0, 3) == 0.0);
}

TEST_CASE("inactive inputs never change, whatever the error") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> dist(0.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::MatrixXd w = Eigen::MatrixXd::NullaryExpr(2, 4, [&] { return dist(rng); });
        Eigen::VectorXd x(4), y(2);
        for (int i = 0; i < 4; ++i) x(i) = (rng() & 1) ? 1.0 : 0.0;
        for (int i = 0; i < 2; ++i) y(i) = (rng() & 1) ? 1.0 : 0.0;
        const Eigen::MatrixXd before = w;
        perceptron_step(w, x, y, 0.005);
        for (int c = 0; c < 4; ++c) {
            if (x(c) == 0.0) {
                CHECK(w.col(c) == before.col(c));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Flop instrumentation
// ---------------------------------------------------------------------------

TEST_CASE("fresh state has a zero flop count, one sgd step counts at least N") {
    OptimizerHyper hyper;
    OptimizerState st(OptimizerKind::Sgd, hyper);
    CHECK(flop_count(st) == 0);
    ParamVector w = Eigen::VectorXd::Zero(152), g = Eigen::VectorXd::Ones(152);
    FlopCounter fc;
    step(st, w, g, &fc);
    CHECK(flop_count(st) >= 152);
    CHECK(fc.update == flop_count(st));
}

TEST_CASE("doubling the batch doubles forward+backward flops") {
    const Architecture arch = Architecture::parse("2:5:3", Activation::Sigmoid, true);
    const Network net{arch, init_params(arch, 3), 3};
    auto count = [&](Eigen::Index j) {
        Batch batch;
        batch.inputs = Eigen::MatrixXd::Ones(j, 2);
        batch.targets = Eigen::MatrixXd::Zero(j, 3);
        FlopCounter fc;
        loss_and_grad(net, batch, LossKind::Mse, &fc);
        return fc.forward + fc.backward;
    };
    const auto small = static_cast<double>(count(16));
    const auto big = static_cast<double>(count(32));
    CHECK(big / small == doctest::Approx(2.0).epsilon(0.01));
}
