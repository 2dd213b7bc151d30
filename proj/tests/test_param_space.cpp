#include <doctest.h>

#include <random>
#include <set>

#include "kooptrain/errors.hpp"
#include "kooptrain/nn_engine.hpp"
#include "kooptrain/param_space.hpp"

using namespace koop;

TEST_CASE("parameter counts match the architecture formula") {
    CHECK(Architecture::parse("1:10:10:2", Activation::Sigmoid, true).param_count() == 152);
    CHECK(Architecture::parse("784:20:20:20:10", Activation::ReLU, true).param_count() ==
          16750);
    CHECK(Architecture({4, 2}, Activation::Step, false).param_count() == 8);
}

TEST_CASE("architecture validation") {
    CHECK_THROWS_AS(Architecture({5}, Activation::Sigmoid, true), ConfigError);
    CHECK_THROWS_AS(Architecture({3, 0, 2}, Activation::Sigmoid, true), ConfigError);
    CHECK_THROWS_AS(Architecture::parse("1:x:2", Activation::Sigmoid, true), ConfigError);
    CHECK(Architecture::parse("1:10:10:2", Activation::Sigmoid, true).size_string() ==
          "1:10:10:2");
}

TEST_CASE("flatten/unflatten round trip is exact") {
    const Architecture arch = Architecture::parse("3:5:2", Activation::Sigmoid, true);
    std::mt19937_64 rng(7);
    std::normal_distribution<double> dist;
    std::vector<LayerParams> layers(2);
    layers[0].W = Eigen::MatrixXd::NullaryExpr(5, 3, [&] { return dist(rng); });
    layers[0].b = Eigen::VectorXd::NullaryExpr(5, [&] { return dist(rng); });
    layers[1].W = Eigen::MatrixXd::NullaryExpr(2, 5, [&] { return dist(rng); });
    layers[1].b = Eigen::VectorXd::NullaryExpr(2, [&] { return dist(rng); });

    const ParamVector v = flatten(arch, layers);
    REQUIRE(v.size() == arch.param_count());
    const auto back = unflatten(arch, v);
    for (int l = 0; l < 2; ++l) {
        CHECK(back[l].W == layers[l].W);  // bitwise
        CHECK(back[l].b == layers[l].b);
    }
    // Bias sits immediately after its node's incoming weights.
    CHECK(v(3) == layers[0].b(0));
    CHECK(v(0) == layers[0].W(0, 0));
}

TEST_CASE("unflatten rejects wrong lengths, zero maps to zero") {
    const Architecture arch = Architecture::parse("1:10:10:2", Activation::Sigmoid, true);
    CHECK_THROWS_AS(unflatten(arch, Eigen::VectorXd::Zero(151)), ConfigError);
    const auto layers = unflatten(arch, Eigen::VectorXd::Zero(152));
    CHECK(layers[0].W.isZero(0));
    CHECK(layers[2].b.isZero(0));
}

TEST_CASE("flatten rejects shape mismatches") {
    const Architecture arch = Architecture::parse("3:5:2", Activation::Sigmoid, true);
    std::vector<LayerParams> layers(2);
    layers[0].W = Eigen::MatrixXd::Zero(5, 4);  // wrong fan-in
    layers[0].b = Eigen::VectorXd::Zero(5);
    layers[1].W = Eigen::MatrixXd::Zero(2, 5);
    layers[1].b = Eigen::VectorXd::Zero(2);
    CHECK_THROWS_AS(flatten(arch, layers), ConfigError);
}

namespace {

void check_partition_covers(const Partition& p) {
    std::set<Eigen::Index> seen;
    Eigen::Index total = 0;
    for (const auto& g : p.groups) {
        for (Eigen::Index i : g.indices) {
            CHECK(seen.insert(i).second);  // no index twice
            ++total;
        }
    }
    CHECK(total == p.param_count);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == p.param_count - 1);
}

}  // namespace

TEST_CASE("node partition of 1:10:10:2") {
    const Architecture arch = Architecture::parse("1:10:10:2", Activation::Sigmoid, true);
    const Partition p = build_partition(arch, Scheme::node());
    REQUIRE(p.group_count() == 22);
    int size2 = 0, size11 = 0;
    for (const auto& g : p.groups) {
        if (g.size() == 2) ++size2;
        if (g.size() == 11) ++size11;
        CHECK(g.contiguous());
    }
    CHECK(size2 == 10);
    CHECK(size11 == 12);
    check_partition_covers(p);
}

TEST_CASE("every scheme covers 1:10:10:2 exactly once") {
    const Architecture arch = Architecture::parse("1:10:10:2", Activation::Sigmoid, true);
    for (const Scheme s : {Scheme::single_weight(), Scheme::quasi_node(3), Scheme::node(),
                           Scheme::layer(), Scheme::network()}) {
        CAPTURE(to_string(s));
        check_partition_covers(build_partition(arch, s));
    }
}

TEST_CASE("single weight partition has N singletons, network has one group") {
    const Architecture arch = Architecture::parse("1:10:10:2", Activation::Sigmoid, true);
    const Partition sw = build_partition(arch, Scheme::single_weight());
    CHECK(sw.group_count() == 152);
    for (const auto& g : sw.groups) CHECK(g.size() == 1);
    const Partition net = build_partition(arch, Scheme::network());
    REQUIRE(net.group_count() == 1);
    CHECK(net.groups[0].size() == 152);
}

TEST_CASE("quasi-node 157 splits each first-layer node of the MNIST net into 5 chunks") {
    const Architecture arch = Architecture::parse("784:20:20:20:10", Activation::ReLU, true);
    std::vector<Scheme> per_layer = {Scheme::quasi_node(157), Scheme::node(), Scheme::node(),
                                     Scheme::node()};
    const Partition p = build_partition(arch, per_layer);
    int chunks157 = 0, node_groups = 0;
    for (const auto& g : p.groups) {
        if (g.scheme.kind == SchemeKind::QuasiNode) {
            CHECK(g.size() == 157);
            ++chunks157;
        } else {
            CHECK(g.size() == 21);
            ++node_groups;
        }
    }
    CHECK(chunks157 == 20 * 5);  // 785 = 5 * 157 exactly, per node
    CHECK(node_groups == 50);
    check_partition_covers(p);
}

TEST_CASE("quasi-node leaves a short final chunk and keeps the bias in it") {
    const Architecture arch = Architecture::parse("4:2", Activation::Sigmoid, true);  // span 5
    const Partition p = build_partition(arch, Scheme::quasi_node(3));
    REQUIRE(p.group_count() == 4);  // per node: 3 + 2
    CHECK(p.groups[0].size() == 3);
    CHECK(p.groups[1].size() == 2);
    // Node 0 spans indices 0..4; bias index 4 sits in the final chunk.
    CHECK(p.groups[1].indices.back() == 4);
}

TEST_CASE("quasi-node q out of range is rejected") {
    const Architecture arch = Architecture::parse("4:2", Activation::Sigmoid, true);
    CHECK_THROWS_AS(build_partition(arch, Scheme::quasi_node(0)), ConfigError);
    CHECK_THROWS_AS(build_partition(arch, Scheme::quasi_node(6)), ConfigError);
    CHECK_NOTHROW(build_partition(arch, Scheme::quasi_node(5)));
}

TEST_CASE("node partition group count equals the number of destination nodes") {
    for (const char* spec : {"1:10:10:2", "3:7:5", "784:20:20:20:10"}) {
        const Architecture arch = Architecture::parse(spec, Activation::Sigmoid, true);
        Eigen::Index nodes = 0;
        for (std::size_t l = 1; l < arch.layer_sizes.size(); ++l) nodes += arch.layer_sizes[l];
        CHECK(build_partition(arch, Scheme::node()).group_count() == nodes);
    }
}

TEST_CASE("predicted complexity matches the ledger formulas") {
    const auto node = predicted_complexity(Scheme::node(), 10, 100);
    CHECK(node.construction_flops == doctest::Approx(1e6));  // max{k n^4, n^5}
    CHECK(node.per_iteration_flops == doctest::Approx(1e4));

    const auto network = predicted_complexity(Scheme::network(), 2, 10);
    CHECK(network.construction_flops == doctest::Approx(640));
    CHECK(network.per_iteration_flops == doctest::Approx(64));

    const auto sw = predicted_complexity(Scheme::single_weight(), 10, 100);
    CHECK(sw.construction_flops == doctest::Approx(1e5));
    CHECK(sw.per_iteration_flops == doctest::Approx(1e3));
}

TEST_CASE("per-iteration complexity ordering over a width/chunk grid") {
    for (int n = 2; n <= 32; ++n) {
        for (int q = 1; q <= n; ++q) {
            const double sw = predicted_complexity(Scheme::single_weight(), n, 10)
                                  .per_iteration_flops;
            const double qn = predicted_complexity(Scheme::quasi_node(q), n, 10)
                                  .per_iteration_flops;
            const double nd = predicted_complexity(Scheme::node(), n, 10).per_iteration_flops;
            const double ly = predicted_complexity(Scheme::layer(), n, 10).per_iteration_flops;
            const double nw =
                predicted_complexity(Scheme::network(), n, 10).per_iteration_flops;
            CHECK(sw <= qn);
            CHECK(qn <= nd);
            CHECK(nd <= ly);
            CHECK(ly <= nw);
        }
    }
}

TEST_CASE("validate_params flags NaN with its index") {
    const Architecture arch = Architecture::parse("2:2", Activation::Sigmoid, true);
    ParamVector v = Eigen::VectorXd::Zero(arch.param_count());
    CHECK_NOTHROW(validate_params(arch, v, "test"));
    v(3) = std::nan("");
    CHECK_THROWS_AS(validate_params(arch, v, "test"), NumericError);
}
