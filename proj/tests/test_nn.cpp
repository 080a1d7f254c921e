#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "iclnav/nn.hpp"
#include "iclnav/rng.hpp"

using namespace iclnav;

TEST_CASE("dense_forward against brute-force dot products") {
    Rng rng(3);
    DenseLayer layer("d", 4, 3, rng);
    Tensor x = Tensor::from({0.5, -1.25, 2.0});
    Graph g;
    Var y = dense_forward(g, layer, g.constant(x));
    for (int r = 0; r < 4; ++r) {
        double expect = layer.b.value[r];
        for (int c = 0; c < 3; ++c) expect += layer.W.value.at(r, c) * x[c];
        REQUIRE(g.value(y)[r] == Catch::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("dense_forward zero map returns the bias") {
    Rng rng(4);
    DenseLayer layer("d", 2, 3, rng);
    for (double& v : layer.W.value.data) v = 0.0;
    layer.b.value[0] = 5.0;
    layer.b.value[1] = -2.0;
    Graph g;
    Var y = dense_forward(g, layer, g.constant(Tensor::from({9.0, 9.0, 9.0})));
    REQUIRE(g.value(y).data == std::vector<double>{5.0, -2.0});
}

TEST_CASE("glorot init respects the fan bound and zero biases") {
    Rng rng(5);
    DenseLayer layer("d", 8, 6, rng);
    double bound = std::sqrt(6.0 / (6 + 8));
    for (double v : layer.W.value.data) {
        REQUIRE(std::abs(v) <= bound);
    }
    for (double v : layer.b.value.data) REQUIRE(v == 0.0);
}

TEST_CASE("identical seeds give bit-identical initializations") {
    Rng a(77), b(77);
    RecurrentEncoder ea("e", 3, 4, a), eb("e", 3, 4, b);
    REQUIRE(ea.Wz.value.data == eb.Wz.value.data);
    REQUIRE(ea.Uh.value.data == eb.Uh.value.data);
    Rng c(78);
    RecurrentEncoder ec("e", 3, 4, c);
    REQUIRE(ea.Wz.value.data != ec.Wz.value.data);
}

namespace {

// Independent scalar unroll of the gated recurrence at dim 2 x 2.
struct TinyGruOracle {
    double Wz[2][2], Uz[2][2], bz[2];
    double Wr[2][2], Ur[2][2], br[2];
    double Wh[2][2], Uh[2][2], bh[2];

    static double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

    void step(double h[2], const double x[2]) const {
        double z[2], r[2], hc[2];
        for (int i = 0; i < 2; ++i) {
            z[i] = sig(Wz[i][0] * x[0] + Wz[i][1] * x[1] + Uz[i][0] * h[0] + Uz[i][1] * h[1] + bz[i]);
            r[i] = sig(Wr[i][0] * x[0] + Wr[i][1] * x[1] + Ur[i][0] * h[0] + Ur[i][1] * h[1] + br[i]);
        }
        double rh[2] = {r[0] * h[0], r[1] * h[1]};
        for (int i = 0; i < 2; ++i)
            hc[i] = std::tanh(Wh[i][0] * x[0] + Wh[i][1] * x[1] + Uh[i][0] * rh[0] + Uh[i][1] * rh[1] + bh[i]);
        for (int i = 0; i < 2; ++i) h[i] = (1.0 - z[i]) * h[i] + z[i] * hc[i];
    }
};

void load_oracle_weights(RecurrentEncoder& enc, const TinyGruOracle& o) {
    auto set = [](Parameter& p, const double m[2][2]) {
        p.value.at(0, 0) = m[0][0];
        p.value.at(0, 1) = m[0][1];
        p.value.at(1, 0) = m[1][0];
        p.value.at(1, 1) = m[1][1];
    };
    set(enc.Wz, o.Wz);
    set(enc.Uz, o.Uz);
    set(enc.Wr, o.Wr);
    set(enc.Ur, o.Ur);
    set(enc.Wh, o.Wh);
    set(enc.Uh, o.Uh);
    for (int i = 0; i < 2; ++i) {
        enc.bz.value[i] = o.bz[i];
        enc.br.value[i] = o.br[i];
        enc.bh.value[i] = o.bh[i];
    }
}

}  // namespace

TEST_CASE("recurrent_forward matches a hand-unrolled 3-step fold at dim 2") {
    TinyGruOracle o = {
        {{0.10, -0.20}, {0.30, 0.40}}, {{0.05, 0.10}, {-0.10, 0.20}}, {0.01, -0.02},
        {{-0.15, 0.25}, {0.35, -0.05}}, {{0.20, -0.30}, {0.15, 0.10}}, {-0.03, 0.04},
        {{0.50, -0.40}, {-0.25, 0.30}}, {{0.12, 0.08}, {-0.06, 0.22}}, {0.02, 0.05},
    };
    Rng rng(6);
    RecurrentEncoder enc("e", 2, 2, rng);
    load_oracle_weights(enc, o);

    std::vector<Tensor> seq = {
        Tensor::from({1.0, 0.5}),
        Tensor::from({-0.3, 0.2}),
        Tensor::from({0.7, -0.1}),
    };
    double h[2] = {0.0, 0.0};
    for (const Tensor& x : seq) {
        double xv[2] = {x[0], x[1]};
        o.step(h, xv);
    }

    Graph g;
    Var out = recurrent_forward(g, enc, seq);
    REQUIRE(g.value(out)[0] == Catch::Approx(h[0]).epsilon(1e-12));
    REQUIRE(g.value(out)[1] == Catch::Approx(h[1]).epsilon(1e-12));
}

TEST_CASE("length-1 sequence applies one recurrence from the zero state") {
    TinyGruOracle o = {
        {{0.2, 0.1}, {-0.1, 0.3}}, {{9.9, 9.9}, {9.9, 9.9}}, {0.05, -0.05},
        {{0.1, -0.2}, {0.2, 0.1}}, {{9.9, 9.9}, {9.9, 9.9}}, {0.0, 0.0},
        {{0.3, 0.2}, {-0.2, 0.4}}, {{9.9, 9.9}, {9.9, 9.9}}, {0.01, 0.02},
    };
    // With h0 = 0 the U matrices must not matter; poison them to prove it.
    Rng rng(8);
    RecurrentEncoder enc("e", 2, 2, rng);
    load_oracle_weights(enc, o);

    std::vector<Tensor> seq = {Tensor::from({0.4, -0.6})};
    double h[2] = {0.0, 0.0};
    double xv[2] = {0.4, -0.6};
    o.step(h, xv);

    Graph g;
    Var out = recurrent_forward(g, enc, seq);
    REQUIRE(g.value(out)[0] == Catch::Approx(h[0]).epsilon(1e-12));
    REQUIRE(g.value(out)[1] == Catch::Approx(h[1]).epsilon(1e-12));
}

TEST_CASE("recurrent_forward is pure and rejects bad input") {
    Rng rng(9);
    RecurrentEncoder enc("e", 3, 4, rng);
    std::vector<Tensor> seq = {Tensor::from({1.0, 2.0, 3.0}), Tensor::from({-1.0, 0.0, 1.0})};
    Graph g1, g2;
    Tensor a = g1.value(recurrent_forward(g1, enc, seq));
    Tensor b = g2.value(recurrent_forward(g2, enc, seq));
    REQUIRE(a.data == b.data);
    REQUIRE(a.rows() == 4);

    Graph g3;
    REQUIRE_THROWS_AS(recurrent_forward(g3, enc, {}), EmptySequence);
    std::vector<Tensor> bad = {Tensor::from({1.0, 2.0})};
    REQUIRE_THROWS_AS(recurrent_forward(g3, enc, bad), ShapeMismatch);
}

TEST_CASE("gradients flow through the recurrence (finite differences)") {
    Rng rng(10);
    RecurrentEncoder enc("e", 3, 4, rng);
    DenseLayer read("read", 1, 4, rng);
    std::vector<Tensor> seq;
    for (int t = 0; t < 3; ++t) {
        Tensor x = Tensor::zeros({3});
        for (double& v : x.data) v = rng.uniform_range(-1.0, 1.0);
        seq.push_back(x);
    }
    auto run = [&](bool back) {
        Graph g;
        Var h = recurrent_forward(g, enc, seq);
        Var y = dense_forward(g, read, h);
        Var loss = g.mse_against(y, Tensor::from({0.7}));
        double v = g.value(loss)[0];
        if (back) g.backward(loss);
        return v;
    };
    std::vector<Parameter*> params = enc.parameters();
    params.push_back(&read.W);
    params.push_back(&read.b);
    for (auto* p : params) p->zero_grad();
    run(true);
    Rng pick(11);
    auto res = check_gradients([&] { return run(false); }, params, pick, 6, 1e-5);
    INFO("worst entry: " << res.worst);
    REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("frozen projector is seed-deterministic and matches a dense oracle") {
    FrozenProjector p1("vis", 10, 6, 1234);
    FrozenProjector p2("vis", 10, 6, 1234);
    REQUIRE(p1.P.value.data == p2.P.value.data);
    REQUIRE_FALSE(p1.P.trainable);

    FrozenProjector p3("vis", 10, 6, 1235);
    REQUIRE(p1.P.value.data != p3.P.value.data);

    std::vector<uint8_t> bits = {1, 0, 0, 1, 1, 0, 0, 0, 1, 0};
    Tensor y = p1.project_bits(bits);
    for (int o = 0; o < 6; ++o) {
        double expect = 0.0;
        for (int i = 0; i < 10; ++i)
            if (bits[i]) expect += p1.P.value.at(i, o);
        REQUIRE(y[o] == Catch::Approx(expect).epsilon(1e-12));
    }

    std::vector<uint8_t> wrong(9, 0);
    REQUIRE_THROWS_AS(p1.project_bits(wrong), ShapeMismatch);

    std::vector<uint8_t> other = {0, 1, 1, 0, 0, 0, 1, 0, 0, 1};
    Tensor batch = p1.project_bits_batch({&bits, &other});
    Tensor ya = p1.project_bits(bits), yb = p1.project_bits(other);
    for (int o = 0; o < 6; ++o) {
        REQUIRE(batch.at(o, 0) == ya[o]);
        REQUIRE(batch.at(o, 1) == yb[o]);
    }
}

TEST_CASE("optimizer steps never touch frozen parameters") {
    FrozenProjector proj("vis", 4, 3, 99);
    std::vector<double> before = proj.P.value.data;
    proj.P.zero_grad();
    for (double& v : proj.P.grad.data) v = 123.0;  // even with a bogus gradient present
    RmsPropState st;
    rmsprop_step(st, {&proj.P});
    REQUIRE(proj.P.value.data == before);
    REQUIRE(st.acc.find("vis.P") == st.acc.end());
}

TEST_CASE("rmsprop first step matches the closed form") {
    Parameter p;
    p.name = "p";
    p.value = Tensor::from({1.0, -2.0, 0.5});
    p.zero_grad();
    Tensor g0 = Tensor::from({0.3, -0.7, 0.0});
    p.grad = g0;
    RmsPropState st;
    REQUIRE(st.learning_rate == 1e-4);
    REQUIRE(st.decay == 0.99);
    REQUIRE(st.epsilon == 1e-8);
    rmsprop_step(st, {&p});
    const double base[] = {1.0, -2.0, 0.5};
    for (int i = 0; i < 3; ++i) {
        double g = g0[i];
        double expect = base[i] - st.learning_rate * g / (std::sqrt((1.0 - st.decay) * g * g) + st.epsilon);
        REQUIRE(p.value[i] == Catch::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("rmsprop with zero gradient leaves parameters and decays accumulators") {
    Parameter p;
    p.name = "p";
    p.value = Tensor::from({1.0});
    p.zero_grad();
    p.grad[0] = 2.0;
    RmsPropState st;
    rmsprop_step(st, {&p});
    double acc_after_first = st.acc.at("p")[0];
    REQUIRE(acc_after_first == Catch::Approx((1.0 - st.decay) * 4.0));

    double value = p.value[0];
    p.grad[0] = 0.0;
    rmsprop_step(st, {&p});
    REQUIRE(p.value[0] == value);
    REQUIRE(st.acc.at("p")[0] == Catch::Approx(st.decay * acc_after_first));
}

TEST_CASE("rmsprop grows accumulators for grown heads, rejects other mismatches") {
    Parameter p;
    p.name = "head.W";
    p.value = Tensor::matrix(2, 3);
    for (int i = 0; i < 6; ++i) p.value.data[i] = 0.1 * (i + 1);
    p.zero_grad();
    for (double& v : p.grad.data) v = 1.0;
    RmsPropState st;
    rmsprop_step(st, {&p});
    Tensor acc_old = st.acc.at("head.W");

    // Grow by one output row, as a head does across stages.
    Tensor grown = Tensor::matrix(3, 3);
    std::copy(p.value.data.begin(), p.value.data.end(), grown.data.begin());
    p.value = grown;
    p.zero_grad();
    for (double& v : p.grad.data) v = 1.0;
    rmsprop_step(st, {&p});
    const Tensor& acc_new = st.acc.at("head.W");
    REQUIRE(acc_new.rows() == 3);
    for (int i = 0; i < 6; ++i)
        REQUIRE(acc_new.data[i] == Catch::Approx(st.decay * acc_old.data[i] + (1.0 - st.decay)));
    for (int i = 6; i < 9; ++i)
        REQUIRE(acc_new.data[i] == Catch::Approx(1.0 - st.decay));

    // A column change is never legal.
    Parameter q;
    q.name = "head.W";
    q.value = Tensor::matrix(3, 4);
    q.zero_grad();
    REQUIRE_THROWS_AS(rmsprop_step(st, {&q}), ShapeMismatch);
}

TEST_CASE("rmsprop requires gradients and keeps parameters finite") {
    Parameter p;
    p.name = "p";
    p.value = Tensor::from({1.0, 2.0});
    RmsPropState st;
    REQUIRE_THROWS_AS(rmsprop_step(st, {&p}), ShapeMismatch);
}
