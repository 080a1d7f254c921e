#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "iclnav/agent.hpp"
#include "support/value_iteration.hpp"

using namespace iclnav;
using iclnav::testing::corridor_mdp;
using iclnav::testing::greedy_policy;
using iclnav::testing::one_hot_state;
using iclnav::testing::TabularMdp;
using iclnav::testing::TabularQModel;
using iclnav::testing::value_iteration;

namespace {

Transition tagged(double reward, int action = 0) {
    Transition t;
    t.observation = {1};
    t.action = action;
    t.reward = reward;
    t.next_observation = {1};
    t.terminal = true;
    return t;
}

Parameter small_embedding(int tokens, int dim, uint64_t seed) {
    Parameter p;
    p.name = "text.embedding";
    p.value = Tensor::matrix(tokens, dim);
    p.trainable = false;
    Rng rng(seed);
    for (double& v : p.value.data) v = rng.uniform_range(-0.5, 0.5);
    return p;
}

MdqnConfig small_config(int obs_dim = 6) {
    MdqnConfig cfg;
    cfg.observation_dim = obs_dim;
    cfg.embedding_dim = 3;
    cfg.image_features = 4;
    cfg.text_hidden = 3;
    cfg.trunk_dims = {5, 4, 3};
    cfg.action_count = 3;
    cfg.seed = 7;
    return cfg;
}

Parameter* find_param(MdqnModel& m, const std::string& name) {
    for (Parameter* p : m.parameters())
        if (p->name == name) return p;
    FAIL("no parameter named " + name);
    return nullptr;
}

uint64_t data_checksum(const Parameter& p) {
    return fnv1a64(p.value.data.data(), p.value.data.size() * sizeof(double));
}

std::vector<uint8_t> random_bits(int n, Rng& rng) {
    std::vector<uint8_t> bits(n);
    for (auto& b : bits) b = static_cast<uint8_t>(rng.uniform_below(2));
    return bits;
}

}  // namespace

TEST_CASE("replay buffer evicts strictly FIFO") {
    ReplayBuffer buf(5);
    REQUIRE(buf.size() == 0);
    for (int i = 0; i < 8; ++i) buf.push(tagged(i));
    REQUIRE(buf.size() == 5);
    REQUIRE(buf.inserted() == 8);
    for (int i = 0; i < 5; ++i) REQUIRE(buf.at(i).reward == Catch::Approx(3.0 + i));
    REQUIRE_THROWS_AS(buf.at(5), IndexOutOfRange);
}

TEST_CASE("replay sampling is without replacement and validates inputs") {
    ReplayBuffer buf(10);
    for (int i = 0; i < 6; ++i) buf.push(tagged(i));
    Rng rng(9);
    auto batch = buf.sample(6, rng);
    std::set<const Transition*> uniq(batch.begin(), batch.end());
    REQUIRE(uniq.size() == 6);
    std::set<double> rewards;
    for (auto* t : batch) rewards.insert(t->reward);
    REQUIRE(rewards == std::set<double>{0, 1, 2, 3, 4, 5});

    REQUIRE_THROWS_AS(buf.sample(7, rng), BufferTooSmall);
    REQUIRE_THROWS_AS(buf.sample(0, rng), ValidationError);
    Transition bad = tagged(0);
    bad.reward = std::nan("");
    REQUIRE_THROWS_AS(buf.push(bad), ValidationError);
    Transition neg = tagged(0);
    neg.action = -1;
    REQUIRE_THROWS_AS(buf.push(neg), IndexOutOfRange);
    REQUIRE_THROWS_AS(ReplayBuffer(0), ValidationError);
}

TEST_CASE("epsilon schedule decays linearly to the floor and stays") {
    EpsilonSchedule sched{0.9, 0.05, 100};
    REQUIRE(sched.value(0) == Catch::Approx(0.9));
    REQUIRE(sched.value(50) == Catch::Approx(0.475));
    REQUIRE(sched.value(100) == Catch::Approx(0.05));
    REQUIRE(sched.value(5000) == Catch::Approx(0.05));
    double prev = 2.0;
    for (int e = 0; e <= 140; ++e) {
        double v = sched.value(e);
        REQUIRE(v <= prev);
        REQUIRE(v >= 0.05);
        prev = v;
    }
    REQUIRE_THROWS_AS((EpsilonSchedule{0.1, 0.5, 10}.value(0)), ValidationError);
    REQUIRE_THROWS_AS((EpsilonSchedule{0.9, -0.1, 10}.value(0)), ValidationError);
    REQUIRE_THROWS_AS((EpsilonSchedule{0.9, 0.05, 0}.value(0)), ValidationError);
    REQUIRE_THROWS_AS((EpsilonSchedule{0.9, 0.05, 10}.value(-1)), ValidationError);
}

TEST_CASE("model construction pins shapes, names and seeding") {
    MdqnConfig cfg;
    cfg.observation_dim = 40;
    cfg.action_count = 3;
    cfg.seed = 11;
    MdqnModel m(cfg, small_embedding(6, 50, 1));

    auto params = m.parameters();
    auto dims_of = [&](const std::string& name) {
        for (Parameter* p : params)
            if (p->name == name) return p->value.shape;
        FAIL("missing " + name);
        return std::vector<int>{};
    };
    REQUIRE(dims_of("visual.projection.P") == std::vector<int>{40, 512});
    REQUIRE(dims_of("text.rnn.Wz") == std::vector<int>{64, 50});
    REQUIRE(dims_of("trunk1.W") == std::vector<int>{640, 576});
    REQUIRE(dims_of("trunk2.W") == std::vector<int>{512, 640});
    REQUIRE(dims_of("trunk3.W") == std::vector<int>{256, 512});
    REQUIRE(dims_of("q_head.W") == std::vector<int>{3, 256});
    REQUIRE(dims_of("q_head.b") == std::vector<int>{3});
    REQUIRE(params.size() == 2 + 9 + 8);
    REQUIRE(m.trainable_parameters().size() == 9 + 8);

    MdqnModel m2(cfg, small_embedding(6, 50, 1));
    for (size_t i = 0; i < params.size(); ++i)
        REQUIRE(params[i]->value.data == m2.parameters()[i]->value.data);
    cfg.seed = 12;
    MdqnModel m3(cfg, small_embedding(6, 50, 1));
    REQUIRE(find_param(m, "trunk1.W")->value.data != find_param(m3, "trunk1.W")->value.data);

    MdqnConfig bad = cfg;
    bad.action_count = 2;
    REQUIRE_THROWS_AS(MdqnModel(bad, small_embedding(6, 50, 1)), ValidationError);
    bad.action_count = 6;
    REQUIRE_THROWS_AS(MdqnModel(bad, small_embedding(6, 50, 1)), ValidationError);
    bad = cfg;
    bad.observation_dim = 0;
    REQUIRE_THROWS_AS(MdqnModel(bad, small_embedding(6, 50, 1)), ValidationError);
    REQUIRE_THROWS_AS(MdqnModel(cfg, small_embedding(6, 49, 1)), ShapeMismatch);
}

TEST_CASE("batched q_graph matches per-sample forwards, with shared instructions") {
    MdqnModel m(small_config(), small_embedding(5, 3, 2));
    Rng rng(3);
    std::vector<std::vector<uint8_t>> obs;
    for (int i = 0; i < 3; ++i) obs.push_back(random_bits(6, rng));
    std::vector<int> instr_a{1, 2};
    std::vector<int> instr_b{3};
    // two samples share instr_a, so the encoder runs once for them
    std::vector<const std::vector<uint8_t>*> op{&obs[0], &obs[1], &obs[2]};
    std::vector<const std::vector<int>*> ip{&instr_a, &instr_b, &instr_a};

    Graph g;
    Tensor batch = g.value(m.q_graph(g, op, ip));
    REQUIRE(batch.rows() == 3);
    REQUIRE(batch.cols() == 3);
    const std::vector<int>* instrs[3] = {&instr_a, &instr_b, &instr_a};
    for (int j = 0; j < 3; ++j) {
        Tensor single = m.q_values(obs[j], *instrs[j]);
        for (int a = 0; a < 3; ++a) {
            double b = batch.at(a, j), s = single.data[a];
            REQUIRE(std::fabs(b - s) <= 1e-12 * std::max(1.0, std::fabs(s)));
        }
    }

    std::vector<const std::vector<uint8_t>*> empty;
    std::vector<const std::vector<int>*> no_i;
    Graph g2;
    REQUIRE_THROWS_AS(m.q_graph(g2, empty, no_i), EmptyInput);
    Graph g3;
    REQUIRE_THROWS_AS(m.q_graph(g3, op, no_i), ShapeMismatch);
    std::vector<int> no_tokens;
    REQUIRE_THROWS_AS(m.q_values(obs[0], no_tokens), EmptySequence);
}

TEST_CASE("zero trunk and head weights propagate to the head bias") {
    MdqnModel m(small_config(), small_embedding(5, 3, 2));
    for (const char* name : {"trunk1", "trunk2", "trunk3", "q_head"}) {
        Parameter* w = find_param(m, std::string(name) + ".W");
        std::fill(w->value.data.begin(), w->value.data.end(), 0.0);
        Parameter* b = find_param(m, std::string(name) + ".b");
        std::fill(b->value.data.begin(), b->value.data.end(), 0.0);
    }
    std::vector<uint8_t> obs(6, 1);
    std::vector<int> instr{1};
    Tensor q = m.q_values(obs, instr);
    REQUIRE(q.data == std::vector<double>{0.0, 0.0, 0.0});

    find_param(m, "q_head.b")->value = Tensor::from({0.1, 0.2, 0.3});
    Tensor q2 = m.q_values(obs, instr);
    REQUIRE(q2.data == std::vector<double>{0.1, 0.2, 0.3});
}

TEST_CASE("forward pass matches an independent scalar recomputation") {
    MdqnConfig cfg = small_config();
    Parameter table = small_embedding(5, 3, 4);
    MdqnModel m(cfg, table);
    Rng rng(8);
    std::vector<uint8_t> obs = random_bits(6, rng);
    std::vector<int> instr{1, 3, 2};

    auto vec_of = [&](const std::string& name) { return find_param(m, name)->value; };
    auto matvec = [](const Tensor& w, const std::vector<double>& x) {
        std::vector<double> y(w.rows(), 0.0);
        for (int r = 0; r < w.rows(); ++r)
            for (int c = 0; c < w.cols(); ++c) y[r] += w.at(r, c) * x[c];
        return y;
    };
    auto add = [](std::vector<double> a, const Tensor& b) {
        for (size_t i = 0; i < a.size(); ++i) a[i] += b.data[i];
        return a;
    };

    // visual path: sum of projection rows for the set bits
    const Tensor& proj = vec_of("visual.projection.P");
    std::vector<double> image(cfg.image_features, 0.0);
    for (int i = 0; i < 6; ++i)
        if (obs[i])
            for (int o = 0; o < cfg.image_features; ++o) image[o] += proj.at(i, o);

    // text path: gated recurrence over embedding rows, zero initial state
    std::vector<double> h(cfg.text_hidden, 0.0);
    const Tensor &wz = vec_of("text.rnn.Wz"), &uz = vec_of("text.rnn.Uz"), &bz = vec_of("text.rnn.bz");
    const Tensor &wr = vec_of("text.rnn.Wr"), &ur = vec_of("text.rnn.Ur"), &br = vec_of("text.rnn.br");
    const Tensor &wh = vec_of("text.rnn.Wh"), &uh = vec_of("text.rnn.Uh"), &bh = vec_of("text.rnn.bh");
    for (int tok : instr) {
        std::vector<double> x(cfg.embedding_dim);
        for (int c = 0; c < cfg.embedding_dim; ++c) x[c] = table.value.at(tok, c);
        auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
        std::vector<double> z = add(matvec(wz, x), bz), r = add(matvec(wr, x), br);
        auto zu = matvec(uz, h), ru = matvec(ur, h);
        for (int i = 0; i < cfg.text_hidden; ++i) {
            z[i] = sig(z[i] + zu[i]);
            r[i] = sig(r[i] + ru[i]);
        }
        std::vector<double> rh(cfg.text_hidden);
        for (int i = 0; i < cfg.text_hidden; ++i) rh[i] = r[i] * h[i];
        std::vector<double> cand = add(matvec(wh, x), bh);
        auto cu = matvec(uh, rh);
        for (int i = 0; i < cfg.text_hidden; ++i)
            cand[i] = std::tanh(cand[i] + cu[i]);
        for (int i = 0; i < cfg.text_hidden; ++i) h[i] = (1.0 - z[i]) * h[i] + z[i] * cand[i];
    }

    std::vector<double> joint = image;
    joint.insert(joint.end(), h.begin(), h.end());
    auto relu = [](std::vector<double> v) {
        for (double& x : v) x = std::max(0.0, x);
        return v;
    };
    auto h1 = relu(add(matvec(vec_of("trunk1.W"), joint), vec_of("trunk1.b")));
    auto h2 = relu(add(matvec(vec_of("trunk2.W"), h1), vec_of("trunk2.b")));
    auto h3 = relu(add(matvec(vec_of("trunk3.W"), h2), vec_of("trunk3.b")));
    auto q_hand = add(matvec(vec_of("q_head.W"), h3), vec_of("q_head.b"));

    Tensor q = m.q_values(obs, instr);
    REQUIRE(q.size() == 3);
    for (int a = 0; a < 3; ++a)
        REQUIRE(q.data[a] == Catch::Approx(q_hand[a]).epsilon(0).margin(1e-12));
}

TEST_CASE("action selection is greedy at epsilon zero with lowest-index ties") {
    TabularQModel m(3, 4);
    Rng rng(1);
    std::vector<int> no_instr;
    // all-zero weights: every action ties, index 0 wins
    REQUIRE(select_action(m, one_hot_state(0, 3), no_instr, 0.0, rng) == 0);
    m.layer.W.value.at(2, 1) = 1.0;
    REQUIRE(select_action(m, one_hot_state(1, 3), no_instr, 0.0, rng) == 2);
    m.layer.W.value.at(1, 1) = 1.0;  // tie between 1 and 2
    REQUIRE(select_action(m, one_hot_state(1, 3), no_instr, 0.0, rng) == 1);
    REQUIRE_THROWS_AS(select_action(m, one_hot_state(0, 3), no_instr, 1.5, rng), ValidationError);
}

TEST_CASE("action selection is uniform at epsilon one") {
    TabularQModel m(3, 4);
    Rng rng(17);
    std::vector<int> no_instr;
    auto obs = one_hot_state(0, 3);
    int counts[4] = {0, 0, 0, 0};
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) counts[select_action(m, obs, no_instr, 1.0, rng)]++;
    // binomial 3-sigma band around draws/4
    double expect = draws / 4.0;
    double sigma = std::sqrt(draws * 0.25 * 0.75);
    for (int a = 0; a < 4; ++a) REQUIRE(std::fabs(counts[a] - expect) < 3.0 * sigma);
}

TEST_CASE("td targets bootstrap from the target network") {
    TabularQModel target(2, 2);
    target.layer.W.value.at(0, 0) = 0.3;
    target.layer.W.value.at(1, 0) = 0.7;
    target.layer.W.value.at(0, 1) = -0.2;

    Transition term;
    term.observation = one_hot_state(0, 2);
    term.action = 0;
    term.reward = 20.0;
    term.next_observation = one_hot_state(1, 2);
    term.terminal = true;
    Transition cont = term;
    cont.reward = -0.05;
    cont.terminal = false;
    cont.next_observation = one_hot_state(0, 2);  // max Q = 0.7

    std::vector<const Transition*> batch{&term, &cont};
    auto t = td_targets(batch, target, 0.9);
    REQUIRE(t[0] == Catch::Approx(20.0));
    REQUIRE(t[1] == Catch::Approx(-0.05 + 0.9 * 0.7));
    auto t0 = td_targets(batch, target, 0.0);
    REQUIRE(t0[1] == Catch::Approx(-0.05));
    REQUIRE_THROWS_AS(td_targets(batch, target, 1.0), ValidationError);
    REQUIRE_THROWS_AS(td_targets(batch, target, -0.1), ValidationError);
}

TEST_CASE("train step overfits a single frozen transition") {
    TabularQModel model(3, 2), target(3, 2);
    ReplayBuffer buf(10);
    Transition t;
    t.observation = one_hot_state(0, 3);
    t.action = 1;
    t.reward = 1.0;
    t.next_observation = one_hot_state(2, 3);
    t.terminal = true;
    buf.push(t);
    RmsPropState opt;
    opt.learning_rate = 1e-2;
    Rng rng(5);
    double first = train_step(model, target, buf, opt, 1, 0.9, rng);
    double last = 0.0;
    for (int i = 0; i < 99; ++i) last = train_step(model, target, buf, opt, 1, 0.9, rng);
    REQUIRE(last < first);
    REQUIRE(last < 1e-3);
    std::vector<int> no_instr;
    Tensor q = model.q_values(one_hot_state(0, 3), no_instr);
    REQUIRE(q.data[1] == Catch::Approx(1.0).margin(0.05));
    REQUIRE_THROWS_AS(train_step(model, target, buf, opt, 2, 0.9, rng), BufferTooSmall);
}

TEST_CASE("matched targets are a strict fixed point of training") {
    TabularQModel model(2, 2), target(2, 2);
    ReplayBuffer buf(8);
    for (int i = 0; i < 4; ++i) {
        Transition t;
        t.observation = one_hot_state(i % 2, 2);
        t.action = i / 2;
        t.reward = 0.0;  // zero-weight model already predicts 0 for terminal target 0
        t.next_observation = one_hot_state(0, 2);
        t.terminal = true;
        buf.push(t);
    }
    RmsPropState opt;
    Rng rng(6);
    auto w_before = model.layer.W.value.data;
    auto b_before = model.layer.b.value.data;
    for (int i = 0; i < 5; ++i) {
        double loss = train_step(model, target, buf, opt, 4, 0.9, rng);
        REQUIRE(loss == 0.0);
    }
    REQUIRE(model.layer.W.value.data == w_before);
    REQUIRE(model.layer.b.value.data == b_before);
}

TEST_CASE("target network only moves on sync") {
    MdqnModel model(small_config(), small_embedding(5, 3, 2));
    MdqnModel target = model;
    Rng rng(12);
    ReplayBuffer buf(64);
    std::vector<int> instr{1, 2};
    for (int i = 0; i < 20; ++i) {
        Transition t;
        t.observation = random_bits(6, rng);
        t.instruction = instr;
        t.action = rng.uniform_below(3);
        t.reward = rng.uniform_range(-1.0, 1.0);
        t.next_observation = random_bits(6, rng);
        t.terminal = (i % 4 == 0);
        buf.push(t);
    }
    RmsPropState opt;
    std::vector<uint8_t> probe = random_bits(6, rng);
    Tensor target_before = target.q_values(probe, instr);
    for (int i = 0; i < 5; ++i) train_step(model, target, buf, opt, 8, 0.99, rng);
    REQUIRE(target.q_values(probe, instr).data == target_before.data);
    REQUIRE(model.q_values(probe, instr).data != target_before.data);

    sync_target(model, target);
    REQUIRE(target.q_values(probe, instr).data == model.q_values(probe, instr).data);
    for (size_t i = 0; i < model.parameters().size(); ++i)
        REQUIRE(model.parameters()[i]->value.data == target.parameters()[i]->value.data);
}

TEST_CASE("head growth preserves old action values bit for bit") {
    MdqnModel m(small_config(), small_embedding(5, 3, 2));
    MdqnModel same = m;
    Rng rng(21);
    std::vector<int> instr{2, 4};

    std::vector<std::vector<uint8_t>> probes;
    std::vector<std::vector<double>> before;
    for (int i = 0; i < 100; ++i) {
        probes.push_back(random_bits(6, rng));
        Tensor q = m.q_values(probes.back(), instr);
        before.emplace_back(q.data.begin(), q.data.begin() + 3);
    }
    uint64_t trunk_sum = data_checksum(*find_param(m, "trunk1.W")) ^
                         data_checksum(*find_param(m, "trunk2.W")) ^
                         data_checksum(*find_param(m, "trunk3.W")) ^
                         data_checksum(*find_param(m, "text.rnn.Wh"));

    Rng grow_rng(99);
    m.grow_head(4, grow_rng);
    REQUIRE(m.action_count() == 4);
    REQUIRE(find_param(m, "q_head.W")->value.shape == std::vector<int>{4, 3});
    for (int i = 0; i < 100; ++i) {
        Tensor q = m.q_values(probes[i], instr);
        REQUIRE(q.size() == 4);
        for (int a = 0; a < 3; ++a) {
            // bit-identical, not approximately equal
            REQUIRE(q.data[a] == before[i][a]);
        }
    }
    REQUIRE(trunk_sum == (data_checksum(*find_param(m, "trunk1.W")) ^
                          data_checksum(*find_param(m, "trunk2.W")) ^
                          data_checksum(*find_param(m, "trunk3.W")) ^
                          data_checksum(*find_param(m, "text.rnn.Wh"))));

    // equal size is an identity that consumes no randomness
    auto head_before = find_param(same, "q_head.W")->value.data;
    Rng untouched(99);
    uint64_t probe_next = Rng(99).next_u64();
    same.grow_head(3, untouched);
    REQUIRE(untouched.next_u64() == probe_next);
    REQUIRE(find_param(same, "q_head.W")->value.data == head_before);

    Rng r2(1);
    REQUIRE_THROWS_AS(m.grow_head(3, r2), ShrinkNotAllowed);
}

TEST_CASE("training after head growth keeps the optimizer consistent") {
    MdqnModel model(small_config(), small_embedding(5, 3, 2));
    MdqnModel target = model;
    Rng rng(30);
    ReplayBuffer buf(64);
    std::vector<int> instr{1};
    auto push_some = [&](int actions) {
        for (int i = 0; i < 16; ++i) {
            Transition t;
            t.observation = random_bits(6, rng);
            t.instruction = instr;
            t.action = rng.uniform_below(actions);
            t.reward = rng.uniform_range(-0.5, 0.5);
            t.next_observation = random_bits(6, rng);
            t.terminal = (i % 3 == 0);
            buf.push(t);
        }
    };
    push_some(3);
    RmsPropState opt;
    for (int i = 0; i < 4; ++i) train_step(model, target, buf, opt, 8, 0.99, rng);
    model.grow_head(4, rng);
    sync_target(model, target);
    push_some(4);
    for (int i = 0; i < 4; ++i) {
        double loss = train_step(model, target, buf, opt, 8, 0.99, rng);
        REQUIRE(std::isfinite(loss));
    }
}

TEST_CASE("optimizer never touches the frozen projector or embeddings") {
    MdqnModel model(small_config(), small_embedding(5, 3, 2));
    MdqnModel target = model;
    uint64_t proj_sum = data_checksum(*find_param(model, "visual.projection.P"));
    uint64_t emb_sum = data_checksum(*find_param(model, "text.embedding"));
    Rng rng(14);
    ReplayBuffer buf(64);
    std::vector<int> instr{0, 3};
    for (int i = 0; i < 24; ++i) {
        Transition t;
        t.observation = random_bits(6, rng);
        t.instruction = instr;
        t.action = rng.uniform_below(3);
        t.reward = rng.uniform_range(-1.0, 1.0);
        t.next_observation = random_bits(6, rng);
        t.terminal = (i % 5 == 0);
        buf.push(t);
    }
    RmsPropState opt;
    for (int i = 0; i < 10; ++i) train_step(model, target, buf, opt, 8, 0.99, rng);
    REQUIRE(data_checksum(*find_param(model, "visual.projection.P")) == proj_sum);
    REQUIRE(data_checksum(*find_param(model, "text.embedding")) == emb_sum);
}

TEST_CASE("gradients of the full model match finite differences") {
    MdqnModel model(small_config(), small_embedding(5, 3, 2));
    Rng rng(41);
    std::vector<std::vector<uint8_t>> obs;
    for (int i = 0; i < 3; ++i) obs.push_back(random_bits(6, rng));
    std::vector<int> ia{1, 2}, ib{3};
    std::vector<const std::vector<uint8_t>*> op{&obs[0], &obs[1], &obs[2]};
    // duplicated instruction exercises the shared-encoder path in backward
    std::vector<const std::vector<int>*> ip{&ia, &ib, &ia};
    std::vector<int> actions{0, 2, 1};
    Tensor targets = Tensor::from({0.3, -0.2, 0.6});

    auto loss_fn = [&]() {
        Graph g;
        Var q = model.q_graph(g, op, ip);
        Var loss = g.mse_against(g.select_entries(q, actions), targets);
        return std::pair<Graph, Var>(std::move(g), loss);
    };
    auto params = model.trainable_parameters();
    for (Parameter* p : params) p->zero_grad();
    {
        auto [g, loss] = loss_fn();
        g.backward(loss);
    }
    auto value_at = [&]() {
        auto [g, loss] = loss_fn();
        return g.value(loss)[0];
    };
    Rng pick(77);
    double worst = 0.0;
    for (Parameter* p : params) {
        for (int s = 0; s < 6; ++s) {
            int i = pick.uniform_below(static_cast<int>(p->value.data.size()));
            double saved = p->value.data[i];
            const double h = 1e-5;
            p->value.data[i] = saved + h;
            double up = value_at();
            p->value.data[i] = saved - h;
            double down = value_at();
            p->value.data[i] = saved;
            double numeric = (up - down) / (2 * h);
            double analytic = p->grad.data[i];
            double rel = std::fabs(analytic - numeric) /
                         std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
            worst = std::max(worst, rel);
        }
    }
    REQUIRE(worst < 1e-4);
}

TEST_CASE("value iteration solves a two-state chain exactly") {
    TabularMdp mdp;
    mdp.states = 2;
    mdp.actions = 2;
    mdp.next = {{0, 1}, {1, 1}};
    mdp.reward = {{0.0, 1.0}, {0.0, 0.0}};
    mdp.terminal = {0, 1};
    auto q = value_iteration(mdp, 0.5);
    REQUIRE(q[0][0] == Catch::Approx(0.5).margin(1e-10));
    REQUIRE(q[0][1] == Catch::Approx(1.0).margin(1e-10));
    REQUIRE(greedy_policy(q)[0] == 1);
}

TEST_CASE("value iteration matches the hand-solved corridor") {
    TabularMdp mdp = corridor_mdp(4, 1.0, -0.05);
    auto q = value_iteration(mdp, 0.9);
    REQUIRE(q[2][1] == Catch::Approx(1.0).margin(1e-10));
    REQUIRE(q[1][1] == Catch::Approx(0.85).margin(1e-10));
    REQUIRE(q[0][1] == Catch::Approx(0.715).margin(1e-10));
    REQUIRE(q[0][0] == Catch::Approx(0.5935).margin(1e-10));
    REQUIRE(q[1][0] == Catch::Approx(0.5935).margin(1e-10));
    REQUIRE(q[2][0] == Catch::Approx(0.715).margin(1e-10));
    auto pi = greedy_policy(q);
    REQUIRE(pi[0] == 1);
    REQUIRE(pi[1] == 1);
    REQUIRE(pi[2] == 1);
}

TEST_CASE("positive reward scaling never changes the greedy policy") {
    TabularMdp base = corridor_mdp(6, 1.0, -0.05);
    auto pi = greedy_policy(value_iteration(base, 0.9));
    for (double c : {10.0, 1.0 / 20.0, 3.7}) {
        TabularMdp scaled = base;
        scaled.scale_rewards(c);
        REQUIRE(greedy_policy(value_iteration(scaled, 0.9)) == pi);
    }
}

TEST_CASE("the DQN loop recovers the optimal corridor policy and values") {
    TabularMdp mdp = corridor_mdp(4, 1.0, -0.05);
    auto q_star = value_iteration(mdp, 0.9);
    auto pi_star = greedy_policy(q_star);

    TabularQModel model(4, 2);
    iclnav::testing::DqnLoopConfig cfg;
    cfg.phases = {{300, 0.5, 3e-3}, {200, 0.2, 1e-3}, {150, 0.05, 1e-4}};
    cfg.gamma = 0.9;
    cfg.seed = 2;
    iclnav::testing::run_dqn_on_mdp(mdp, model, cfg);

    auto pi = iclnav::testing::model_greedy_policy(model, mdp);
    std::vector<int> no_instr;
    for (int s = 0; s < 3; ++s) {
        REQUIRE(pi[s] == pi_star[s]);
        Tensor q = model.q_values(one_hot_state(s, 4), no_instr);
        for (int a = 0; a < 2; ++a)
            REQUIRE(q.data[a] == Catch::Approx(q_star[s][a]).margin(1e-2));
    }
}

TEST_CASE("the DQN loop is bit-deterministic for a fixed seed") {
    TabularMdp mdp = corridor_mdp(4, 1.0, -0.05);
    auto run = [&]() {
        TabularQModel model(4, 2);
        iclnav::testing::DqnLoopConfig cfg;
        cfg.phases = {{60, 0.4, 2e-3}};
        cfg.gamma = 0.9;
        cfg.seed = 13;
        iclnav::testing::run_dqn_on_mdp(mdp, model, cfg);
        return model.layer.W.value.data;
    };
    REQUIRE(run() == run());
}
