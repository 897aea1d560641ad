#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "xfl/dataforge.hpp"
#include "xfl/nncore.hpp"

using namespace xfl;
using nncore::Arch;
using nncore::LayerKind;
using nncore::Mode;
using nncore::Network;
using nncore::Shape;
using nncore::Tensor;
using numkit::RngStream;

namespace {

Tensor random_batch(Shape s, std::uint64_t seed) {
    Tensor t(s);
    RngStream rng(seed, 1);
    for (auto &v : t.v) v = rng.next_double();
    return t;
}

std::vector<char> read_bytes(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

// concatenated copy of all parameter and batch-norm state vectors
std::vector<double> snapshot(Network &net, bool frozen_only) {
    std::vector<double> out;
    for (std::size_t i = 0; i < net.num_layers(); ++i) {
        auto &l = net.layer(i);
        if (frozen_only && !l.frozen) continue;
        if (auto *p = l.params()) out.insert(out.end(), p->begin(), p->end());
        if (auto *a = l.aux_state()) out.insert(out.end(), a->begin(), a->end());
    }
    return out;
}

dataforge::PairedDataset tiny_glyph_pairs(double beta, std::size_t n, std::uint64_t stream) {
    RngStream base(1234, stream);
    static dataforge::Domain left =
        dataforge::synth_glyph_domain(60, 16, 16, 3, RngStream(1234, 0).derive("glyphA"));
    static dataforge::Domain right =
        dataforge::synth_glyph_domain(60, 16, 16, 3, RngStream(1234, 0).derive("glyphB"));
    return dataforge::sample_concat(beta, left, right, n, base);
}

} // namespace

TEST_CASE("gradient check passes for every layer kind") {
    for (LayerKind kind :
         {LayerKind::Dense, LayerKind::Conv2d, LayerKind::BatchNorm, LayerKind::ReLU,
          LayerKind::Dropout, LayerKind::MaxPool2x2, LayerKind::Flatten,
          LayerKind::SoftmaxOutput}) {
        for (std::size_t config = 0; config < 5; ++config) {
            double err = nncore::gradient_check(kind, config);
            INFO(nncore::layer_kind_name(kind) << " config " << config);
            CHECK(err < 1e-4);
        }
    }
}

TEST_CASE("fully-connected architecture matches the published shape") {
    RngStream rng(1, 0);
    Network net = nncore::build_network(Arch::FullyConnected, {0, 32, 64, 3}, rng);
    // flatten, dense 1024, bn, relu, dropout, dense 512, bn, relu, softmax
    REQUIRE(net.num_layers() == 9);
    CHECK(net.num_trainable_groups() == 3);
    auto &first = static_cast<nncore::AffineLayer &>(net.layer(1));
    CHECK(first.in_features() == 6144);
    CHECK(first.units() == 1024);

    Tensor x = random_batch({4, 32, 64, 3}, 2);
    Tensor probs = net.forward(x, Mode::Eval);
    REQUIRE(probs.shape.c == 10);
    for (std::size_t r = 0; r < 4; ++r) {
        double sum = 0;
        for (std::size_t k = 0; k < 10; ++k) sum += probs.row(r)[k];
        CHECK(sum == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("convolutional architecture at desk width stays valid") {
    RngStream rng(2, 0);
    Network net = nncore::build_network(Arch::Convolutional, {0, 32, 64, 3}, rng,
                                        nncore::InitScheme::Standard,
                                        nncore::ArchScale::desk());
    CHECK(net.num_trainable_groups() == 9); // 6 conv + 2 dense + output

    Tensor zero({1, 32, 64, 3});
    Tensor probs = net.forward(zero, Mode::Eval);
    double sum = 0;
    for (std::size_t k = 0; k < 10; ++k) sum += probs.row(0)[k];
    CHECK(sum == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("untrained networks emit near-uniform probabilities") {
    RngStream rng(3, 0);
    Network net = nncore::build_network(Arch::FullyConnected, {0, 16, 32, 3}, rng,
                                        nncore::InitScheme::Standard,
                                        nncore::ArchScale::desk());
    Tensor x = random_batch({64, 16, 32, 3}, 4);
    Tensor probs = net.forward(x, Mode::Eval);
    double max_prob = 0;
    for (double p : probs.v) max_prob = std::max(max_prob, p);
    CHECK(max_prob < 0.3);
}

TEST_CASE("eval mode is deterministic and row-stable") {
    RngStream rng(5, 0);
    Network net = nncore::build_network(Arch::FullyConnected, {0, 16, 32, 3}, rng,
                                        nncore::InitScheme::Standard,
                                        nncore::ArchScale::desk());
    Tensor x({2, 16, 32, 3});
    RngStream fill(6, 0);
    for (std::size_t i = 0; i < x.shape.features(); ++i) {
        double v = fill.next_double();
        x.row(0)[i] = v;
        x.row(1)[i] = v; // identical rows
    }
    Tensor probs = net.forward(x, Mode::Eval);
    for (std::size_t k = 0; k < 10; ++k) CHECK(probs.row(0)[k] == probs.row(1)[k]);
}

TEST_CASE("probabilities sum to one across many random inputs") {
    RngStream rng(7, 0);
    Network net = nncore::build_network(Arch::FullyConnected, {0, 16, 32, 3}, rng,
                                        nncore::InitScheme::Standard,
                                        nncore::ArchScale::desk());
    Tensor x = random_batch({1000, 16, 32, 3}, 8);
    Tensor probs = net.forward(x, Mode::Eval);
    for (std::size_t r = 0; r < 1000; ++r) {
        double sum = 0;
        for (std::size_t k = 0; k < 10; ++k) sum += probs.row(r)[k];
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("zero-right-half init blanks exactly the right-half columns") {
    RngStream rng(9, 0);
    Network net = nncore::build_network(Arch::FullyConnected, {0, 16, 32, 3}, rng,
                                        nncore::InitScheme::ZeroRightHalf,
                                        nncore::ArchScale::desk());
    auto &first = static_cast<nncore::AffineLayer &>(net.layer(1));
    const double *w = first.weights();
    double right_sum = 0.0, left_sum = 0.0;
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 32; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t u = 0; u < first.units(); ++u) {
                    double val = std::abs(w[((y * 32 + x) * 3 + c) * first.units() + u]);
                    (x < 16 ? left_sum : right_sum) += val;
                }
    CHECK(right_sum == 0.0);
    CHECK(left_sum > 0.0);
}

TEST_CASE("zero-right-half init rejects the convolutional architecture") {
    RngStream rng(10, 0);
    CHECK_THROWS_AS(nncore::build_network(Arch::Convolutional, {0, 16, 32, 3}, rng,
                                          nncore::InitScheme::ZeroRightHalf,
                                          nncore::ArchScale::desk()),
                    Error);
}

TEST_CASE("cosine schedule hits its endpoints and midpoint") {
    CHECK(nncore::cosine_lr(0, 100, 0.3, 0.0) == Catch::Approx(0.3));
    CHECK(nncore::cosine_lr(100, 100, 0.3, 0.0) == Catch::Approx(0.0).margin(1e-15));
    CHECK(nncore::cosine_lr(50, 100, 0.3, 0.0) == Catch::Approx(0.15));
}

TEST_CASE("lr=0 leaves all trainable parameters bit-identical") {
    auto ds = tiny_glyph_pairs(1.0, 256, 1);
    RngStream rng(11, 0);
    Network net = nncore::build_network(Arch::FullyConnected, {0, 16, 32, 3}, rng,
                                        nncore::InitScheme::Standard,
                                        nncore::ArchScale::desk());
    std::vector<double> params_before;
    for (std::size_t i = 0; i < net.num_layers(); ++i)
        if (auto *p = net.layer(i).params())
            params_before.insert(params_before.end(), p->begin(), p->end());

    nncore::OptimizerConfig opt;
    opt.lr = 0.0;
    opt.epochs = 1;
    opt.batch_size = 64;
    auto fixed = nncore::to_epoch_data(ds, nncore::Target::Alice);
    nncore::train(
        net, [&](std::size_t) { return fixed; }, opt, nullptr, RngStream(11, 1));

    std::vector<double> params_after;
    for (std::size_t i = 0; i < net.num_layers(); ++i)
        if (auto *p = net.layer(i).params())
            params_after.insert(params_after.end(), p->begin(), p->end());
    CHECK(params_before == params_after);
}

TEST_CASE("frozen layers stay bitwise untouched through fine-tuning") {
    auto ds = tiny_glyph_pairs(0.5, 512, 2);
    RngStream rng(12, 0);
    Network net = nncore::build_network(Arch::FullyConnected, {0, 16, 32, 3}, rng,
                                        nncore::InitScheme::Standard,
                                        nncore::ArchScale::desk());

    nncore::FreezePlan plan{2}; // freeze the first hidden layer (and its bn)
    net.apply_freeze_plan(plan);
    auto frozen_before = snapshot(net, /*frozen_only=*/true);
    auto all_before = snapshot(net, false);

    nncore::OptimizerConfig opt;
    opt.lr = 0.05;
    opt.epochs = 2;
    opt.batch_size = 64;
    auto fixed = nncore::to_epoch_data(ds, nncore::Target::Bob);
    nncore::train(
        net, [&](std::size_t) { return fixed; }, opt, &plan, RngStream(12, 1));

    CHECK(snapshot(net, true) == frozen_before);
    CHECK(snapshot(net, false) != all_before); // the rest did move
}

TEST_CASE("training is reproducible for a fixed seed") {
    auto run_once = [&]() {
        auto ds = tiny_glyph_pairs(1.0, 384, 3);
        RngStream rng(13, 0);
        Network net = nncore::build_network(Arch::FullyConnected, {0, 16, 32, 3}, rng,
                                            nncore::InitScheme::Standard,
                                            nncore::ArchScale::desk());
        nncore::OptimizerConfig opt;
        opt.lr = 0.05;
        opt.epochs = 2;
        opt.batch_size = 64;
        auto fixed = nncore::to_epoch_data(ds, nncore::Target::Alice);
        auto log = nncore::train(
            net, [&](std::size_t) { return fixed; }, opt, nullptr, RngStream(13, 1));
        return std::make_pair(snapshot(net, false), log.epochs.back().loss);
    };
    auto [w1, l1] = run_once();
    auto [w2, l2] = run_once();
    CHECK(w1 == w2);
    CHECK(l1 == l2);
}

TEST_CASE("divergent learning rates abort with a diagnostic") {
    auto ds = tiny_glyph_pairs(1.0, 256, 4);
    RngStream rng(14, 0);
    Network net = nncore::build_network(Arch::FullyConnected, {0, 16, 32, 3}, rng,
                                        nncore::InitScheme::Standard,
                                        nncore::ArchScale::desk());
    nncore::OptimizerConfig opt;
    opt.lr = 1e160; // one step overflows the logits to inf
    opt.epochs = 3;
    opt.batch_size = 64;
    auto fixed = nncore::to_epoch_data(ds, nncore::Target::Alice);
    CHECK_THROWS_WITH(nncore::train(
                          net, [&](std::size_t) { return fixed; }, opt, nullptr,
                          RngStream(14, 1)),
                      Catch::Matchers::ContainsSubstring("NonFinite"));
}

TEST_CASE("dropout keeps expected activations equal between modes") {
    nncore::DropoutLayer layer(0.25);
    RngStream init(15, 0);
    layer.init({0, 1, 1, 10}, init);

    Tensor ones({10000, 1, 1, 10});
    for (auto &v : ones.v) v = 1.0;

    RngStream rng(15, 1);
    Tensor out = layer.forward(ones, Mode::Train, &rng);
    double mean = 0;
    for (double v : out.v) mean += v;
    mean /= static_cast<double>(out.v.size());
    CHECK(mean == Catch::Approx(1.0).margin(0.01)); // inverted dropout

    Tensor eval_out = layer.forward(ones, Mode::Eval, nullptr);
    CHECK(eval_out.v == ones.v);
}

TEST_CASE("softmax cross-entropy survives huge logits") {
    nncore::SoftmaxOutputLayer layer(10);
    RngStream init(16, 0);
    layer.init({0, 1, 1, 4}, init);
    // drive logits to +-1e3 through the input
    auto *p = layer.params();
    for (std::size_t i = 0; i < 40; ++i) (*p)[i] = (i % 2 ? 250.0 : -250.0);
    Tensor x({2, 1, 1, 4});
    for (auto &v : x.v) v = 1.0;
    Tensor probs = layer.forward(x, Mode::Eval, nullptr);
    for (double v : probs.v) CHECK(std::isfinite(v));
    for (std::size_t r = 0; r < 2; ++r) CHECK(std::isfinite(layer.log_prob(r, 0)));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    RngStream rng(17, 0);
    Network net = nncore::build_network(Arch::FullyConnected, {0, 16, 32, 3}, rng,
                                        nncore::InitScheme::Standard,
                                        nncore::ArchScale::desk());
    auto dir = std::filesystem::temp_directory_path();
    auto p1 = (dir / "net_a.xfn").string();
    auto p2 = (dir / "net_b.xfn").string();
    nncore::save_network(net, p1);
    Network back = nncore::load_network(p1);
    nncore::save_network(back, p2);
    CHECK(read_bytes(p1) == read_bytes(p2));

    // loaded network behaves identically up to the f32 cast
    Tensor x = random_batch({8, 16, 32, 3}, 18);
    Tensor a = net.forward(x, Mode::Eval);
    Tensor b = back.forward(x, Mode::Eval);
    for (std::size_t i = 0; i < a.v.size(); ++i)
        CHECK(a.v[i] == Catch::Approx(b.v[i]).margin(1e-4));
}

TEST_CASE("checkpoint loader rejects foreign files") {
    auto path = (std::filesystem::temp_directory_path() / "not_a_net.bin").string();
    std::ofstream out(path, std::ios::binary);
    out << "XFL1 but wrong";
    out.close();
    CHECK_THROWS_WITH(nncore::load_network(path),
                      Catch::Matchers::ContainsSubstring("BadMagic"));
}

TEST_CASE("constant-class predictors score chance on balanced labels") {
    // a softmax layer with a huge bias on class 7 predicts 7 everywhere
    std::vector<nncore::LayerSpec> specs = {nncore::LayerSpec::flatten(),
                                            nncore::LayerSpec::softmax_output(10)};
    RngStream rng(19, 0);
    Network net = Network::build(specs, {0, 16, 32, 3}, rng);
    auto &out_layer = static_cast<nncore::AffineLayer &>(net.layer(1));
    for (std::size_t i = 0; i < out_layer.in_features() * 10; ++i)
        (*out_layer.params())[i] = 0.0;
    out_layer.bias()[7] = 50.0;

    auto ds = tiny_glyph_pairs(0.0, 4000, 5);
    CHECK(nncore::evaluate(net, ds, nncore::Target::Alice) == Catch::Approx(10.0).margin(1.5));
}

TEST_CASE("layer sweep's last row equals a direct output-only fine-tune") {
    auto train_set = tiny_glyph_pairs(1.0, 768, 6);
    auto test_set = tiny_glyph_pairs(1.0, 512, 7);
    RngStream rng(20, 0);
    Network alice = nncore::build_network(Arch::FullyConnected, {0, 16, 32, 3}, rng,
                                          nncore::InitScheme::Standard,
                                          nncore::ArchScale::desk());
    nncore::OptimizerConfig opt;
    opt.lr = 0.05;
    opt.epochs = 2;
    opt.batch_size = 64;
    auto fixed = nncore::to_epoch_data(train_set, nncore::Target::Alice);
    nncore::train(
        alice, [&](std::size_t) { return fixed; }, opt, nullptr, RngStream(20, 1));

    auto source = [&](std::size_t) { return train_set; };
    nncore::OptimizerConfig bob_opt = opt;
    bob_opt.schedule = nncore::Schedule::Cosine;

    RngStream sweep_rng(20, 2);
    std::size_t m1 = alice.num_trainable_groups();
    auto rows = nncore::layer_sweep(alice, source, test_set, {m1}, bob_opt, sweep_rng);

    Network direct = alice;
    nncore::FreezePlan plan{m1};
    nncore::train(direct, source, nncore::Target::Bob, bob_opt, &plan, sweep_rng.derive(m1));
    double direct_acc = nncore::evaluate(direct, test_set, nncore::Target::Bob);

    REQUIRE(rows.size() == 1);
    CHECK(rows[0].ell == m1);
    CHECK(rows[0].accuracy == direct_acc);
}

TEST_CASE("build rejects malformed layer stacks") {
    RngStream rng(21, 0);
    std::vector<nncore::LayerSpec> no_output = {nncore::LayerSpec::flatten(),
                                                nncore::LayerSpec::dense(8)};
    CHECK_THROWS_AS(Network::build(no_output, {0, 4, 4, 1}, rng), Error);

    std::vector<nncore::LayerSpec> middle_output = {
        nncore::LayerSpec::softmax_output(10), nncore::LayerSpec::relu(),
        nncore::LayerSpec::softmax_output(10)};
    CHECK_THROWS_AS(Network::build(middle_output, {0, 4, 4, 1}, rng), Error);
}

TEST_CASE("freeze plans validate their range") {
    RngStream rng(22, 0);
    Network net = nncore::build_network(Arch::FullyConnected, {0, 16, 32, 3}, rng,
                                        nncore::InitScheme::Standard,
                                        nncore::ArchScale::desk());
    CHECK_THROWS_AS(net.apply_freeze_plan({0}), Error);
    CHECK_THROWS_AS(net.apply_freeze_plan({4}), Error);
    CHECK_NOTHROW(net.apply_freeze_plan({3}));
}
