#include <cmath>
#include <random>

#include "doctest.h"
#include "gradient_check.hpp"
#include "liwhiz/error.hpp"
#include "liwhiz/model.hpp"
#include "test_support.hpp"

using namespace liwhiz;
using liwhiz::testing::random_excerpt;
using liwhiz::testing::random_stack;
using liwhiz::testing::randomize;

namespace {

double scalar_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One LSTM step from the zero state, written with plain loops.
std::vector<double> cell_from_zero(const LstmDirection<double>& d, const std::vector<double>& x) {
    const auto hidden = static_cast<std::size_t>(d.w_hh.cols());
    std::vector<double> z(4 * hidden, 0.0);
    for (std::size_t r = 0; r < 4 * hidden; ++r) {
        z[r] = d.bias[static_cast<Eigen::Index>(r)];
        for (std::size_t c = 0; c < x.size(); ++c) {
            z[r] += d.w_ih(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * x[c];
        }
    }
    std::vector<double> h(hidden);
    for (std::size_t k = 0; k < hidden; ++k) {
        const double i = scalar_sigmoid(z[k]);
        const double g = std::tanh(z[2 * hidden + k]);
        const double o = scalar_sigmoid(z[3 * hidden + k]);
        h[k] = o * std::tanh(i * g);
    }
    return h;
}

LstmParams<double> random_lstm(Eigen::Index in_dim, Eigen::Index hidden, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.7, 0.7);
    auto fill = [&](RowMat<double>& m, Eigen::Index r, Eigen::Index c) {
        m.resize(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    };
    LstmParams<double> p;
    for (auto* d : {&p.fwd, &p.bwd}) {
        fill(d->w_ih, 4 * hidden, in_dim);
        fill(d->w_hh, 4 * hidden, hidden);
        d->bias.resize(4 * hidden);
        for (Eigen::Index i = 0; i < d->bias.size(); ++i) d->bias[i] = u(rng);
    }
    return p;
}

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected liwhiz::Error");
    return ErrorKind::config;
}

} // namespace

TEST_CASE("reference dimensions") {
    const ModelConfig ref;
    CHECK(ref.num_layers == 32);
    CHECK(ref.layer_count() == 33);
    CHECK(ref.feature_dim == 1280);
    CHECK(ref.hidden_dim == 512);

    const auto full = init_params(ref, Mode::full, 0);
    CHECK(full.lml_enc_x.size() == 33);
    CHECK(full.lstm_enc.input_dim() == 2 * 1280);
    CHECK(full.lstm_enc.fwd.w_ih.rows() == 4 * 512);
    CHECK(full.head_weight.size() == 4 * 512);

    const auto ablated = init_params(ref, Mode::y_only, 0);
    CHECK(ablated.lml_enc_x.size() == 0);
    CHECK(ablated.lstm_dec.input_dim() == 1280);
}

TEST_CASE("lml_fuse selects and averages layers") {
    std::mt19937_64 rng(1);
    const auto s = random_stack(Side::encoder, 4, 3, 5, rng);

    Vec<double> onehot = Vec<double>::Zero(4);
    onehot[2] = 1.0;
    const auto selected = lml_fuse(s, onehot);
    CHECK((selected - s.layer(2).cast<double>()).cwiseAbs().maxCoeff() == 0.0);

    const auto mean = lml_fuse(s, Vec<double>(Vec<double>::Constant(4, 0.25)));
    for (std::size_t f = 0; f < 3; ++f) {
        for (std::size_t t = 0; t < 5; ++t) {
            double expect = 0.0;
            for (std::size_t l = 0; l < 4; ++l) expect += s.at(l, t, f);
            CHECK(mean(f, t) == doctest::Approx(expect / 4.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("lml_fuse matches a hand-summed triple loop") {
    std::mt19937_64 rng(42);
    const auto s = random_stack(Side::encoder, 3, 2, 2, rng);
    Vec<double> w(3);
    w << 0.5, -1.0, 2.0;
    const auto fused = lml_fuse(s, w);
    for (std::size_t f = 0; f < 2; ++f) {
        for (std::size_t t = 0; t < 2; ++t) {
            const double oracle = 0.5 * double(s.at(0, t, f)) - 1.0 * double(s.at(1, t, f)) +
                                  2.0 * double(s.at(2, t, f));
            CHECK(std::abs(fused(f, t) - oracle) < 1e-12);
        }
    }
    CHECK(kind_of([&] { lml_fuse(s, Vec<double>(Vec<double>::Ones(2))); }) == ErrorKind::config);
}

TEST_CASE("lml_fuse is linear in the weights") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const auto s = random_stack(Side::decoder, 5, 4, 6, rng);
        Vec<double> w1(5), w2(5);
        for (int i = 0; i < 5; ++i) {
            w1[i] = n(rng);
            w2[i] = n(rng);
        }
        const double a = n(rng), b = n(rng);
        const Mat<double> lhs = lml_fuse(s, Vec<double>(a * w1 + b * w2));
        const Mat<double> rhs = a * lml_fuse(s, w1) + b * lml_fuse(s, w2);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("bilstm with zero parameters returns the zero vector") {
    LstmParams<double> p;
    for (auto* d : {&p.fwd, &p.bwd}) {
        d->w_ih = RowMat<double>::Zero(12, 5);
        d->w_hh = RowMat<double>::Zero(12, 3);
        d->bias = Vec<double>::Zero(12);
    }
    const Mat<double> seq = Mat<double>::Random(5, 7);
    const auto h = bilstm_encode(seq, p);
    REQUIRE(h.size() == 6);
    CHECK(h.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bilstm on one frame equals one cell step per direction") {
    std::mt19937_64 rng(3);
    const auto p = random_lstm(4, 3, rng);
    Mat<double> seq(4, 1);
    seq << 0.3, -1.2, 0.8, 0.05;
    const std::vector<double> x{0.3, -1.2, 0.8, 0.05};
    const auto h = bilstm_encode(seq, p);
    const auto hf = cell_from_zero(p.fwd, x);
    const auto hb = cell_from_zero(p.bwd, x);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(std::abs(h[static_cast<Eigen::Index>(k)] - hf[k]) < 1e-14);
        CHECK(std::abs(h[static_cast<Eigen::Index>(k + 3)] - hb[k]) < 1e-14);
    }
}

TEST_CASE("backward direction equals a forward run over the reversed sequence") {
    std::mt19937_64 rng(4);
    const auto p = random_lstm(3, 4, rng);
    const Mat<double> seq = Mat<double>::Random(3, 9);
    const Mat<double> reversed = seq.rowwise().reverse();
    const auto h = bilstm_encode(seq, p);
    const auto fwd_only = lstm_run(seq, p.fwd);
    const auto bwd_as_fwd = lstm_run(reversed, p.bwd);
    CHECK((h.head(4) - fwd_only).cwiseAbs().maxCoeff() == 0.0);
    CHECK((h.tail(4) - bwd_as_fwd).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bilstm rejects empty and mis-sized input") {
    std::mt19937_64 rng(4);
    const auto p = random_lstm(3, 2, rng);
    CHECK(kind_of([&] { bilstm_encode(Mat<double>(3, 0), p); }) == ErrorKind::data);
    CHECK(kind_of([&] { bilstm_encode(Mat<double>(Mat<double>::Zero(4, 2)), p); }) == ErrorKind::config);
}

TEST_CASE("init_params conventions") {
    const ModelConfig deep{32, 16, 4};
    const auto p = init_params(deep, Mode::full, 17);
    CHECK(p.lml_enc_x.size() == 33);
    for (const auto* w : {&p.lml_enc_x, &p.lml_enc_y, &p.lml_dec_x, &p.lml_dec_y}) {
        CHECK((w->array() == 1.0f / 33.0f).all());
    }
    for (const auto* d : {&p.lstm_enc.fwd, &p.lstm_enc.bwd, &p.lstm_dec.fwd, &p.lstm_dec.bwd}) {
        CHECK(d->w_ih.rows() == 16);
        CHECK(d->w_ih.cols() == 32);
        CHECK(d->w_ih.cwiseAbs().maxCoeff() <= 0.5f);
        CHECK(d->w_hh.cwiseAbs().maxCoeff() <= 0.5f);
        CHECK(d->bias.segment(0, 4).isZero());
        CHECK((d->bias.segment(4, 4).array() == 1.0f).all());
        CHECK(d->bias.tail(8).isZero());
    }
    CHECK(p.head_weight.cwiseAbs().maxCoeff() <= 0.5f);
    CHECK(p.head_bias == 0.0f);

    const auto again = init_params(deep, Mode::full, 17);
    const auto ta = tensors(p);
    const auto tb = tensors(again);
    for (std::size_t i = 0; i < ta.size(); ++i) {
        CHECK(std::memcmp(ta[i].data.data(), tb[i].data.data(), ta[i].data.size_bytes()) == 0);
    }

    const auto y = init_params(deep, Mode::y_only, 17);
    CHECK(y.lml_enc_x.size() == 0);
    CHECK(y.lstm_enc.input_dim() == 16);
    CHECK(y.head_weight.size() == 16);
    validate_params(y);
}

TEST_CASE("forward head behaviour") {
    const ModelConfig cfg{2, 3, 2};
    std::mt19937_64 rng(5);
    const auto e = random_excerpt(cfg, 4, 3, rng);
    auto p = init_params(cfg, Mode::full, 1);

    auto zeroed = p;
    zeroed.head_weight.setZero();
    zeroed.head_bias = 0.0f;
    CHECK(forward(e, zeroed, Mode::full) == 0.5);

    const double base = forward(e, p, Mode::full);
    p.head_bias += 5.0f;
    CHECK(forward(e, p, Mode::full) > base);
    p.head_bias = 1e4f;
    const double saturated = forward(e, p, Mode::full);
    CHECK(saturated < 1.0);
    p.head_bias = -1e4f;
    CHECK(forward(e, p, Mode::full) > 0.0);
}

TEST_CASE("forward equals manual chaining of the sub-operations") {
    const ModelConfig cfg{2, 3, 2};
    std::mt19937_64 rng(77);
    const auto e = random_excerpt(cfg, 4, 3, rng);
    auto p = cast_params<double>(init_params(cfg, Mode::full, 5));
    randomize(p, rng, 0.8);

    auto concat = [](const Mat<double>& top, const Mat<double>& bottom) {
        Mat<double> out(top.rows() + bottom.rows(), top.cols());
        out << top, bottom;
        return out;
    };
    const auto enc = concat(lml_fuse(e.enc_x, p.lml_enc_x), lml_fuse(e.enc_y, p.lml_enc_y));
    const auto dec = concat(lml_fuse(e.dec_x, p.lml_dec_x), lml_fuse(e.dec_y, p.lml_dec_y));
    const auto h_e = bilstm_encode(enc, p.lstm_enc);
    const auto h_d = bilstm_encode(dec, p.lstm_dec);
    double logit = p.head_bias;
    for (Eigen::Index k = 0; k < 4; ++k) {
        logit += p.head_weight[k] * h_e[k] + p.head_weight[k + 4] * h_d[k];
    }
    CHECK(std::abs(forward(e, p, Mode::full) - scalar_sigmoid(logit)) < 1e-14);
}

TEST_CASE("full mode zero-pads the shorter x/y fusion") {
    const ModelConfig cfg{1, 2, 2};
    std::mt19937_64 rng(8);
    const auto x = random_stack(Side::decoder, 2, 2, 2, rng);
    const auto y = random_stack(Side::decoder, 2, 2, 5, rng);
    const Vec<double> w = Vec<double>::Ones(2);
    const auto in = branch_input(x, y, w, w, Mode::full);
    CHECK(in.rows() == 4);
    CHECK(in.cols() == 5);
    CHECK(in.block(0, 2, 2, 3).isZero());
    CHECK((in.bottomRows(2) - lml_fuse(y, w)).isZero());
}

TEST_CASE("forward is deterministic and strictly inside (0,1)") {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 30; ++trial) {
        const ModelConfig cfg{2, 3, 3};
        const auto e = random_excerpt(cfg, 3, 2, rng);
        auto p = init_params(cfg, trial % 2 ? Mode::y_only : Mode::full, trial);
        randomize(p, rng, 3.0);
        const double a = forward(e, p, p.mode);
        const double b = forward(e, p, p.mode);
        CHECK(a == b);
        CHECK(a > 0.0);
        CHECK(a < 1.0);
    }
}

TEST_CASE("branches are independent and y_only ignores x") {
    const ModelConfig cfg{2, 3, 2};
    std::mt19937_64 rng(12);
    auto e = random_excerpt(cfg, 4, 3, rng);
    auto full = cast_params<double>(init_params(cfg, Mode::full, 3));

    const auto enc_before = bilstm_encode(
        branch_input(e.enc_x, e.enc_y, full.lml_enc_x, full.lml_enc_y, Mode::full), full.lstm_enc);
    const auto dec_before = bilstm_encode(
        branch_input(e.dec_x, e.dec_y, full.lml_dec_x, full.lml_dec_y, Mode::full), full.lstm_dec);

    auto perturbed = e;
    perturbed.dec_x = random_stack(Side::decoder, 3, 3, 6, rng);
    perturbed.dec_y = random_stack(Side::decoder, 3, 3, 2, rng);
    const auto enc_after = bilstm_encode(
        branch_input(perturbed.enc_x, perturbed.enc_y, full.lml_enc_x, full.lml_enc_y, Mode::full),
        full.lstm_enc);
    CHECK((enc_after - enc_before).isZero(0.0));

    perturbed = e;
    perturbed.enc_x = random_stack(Side::encoder, 3, 3, 4, rng);
    const auto dec_after = bilstm_encode(
        branch_input(perturbed.dec_x, perturbed.dec_y, full.lml_dec_x, full.lml_dec_y, Mode::full),
        full.lstm_dec);
    CHECK((dec_after - dec_before).isZero(0.0));

    const auto y_only = init_params(cfg, Mode::y_only, 3);
    const double before = forward(e, y_only, Mode::y_only);
    perturbed = e;
    perturbed.enc_x = random_stack(Side::encoder, 3, 3, 9, rng);
    perturbed.dec_x = random_stack(Side::decoder, 3, 3, 1, rng);
    CHECK(forward(perturbed, y_only, Mode::y_only) == before);
}

TEST_CASE("forward rejects mode and shape mismatches") {
    const ModelConfig cfg{2, 3, 2};
    std::mt19937_64 rng(13);
    const auto e = random_excerpt(cfg, 4, 3, rng);
    const auto full = init_params(cfg, Mode::full, 0);
    CHECK(kind_of([&] { forward(e, full, Mode::y_only); }) == ErrorKind::config);
    const auto other = init_params(ModelConfig{2, 4, 2}, Mode::full, 0);
    CHECK(kind_of([&] { forward(e, other, Mode::full); }) == ErrorKind::data);
}

TEST_CASE("backward at a perfect fit is stationary") {
    const ModelConfig cfg{2, 4, 3};
    std::mt19937_64 rng(21);
    auto p = cast_params<double>(init_params(cfg, Mode::full, 2));
    std::vector<ExcerptFeatures> batch;
    for (int i = 0; i < 3; ++i) {
        batch.push_back(random_excerpt(cfg, 5, 3, rng));
        batch.back().label = forward(batch.back(), p, Mode::full);
    }
    const auto r = backward<double>(std::span<const ExcerptFeatures>(batch), p, Mode::full);
    CHECK(r.loss == doctest::Approx(1e-6).epsilon(1e-6));
    for (const auto& t : tensors(std::as_const(r.grads))) {
        for (double g : t.data) CHECK(std::abs(g) <= 1e-6);
    }
}

TEST_CASE("backward uses mean semantics over the batch") {
    const ModelConfig cfg{2, 4, 3};
    std::mt19937_64 rng(22);
    const auto p = cast_params<double>(init_params(cfg, Mode::full, 4));
    std::vector<ExcerptFeatures> batch{random_excerpt(cfg, 5, 3, rng, 0.2, "a"),
                                       random_excerpt(cfg, 4, 2, rng, 0.9, "b")};
    auto doubled = batch;
    doubled.insert(doubled.end(), batch.begin(), batch.end());
    const auto r1 = backward<double>(std::span<const ExcerptFeatures>(batch), p, Mode::full);
    const auto r2 = backward<double>(std::span<const ExcerptFeatures>(doubled), p, Mode::full);
    CHECK(std::abs(r1.loss - r2.loss) < 1e-14);
    const auto g1 = tensors(std::as_const(r1.grads));
    const auto g2 = tensors(std::as_const(r2.grads));
    for (std::size_t k = 0; k < g1.size(); ++k) {
        for (std::size_t j = 0; j < g1[k].data.size(); ++j) {
            CHECK(std::abs(g1[k].data[j] - g2[k].data[j]) < 1e-12);
        }
    }
}

TEST_CASE("backward matches central finite differences") {
    const ModelConfig cfg{2, 4, 3};
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        for (Mode mode : {Mode::full, Mode::y_only}) {
            const auto report = liwhiz::testing::check_gradients(cfg, 5, 3, 2, mode, seed);
            INFO("seed " << seed << " mode " << to_string(mode) << " worst " << report.worst_name);
            CHECK(report.worst_rel < 1e-4);
        }
    }
}

TEST_CASE("backward in float agrees with double") {
    const ModelConfig cfg{2, 4, 3};
    std::mt19937_64 rng(30);
    std::vector<ExcerptFeatures> batch{random_excerpt(cfg, 5, 3, rng, 0.3),
                                       random_excerpt(cfg, 6, 4, rng, 0.7)};
    const auto pf = init_params(cfg, Mode::full, 6);
    const auto pd = cast_params<double>(pf);
    const auto rf = backward<float>(std::span<const ExcerptFeatures>(batch), pf, Mode::full);
    const auto rd = backward<double>(std::span<const ExcerptFeatures>(batch), pd, Mode::full);
    CHECK(rf.loss == doctest::Approx(rd.loss).epsilon(1e-5));
    const auto gf = tensors(std::as_const(rf.grads));
    const auto gd = tensors(std::as_const(rd.grads));
    for (std::size_t k = 0; k < gf.size(); ++k) {
        for (std::size_t j = 0; j < gf[k].data.size(); ++j) {
            CHECK(std::abs(gf[k].data[j] - gd[k].data[j]) < 1e-5);
        }
    }
}

TEST_CASE("backward error paths") {
    const ModelConfig cfg{1, 2, 2};
    std::mt19937_64 rng(31);
    const auto p = init_params(cfg, Mode::full, 0);
    std::vector<ExcerptFeatures> batch{random_excerpt(cfg, 2, 2, rng)};
    CHECK(kind_of([&] { backward<float>(std::span<const ExcerptFeatures>(batch), p, Mode::full); }) ==
          ErrorKind::data);
    CHECK(kind_of([&] {
              backward<float>(std::span<const ExcerptFeatures>(), p, Mode::full);
          }) == ErrorKind::data);
    auto bad = p;
    bad.lstm_dec.bwd.w_hh(0, 0) = std::numeric_limits<float>::quiet_NaN();
    batch[0].label = 0.4;
    try {
        backward<float>(std::span<const ExcerptFeatures>(batch), bad, Mode::full);
        FAIL("expected numeric error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::numeric);
    }
}
