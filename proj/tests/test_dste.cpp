#include "helpers.hpp"

#include "usdrl/autodiff.hpp"
#include "usdrl/dste.hpp"
#include "usdrl/error.hpp"
#include "usdrl/gradcheck.hpp"
#include "usdrl/model.hpp"

#include <doctest.h>

using namespace usdrl;
using testing::bit_equal;
using testing::from_rows;
using testing::gaussian;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.frames = 6;
  c.joints = 4;
  c.embed_dim = 8;
  c.repr_dim = 8;
  c.proj_dim = 4;
  c.num_heads = 2;
  return c;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

TEST_SUITE("dste") {
  TEST_CASE("embedding of zero input with zero positions is zero") {
    ParameterSet ps;
    StreamParams s;
    s.tokens = 3;
    s.input_dim = 4;
    s.embed = ps.add("embed", gaussian(4, 5, 1));
    s.position = ps.add("position", Matrix::Zero(3, 5));
    ad::Tape tape(ps);
    const Matrix out = embed(tape, tape.constant(Matrix::Zero(3, 4)), s).value();
    CHECK(out.isZero(0.0));
    CHECK_THROWS_AS(embed(tape, tape.constant(Matrix::Zero(3, 5)), s), ShapeError);
  }

  TEST_CASE("temporal embedding at T=64, V=25, M=2, C_e=1024 is [64, 1024]") {
    ModelConfig c;
    c.frames = 64;
    c.joints = 25;
    c.persons = 2;
    c.embed_dim = 1024;
    ParameterSet ps;
    StreamParams s;
    s.tokens = c.temporal_tokens();
    s.input_dim = c.temporal_input_dim();
    s.embed = ps.add("embed", Matrix::Zero(s.input_dim, c.embed_dim));
    s.position = ps.add("position", Matrix::Zero(s.tokens, c.embed_dim));
    ad::Tape tape(ps);
    const auto f = embed(tape, tape.constant(Matrix::Zero(64, 150)), s);
    CHECK(f.rows() == 64);
    CHECK(f.cols() == 1024);
  }

  TEST_CASE("identity embedding adds the position table") {
    ParameterSet ps;
    StreamParams s;
    s.tokens = 3;
    s.input_dim = 3;
    s.embed = ps.add("embed", Matrix::Identity(3, 3));
    const Matrix pos = gaussian(3, 3, 2);
    s.position = ps.add("position", pos);
    const Matrix x = gaussian(3, 3, 3);
    ad::Tape tape(ps);
    CHECK(embed(tape, tape.constant(x), s).value().isApprox(x + pos, 1e-15));
  }

  TEST_CASE("dsa_hidden residual survives a zero W1 or W2") {
    ad::Tape tape;
    const Matrix f = gaussian(4, 3, 4);
    auto run = [&](const Matrix& w1, const Matrix& w2) {
      return dsa_hidden(tape.constant(f), tape.constant(w1), tape.constant(w2)).value();
    };
    CHECK(run(Matrix::Zero(4, 4), gaussian(4, 4, 5)).isApprox(f, 1e-15));
    CHECK(run(gaussian(4, 4, 6), Matrix::Zero(4, 4)).isApprox(f, 1e-15));
  }

  TEST_CASE("dsa_hidden hand-computed L=2 example") {
    ad::Tape tape;
    const Matrix out = dsa_hidden(tape.constant(from_rows({{1}, {2}})), tape.constant(Matrix::Identity(2, 2)),
                                  tape.constant(Matrix::Identity(2, 2)))
                           .value();
    CHECK(out.isApprox(from_rows({{2}, {4}})));
  }

  TEST_CASE("dsa_hidden matches the token-axis formula on random input") {
    ad::Tape tape;
    const Matrix f = gaussian(5, 3, 7), w1 = gaussian(5, 5, 8), w2 = gaussian(5, 5, 9);
    // F1 = F^T is [C, L]; the L x L weights act on the token axis.
    const Matrix f1 = f.transpose();
    const Matrix expected = ((f1 * w1).cwiseMax(0.0) * w2 + f1).transpose();
    CHECK(dsa_hidden(tape.constant(f), tape.constant(w1), tape.constant(w2)).value().isApprox(expected, 1e-13));
    CHECK_THROWS_AS(dsa_hidden(tape.constant(f), tape.constant(gaussian(4, 4, 1)), tape.constant(w2)), ShapeError);
  }

  TEST_CASE("dense_shift row selection") {
    ad::Tape tape;
    const Matrix h = gaussian(4, 3, 10), f = gaussian(4, 3, 11);
    auto shift = [&](int gap) { return dense_shift(tape.constant(h), tape.constant(f), gap).value(); };
    CHECK(bit_equal(shift(1), h));
    const Matrix wide = shift(7);
    CHECK(bit_equal(wide.row(0), h.row(0)));
    CHECK(bit_equal(wide.bottomRows(3), f.bottomRows(3)));
    const Matrix two = shift(2);
    for (int i = 0; i < 4; ++i) CHECK(bit_equal(two.row(i), i % 2 == 0 ? h.row(i) : f.row(i)));
    CHECK_THROWS_AS(dense_shift(tape.constant(h), tape.constant(gaussian(3, 3, 1)), 2), ShapeError);
  }

  TEST_CASE("self-attention weights are row-stochastic") {
    ParameterSet ps;
    std::mt19937_64 rng(1);
    const AttentionParams a = declare_attention(ps, "attn", 8, 0.3, rng);
    ad::Tape tape(ps);
    std::vector<Matrix> weights;
    self_attention(tape, tape.constant(gaussian(6, 8, 12)), a, 2, &weights);
    REQUIRE(weights.size() == 2);
    for (const auto& w : weights) {
      CHECK(w.rows() == 6);
      CHECK(w.minCoeff() >= 0.0);
      for (int i = 0; i < 6; ++i) CHECK(w.row(i).sum() == doctest::Approx(1.0).epsilon(1e-5));
    }
  }

  TEST_CASE("self-attention on a single token") {
    ParameterSet ps;
    std::mt19937_64 rng(2);
    const AttentionParams a = declare_attention(ps, "attn", 4, 0.3, rng);
    for (auto& p : ps) p.value += 0.1 * gaussian(p.value.rows(), p.value.cols(), 99);
    ad::Tape tape(ps);
    std::vector<Matrix> weights;
    const Matrix x = gaussian(1, 4, 13);
    const Matrix out = self_attention(tape, tape.constant(x), a, 2, &weights).value();
    for (const auto& w : weights) CHECK(w.isApprox(Matrix::Ones(1, 1)));
    // LN(x + (x Wv + bv) Wo + bo)
    auto val = [&](ParamId id) { return ps[id].value; };
    const Matrix v = x * val(a.value.weight) + val(a.value.bias);
    const Matrix r = x + v * val(a.output.weight) + val(a.output.bias);
    const double mean = r.mean();
    const double var = (r.array() - mean).square().mean();
    Matrix ln = ((r.array() - mean) / std::sqrt(var + 1e-5)).matrix();
    ln = ln.cwiseProduct(val(a.norm.gain)) + val(a.norm.bias);
    CHECK(out.isApprox(ln, 1e-6));
  }

  TEST_CASE("identical tokens give identical attention rows") {
    ParameterSet ps;
    std::mt19937_64 rng(3);
    const AttentionParams a = declare_attention(ps, "attn", 4, 0.3, rng);
    ad::Tape tape(ps);
    std::vector<Matrix> weights;
    const Matrix x = gaussian(1, 4, 14).replicate(5, 1);
    self_attention(tape, tape.constant(x), a, 2, &weights);
    for (const auto& w : weights)
      for (int i = 1; i < 5; ++i) CHECK(w.row(i).isApprox(w.row(0)));
    CHECK_THROWS_AS(self_attention(tape, tape.constant(gaussian(3, 4, 1)), a, 3), ConfigError);
  }

  TEST_CASE("dsa_forward with gap 1 and zero token mixing doubles one path") {
    ModelConfig c = small_config();
    c.gap = 1;
    ParameterSet ps;
    std::mt19937_64 rng(4);
    const auto layer = declare_encoder_layer(ps, "layer", 6, 8, 8, c, rng);
    ps[layer.dsa.w1].value.setZero();
    ps[layer.dsa.w2].value.setZero();
    ad::Tape tape(ps);
    const auto f = tape.constant(gaussian(6, 8, 15));
    const Matrix out = dsa_forward(tape, f, layer.dsa, c).value();
    const Matrix one = feed_forward(tape, self_attention(tape, f, layer.dsa.attention, c.num_heads), layer.dsa.ffn).value();
    CHECK(out.isApprox(2.0 * one, 1e-14));
    CHECK(out.rows() == 6);
    CHECK(out.cols() == 8);
  }

  TEST_CASE("all-zero parameters still give finite outputs") {
    ModelConfig c = small_config();
    ParameterSet ps;
    std::mt19937_64 rng(5);
    const auto layer = declare_encoder_layer(ps, "layer", 6, 8, 5, c, rng);
    for (auto& p : ps) p.value.setZero();
    ad::Tape tape(ps);
    const auto f = tape.constant(gaussian(6, 8, 16));
    CHECK(all_finite(dsa_forward(tape, f, layer.dsa, c).value()));
    CHECK(all_finite(ca_forward(tape, f, layer.ca, c).value()));
    CHECK(layer_forward(tape, f, layer, c).cols() == 5);
  }

  TEST_CASE("ca_forward with a delta kernel attends to 2F") {
    ModelConfig c = small_config();
    ParameterSet ps;
    std::mt19937_64 rng(6);
    const auto layer = declare_encoder_layer(ps, "layer", 6, 8, 8, c, rng);
    Matrix& k = ps[layer.ca.kernel].value;
    k.setZero();
    k.row(c.conv_kernel / 2).setOnes();
    ad::Tape tape(ps);
    const Matrix f = gaussian(6, 8, 17);
    const Matrix out = ca_forward(tape, tape.constant(f), layer.ca, c).value();
    const Matrix ref =
        feed_forward(tape, self_attention(tape, tape.constant(2.0 * f), layer.ca.attention, c.num_heads), layer.ca.ffn)
            .value();
    CHECK(out.isApprox(ref, 1e-14));
  }

  TEST_CASE("depthwise convolution on one token uses the center tap only") {
    ad::Tape tape;
    const Matrix x = from_rows({{2.0, -1.0}});
    const Matrix kernel = from_rows({{5.0, 7.0}, {3.0, 0.5}, {11.0, 13.0}});
    CHECK(ad::depthwise_conv(tape.constant(x), tape.constant(kernel)).value().isApprox(from_rows({{6.0, -0.5}})));
    const Matrix seq = gaussian(7, 2, 18);
    CHECK(ad::depthwise_conv(tape.constant(seq), tape.constant(kernel)).rows() == 7);
  }

  TEST_CASE("branch weights select or average the branches exactly") {
    ModelConfig c = small_config();
    ParameterSet ps;
    std::mt19937_64 rng(7);
    const auto layer = declare_encoder_layer(ps, "layer", 6, 8, 8, c, rng);
    const Matrix f = gaussian(6, 8, 19);
    auto run = [&](double alpha) {
      ModelConfig k = c;
      k.alpha = alpha;
      k.beta = 1.0 - alpha;
      ad::Tape tape(ps);
      const auto x = tape.constant(f);
      return std::array<Matrix, 3>{layer_forward(tape, x, layer, k).value(), ca_forward(tape, x, layer.ca, k).value(),
                                   dsa_forward(tape, x, layer.dsa, k).value()};
    };
    const auto one = run(1.0), zero = run(0.0), half = run(0.5);
    CHECK(bit_equal(one[0], one[1]));
    CHECK(bit_equal(zero[0], zero[2]));
    CHECK(half[0].isApprox(0.5 * (half[1] + half[2]), 1e-14));

    ModelConfig bad = c;
    bad.alpha = 0.7;
    bad.beta = 0.7;
    ad::Tape tape(ps);
    CHECK_THROWS_AS(layer_forward(tape, tape.constant(f), layer, bad), ConfigError);
  }

  TEST_CASE("model config validation") {
    ModelConfig c = small_config();
    CHECK_NOTHROW(c.validate());
    c.conv_kernel = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.alpha = 0.4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.num_heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.gap = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("encoder streams are independent and deterministic") {
    ExperimentConfig e;
    e.model = small_config();
    const Model m = build_model(e);
    auto run = [&](const Matrix& xs, const Matrix& xt) {
      ad::Tape tape(m.params);
      const auto fs = embed(tape, tape.constant(xs), m.encoder.spatial);
      const auto ft = embed(tape, tape.constant(xt), m.encoder.temporal);
      const auto d = encode(tape, fs, ft, m.encoder, m.config.model);
      return std::pair{d.temporal.value(), d.spatial.value()};
    };
    const Matrix xs = gaussian(4, 18, 20), xt = gaussian(6, 12, 21);
    const auto a = run(xs, xt), b = run(xs, xt), c = run(gaussian(4, 18, 22), xt);
    CHECK(bit_equal(a.first, b.first));
    CHECK(bit_equal(a.second, b.second));
    CHECK(bit_equal(a.first, c.first));
    CHECK(!bit_equal(a.second, c.second));
    CHECK(a.first.rows() == 6);
    CHECK(a.second.rows() == 4);
    CHECK(a.first.cols() == 8);
  }

  TEST_CASE("two-layer encoder keeps the token axis dense") {
    ExperimentConfig e;
    e.model = small_config();
    e.model.num_layers = 2;
    e.model.repr_dim = 16;
    const Model m = build_model(e);
    CHECK(m.encoder.temporal.layers.size() == 2);
    const auto rep = encode_sequence(m, testing::random_sequence(e.model.input_shape(), 1));
    CHECK(rep.y_t.rows() == 6);
    CHECK(rep.y_t.cols() == 16);
    CHECK(rep.y_s.rows() == 4);
  }

  TEST_CASE("condense is a column max with temporal first") {
    DenseRepresentation rep{from_rows({{1, 5, -2}}), from_rows({{0, 1, 2}, {3, -1, 9}})};
    auto c = condense(rep);
    CHECK(c.t_pool.isApprox(from_rows({{1, 5, -2}})));
    CHECK(c.s_pool.isApprox(from_rows({{3, 1, 9}})));
    CHECK(c.instance.size() == 6);
    CHECK(c.instance.head(3).isApprox(c.t_pool));

    const Matrix y = gaussian(7, 4, 23);
    Matrix dominant = y;
    dominant.row(3) = y.colwise().maxCoeff().array() + 1.0;
    CHECK(condense(DenseRepresentation{dominant, y}).t_pool.isApprox(dominant.row(3)));

    Matrix shuffled = y;
    shuffled.row(0).swap(shuffled.row(6));
    shuffled.row(2).swap(shuffled.row(4));
    CHECK(bit_equal(condense(DenseRepresentation{shuffled, y}).t_pool, condense(DenseRepresentation{y, y}).t_pool));

    DenseRepresentation wide{Matrix::Zero(3, 1024), Matrix::Zero(2, 1024)};
    CHECK(condense(wide).instance.size() == 2048);
  }

  TEST_CASE("forward passes stay finite over 100 random initializations") {
    ExperimentConfig e;
    e.model = small_config();
    for (int trial = 0; trial < 100; ++trial) {
      e.model.seed = static_cast<std::uint64_t>(trial);
      const Model m = build_model(e);
      const auto rep = encode_sequence(m, testing::random_sequence(e.model.input_shape(), 1000 + trial));
      REQUIRE(all_finite(rep.y_t));
      REQUIRE(all_finite(rep.y_s));
    }
  }

  TEST_CASE("features do not depend on batch composition") {
    ExperimentConfig e;
    e.model = small_config();
    const Model m = build_model(e);
    const auto a = testing::random_sequence(e.model.input_shape(), 1);
    const auto b = testing::random_sequence(e.model.input_shape(), 2);
    const Matrix alone = extract_features(m, {a});
    const Matrix batch = extract_features(m, {b, a, b}, 2);
    CHECK(bit_equal(alone.row(0), batch.row(1)));
  }

  TEST_CASE("encoder components pass the finite-difference gradient check") {
    for (const char* name : {"dsa_hidden", "dense_shift", "self_attention", "ca_forward", "layer_forward"}) {
      CAPTURE(name);
      const auto r = gradient_check(name);
      INFO(r.to_string());
      CHECK(r.passed());
      CHECK(r.max_rel_error() < 1e-4);
    }
  }
}
