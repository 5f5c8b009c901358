#include <cmath>
#include <random>

#include "doctest.h"
#include "deep_oracles.hpp"
#include "dlsh/deep_encoder.hpp"
#include "dlsh/errors.hpp"
#include "dlsh/synthetic.hpp"
#include "helpers.hpp"

using namespace dlsh;
using namespace dlsh::testing;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.kernel_sizes = {2, 3, 4};
  c.filters_per_size = 4;
  c.max_len = 10;
  c.vocab_size = 20;
  c.M = 4;
  c.b = 2;
  return c;
}

}  // namespace

TEST_SUITE("deep_encoder") {

TEST_CASE("generalized Hamming on saturated vectors") {
  // Block 1 differs in both bits, block 2 in none, block 3 in one.
  Eigen::VectorXd u(6), v(6);
  u << 1, 1, 1, -1, 1, 1;
  v << -1, -1, 1, -1, -1, 1;
  CHECK(approx_generalized_hamming(u, v, 3, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(exact_block_hamming(binarize(u, 3, 2), binarize(v, 3, 2)) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  // With one bit per function the same vectors score as plain Hamming similarity.
  CHECK(approx_generalized_hamming(u, v, 6, 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(approx_generalized_hamming(u, v, 4, 2), ShapeMismatch);

  std::mt19937_64 rng(3);
  for (int n = 0; n < 200; ++n) {
    Eigen::VectorXd x(32), y(32);
    for (int i = 0; i < 32; ++i) {
      x[i] = rng() % 2 ? 1.0 : -1.0;
      y[i] = rng() % 2 ? 1.0 : -1.0;
    }
    CHECK(approx_generalized_hamming(x, y, 8, 4) == exact_block_hamming(binarize(x, 8, 4), binarize(y, 8, 4)));
  }
}

TEST_CASE("binarization thresholds at zero") {
  Eigen::VectorXd x(4);
  x << 0.0, -0.0001, 0.3, -1.0;
  const auto code = binarize(x, 2, 2);
  CHECK(code.block(0) == 0b10);
  CHECK(code.block(1) == 0b10);
}

TEST_CASE("forward pass matches a dense convolution over the padded input") {
  const auto config = tiny_config();
  std::mt19937_64 rng(8);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto params = EncoderParams<double>::glorot(config, seed);
    for (auto& b : params.conv_biases) b.setRandom();
    params.dense_bias.setRandom();
    const auto batch = random_batch(rng, config, 3, 1);
    for (const auto& t : batch.traces) {
      const auto out = forward(params, config, t);
      CHECK(out.size() == 8);
      CHECK((out - dense_forward(params, config, t)).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(out.cwiseAbs().maxCoeff() < 1.0);
    }
  }
}

TEST_CASE("long traces are truncated before encoding") {
  auto config = tiny_config();
  const auto params = EncoderParams<double>::glorot(config, 1);
  EncodedTrace long_trace(25);
  for (std::size_t i = 0; i < long_trace.size(); ++i) long_trace[i] = static_cast<int>(i % 20);
  const EncodedTrace head(long_trace.begin(), long_trace.begin() + 10);
  CHECK(forward(params, config, long_trace) == forward(params, config, head));

  std::vector<CrashReport> docs{make_report("a", make_trace({"x", "y"}))};
  const auto stats = build_corpus(docs);
  const auto encoded = encode_trace(make_trace({"y", "zz", "x", "x"}), stats, 3);
  CHECK(encoded == EncodedTrace{1, -1, 0});
}

TEST_CASE("forward pass is deterministic and works in single precision") {
  const auto config = tiny_config();
  const auto params = EncoderParams<double>::glorot(config, 5);
  const EncodedTrace t{1, 2, 3, -1, 4};
  CHECK(forward(params, config, t) == forward(EncoderParams<double>::glorot(config, 5), config, t));
  const auto single = forward(params.cast<float>(), config, t);
  CHECK((single.cast<double>() - forward(params, config, t)).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("glorot initialization respects its bounds") {
  auto config = tiny_config();
  const auto params = EncoderParams<double>::glorot(config, 2);
  for (std::size_t i = 0; i < config.kernel_sizes.size(); ++i) {
    const double w = double(config.kernel_sizes[i]);
    const double limit = std::sqrt(6.0 / (w * 20 + w * 4));
    CHECK(params.conv_weights[i].cwiseAbs().maxCoeff() <= limit);
    CHECK(params.conv_biases[i].isZero(0.0));
  }
  CHECK(params.dense_weights.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (12 + 8)));
  CHECK(params.num_parameters() == 4 * (40 + 60 + 80) + 12 + 8 * 12 + 8);
  auto copy = EncoderParams<double>::zeros(config);
  copy.assign(params.flatten());
  CHECK(copy.flatten() == params.flatten());
  config.vocab_size = 0;
  CHECK_THROWS_AS(EncoderParams<double>::zeros(config), ShapeMismatch);
}

TEST_CASE("loss equals an independent evaluation of its four terms") {
  const auto config = tiny_config();
  const LossConfig lc{0.3, 0.2, 0.01};
  std::mt19937_64 rng(17);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto params = EncoderParams<double>::glorot(config, seed);
    const auto batch = random_batch(rng, config, 6, 8);
    CHECK(loss(params, config, lc, batch) == doctest::Approx(dense_loss(params, config, lc, batch)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(loss(EncoderParams<double>::glorot(config, 0), config, lc, PairBatch{}), EmptyBatch);
}

TEST_CASE("analytic gradients match central differences") {
  const auto config = tiny_config();
  const LossConfig lc;
  std::mt19937_64 rng(99);
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 5 && seed < 200; ++seed) {
    const auto params = EncoderParams<double>::glorot(config, seed);
    const auto batch = random_batch(rng, config, 4, 4);
    if (tie_margin(params, config, batch) < 1e-4) continue;
    const auto result = check_gradient(params, config, lc, batch, 1e-6);
    CHECK(result.max_relative_error <= 1e-4);
    ++checked;
  }
  CHECK(checked == 5);
}

TEST_CASE("pair sets cover every distinct pair") {
  SyntheticConfig sc;
  sc.n_traces = 30;
  const auto reports = generate_corpus(sc);
  const auto stats = build_corpus(reports);
  const auto set = make_pair_set(reports, MeasureId::EditSim, stats, {}, 16);
  CHECK(set.pairs.size() == 30 * 29 / 2);
  CHECK(set.targets[0] == similarity(MeasureId::EditSim, reports[0].trace, reports[1].trace, stats));
  const auto capped = make_pair_set(reports, MeasureId::EditSim, stats, {}, 16, 50, 3);
  CHECK(capped.pairs.size() == 50);
  const std::vector<std::size_t> sel{0, 1, 2};
  const auto batch = set.batch(sel);
  CHECK(batch.pairs.size() == 3);
  CHECK(batch.traces.size() == 4);
  CHECK_THROWS_AS(make_pair_set(std::span(reports).first(1), MeasureId::EditSim, stats, {}, 16), InsufficientCorpus);
}

TEST_CASE("training is seeded and lowers the objective") {
  SyntheticConfig sc;
  sc.n_traces = 40;
  sc.seed = 4;
  const auto reports = generate_corpus(sc);
  const auto stats = build_corpus(reports);
  EncoderConfig config;
  config.filters_per_size = 8;
  config.max_len = 16;
  config.vocab_size = stats.vocabulary_size();
  config.M = 8;
  config.b = 2;
  const auto pairs = make_pair_set(reports, MeasureId::EditSim, stats, {}, config.max_len);
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 64;
  tc.learning_rate = 5e-3;
  tc.seed = 11;
  const LossConfig lc;

  std::vector<EpochLog> logs;
  const auto a = train(config, lc, tc, pairs, nullptr, [&](const EpochLog& e) { logs.push_back(e); });
  const auto b = train(config, lc, tc, pairs);
  CHECK(a.params.flatten() == b.params.flatten());
  CHECK(logs.size() == 6);
  CHECK(std::isnan(logs[0].validation_loss));
  const double before = loss(EncoderParams<double>::glorot(config, tc.seed), config, lc, pairs.all());
  CHECK(loss(a.params, config, lc, pairs.all()) < before);

  tc.epochs = 0;
  CHECK(train(config, lc, tc, pairs).params.flatten() == EncoderParams<double>::glorot(config, 11).flatten());
}

TEST_CASE("model files round-trip and bind the hash family") {
  std::vector<CrashReport> docs{make_report("a", make_trace({"p.A.f", "p.B.g"})), make_report("b", make_trace({"q.C.h"}))};
  const auto stats = build_corpus(docs);
  DeepLshModel model;
  model.config = tiny_config();
  model.config.vocab_size = stats.vocabulary_size();
  model.params = EncoderParams<double>::glorot(model.config, 3);
  model.vocabulary = stats.tokens();
  model.seed = 3;
  model.measure = "EditSim";
  const auto bytes = model.serialize();
  CHECK(bytes.substr(0, 7) == "DLSHM1\n");
  const auto back = DeepLshModel::deserialize(bytes);
  CHECK(back.serialize() == bytes);
  CHECK(back.params.flatten() == model.params.flatten());
  CHECK_THROWS_AS(DeepLshModel::deserialize(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(DeepLshModel::deserialize("nonsense"), FormatError);

  const DeepLshFamily family(model);
  const auto t = make_trace({"p.A.f", "unknown.X.y", "q.C.h"});
  CHECK(family.encode(t) == EncodedTrace{0, -1, 2});
  CHECK(family.hash(t) == binarize(family.continuous(t), 4, 2));
  CHECK(family.fingerprint() == model.digest());
  auto changed = model;
  changed.params.dense_bias[0] += 1e-9;
  CHECK(DeepLshFamily(changed).fingerprint() != family.fingerprint());
}

}
