#include "dlsh/deep_encoder.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "dlsh/digest.hpp"
#include "json.hpp"

namespace dlsh {

using nlohmann::json;

void EncoderConfig::validate() const {
  if (kernel_sizes.empty()) throw ShapeMismatch("at least one kernel size is required");
  if (max_len < 1) throw ShapeMismatch("max_len must be >= 1");
  for (auto w : kernel_sizes) {
    if (w < 1 || w > max_len) throw ShapeMismatch("kernel size " + std::to_string(w) + " outside [1, max_len]");
  }
  if (filters_per_size < 1) throw ShapeMismatch("filters_per_size must be >= 1");
  if (vocab_size < 1) throw ShapeMismatch("vocabulary is empty");
  if (M < 1 || b < 1 || b > 64) throw ShapeMismatch("need M >= 1 and 1 <= b <= 64");
}

void LossConfig::validate() const {
  if (!(lambda1 >= 0) || !(lambda2 >= 0) || !(lambda3 >= 0)) throw DomainError("loss weights must be >= 0");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw DomainError("learning rate must be positive");
  if (!(plateau_factor > 0 && plateau_factor <= 1)) throw DomainError("plateau factor must lie in (0,1]");
}

// --- parameters ---------------------------------------------------------------

namespace {

template <typename Params, typename F>
void visit_blocks(Params& p, F&& f) {
  for (std::size_t i = 0; i < p.conv_weights.size(); ++i) {
    f(p.conv_weights[i]);
    f(p.conv_biases[i]);
  }
  f(p.dense_weights);
  f(p.dense_bias);
}

}  // namespace

template <typename Scalar>
EncoderParams<Scalar> EncoderParams<Scalar>::zeros(const EncoderConfig& config) {
  config.validate();
  EncoderParams p;
  const auto filters = static_cast<Eigen::Index>(config.filters_per_size);
  for (auto w : config.kernel_sizes) {
    p.conv_weights.push_back(MatrixX<Scalar>::Zero(filters, static_cast<Eigen::Index>(w * config.vocab_size)));
    p.conv_biases.push_back(VectorX<Scalar>::Zero(filters));
  }
  p.dense_weights = MatrixX<Scalar>::Zero(static_cast<Eigen::Index>(config.code_length()),
                                          static_cast<Eigen::Index>(config.pooled_size()));
  p.dense_bias = VectorX<Scalar>::Zero(static_cast<Eigen::Index>(config.code_length()));
  return p;
}

template <typename Scalar>
EncoderParams<Scalar> EncoderParams<Scalar>::glorot(const EncoderConfig& config, std::uint64_t seed) {
  auto p = zeros(config);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](MatrixX<Scalar>& m, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<Scalar>(dist(rng));
    }
  };
  for (std::size_t i = 0; i < config.kernel_sizes.size(); ++i) {
    const double w = static_cast<double>(config.kernel_sizes[i]);
    fill(p.conv_weights[i], w * static_cast<double>(config.vocab_size), w * static_cast<double>(config.filters_per_size));
  }
  fill(p.dense_weights, static_cast<double>(config.pooled_size()), static_cast<double>(config.code_length()));
  return p;
}

template <typename Scalar>
std::size_t EncoderParams<Scalar>::num_parameters() const {
  std::size_t n = 0;
  visit_blocks(*this, [&n](const auto& block) { n += static_cast<std::size_t>(block.size()); });
  return n;
}

template <typename Scalar>
VectorX<Scalar> EncoderParams<Scalar>::flatten() const {
  VectorX<Scalar> flat(static_cast<Eigen::Index>(num_parameters()));
  Eigen::Index offset = 0;
  visit_blocks(*this, [&](const auto& block) {
    flat.segment(offset, block.size()) = Eigen::Map<const VectorX<Scalar>>(block.data(), block.size());
    offset += block.size();
  });
  return flat;
}

template <typename Scalar>
void EncoderParams<Scalar>::assign(const VectorX<Scalar>& flat) {
  if (static_cast<std::size_t>(flat.size()) != num_parameters()) throw ShapeMismatch("flat parameter size mismatch");
  Eigen::Index offset = 0;
  visit_blocks(*this, [&](auto& block) {
    Eigen::Map<VectorX<Scalar>>(block.data(), block.size()) = flat.segment(offset, block.size());
    offset += block.size();
  });
}

template <typename Scalar>
Scalar EncoderParams<Scalar>::squared_norm() const {
  Scalar total(0);
  visit_blocks(*this, [&total](const auto& block) { total += block.squaredNorm(); });
  return total;
}

template <typename Scalar>
bool EncoderParams<Scalar>::all_finite() const {
  bool ok = true;
  visit_blocks(*this, [&ok](const auto& block) { ok = ok && block.allFinite(); });
  return ok;
}

template <typename Scalar>
void EncoderParams<Scalar>::check_shape(const EncoderConfig& config) const {
  const auto filters = static_cast<Eigen::Index>(config.filters_per_size);
  bool ok = conv_weights.size() == config.kernel_sizes.size() && conv_biases.size() == config.kernel_sizes.size();
  for (std::size_t i = 0; ok && i < conv_weights.size(); ++i) {
    ok = conv_weights[i].rows() == filters &&
         conv_weights[i].cols() == static_cast<Eigen::Index>(config.kernel_sizes[i] * config.vocab_size) &&
         conv_biases[i].size() == filters;
  }
  ok = ok && dense_weights.rows() == static_cast<Eigen::Index>(config.code_length()) &&
       dense_weights.cols() == static_cast<Eigen::Index>(config.pooled_size()) &&
       dense_bias.size() == static_cast<Eigen::Index>(config.code_length());
  if (!ok) throw ShapeMismatch("encoder parameters do not match the configuration");
}

template <typename Scalar>
template <typename NewScalar>
EncoderParams<NewScalar> EncoderParams<Scalar>::cast() const {
  EncoderParams<NewScalar> out;
  for (std::size_t i = 0; i < conv_weights.size(); ++i) {
    out.conv_weights.push_back(conv_weights[i].template cast<NewScalar>());
    out.conv_biases.push_back(conv_biases[i].template cast<NewScalar>());
  }
  out.dense_weights = dense_weights.template cast<NewScalar>();
  out.dense_bias = dense_bias.template cast<NewScalar>();
  return out;
}

// --- encoding and forward pass ----------------------------------------------------

MatrixX<double> encode_onehot(std::span<const int> trace, std::size_t vocab_size, std::size_t max_len) {
  MatrixX<double> out = MatrixX<double>::Zero(static_cast<Eigen::Index>(max_len), static_cast<Eigen::Index>(vocab_size));
  const auto len = std::min(trace.size(), max_len);
  for (std::size_t i = 0; i < len; ++i) {
    if (trace[i] >= 0 && static_cast<std::size_t>(trace[i]) < vocab_size) {
      out(static_cast<Eigen::Index>(i), trace[i]) = 1.0;
    }
  }
  return out;
}

EncodedTrace encode_trace(const StackTrace& trace, const CorpusStats& vocabulary, std::size_t max_len) {
  EncodedTrace out;
  const auto len = std::min(trace.frames.size(), max_len);
  out.reserve(len);
  for (std::size_t i = 0; i < len; ++i) {
    const auto idx = vocabulary.index_of(normalize_frame(trace.frames[i], FrameGranularity::Method));
    out.push_back(idx ? static_cast<int>(*idx) : -1);
  }
  return out;
}

namespace {

/// Index of the last window start that needs evaluating: windows starting at or past the
/// trace end see only padding and are all identical to the one starting at `len`.
std::size_t last_window(std::size_t len, std::size_t width, std::size_t max_len) {
  return std::min(len, max_len - width);
}

template <typename Scalar>
void window_activation(const MatrixX<Scalar>& weights, const VectorX<Scalar>& bias, std::span<const int> trace,
                       std::size_t len, std::size_t start, std::size_t width, std::size_t vocab,
                       VectorX<Scalar>& act) {
  act = bias;
  for (std::size_t o = 0; o < width && start + o < len; ++o) {
    const int tok = trace[start + o];
    if (tok >= 0 && static_cast<std::size_t>(tok) < vocab) {
      act += weights.col(static_cast<Eigen::Index>(o * vocab + static_cast<std::size_t>(tok)));
    }
  }
}

}  // namespace

template <typename Scalar>
VectorX<Scalar> forward(const EncoderParams<Scalar>& params, const EncoderConfig& config, std::span<const int> trace,
                        ForwardCache<Scalar>* cache) {
  const auto filters = static_cast<Eigen::Index>(config.filters_per_size);
  const std::size_t len = std::min(trace.size(), config.max_len);
  if (params.conv_weights.size() != config.kernel_sizes.size()) throw ShapeMismatch("kernel count mismatch");

  VectorX<Scalar> pooled(static_cast<Eigen::Index>(config.pooled_size()));
  if (cache) {
    cache->argmax.assign(config.kernel_sizes.size(), {});
    cache->pooled_pre.assign(config.kernel_sizes.size(), {});
  }
  VectorX<Scalar> act;
  for (std::size_t ki = 0; ki < config.kernel_sizes.size(); ++ki) {
    const auto width = config.kernel_sizes[ki];
    const auto& weights = params.conv_weights[ki];
    VectorX<Scalar> best = VectorX<Scalar>::Constant(filters, -std::numeric_limits<Scalar>::infinity());
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(filters), 0);
    const auto last = last_window(len, width, config.max_len);
    for (std::size_t p = 0; p <= last; ++p) {
      window_activation(weights, params.conv_biases[ki], trace, len, p, width, config.vocab_size, act);
      for (Eigen::Index f = 0; f < filters; ++f) {
        if (act[f] > best[f]) {  // strict: lowest position wins ties
          best[f] = act[f];
          arg[static_cast<std::size_t>(f)] = static_cast<Eigen::Index>(p);
        }
      }
    }
    pooled.segment(static_cast<Eigen::Index>(ki) * filters, filters) = best.cwiseMax(Scalar(0));
    if (cache) {
      cache->argmax[ki] = std::move(arg);
      cache->pooled_pre[ki] = std::move(best);
    }
  }
  VectorX<Scalar> out = (params.dense_weights * pooled + params.dense_bias).array().tanh().matrix();
  if (cache) {
    cache->pooled = pooled;
    cache->output = out;
  }
  return out;
}

namespace {

template <typename Scalar>
void backward(const EncoderParams<Scalar>& params, const EncoderConfig& config, std::span<const int> trace,
              const ForwardCache<Scalar>& cache, const VectorX<Scalar>& d_output, EncoderParams<Scalar>& grad) {
  const auto filters = static_cast<Eigen::Index>(config.filters_per_size);
  const std::size_t len = std::min(trace.size(), config.max_len);
  const VectorX<Scalar> dz = (d_output.array() * (Scalar(1) - cache.output.array().square())).matrix();
  grad.dense_weights.noalias() += dz * cache.pooled.transpose();
  grad.dense_bias += dz;
  const VectorX<Scalar> d_pooled = params.dense_weights.transpose() * dz;
  for (std::size_t ki = 0; ki < config.kernel_sizes.size(); ++ki) {
    const auto width = config.kernel_sizes[ki];
    auto& gw = grad.conv_weights[ki];
    auto& gb = grad.conv_biases[ki];
    for (Eigen::Index f = 0; f < filters; ++f) {
      if (!(cache.pooled_pre[ki][f] > Scalar(0))) continue;  // rectifier inactive
      const Scalar g = d_pooled[static_cast<Eigen::Index>(ki) * filters + f];
      gb[f] += g;
      const auto start = static_cast<std::size_t>(cache.argmax[ki][static_cast<std::size_t>(f)]);
      for (std::size_t o = 0; o < width && start + o < len; ++o) {
        const int tok = trace[start + o];
        if (tok >= 0 && static_cast<std::size_t>(tok) < config.vocab_size) {
          gw(f, static_cast<Eigen::Index>(o * config.vocab_size + static_cast<std::size_t>(tok))) += g;
        }
      }
    }
  }
}

std::vector<std::size_t> canonical_pair_order(const PairBatch& batch) {
  std::vector<std::size_t> order(batch.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    auto key = [&](std::size_t i) {
      auto [a, b] = batch.pairs[i];
      return std::make_tuple(std::min(a, b), std::max(a, b), batch.targets[i]);
    };
    return key(x) < key(y);
  });
  return order;
}

}  // namespace

template <typename Scalar>
LossTerms<Scalar> loss_terms(const EncoderParams<Scalar>& params, const EncoderConfig& config,
                             const LossConfig& loss_config, const PairBatch& batch, EncoderParams<Scalar>* gradient) {
  if (batch.pairs.empty()) throw EmptyBatch("batch has no pairs");
  if (batch.targets.size() != batch.pairs.size()) throw ShapeMismatch("targets and pairs differ in length");
  params.check_shape(config);

  const std::size_t M = config.M;
  const std::size_t b = config.b;
  const auto code_len = static_cast<Eigen::Index>(M * b);
  const auto n = static_cast<Eigen::Index>(batch.traces.size());
  const Scalar num_pairs = static_cast<Scalar>(batch.pairs.size());
  const Scalar mb = static_cast<Scalar>(M * b);

  MatrixX<Scalar> H(code_len, n);
  std::vector<ForwardCache<Scalar>> caches(gradient ? batch.traces.size() : 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& trace = batch.traces[static_cast<std::size_t>(i)];
    H.col(i) = forward(params, config, trace, gradient ? &caches[static_cast<std::size_t>(i)] : nullptr);
  }
  MatrixX<Scalar> dH;
  if (gradient) dH = MatrixX<Scalar>::Zero(code_len, n);

  LossTerms<Scalar> terms;

  // Fidelity: squared gap between gHam and the target similarity.
  Scalar fidelity(0);
  for (auto idx : canonical_pair_order(batch)) {
    const auto [i, j] = batch.pairs[idx];
    if (i >= batch.traces.size() || j >= batch.traces.size() || i == j) throw ShapeMismatch("bad pair index");
    const auto ci = static_cast<Eigen::Index>(i);
    const auto cj = static_cast<Eigen::Index>(j);
    const Scalar ham = approx_generalized_hamming(H.col(ci), H.col(cj), M, b);
    const Scalar residual = ham - static_cast<Scalar>(batch.targets[idx]);
    fidelity += residual * residual;
    if (gradient) {
      const Scalar scale = Scalar(2) * residual / num_pairs / (Scalar(2) * static_cast<Scalar>(M));
      for (std::size_t k = 0; k < M; ++k) {
        Eigen::Index best = static_cast<Eigen::Index>(k * b);
        Scalar best_abs(-1);
        for (std::size_t l = 0; l < b; ++l) {
          const auto r = static_cast<Eigen::Index>(k * b + l);
          const Scalar d = std::abs(H(r, ci) - H(r, cj));
          if (d > best_abs) {
            best_abs = d;
            best = r;
          }
        }
        const Scalar diff = H(best, ci) - H(best, cj);
        if (diff == Scalar(0)) continue;
        const Scalar sign = diff > Scalar(0) ? Scalar(1) : Scalar(-1);
        // d gHam / d u = -sign / 2M at the Chebyshev coordinate.
        dH(best, ci) -= scale * sign;
        dH(best, cj) += scale * sign;
      }
    }
  }
  terms.fidelity = fidelity / num_pairs;

  if (loss_config.lambda1 > 0) {
    const Scalar lambda1 = static_cast<Scalar>(loss_config.lambda1);
    MatrixX<Scalar> gram = (H.transpose() * H) / mb;
    gram.diagonal().array() -= Scalar(1);
    terms.binarization = lambda1 / Scalar(2) * gram.squaredNorm();
    if (gradient) dH.noalias() += (Scalar(2) * lambda1 / mb) * (H * gram);
  }

  if (loss_config.lambda2 > 0) {
    const Scalar lambda2 = static_cast<Scalar>(loss_config.lambda2);
    const VectorX<Scalar> means = H.colwise().sum().transpose() / mb;
    terms.balance = lambda2 / num_pairs * means.squaredNorm();
    if (gradient) {
      for (Eigen::Index i = 0; i < n; ++i) dH.col(i).array() += Scalar(2) * lambda2 / num_pairs * means[i] / mb;
    }
  }

  if (loss_config.lambda3 > 0) terms.decay = static_cast<Scalar>(loss_config.lambda3) * params.squared_norm();

  if (gradient) {
    *gradient = EncoderParams<Scalar>::zeros(config);
    for (Eigen::Index i = 0; i < n; ++i) {
      const VectorX<Scalar> d_out = dH.col(i);
      backward(params, config, batch.traces[static_cast<std::size_t>(i)], caches[static_cast<std::size_t>(i)], d_out,
               *gradient);
    }
    if (loss_config.lambda3 > 0) {
      const Scalar two_lambda3 = Scalar(2) * static_cast<Scalar>(loss_config.lambda3);
      for (std::size_t i = 0; i < params.conv_weights.size(); ++i) {
        gradient->conv_weights[i] += two_lambda3 * params.conv_weights[i];
        gradient->conv_biases[i] += two_lambda3 * params.conv_biases[i];
      }
      gradient->dense_weights += two_lambda3 * params.dense_weights;
      gradient->dense_bias += two_lambda3 * params.dense_bias;
    }
  }
  return terms;
}

double tie_margin(const EncoderParams<double>& params, const EncoderConfig& config, const PairBatch& batch) {
  double margin = std::numeric_limits<double>::infinity();
  const auto filters = static_cast<Eigen::Index>(config.filters_per_size);
  std::vector<VectorX<double>> outputs;
  VectorX<double> act;
  for (const auto& trace : batch.traces) {
    const std::size_t len = std::min(trace.size(), config.max_len);
    for (std::size_t ki = 0; ki < config.kernel_sizes.size(); ++ki) {
      const auto width = config.kernel_sizes[ki];
      std::vector<std::vector<double>> values(static_cast<std::size_t>(filters));
      for (std::size_t p = 0; p <= last_window(len, width, config.max_len); ++p) {
        window_activation(params.conv_weights[ki], params.conv_biases[ki], std::span<const int>(trace), len, p, width,
                          config.vocab_size, act);
        for (Eigen::Index f = 0; f < filters; ++f) values[static_cast<std::size_t>(f)].push_back(act[f]);
      }
      for (auto& v : values) {
        std::sort(v.begin(), v.end(), std::greater<>());
        margin = std::min(margin, std::abs(v.front()));
        // Exactly equal activations come from identical windows and move together.
        for (std::size_t k = 1; k < v.size(); ++k) {
          if (v[k] != v.front()) {
            margin = std::min(margin, v.front() - v[k]);
            break;
          }
        }
      }
    }
    outputs.push_back(forward(params, config, trace));
  }
  for (const auto& [i, j] : batch.pairs) {
    for (std::size_t k = 0; k < config.M; ++k) {
      std::vector<double> d;
      for (std::size_t l = 0; l < config.b; ++l) {
        const auto r = static_cast<Eigen::Index>(k * config.b + l);
        d.push_back(std::abs(outputs[i][r] - outputs[j][r]));
      }
      std::sort(d.begin(), d.end(), std::greater<>());
      margin = std::min(margin, d.front());
      if (d.size() > 1) margin = std::min(margin, d[0] - d[1]);
    }
  }
  return margin;
}

// --- training -----------------------------------------------------------------

PairBatch PairSet::batch(std::span<const std::size_t> selection) const {
  std::vector<std::size_t> used;
  used.reserve(selection.size() * 2);
  for (auto s : selection) {
    used.push_back(pairs.at(s).first);
    used.push_back(pairs.at(s).second);
  }
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());
  auto local = [&used](std::size_t global) {
    return static_cast<std::size_t>(std::lower_bound(used.begin(), used.end(), global) - used.begin());
  };
  PairBatch out;
  out.traces.reserve(used.size());
  for (auto g : used) out.traces.push_back(traces[g]);
  out.pairs.reserve(selection.size());
  out.targets.reserve(selection.size());
  for (auto s : selection) {
    out.pairs.emplace_back(local(pairs[s].first), local(pairs[s].second));
    out.targets.push_back(targets[s]);
  }
  return out;
}

PairBatch PairSet::all() const {
  PairBatch out;
  out.traces = traces;
  out.pairs = pairs;
  out.targets = targets;
  return out;
}

PairSet make_pair_set(std::span<const CrashReport> reports, MeasureId measure, const CorpusStats& stats,
                      const MeasureParams& measure_params, std::size_t max_len, std::size_t max_pairs,
                      std::uint64_t seed) {
  if (reports.size() < 2) throw InsufficientCorpus("need at least two traces to form pairs");
  PairSet set;
  std::vector<PreparedTrace> prepared;
  prepared.reserve(reports.size());
  for (const auto& r : reports) {
    set.traces.push_back(encode_trace(r.trace, stats, max_len));
    prepared.push_back(prepare(r.trace));
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    for (std::size_t j = i + 1; j < reports.size(); ++j) set.pairs.emplace_back(i, j);
  }
  if (max_pairs > 0 && max_pairs < set.pairs.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(set.pairs.begin(), set.pairs.end(), rng);
    set.pairs.resize(max_pairs);
    std::sort(set.pairs.begin(), set.pairs.end());
  }
  set.targets.reserve(set.pairs.size());
  for (const auto& [i, j] : set.pairs) {
    set.targets.push_back(similarity(measure, prepared[i], prepared[j], stats, measure_params));
  }
  return set;
}

TrainResult train(const EncoderConfig& config, const LossConfig& loss_config, const TrainConfig& train_config,
                  const PairSet& training, const PairSet* validation,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  loss_config.validate();
  train_config.validate();
  TrainResult result{EncoderParams<double>::glorot(config, train_config.seed), {}};
  if (train_config.epochs == 0) return result;
  if (training.pairs.empty()) throw InsufficientCorpus("no training pairs");

  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEpsilon = 1e-8;
  VectorX<double> theta = result.params.flatten();
  VectorX<double> m1 = VectorX<double>::Zero(theta.size());
  VectorX<double> m2 = VectorX<double>::Zero(theta.size());
  std::size_t step = 0;
  double rate = train_config.learning_rate;
  double best = std::numeric_limits<double>::infinity();
  const PairBatch validation_batch = validation && !validation->pairs.empty() ? validation->all() : PairBatch{};

  std::vector<std::size_t> order(training.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    std::mt19937_64 rng(train_config.seed ^ (0x9e3779b97f4a7c15ULL * epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double weighted_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += train_config.batch_size) {
      const auto count = std::min(train_config.batch_size, order.size() - start);
      const PairBatch batch = training.batch(std::span<const std::size_t>(order).subspan(start, count));
      EncoderParams<double> grad;
      const auto terms = loss_terms(result.params, config, loss_config, batch, &grad);
      weighted_loss += terms.total() * static_cast<double>(count);

      ++step;
      const VectorX<double> g = grad.flatten();
      m1 = kBeta1 * m1 + (1.0 - kBeta1) * g;
      m2 = kBeta2 * m2 + (1.0 - kBeta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      theta.array() -= rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + kEpsilon);
      result.params.assign(theta);
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = weighted_loss / static_cast<double>(order.size());
    log.learning_rate = rate;
    log.validation_loss = validation_batch.pairs.empty()
                              ? std::numeric_limits<double>::quiet_NaN()
                              : loss(result.params, config, loss_config, validation_batch);
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);

    const double monitored = validation_batch.pairs.empty() ? log.train_loss : log.validation_loss;
    if (monitored < best) {
      best = monitored;
    } else {
      rate *= train_config.plateau_factor;
    }
  }
  if (!result.params.all_finite()) throw InsufficientCorpus("training diverged to non-finite weights");
  return result;
}

// --- persistence ------------------------------------------------------------------

namespace {

json config_to_json(const EncoderConfig& c) {
  return {{"kernel_sizes", c.kernel_sizes}, {"filters_per_size", c.filters_per_size}, {"max_len", c.max_len},
          {"vocab_size", c.vocab_size},     {"M", c.M},                                {"b", c.b}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.kernel_sizes = j.at("kernel_sizes").get<std::vector<std::size_t>>();
  c.filters_per_size = j.at("filters_per_size").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.M = j.at("M").get<std::size_t>();
  c.b = j.at("b").get<std::size_t>();
  return c;
}

}  // namespace

// Layout: "DLSHM1\n", u32 header length, JSON header, then num_parameters little-endian
// float64 values in EncoderParams::flatten order.
std::string DeepLshModel::serialize() const {
  config.validate();
  params.check_shape(config);
  if (vocabulary.size() != config.vocab_size) throw ShapeMismatch("vocabulary size differs from config");
  json header = {{"format", kModelFormatTag},
                 {"config", config_to_json(config)},
                 {"seed", seed},
                 {"measure", measure},
                 {"vocabulary", vocabulary},
                 {"num_parameters", params.num_parameters()}};
  const std::string text = header.dump();
  std::string out(kModelFormatTag);
  out += '\n';
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  out += text;
  const VectorX<double> flat = params.flatten();
  static_assert(sizeof(double) == 8);
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &flat[i], 8);
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
  }
  return out;
}

DeepLshModel DeepLshModel::deserialize(std::string_view bytes) {
  const std::string tag = std::string(kModelFormatTag) + '\n';
  if (bytes.substr(0, tag.size()) != tag || bytes.size() < tag.size() + 4) throw FormatError("not a DLSHM1 model file");
  std::uint32_t len = 0;
  for (int i = 3; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[tag.size() + static_cast<std::size_t>(i)]);
  const std::size_t header_start = tag.size() + 4;
  if (bytes.size() < header_start + len) throw FormatError("model header truncated");
  DeepLshModel model;
  std::size_t num_parameters = 0;
  try {
    const auto header = json::parse(bytes.substr(header_start, len));
    model.config = config_from_json(header.at("config"));
    model.seed = header.at("seed").get<std::uint64_t>();
    model.measure = header.at("measure").get<std::string>();
    model.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
    num_parameters = header.at("num_parameters").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("model header: ") + e.what());
  }
  try {
    model.params = EncoderParams<double>::zeros(model.config);
  } catch (const ShapeMismatch& e) {
    throw FormatError(e.what());
  }
  if (model.params.num_parameters() != num_parameters) throw FormatError("parameter count mismatch");
  const auto body = bytes.substr(header_start + len);
  if (body.size() != num_parameters * 8) throw FormatError("model weights truncated");
  VectorX<double> flat(static_cast<Eigen::Index>(num_parameters));
  for (std::size_t i = 0; i < num_parameters; ++i) {
    std::uint64_t bits = 0;
    for (int k = 7; k >= 0; --k) bits = (bits << 8) | static_cast<unsigned char>(body[i * 8 + static_cast<std::size_t>(k)]);
    std::memcpy(&flat[static_cast<Eigen::Index>(i)], &bits, 8);
  }
  model.params.assign(flat);
  if (model.vocabulary.size() != model.config.vocab_size) throw FormatError("vocabulary size mismatch");
  return model;
}

void DeepLshModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write model file " + path.string());
  const auto bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

DeepLshModel DeepLshModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return deserialize(buffer.str());
}

std::string DeepLshModel::digest() const { return digest_hex(serialize()); }

DeepLshFamily::DeepLshFamily(DeepLshModel model) : model_(std::move(model)) {
  model_.config.validate();
  model_.params.check_shape(model_.config);
  for (std::size_t i = 0; i < model_.vocabulary.size(); ++i) lookup_.emplace(model_.vocabulary[i], static_cast<int>(i));
  fingerprint_ = model_.digest();
}

EncodedTrace DeepLshFamily::encode(const StackTrace& trace) const {
  EncodedTrace out;
  const auto len = std::min(trace.frames.size(), model_.config.max_len);
  out.reserve(len);
  for (std::size_t i = 0; i < len; ++i) {
    auto it = lookup_.find(normalize_frame(trace.frames[i], FrameGranularity::Method));
    out.push_back(it == lookup_.end() ? -1 : it->second);
  }
  return out;
}

VectorX<double> DeepLshFamily::continuous(const StackTrace& trace) const {
  return forward(model_.params, model_.config, encode(trace));
}

HashCode DeepLshFamily::hash(const StackTrace& trace) const {
  return binarize(continuous(trace), model_.config.M, model_.config.b);
}

std::string DeepLshFamily::spec_json() const {
  return json{{"type", "deep"}, {"seed", model_.seed}, {"M", model_.config.M}, {"b", model_.config.b},
              {"measure", model_.measure}, {"model_digest", fingerprint_}}
      .dump();
}

DeepLshFamily as_hash_family(DeepLshModel model) { return DeepLshFamily(std::move(model)); }

template struct EncoderParams<double>;
template struct EncoderParams<float>;
template EncoderParams<float> EncoderParams<double>::cast<float>() const;
template EncoderParams<double> EncoderParams<float>::cast<double>() const;
template VectorX<double> forward(const EncoderParams<double>&, const EncoderConfig&, std::span<const int>,
                                 ForwardCache<double>*);
template VectorX<float> forward(const EncoderParams<float>&, const EncoderConfig&, std::span<const int>,
                                ForwardCache<float>*);
template LossTerms<double> loss_terms(const EncoderParams<double>&, const EncoderConfig&, const LossConfig&,
                                     const PairBatch&, EncoderParams<double>*);
template LossTerms<float> loss_terms(const EncoderParams<float>&, const EncoderConfig&, const LossConfig&,
                                    const PairBatch&, EncoderParams<float>*);

}  // namespace dlsh
