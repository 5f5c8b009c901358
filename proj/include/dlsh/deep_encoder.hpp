#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dlsh/errors.hpp"
#include "dlsh/lsh_core.hpp"
#include "dlsh/similarity.hpp"
#include "dlsh/trace_model.hpp"

namespace dlsh {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Frame indices into the encoder vocabulary; -1 marks an out-of-vocabulary frame.
using EncodedTrace = std::vector<int>;

struct EncoderConfig {
  std::vector<std::size_t> kernel_sizes{2, 3, 4};
  std::size_t filters_per_size = 256;
  std::size_t max_len = kDefaultMaxFrames;
  std::size_t vocab_size = 0;
  std::size_t M = 64;
  std::size_t b = 8;

  std::size_t code_length() const { return M * b; }
  std::size_t pooled_size() const { return kernel_sizes.size() * filters_per_size; }
  void validate() const;  ///< throws ShapeMismatch
  bool operator==(const EncoderConfig&) const = default;
};

struct LossConfig {
  double lambda1 = 0.1;   ///< binarization / orthogonality
  double lambda2 = 0.1;   ///< bit balance
  double lambda3 = 1e-4;  ///< weight decay
  void validate() const;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  double plateau_factor = 0.5;  ///< step multiplier when validation loss stops improving
  std::uint64_t seed = 0;
  void validate() const;
};

/// Siamese branch weights. Convolution weights for a kernel of width w are stored as
/// filters x (w * vocab); column o * vocab + t holds the weight of token t at offset o.
template <typename Scalar>
struct EncoderParams {
  std::vector<MatrixX<Scalar>> conv_weights;
  std::vector<VectorX<Scalar>> conv_biases;
  MatrixX<Scalar> dense_weights;  ///< (M*b) x pooled
  VectorX<Scalar> dense_bias;

  static EncoderParams zeros(const EncoderConfig& config);
  /// Glorot-uniform weights, zero biases.
  static EncoderParams glorot(const EncoderConfig& config, std::uint64_t seed);

  std::size_t num_parameters() const;
  /// Parameters in declared order: per kernel (weights column-major, bias), then dense
  /// weights column-major and dense bias.
  VectorX<Scalar> flatten() const;
  void assign(const VectorX<Scalar>& flat);
  Scalar squared_norm() const;
  bool all_finite() const;
  void check_shape(const EncoderConfig& config) const;

  template <typename NewScalar>
  EncoderParams<NewScalar> cast() const;
};

template <typename Scalar>
struct ForwardCache {
  std::vector<std::vector<Eigen::Index>> argmax;  ///< per kernel, per filter: pooled position
  std::vector<VectorX<Scalar>> pooled_pre;        ///< per kernel: max pre-activation per filter
  VectorX<Scalar> pooled;
  VectorX<Scalar> output;
};

/// Row i is the one-hot of frame i; OOV frames and padding rows are zero.
MatrixX<double> encode_onehot(std::span<const int> trace, std::size_t vocab_size, std::size_t max_len);

/// Maps frames to vocabulary indices and truncates to max_len outermost-last.
EncodedTrace encode_trace(const StackTrace& trace, const CorpusStats& vocabulary, std::size_t max_len);

/// Convolution per kernel width, rectifier, 1-max pooling, dense map, tanh.
template <typename Scalar>
VectorX<Scalar> forward(const EncoderParams<Scalar>& params, const EncoderConfig& config, std::span<const int> trace,
                        ForwardCache<Scalar>* cache = nullptr);

/// 1 - sum_k max_l |u_kl - v_kl| / 2M over M blocks of b coordinates.
template <typename DerivedU, typename DerivedV>
typename DerivedU::Scalar approx_generalized_hamming(const Eigen::MatrixBase<DerivedU>& u,
                                                     const Eigen::MatrixBase<DerivedV>& v, std::size_t M,
                                                     std::size_t b) {
  using Scalar = typename DerivedU::Scalar;
  if (static_cast<std::size_t>(u.size()) != M * b || static_cast<std::size_t>(v.size()) != M * b || M == 0) {
    throw ShapeMismatch("generalized Hamming needs vectors of length M*b");
  }
  Scalar total(0);
  for (std::size_t k = 0; k < M; ++k) {
    const auto base = static_cast<Eigen::Index>(k * b);
    total += (u.segment(base, b) - v.segment(base, b)).cwiseAbs().maxCoeff();
  }
  const Scalar scale = Scalar(2) * static_cast<Scalar>(M);
  return (scale - total) / scale;
}

/// Sign thresholding; entries >= 0 become 1.
template <typename Derived>
HashCode binarize(const Eigen::MatrixBase<Derived>& continuous, std::size_t M, std::size_t b) {
  if (static_cast<std::size_t>(continuous.size()) != M * b) throw ShapeMismatch("binarize needs length M*b");
  HashCode code(M, b);
  for (std::size_t k = 0; k < M; ++k) {
    for (std::size_t l = 0; l < b; ++l) code.set_bit(k, l, continuous(static_cast<Eigen::Index>(k * b + l)) >= 0);
  }
  return code;
}

/// Pairs over a set of distinct traces. Indices refer to `traces`.
struct PairBatch {
  std::vector<EncodedTrace> traces;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<double> targets;
};

template <typename Scalar>
struct LossTerms {
  Scalar fidelity{0};
  Scalar binarization{0};
  Scalar balance{0};
  Scalar decay{0};
  Scalar total() const { return fidelity + binarization + balance + decay; }
};

/// Full objective: mean squared (gHam - target), (lambda1/2)||H^T H/(Mb) - I||^2 over the
/// batch's distinct traces, (lambda2/|pairs|)||H^T 1/(Mb)||^2, lambda3 ||theta||^2.
/// When `gradient` is non-null it receives d(total)/d(theta). Throws EmptyBatch.
template <typename Scalar>
LossTerms<Scalar> loss_terms(const EncoderParams<Scalar>& params, const EncoderConfig& config,
                             const LossConfig& loss_config, const PairBatch& batch,
                             EncoderParams<Scalar>* gradient = nullptr);

template <typename Scalar>
Scalar loss(const EncoderParams<Scalar>& params, const EncoderConfig& config, const LossConfig& loss_config,
            const PairBatch& batch) {
  return loss_terms(params, config, loss_config, batch).total();
}

template <typename Scalar>
EncoderParams<Scalar> gradients(const EncoderParams<Scalar>& params, const EncoderConfig& config,
                                const LossConfig& loss_config, const PairBatch& batch) {
  EncoderParams<Scalar> grad;
  loss_terms(params, config, loss_config, batch, &grad);
  return grad;
}

/// Smallest gap, over every max taken by the forward pass and the Chebyshev distances,
/// between the selected value and the runner-up (or the rectifier threshold). Used to keep
/// finite-difference probes away from non-differentiable points.
double tie_margin(const EncoderParams<double>& params, const EncoderConfig& config, const PairBatch& batch);

// --- training -------------------------------------------------------------------

/// All distinct pairs over a list of traces with their exact similarity targets.
struct PairSet {
  std::vector<EncodedTrace> traces;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<double> targets;

  /// Restriction to a subset of pair indices; traces keep their relative order.
  PairBatch batch(std::span<const std::size_t> selection) const;
  PairBatch all() const;
};

/// Every distinct pair when max_pairs is 0 or covers them all, else a seeded sample.
PairSet make_pair_set(std::span<const CrashReport> reports, MeasureId measure, const CorpusStats& stats,
                      const MeasureParams& measure_params, std::size_t max_len, std::size_t max_pairs = 0,
                      std::uint64_t seed = 0);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0;
  double validation_loss = 0;  ///< NaN without a validation set
  double learning_rate = 0;
};

struct TrainResult {
  EncoderParams<double> params;
  std::vector<EpochLog> history;
};

/// Adam on the full objective. Pair order is shuffled per (seed, epoch); the step is
/// multiplied by plateau_factor whenever the monitored loss fails to improve.
TrainResult train(const EncoderConfig& config, const LossConfig& loss_config, const TrainConfig& train_config,
                  const PairSet& training, const PairSet* validation = nullptr,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// --- model persistence and hash family -------------------------------------------

struct DeepLshModel {
  EncoderConfig config;
  EncoderParams<double> params;
  std::vector<std::string> vocabulary;  ///< method tokens in encoder index order
  std::uint64_t seed = 0;
  std::string measure;  ///< measure that produced the training targets

  std::string serialize() const;
  static DeepLshModel deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static DeepLshModel load(const std::filesystem::path& path);
  std::string digest() const;
};

inline constexpr std::string_view kModelFormatTag = "DLSHM1";

/// hash(trace) = binarize(forward(params, trace)); fingerprint = model digest.
class DeepLshFamily final : public HashFamily {
 public:
  explicit DeepLshFamily(DeepLshModel model);

  std::string_view kind() const override { return "deep"; }
  std::size_t num_functions() const override { return model_.config.M; }
  std::size_t bits_per_function() const override { return model_.config.b; }
  HashCode hash(const StackTrace& trace) const override;
  std::string fingerprint() const override { return fingerprint_; }
  std::string spec_json() const override;

  EncodedTrace encode(const StackTrace& trace) const;
  VectorX<double> continuous(const StackTrace& trace) const;
  const DeepLshModel& model() const { return model_; }

 private:
  DeepLshModel model_;
  std::unordered_map<std::string, int> lookup_;
  std::string fingerprint_;
};

DeepLshFamily as_hash_family(DeepLshModel model);

}  // namespace dlsh
