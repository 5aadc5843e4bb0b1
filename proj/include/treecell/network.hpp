// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "treecell/cell.hpp"
#include "treecell/data.hpp"
#include "treecell/node_tree.hpp"

namespace treecell {

enum class HeadKind : uint8_t { Softmax, Sigmoid };

/// `cardinality` consecutive units of a layer all run the cell compiled
/// from trees[tree].
struct SlotSpec {
    int tree = 0;
    int cardinality = 0;
};

struct LayerSpec {
    int width = 0;
    std::vector<SlotSpec> slots;
};

struct NetworkSpec {
    std::vector<LayerSpec> layers;
    int embedding_dim = 0; // softmax head only; music feeds frames directly
    int io_dim = 0;
    HeadKind head = HeadKind::Softmax;
};

constexpr int kDefaultCardinality = 20;

/// Every layer is one slot of trees[0] spanning the full width.
NetworkSpec homogeneous_spec(const TaskData& data, int layers, int width, int embedding_dim);

/// Slot i of `node_types` slots runs trees[i] with `cardinality` units.
LayerSpec heterogeneous_layer(int node_types, int cardinality = kDefaultCardinality);

/// Throws std::invalid_argument when slot cardinalities do not sum to the
/// layer width or a slot names a missing tree.
void check_spec(const NetworkSpec& spec, size_t tree_count);

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
struct LayerParams {
    int width = 0;
    int input_dim = 0;
    Matrix<T> w; // 8 * width x input_dim, base input k of unit j is row k * width + j
    Matrix<T> u; // 8 * width x width
    Matrix<T> b; // 8 * width x 1
};

struct Slot {
    int first_unit = 0;
    int units = 0;
    int tree = 0;
    CompiledCell cell;
};

/// Recurrent network whose units run compiled tree cells. Cell edges carry
/// no weights; every trainable value sits in the embedding, the base-input
/// projections of each layer, and the output head.
template <typename T>
class Network {
public:
    struct State {
        std::vector<Matrix<T>> h, c, d; // per layer, width x batch
    };

    Network(NetworkSpec spec, std::vector<CompiledCell> cells);

    const NetworkSpec& spec() const { return spec_; }
    const std::vector<std::vector<Slot>>& slots() const { return slots_; }
    int input_dim() const;
    int output_dim() const { return spec_.io_dim; }

    /// Uniform in [-scale, scale]; biases start at zero.
    void initialize(uint64_t seed, double scale);

    std::vector<Matrix<T>*> parameters();
    std::vector<const Matrix<T>*> parameters() const;
    size_t parameter_count() const;

    State zero_state(int batch) const;

    Matrix<T> embedding; // embedding_dim x io_dim
    std::vector<LayerParams<T>> layers;
    Matrix<T> head_w; // io_dim x top width
    Matrix<T> head_b; // io_dim x 1

private:
    NetworkSpec spec_;
    std::vector<std::vector<Slot>> slots_;
};

/// Compiles every tree (InvalidTreeError on failure) and lays out the slots.
template <typename T>
Network<T> build_network(const NetworkSpec& spec, const std::vector<NodeTree>& trees, const TreeLimits& limits = {});

/// Closed-form count for a standard LSTM stack with the same shapes.
size_t lstm_parameter_count(const NetworkSpec& spec);

enum class Optimizer : uint8_t { Sgd, Adam };

struct TrainConfig {
    int unroll_steps = 35;
    double dropout_ff = 0.4;
    double dropout_rec = 0.15;
    double l2 = 1e-4;
    Optimizer optimizer = Optimizer::Sgd;
    double learning_rate = 1.0;
    double lr_decay = 0.9; // per epoch once past decay_after, SGD only
    int decay_after = 6;
    double grad_clip_norm = 10.0;
    int epochs = 10;
    int batch_size = 20;
    int eval_batch = 10;
    double init_scale = 0.1;
    uint64_t seed = 1;
};

/// Throws std::invalid_argument naming the first bad field.
void check_train_config(const TrainConfig& config);

enum class MetricKind : uint8_t { Perplexity, F1 };

struct EpochRecord {
    int epoch = 0;
    double metric = 0.0;
    double seconds = 0.0;
};

struct TrainingCurve {
    MetricKind metric = MetricKind::Perplexity;
    std::vector<EpochRecord> epochs;

    std::vector<double> values() const;
    double last() const { return epochs.back().metric; }
};

MetricKind metric_for(const TaskData& data);

/// Lower is better: perplexity as is, 1 - F1 for music.
double fitness_from_metric(MetricKind kind, double metric);

/// CSV with header "epoch,metric,seconds".
void write_curve_csv(std::ostream& out, const TrainingCurve& curve, bool with_seconds = true);

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(int epoch, int batch, double loss);
    int epoch() const { return epoch_; }
    int batch() const { return batch_; }

private:
    int epoch_;
    int batch_;
};

struct StepInfo {
    int epoch = 0;
    int batch = 0;
    double loss = 0.0;
    double grad_norm = 0.0;    // before clipping
    double clipped_norm = 0.0; // after clipping
};

using StepObserver = std::function<void(const StepInfo&)>;

/// Truncated BPTT with hidden state carried between minibatches. Returns the
/// validation metric after every epoch. Throws TrainingDiverged on a
/// non-finite loss.
template <typename T>
TrainingCurve train(Network<T>& net, const TaskData& data, const TrainConfig& config, const StepObserver& observer = {});

/// exp(mean next-token cross-entropy) over the split, no dropout.
template <typename T>
double eval_perplexity(const Network<T>& net, const TaskData& data, SplitId split, int eval_batch = 10);

/// Micro-averaged frame-level F1 of thresholded sigmoid outputs.
template <typename T>
double eval_f1(const Network<T>& net, const TaskData& data, SplitId split, double threshold = 0.5, int eval_batch = 10);

/// Mean training objective (cross-entropy per token, or summed per-pitch
/// binary cross-entropy per step) with no dropout.
template <typename T>
double eval_loss(const Network<T>& net, const TaskData& data, SplitId split, int eval_batch = 10);

template <typename T>
double eval_metric(const Network<T>& net, const TaskData& data, SplitId split, int eval_batch = 10);

/// Log-probability of every target, one stream from a zero state.
template <typename T>
std::vector<double> token_log_probs(const Network<T>& net, const TokenSplit& split);

/// Output logits for one stream (io_dim x tokens.size()), continuing from
/// and updating `state` (batch 1).
template <typename T>
Matrix<T> run_tokens(const Network<T>& net, std::span<const int> tokens, typename Network<T>::State& state);

/// F1 from raw counts; 1 when there is nothing to find and nothing found.
double f1_score(long long tp, long long fp, long long fn);

enum class Precision : uint8_t { F32, F64 };

Precision parse_precision(const std::string& text);

struct TrainResult {
    TrainingCurve curve;
    size_t parameters = 0;
    double test_metric = 0.0; // only when requested
};

/// Builds, initializes and trains in the requested precision.
TrainResult train_trees(const NetworkSpec& spec, const std::vector<NodeTree>& trees, const TaskData& data,
                        const TrainConfig& config, Precision precision, bool evaluate_test = false,
                        const StepObserver& observer = {});

/// Greedy max-min diversity: candidates are the best `top_fraction` of
/// genomes by fitness (never fewer than pool_size); start from the best and
/// repeatedly add the candidate farthest from everything selected. Returns
/// indices into `genomes`. Throws std::invalid_argument on too few genomes.
std::vector<int> select_diverse_indices(const std::vector<NodeTree>& genomes, const std::vector<double>& fitnesses,
                                        int pool_size = 20, double top_fraction = 0.1);

std::vector<NodeTree> select_diverse_pool(const std::vector<NodeTree>& genomes, const std::vector<double>& fitnesses,
                                          int pool_size = 20, double top_fraction = 0.1);

} // namespace treecell
