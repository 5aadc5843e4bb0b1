// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "treecell/network.hpp"
#include "treecell/rng.hpp"

namespace treecell {

constexpr int kPrefixEpochs = 10;

using CurvePrefix = std::array<double, kPrefixEpochs>;

/// Validation metric for epochs 1..10 and the metric at the final epoch.
struct CurveSample {
    CurvePrefix prefix{};
    double target = 0.0;
};

struct MetaConfig {
    int layers = 2;
    int units = 40;
    std::array<int, 2> decoder_lengths{30, 1};
    double learning_rate = 0.003; // Adam
    int batch_size = 32;
    int max_epochs = 300;
    int patience = 40;
    double valid_fraction = 0.2;
    double init_scale = 0.3;
    double forget_bias = 1.0; // initial bias of the forget-gate input x1
    double grad_clip_norm = 10.0;
    uint64_t seed = 1;
};

class InsufficientData : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// One encoder-decoder pair of LSTM-cell stacks. The encoder reads
/// log(v_e / v_10) for e = 1..10; the decoder starts from the encoder state,
/// runs `decoder_length` steps on zero input, and a linear head on its last
/// top-layer output gives y with prediction v_10 * exp(y).
struct MetaMember {
    int decoder_length = 1;
    std::vector<LayerParams<double>> encoder;
    std::vector<LayerParams<double>> decoder;
    Matrix<double> head_w; // 1 x units
    Matrix<double> head_b; // 1 x 1
    int epochs_trained = 0;
    double best_valid_mae = 0.0;

    std::vector<Matrix<double>*> parameters();
    std::vector<const Matrix<double>*> parameters() const;
};

/// Mean |pred - target| / target of one member over `samples`, and its
/// gradient with respect to member.parameters() when `grads` is non-null.
double member_loss(const MetaMember& member, const std::vector<const CurveSample*>& samples,
                   std::vector<Matrix<double>>* grads = nullptr);

class MetaModel {
public:
    MetaModel() = default;
    MetaModel(MetaConfig config, std::vector<MetaMember> members);

    bool trained() const { return !members_.empty(); }
    const MetaConfig& config() const { return config_; }
    const std::vector<MetaMember>& members() const { return members_; }

    /// Mean of the member predictions. Throws std::logic_error if untrained.
    double predict(const CurvePrefix& prefix) const;
    std::vector<double> member_predictions(const CurvePrefix& prefix) const;

    /// Self-describing JSON text with a format tag and version.
    std::string serialize() const;
    static MetaModel deserialize(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static MetaModel load(const std::filesystem::path& path);

private:
    MetaConfig config_;
    std::vector<MetaMember> members_;
};

/// Trains both members with Adam on mean |pred - target| / target, holding
/// out valid_fraction of the samples for early stopping. Throws
/// InsufficientData below 100 samples and std::invalid_argument on
/// non-positive values.
MetaModel train_meta(const std::vector<CurveSample>& samples, const MetaConfig& config = {});

double predict_final(const MetaModel& model, const CurvePrefix& prefix);

/// Naive fitness: the epoch-10 value.
double baseline_epoch10(const CurvePrefix& prefix);

/// Mean of |p - t| / t, as a percentage.
double mae_percent(const std::vector<double>& predictions, const std::vector<double>& targets);

/// Kendall tau-a: (concordant - discordant) / number of pairs; tied pairs
/// count as neither.
double kendall_tau(const std::vector<double>& a, const std::vector<double>& b);

struct CurveFamily {
    int final_epoch = 40;
    double level_min = 60.0;   // asymptote a
    double level_max = 160.0;
    double gap_min = 20.0;     // initial excess b
    double gap_max = 400.0;
    double rate_min = 0.02;    // decay rate lambda
    double rate_max = 0.6;
    double noise = 0.005;      // relative, per epoch
};

/// v(e) = (a + b exp(-lambda e)) (1 + noise * N(0, 1)); slow-decaying curves
/// with a large gap overtake fast ones after epoch 10.
std::vector<CurveSample> synthetic_curves(int count, uint64_t seed, const CurveFamily& family = {});

/// Full curve for epochs 1..family.final_epoch.
std::vector<double> synthetic_curve(double level, double gap, double rate, Rng& rng, const CurveFamily& family);

/// 11 columns per row: ten prefix values then the target. A header row is
/// written and skipped on read when its first field is not numeric.
std::vector<CurveSample> read_curve_csv(const std::filesystem::path& path);
void write_curve_samples(const std::filesystem::path& path, const std::vector<CurveSample>& samples);

} // namespace treecell
