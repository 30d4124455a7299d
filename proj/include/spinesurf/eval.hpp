#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "spinesurf/common.hpp"
#include "spinesurf/net.hpp"
#include "spinesurf/pipeline.hpp"

namespace spinesurf {

// ---------------------------------------------------------------------------
// Weighted (soft) Dice score. Shares its epsilon placement with w_dice_loss so
// score + loss == 1 exactly.
// ---------------------------------------------------------------------------
inline double weighted_dice_score(const double* p, const double* g, const std::uint8_t* mask,
                                  std::size_t n) {
    constexpr double eps = 1e-6;
    double pg = 0.0, pp = 0.0, ggs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (mask && !mask[i]) continue;
        pg += p[i] * g[i];
        pp += p[i] * p[i];
        ggs += g[i] * g[i];
    }
    return (2.0 * pg + eps) / (pp + ggs + eps);
}

inline double weighted_dice_score(const std::vector<double>& p, const std::vector<double>& g) {
    if (p.size() != g.size()) throw DomainError("weighted_dice_score: dimension mismatch");
    return weighted_dice_score(p.data(), g.data(), nullptr, p.size());
}

inline double weighted_dice_score(const PolarImage& p, const PolarImage& g) {
    if (!(p.geometry == g.geometry)) throw DomainError("weighted_dice_score: dimension mismatch");
    return weighted_dice_score(p.data, g.data);
}

inline double weighted_dice_score(const Tensor& p, const Tensor& g) {
    if (!p.same_shape(g)) throw DomainError("weighted_dice_score: dimension mismatch");
    return weighted_dice_score(p.v, g.v);
}

/// Score restricted to in-sector pixels (single-channel tensors).
inline double weighted_dice_score_masked(const Tensor& p, const Tensor& g,
                                         const std::vector<std::uint8_t>& mask) {
    if (!p.same_shape(g)) throw DomainError("weighted_dice_score: dimension mismatch");
    if (mask.size() != p.v.size()) throw DomainError("weighted_dice_score: mask size mismatch");
    return weighted_dice_score(p.v.data(), g.v.data(), mask.data(), p.v.size());
}

/// Fraction of surface-bearing rays whose per-ray feature argmax lands within
/// `tol_samples` of the label argmax. A ray counts as surface-bearing when its
/// label column peaks at >= 0.5.
inline double localization_rate(const PolarImage& feature, const PolarImage& label,
                                int tol_samples = 2) {
    if (!(feature.geometry == label.geometry))
        throw DomainError("localization_rate: lattice mismatch");
    const ImageGeometry& geo = feature.geometry;
    int considered = 0, hit = 0;
    for (int k = 0; k < geo.n_rays; ++k) {
        int label_arg = 0, feat_arg = 0;
        double label_max = -1.0, feat_max = -1.0;
        for (int s = 0; s < geo.n_samples; ++s) {
            if (label.at(k, s) > label_max) {
                label_max = label.at(k, s);
                label_arg = s;
            }
            if (feature.at(k, s) > feat_max) {
                feat_max = feature.at(k, s);
                feat_arg = s;
            }
        }
        if (label_max < 0.5) continue;
        ++considered;
        if (std::abs(feat_arg - label_arg) <= tol_samples) ++hit;
    }
    return considered > 0 ? static_cast<double>(hit) / considered : 0.0;
}

// ---------------------------------------------------------------------------
// Ablation harness.
// ---------------------------------------------------------------------------
enum class NetworkKind { rnn, cnn };
enum class ResetKind { fixed_length, align_with_scan, none };
enum class TestSplit { unseen_image, unseen_anatomy };
enum class InputChannels { bmode_plus_feature, bmode_only };

inline std::string to_string(LossKind k) { return k == LossKind::w_dice ? "w_dice" : "w_ce"; }
inline std::string to_string(NetworkKind k) { return k == NetworkKind::rnn ? "rnn" : "cnn"; }
inline std::string to_string(TestSplit s) {
    return s == TestSplit::unseen_image ? "unseen_image" : "unseen_anatomy";
}
inline std::string to_string(InputChannels c) {
    return c == InputChannels::bmode_plus_feature ? "bmode_plus_feature" : "bmode_only";
}

struct ExperimentConfig {
    std::string experiment_id;
    LossKind loss = LossKind::w_dice;
    NetworkKind network = NetworkKind::rnn;
    ResetKind reset = ResetKind::fixed_length;
    int reset_k = 0;  // 0 = default: frames-per-sweep rounded to a power of two
    TestSplit test_split = TestSplit::unseen_image;
    InputChannels input_channels = InputChannels::bmode_plus_feature;

    void validate() const {
        if (experiment_id.empty()) throw DomainError("experiment: empty id");
        if (network == NetworkKind::cnn && reset != ResetKind::none)
            throw DomainError("experiment " + experiment_id + ": cnn requires reset=none");
        if (network == NetworkKind::rnn && reset == ResetKind::none)
            throw DomainError("experiment " + experiment_id + ": rnn requires a reset policy");
        if (reset == ResetKind::fixed_length && reset_k < 0)
            throw DomainError("experiment " + experiment_id + ": reset_k must be >= 0");
    }
    std::string reset_string(int resolved_k) const {
        switch (reset) {
            case ResetKind::fixed_length:
                return "fixed_length(" + std::to_string(resolved_k) + ")";
            case ResetKind::align_with_scan:
                return "align_with_scan";
            default:
                return "none";
        }
    }
};

struct ExperimentResult {
    std::string experiment_id;
    double avg_dice = 0.0;
    std::vector<double> per_frame_dice;
    std::uint64_t seed = 0;
    double runtime_s = 0.0;
    bool failed = false;
    std::string error;
};

/// Power of two nearest to frames_per_sweep (ties round up), so the fixed
/// policy genuinely differs from sweep alignment on non-power-of-two sweeps.
inline int default_fixed_reset_k(int frames_per_sweep) {
    if (frames_per_sweep < 1) throw DomainError("default_fixed_reset_k: need >= 1");
    int best = 1;
    for (int p = 1; p <= (1 << 20); p <<= 1) {
        if (std::abs(p - frames_per_sweep) < std::abs(best - frames_per_sweep) ||
            (std::abs(p - frames_per_sweep) == std::abs(best - frames_per_sweep) && p > best))
            best = p;
        if (p >= 2 * frames_per_sweep) break;
    }
    return best;
}

struct AblationSettings {
    UNetSpec net;        // in_channels is overridden per experiment
    TrainConfig train;   // loss / reset / lambda overridden per experiment
    int frames_per_sweep = 1;
};

namespace detail {

inline const SamplePack& pick_test_pack(const BenchmarkData& data, const ExperimentConfig& cfg) {
    const bool two = cfg.input_channels == InputChannels::bmode_plus_feature;
    if (cfg.test_split == TestSplit::unseen_anatomy) {
        const SamplePack& p = two ? data.anatomy2 : data.anatomy1;
        if (p.inputs.empty())
            throw DomainError("experiment " + cfg.experiment_id +
                              ": unseen-anatomy test set not provided");
        return p;
    }
    return two ? data.test2 : data.test1;
}

}  // namespace detail

/// Trains and scores one experiment arm.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const BenchmarkData& data,
                                       const AblationSettings& settings) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentResult res;
    res.experiment_id = cfg.experiment_id;
    res.seed = settings.train.seed;

    const bool two = cfg.input_channels == InputChannels::bmode_plus_feature;
    const SamplePack& train_pack = two ? data.train2 : data.train1;
    const SamplePack& test_pack = detail::pick_test_pack(data, cfg);
    if (train_pack.inputs.empty()) throw DomainError("run_experiment: empty training pack");

    UNetSpec spec = settings.net;
    spec.in_channels = two ? 2 : 1;
    spec.use_convgru = cfg.network == NetworkKind::rnn;

    TrainConfig tc = settings.train;
    tc.loss = cfg.loss;
    const int k = cfg.reset_k > 0 ? cfg.reset_k : default_fixed_reset_k(settings.frames_per_sweep);
    switch (cfg.reset) {
        case ResetKind::fixed_length:
            tc.reset_policy = ResetPolicy::fixed(k);
            break;
        case ResetKind::align_with_scan:
            tc.reset_policy = ResetPolicy::align();
            break;
        case ResetKind::none:
            tc.reset_policy = ResetPolicy::fixed(1);  // stateless: no recurrence to carry
            break;
    }

    NetParams params = make_net_params(spec, tc.seed);
    train(params, tc, train_pack.train_samples());

    const std::vector<Tensor> preds =
        infer(params, test_pack.inputs, test_pack.sweep_ids, tc.reset_policy);
    for (std::size_t i = 0; i < preds.size(); ++i)
        res.per_frame_dice.push_back(
            weighted_dice_score_masked(preds[i], test_pack.labels[i], test_pack.mask));
    double acc = 0.0;
    for (double d : res.per_frame_dice) acc += d;
    res.avg_dice = res.per_frame_dice.empty() ? 0.0 : acc / res.per_frame_dice.size();
    res.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

inline const char* ablation_csv_header() {
    return "experiment_id,loss_type,network_type,reset_type,test_data,input_channel,avg_dice,"
           "runtime_s,seed";
}

inline std::string ablation_csv_row(const ExperimentConfig& cfg, const ExperimentResult& res,
                                    int resolved_k) {
    std::string row = cfg.experiment_id + "," + to_string(cfg.loss) + "," +
                      to_string(cfg.network) + "," + cfg.reset_string(resolved_k) + "," +
                      to_string(cfg.test_split) + "," + to_string(cfg.input_channels) + ",";
    row += res.failed ? "nan" : format_double(res.avg_dice);
    row += "," + format_double(res.runtime_s) + "," + std::to_string(res.seed);
    return row;
}

/// Runs the grid sequentially; a failing row is marked (avg_dice = nan) and
/// does not abort the remaining rows. Rows are written in grid order.
inline std::vector<ExperimentResult> run_ablation(const std::vector<ExperimentConfig>& grid,
                                                  const BenchmarkData& data,
                                                  const AblationSettings& settings,
                                                  const std::filesystem::path& csv_path) {
    if (grid.empty()) throw DomainError("run_ablation: empty grid");
    std::vector<ExperimentResult> results;
    std::ofstream csv(csv_path);
    if (!csv) throw DomainError("cannot open for writing: " + csv_path.string());
    csv << ablation_csv_header() << "\n";
    for (const ExperimentConfig& cfg : grid) {
        ExperimentResult res;
        try {
            res = run_experiment(cfg, data, settings);
        } catch (const std::exception& e) {
            res.experiment_id = cfg.experiment_id;
            res.seed = settings.train.seed;
            res.failed = true;
            res.error = e.what();
        }
        const int k =
            cfg.reset_k > 0 ? cfg.reset_k : default_fixed_reset_k(settings.frames_per_sweep);
        csv << ablation_csv_row(cfg, res, k) << "\n";
        results.push_back(std::move(res));
    }
    if (!csv) throw DomainError("write failed: " + csv_path.string());
    return results;
}

}  // namespace spinesurf
