#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "douap/attack.hpp"
#include "douap/config.hpp"
#include "douap/io.hpp"
#include "douap/uap_io.hpp"

namespace douap {

enum class Modality { kBoth, kImageOnly, kTextOnly };
enum class TextMode { kProjected, kContinuous };

struct PerturbOptions {
  Modality modality = Modality::kBoth;
  TextMode text = TextMode::kProjected;
};

/// Unit embeddings of a corpus, (n, 32) each.
struct Embeddings {
  Tensor images;
  Tensor texts;
};

/// Key positions for `samples`: the cached ones if they cover the corpus,
/// otherwise freshly selected.
std::vector<std::size_t> key_positions_for(const DualEncoderParams& params, std::span<const PairSample> samples,
                                           const Uap& uap);

/// Clean embeddings when `uap` is null; otherwise both (or one) modality perturbed.
Embeddings embed_corpus(const DualEncoderParams& params, std::span<const PairSample> samples, const Uap* uap,
                        PerturbOptions options = {});

/// S[i, j] = <image_i, text_j>, the cosine of unit rows.
Tensor similarity(const Embeddings& e);

/// Per-query correctness at k. TR: row i of S, IR: column i. Ties go to the
/// lower index.
struct CorrectFlags {
  std::vector<bool> tr;
  std::vector<bool> ir;
};
CorrectFlags correct_at_k(const Tensor& sim, std::size_t k);

struct RecallRates {
  double tr = 0.0;
  double ir = 0.0;
};
RecallRates recall_from_flags(const CorrectFlags& flags);

struct AsrResult {
  std::optional<double> tr;
  std::optional<double> ir;
  std::size_t tr_denominator = 0;
  std::size_t ir_denominator = 0;
  std::size_t tr_flipped = 0;
  std::size_t ir_flipped = 0;

  /// Unweighted mean of the defined rates.
  std::optional<double> mean() const;
};
AsrResult asr_from_flags(const CorrectFlags& clean, const CorrectFlags& adversarial);

RecallRates recall_at_k(const DualEncoderParams& params, std::span<const PairSample> samples, const Uap* uap,
                        std::size_t k, PerturbOptions options = {});
AsrResult asr_at_k(const DualEncoderParams& params, std::span<const PairSample> samples, const Uap& uap,
                   std::size_t k, PerturbOptions options = {});

/// Mean cos(f_I(augment(v_i)), f_T(t_i)); sample i draws from Rng(seed ^ i).
double pair_similarity_probe(const DualEncoderParams& params, std::span<const PairSample> samples,
                             const AugSpec& aug, std::uint64_t seed = 0);

inline constexpr std::array<std::size_t, 3> kReportKs = {1, 5, 10};

struct RetrievalReport {
  std::uint64_t data_seed = 0;
  std::size_t n_test = 0;
  UapArtifact attack;
  std::array<RecallRates, 3> clean{};
  std::array<RecallRates, 3> adversarial{};
  std::array<AsrResult, 3> asr{};
  std::array<AsrResult, 3> asr_continuous{};
  AsrResult asr_image_only;
  AsrResult asr_text_only;
  AsrResult control;
  double mean_pair_cosine_clean = 0.0;
  double mean_pair_cosine_augmented = 0.0;
  std::uint64_t probe_seed = 0;
};

RetrievalReport evaluate(const DualEncoderParams& params, const Dataset& data, const UapArtifact& artifact,
                         const EvalConfig& config = {});
Json report_to_json(const RetrievalReport& report);
std::string serialize_report(const RetrievalReport& report);

struct SweepRow {
  std::string value;
  std::uint64_t seed = 0;
  AsrResult asr;
  double wallclock = 0.0;
};

struct SweepAggregate {
  std::string value;
  std::size_t runs = 0;
  double tr_mean = 0.0;
  double ir_mean = 0.0;
  double mean = 0.0;
  double tr_sd = 0.0;
  double ir_sd = 0.0;
  double sd = 0.0;
};

struct SweepTable {
  SweepParam param = SweepParam::kAlpha;
  std::vector<SweepRow> rows;

  std::vector<SweepAggregate> aggregates() const;
  /// Long format: param,value,seed,tr_asr,ir_asr,mean_asr,wallclock; data rows
  /// first, then one "mean" and one "sd" row per value.
  std::string to_csv() const;
};

enum class AttackMethod { kDoUap, kGenerator };

/// Fresh attack on data.train and ASR@1 on data.test for every value x seed,
/// rows ordered by (value, seed).
SweepTable run_sweep(const DualEncoderParams& params, const Dataset& data, const SweepSpec& spec,
                     const AttackConfig& base, AttackMethod method = AttackMethod::kDoUap);

struct NamedInput {
  std::string name;
  std::string contents;
};

/// Folds report JSONs (grouped by method and attack config) and sweep CSVs
/// (grouped by param and value) into one mean/sd table, groups in order of
/// first appearance:
/// source,method,param,value,runs,tr_asr_mean,tr_asr_sd,ir_asr_mean,ir_asr_sd,
/// mean_asr_mean,mean_asr_sd,wallclock_mean,seconds_per_iteration_mean
std::string aggregate_table(std::span<const NamedInput> inputs);

}  // namespace douap
