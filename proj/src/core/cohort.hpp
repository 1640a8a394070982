#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "core/linalg.hpp"
#include "json.hpp"

namespace anatcl {

// Generator knobs. Angles in degrees, both in (0, 90]. noise_scale is the
// RMS norm of a whole noise vector (per-component sigma = noise_scale /
// sqrt(D)), so geometry statements hold independent of D.
struct CohortConfig {
  std::size_t M = 4;                  // anatomy count
  std::size_t D = 32;                 // embedding dimension
  std::size_t n_patients = 256;
  std::size_t tokens_per_anatomy = 8;
  std::size_t sentences_normal = 4;   // normal sentences per report
  std::size_t sentences_abnormal = 2; // finding sentences leading when abnormal
  double abnormal_rate = 0.3;
  double text_coverage = 1.0;         // chance a healthy anatomy is mentioned
  double text_separation_deg = 5.0;
  double vis_separation_deg = 60.0;
  double pathology_offset_scale = 4.0;
  double noise_scale = 0.05;
  std::size_t n_templates = 5;
  double template_noise_scale = 0.05;
  std::uint64_t seed = 5;

  bool operator==(const CohortConfig&) const = default;
};

void validate(const CohortConfig& cfg);

struct PatientAnatomy {
  Matrix visual_tokens;        // T x D
  std::vector<Vec> sentences;  // ordered; empty when the report skips this
                               // anatomy (always non-empty when abnormal)
  int label = 0;               // 1 = abnormal

  bool operator==(const PatientAnatomy&) const = default;
};

// Prompt-template sentence lists per anatomy: index 0 normal, 1 abnormal;
// each polarity holds n_templates single-sentence lists.
using TemplateBank = std::array<std::vector<std::vector<Vec>>, 2>;

struct Cohort {
  CohortConfig config;
  std::vector<std::vector<PatientAnatomy>> patients;  // [patient][anatomy]
  std::vector<Vec> text_prototypes;  // M unit vectors
  std::vector<Vec> vis_prototypes;   // M unit vectors
  std::vector<TemplateBank> templates;  // per anatomy

  bool operator==(const Cohort&) const = default;
};

// Deterministic generation, a pure function of cfg:
//   - anatomy prototypes pairwise at the configured angle: t_j =
//     alpha*u_0 + beta*u_{ j+1 } over a Gram-Schmidt orthonormal basis of
//     Gaussian draws, alpha = sqrt(cos(angle)); exact orthogonality at 90.
//     The text frame is drawn inside the orthogonal complement of the
//     visual frame: raw encoder spaces of different modalities share no
//     built-in alignment, so an untrained model scores at chance.
//   - abnormality offsets: one shared pathology axis per modality, unit
//     draws orthogonalized against every prototype of that modality (the
//     text axis also against the whole visual construction), scaled by
//     pathology_offset_scale.
//   - visual tokens: vis_prototype + label*offset + noise, row-wise.
//   - sentences: sentences_normal prototype+noise rows, preceded by
//     sentences_abnormal finding rows (prototype + text offset + noise)
//     when the label is abnormal. Labels ~ Bernoulli(abnormal_rate).
//     A healthy anatomy is mentioned with probability text_coverage and
//     otherwise gets an empty sentence list (abnormal ones are always
//     written up), so report coverage varies the way dictated reports do.
//     Sentence noise RMS tracks noise_scale through a fixed factor.
//   - templates: polarity base vector perturbed inside the span of the
//     anatomy prototypes (paraphrase drift stays on the text manifold),
//     one single-sentence list each.
// Requires D >= M, and room for the frames: M per modality, plus a shared
// basis vector per modality below 90 degrees, plus one free dimension per
// pathology axis when pathology_offset_scale > 0.
Cohort generate_cohort(const CohortConfig& cfg);

namespace detail {
// Fraction of each sentence's noise norm that points along the patient's
// visual residual direction, and the ratio of sentence-noise RMS to
// noise_scale (see cohort.cpp). Mutable only so calibration harnesses can
// sweep them; library code treats them as fixed.
extern double noise_corr;
extern double text_noise_factor;
extern double text_offset_factor;
}  // namespace detail

// Config as a flat JSON object (every field present) and back. The parser
// requires every field, matching the cohort file header.
nlohmann::json config_to_json(const CohortConfig& c);
CohortConfig config_from_json(const nlohmann::json& j);

// JSON Lines: header {version, config, checksum}, one line per patient,
// final line prototypes + template bank. checksum is FNV-1a 64 (hex) over
// the bytes of every line after the header, newlines included. Doubles are
// shortest-round-trip decimals, so read(write(c)) == c bitwise.
void write_cohort(const Cohort& cohort, const std::string& path);
Cohort read_cohort(const std::string& path);

// FNV-1a 64-bit over a byte string.
std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace anatcl
