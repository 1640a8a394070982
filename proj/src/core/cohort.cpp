#include "core/cohort.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "json.hpp"

namespace anatcl {

namespace {

// Stream tags under the cohort seed. Disjoint from the trainer's tags.
constexpr std::uint64_t kStreamPrototypes = 10;
constexpr std::uint64_t kStreamOffsets = 11;
constexpr std::uint64_t kStreamPatient = 12;
constexpr std::uint64_t kStreamTemplate = 13;

}  // namespace

namespace detail {
// Fixed shape ratios for sentence features. text_noise_factor is sentence
// noise RMS over visual noise RMS (reports are a cleaner channel than
// images). text_offset_factor scales the finding-sentence offset against the
// visual pathology offset: images show a lesion outright, reports hedge, so
// the text shift is a small fraction of the visual one. noise_corr is the
// share of sentence noise pointing along the patient's visual residual.
// Mutable for calibration sweeps only.
double noise_corr = 0.0;
double text_noise_factor = 0.75;
double text_offset_factor = 0.0875;
}  // namespace detail

namespace {
const double& kNoiseCorr = detail::noise_corr;
const double& kTextNoiseFactor = detail::text_noise_factor;
const double& kTextOffsetFactor = detail::text_offset_factor;

Vec gaussian_vec(Rng& rng, std::size_t d) {
  Vec v(d);
  for (double& x : v) x = rng.normal();
  return v;
}

void add_scaled(Vec& target, const Vec& src, double c) {
  for (std::size_t k = 0; k < target.size(); ++k) target[k] += c * src[k];
}

// Orthonormal basis for the span of `vecs` (Gram-Schmidt; near-dependent
// and zero directions are dropped).
std::vector<Vec> orthonormal_span(const std::vector<Vec>& vecs) {
  std::vector<Vec> basis;
  basis.reserve(vecs.size());
  for (const Vec& a : vecs) {
    Vec v = a;
    for (const Vec& u : basis) add_scaled(v, u, -dot(v, u));
    if (norm(v) > 1e-10) basis.push_back(l2_normalize(v));
  }
  return basis;
}

// M unit vectors with all pairwise cosines equal to cos(angle_deg):
// t_j = alpha*u_0 + beta*u_{j+1} over an orthonormal basis, alpha^2 =
// cos(angle). At 90 degrees the shared component drops out exactly.
// With `avoid` set, the basis is drawn inside the orthogonal complement of
// span(avoid), so the returned frame is exactly orthogonal to it.
std::vector<Vec> make_prototypes(std::size_t m, std::size_t d,
                                 double angle_deg, Rng& rng,
                                 const std::vector<Vec>* avoid = nullptr) {
  const double cosv =
      angle_deg == 90.0 ? 0.0 : std::cos(angle_deg * M_PI / 180.0);
  const std::size_t n_basis = cosv > 0.0 ? m + 1 : m;
  const std::vector<Vec> avoid_basis =
      avoid != nullptr ? orthonormal_span(*avoid) : std::vector<Vec>{};
  std::vector<Vec> basis;
  basis.reserve(n_basis);
  for (std::size_t i = 0; i < n_basis; ++i) {
    Vec g = gaussian_vec(rng, d);
    for (const Vec& u : avoid_basis) add_scaled(g, u, -dot(g, u));
    for (const Vec& u : basis) add_scaled(g, u, -dot(g, u));
    if (norm(g) < 1e-8) {
      throw DegenerateInput("prototype basis draw degenerate");
    }
    basis.push_back(l2_normalize(g));
  }
  std::vector<Vec> protos(m);
  if (cosv > 0.0) {
    const double alpha = std::sqrt(cosv);
    const double beta = std::sqrt(1.0 - cosv);
    for (std::size_t j = 0; j < m; ++j) {
      protos[j] = Vec(d, 0.0);
      add_scaled(protos[j], basis[0], alpha);
      add_scaled(protos[j], basis[j + 1], beta);
    }
  } else {
    for (std::size_t j = 0; j < m; ++j) protos[j] = basis[j];
  }
  return protos;
}

}  // namespace

nlohmann::json config_to_json(const CohortConfig& c) {
  nlohmann::json j;
  j["M"] = c.M;
  j["D"] = c.D;
  j["n_patients"] = c.n_patients;
  j["tokens_per_anatomy"] = c.tokens_per_anatomy;
  j["sentences_normal"] = c.sentences_normal;
  j["sentences_abnormal"] = c.sentences_abnormal;
  j["text_coverage"] = c.text_coverage;
  j["abnormal_rate"] = c.abnormal_rate;
  j["text_separation_deg"] = c.text_separation_deg;
  j["vis_separation_deg"] = c.vis_separation_deg;
  j["pathology_offset_scale"] = c.pathology_offset_scale;
  j["noise_scale"] = c.noise_scale;
  j["n_templates"] = c.n_templates;
  j["template_noise_scale"] = c.template_noise_scale;
  j["seed"] = c.seed;
  return j;
}

CohortConfig config_from_json(const nlohmann::json& j) {
  CohortConfig c;
  c.M = j.at("M").get<std::size_t>();
  c.D = j.at("D").get<std::size_t>();
  c.n_patients = j.at("n_patients").get<std::size_t>();
  c.tokens_per_anatomy = j.at("tokens_per_anatomy").get<std::size_t>();
  c.sentences_normal = j.at("sentences_normal").get<std::size_t>();
  c.sentences_abnormal = j.at("sentences_abnormal").get<std::size_t>();
  c.text_coverage = j.at("text_coverage").get<double>();
  c.abnormal_rate = j.at("abnormal_rate").get<double>();
  c.text_separation_deg = j.at("text_separation_deg").get<double>();
  c.vis_separation_deg = j.at("vis_separation_deg").get<double>();
  c.pathology_offset_scale = j.at("pathology_offset_scale").get<double>();
  c.noise_scale = j.at("noise_scale").get<double>();
  c.n_templates = j.at("n_templates").get<std::size_t>();
  c.template_noise_scale = j.at("template_noise_scale").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

namespace {

constexpr int kCohortVersion = 1;

std::string checksum_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void validate(const CohortConfig& cfg) {
  if (cfg.M == 0 || cfg.D == 0 || cfg.n_patients == 0 ||
      cfg.tokens_per_anatomy == 0 || cfg.sentences_normal == 0 ||
      cfg.sentences_abnormal == 0 || cfg.n_templates == 0) {
    throw InvalidArgument("cohort config: all counts must be >= 1");
  }
  if (!(cfg.abnormal_rate >= 0.0 && cfg.abnormal_rate <= 1.0)) {
    throw InvalidArgument("cohort config: abnormal_rate must be in [0, 1]");
  }
  if (!(cfg.text_coverage > 0.0 && cfg.text_coverage <= 1.0)) {
    throw InvalidArgument("cohort config: text_coverage must be in (0, 1]");
  }
  for (double angle : {cfg.text_separation_deg, cfg.vis_separation_deg}) {
    if (!(angle > 0.0 && angle <= 90.0)) {
      throw InvalidArgument(
          "cohort config: separation angles must be in (0, 90] degrees");
    }
  }
  if (!(cfg.pathology_offset_scale >= 0.0) || !(cfg.noise_scale >= 0.0) ||
      !(cfg.template_noise_scale >= 0.0)) {
    throw InvalidArgument("cohort config: scales must be >= 0");
  }
  if (cfg.D < cfg.M) {
    throw InvalidArgument("cohort config: D must be >= M to place prototypes");
  }
  const std::size_t text_rank =
      cfg.M + (cfg.text_separation_deg < 90.0 ? 1 : 0);
  const std::size_t vis_rank =
      cfg.M + (cfg.vis_separation_deg < 90.0 ? 1 : 0);
  std::size_t need = text_rank + vis_rank;
  if (cfg.pathology_offset_scale > 0.0 && need < 2 * cfg.M + 2) {
    need = 2 * cfg.M + 2;
  }
  if (cfg.D < need) {
    throw InvalidArgument(
        "cohort config: D too small: the text and visual frames occupy "
        "orthogonal subspaces (M directions per modality, plus a shared "
        "axis per modality whose separation is below 90 degrees), and each "
        "pathology axis needs a free dimension");
  }
}

Cohort generate_cohort(const CohortConfig& cfg) {
  validate(cfg);
  Cohort cohort;
  cohort.config = cfg;

  // Raw encoder spaces for different modalities share no built-in
  // alignment; any agreement between them has to be learned. The text frame
  // is therefore drawn inside the orthogonal complement of the visual one,
  // which pins every cross-modal cosine of an identity-initialized model at
  // zero.
  {
    Rng rng(cfg.seed, {kStreamPrototypes, 1});
    cohort.vis_prototypes =
        make_prototypes(cfg.M, cfg.D, cfg.vis_separation_deg, rng);
  }
  {
    Rng rng(cfg.seed, {kStreamPrototypes, 0});
    cohort.text_prototypes = make_prototypes(
        cfg.M, cfg.D, cfg.text_separation_deg, rng, &cohort.vis_prototypes);
  }

  // One pathology axis per modality, shared across anatomies and
  // orthogonal to every prototype of its modality; the text axis also
  // avoids the whole visual construction, keeping the two modalities in
  // orthogonal subspaces so untrained abnormality scores sit at chance.
  Vec text_offset(cfg.D, 0.0), vis_offset(cfg.D, 0.0);
  if (cfg.pathology_offset_scale > 0.0) {
    {
      Rng rng(cfg.seed, {kStreamOffsets, 1});
      Vec g = gaussian_vec(rng, cfg.D);
      for (const Vec& u : orthonormal_span(cohort.vis_prototypes)) {
        add_scaled(g, u, -dot(g, u));
      }
      if (norm(g) < 1e-8) {
        throw DegenerateInput("visual offset draw degenerate");
      }
      vis_offset = l2_normalize(g);
      for (double& x : vis_offset) x *= cfg.pathology_offset_scale;
    }
    {
      Rng rng(cfg.seed, {kStreamOffsets, 0});
      Vec g = gaussian_vec(rng, cfg.D);
      std::vector<Vec> constraints = cohort.text_prototypes;
      constraints.insert(constraints.end(), cohort.vis_prototypes.begin(),
                         cohort.vis_prototypes.end());
      constraints.push_back(vis_offset);
      for (const Vec& u : orthonormal_span(constraints)) {
        add_scaled(g, u, -dot(g, u));
      }
      if (norm(g) < 1e-8) throw DegenerateInput("text offset draw degenerate");
      text_offset = l2_normalize(g);
      // A finding shifts the report far less than it shifts the image: one
      // sentence mentions it, the whole region shows it.
      for (double& x : text_offset) {
        x *= kTextOffsetFactor * cfg.pathology_offset_scale;
      }
    }
  }

  const double sigma =
      cfg.noise_scale / std::sqrt(static_cast<double>(cfg.D));
  // Sentence noise decomposes into a component along the patient's visual
  // residual direction plus an isotropic remainder, with total RMS
  // kTextNoiseFactor * noise_scale.
  const double text_ns = kTextNoiseFactor * cfg.noise_scale;
  const double w_corr = kNoiseCorr * text_ns;
  const double w_iso = std::sqrt(1.0 - kNoiseCorr * kNoiseCorr) * text_ns /
                       std::sqrt(static_cast<double>(cfg.D));
  cohort.patients.resize(cfg.n_patients);
  for (std::size_t i = 0; i < cfg.n_patients; ++i) {
    cohort.patients[i].resize(cfg.M);
    for (std::size_t j = 0; j < cfg.M; ++j) {
      Rng rng(cfg.seed, {kStreamPatient, i, j});
      PatientAnatomy& pa = cohort.patients[i][j];
      pa.label = rng.uniform() < cfg.abnormal_rate ? 1 : 0;
      // The coverage draw is unconditional so the stream layout does not
      // depend on the label. Findings are always written up; a healthy
      // anatomy can go unmentioned.
      const bool mentioned =
          rng.uniform() < cfg.text_coverage || pa.label != 0;

      pa.visual_tokens = Matrix(cfg.tokens_per_anatomy, cfg.D);
      Vec residual(cfg.D, 0.0);
      for (std::size_t t = 0; t < cfg.tokens_per_anatomy; ++t) {
        for (std::size_t d = 0; d < cfg.D; ++d) {
          const double n = sigma * rng.normal();
          residual[d] += n;
          double x = cohort.vis_prototypes[j][d] + n;
          if (pa.label) x += vis_offset[d];
          pa.visual_tokens.at(t, d) = x;
        }
      }
      if (norm(residual) > 0.0) residual = l2_normalize(residual);

      // Per sentence the draw order is fixed: D isotropic components, then
      // nothing else (the correlated part reuses the visual residual).
      auto make_sentence = [&](bool finding) {
        Vec sent = cohort.text_prototypes[j];
        if (finding) add_scaled(sent, text_offset, 1.0);
        add_scaled(sent, residual, w_corr);
        for (std::size_t d = 0; d < cfg.D; ++d) {
          sent[d] += w_iso * rng.normal();
        }
        return sent;
      };
      // Finding sentences lead the report, as in dictated radiology
      // reports where positives are stated before boilerplate negatives.
      if (mentioned) {
        const std::size_t n_sent =
            cfg.sentences_normal + (pa.label ? cfg.sentences_abnormal : 0);
        pa.sentences.reserve(n_sent);
        if (pa.label) {
          for (std::size_t s = 0; s < cfg.sentences_abnormal; ++s) {
            pa.sentences.push_back(make_sentence(true));
          }
        }
        for (std::size_t s = 0; s < cfg.sentences_normal; ++s) {
          pa.sentences.push_back(make_sentence(false));
        }
      }
    }
  }

  // Template perturbations model paraphrase drift, which stays on the text
  // manifold: a Gaussian combination of the anatomy prototypes (generic
  // phrasing plus cross-anatomy vocabulary bleed), not free-space noise.
  const double tsigma =
      cfg.template_noise_scale / std::sqrt(static_cast<double>(cfg.M));
  cohort.templates.resize(cfg.M);
  for (std::size_t j = 0; j < cfg.M; ++j) {
    for (int polarity = 0; polarity < 2; ++polarity) {
      auto& bank = cohort.templates[j][polarity];
      bank.resize(cfg.n_templates);
      for (std::size_t t = 0; t < cfg.n_templates; ++t) {
        Rng rng(cfg.seed, {kStreamTemplate, j,
                           static_cast<std::uint64_t>(polarity), t});
        Vec v(cfg.D);
        for (std::size_t d = 0; d < cfg.D; ++d) {
          v[d] = cohort.text_prototypes[j][d];
          if (polarity == 1) v[d] += text_offset[d];
        }
        for (std::size_t l = 0; l < cfg.M; ++l) {
          const double c = tsigma * rng.normal();
          add_scaled(v, cohort.text_prototypes[l], c);
        }
        bank[t] = {std::move(v)};
      }
    }
  }
  return cohort;
}

namespace {

nlohmann::json vecs_to_json(const std::vector<Vec>& vs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Vec& v : vs) arr.push_back(v);
  return arr;
}

std::vector<Vec> vecs_from_json(const nlohmann::json& arr, std::size_t d,
                                const char* what) {
  std::vector<Vec> out;
  out.reserve(arr.size());
  for (const auto& row : arr) {
    Vec v = row.get<Vec>();
    if (v.size() != d) {
      throw IoError(std::string("cohort: bad vector length in ") + what);
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

void write_cohort(const Cohort& cohort, const std::string& path) {
  std::ostringstream body;
  for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
    nlohmann::json line;
    line["patient_id"] = i;
    nlohmann::json anatomies = nlohmann::json::array();
    for (std::size_t j = 0; j < cohort.patients[i].size(); ++j) {
      const PatientAnatomy& pa = cohort.patients[i][j];
      nlohmann::json a;
      a["anatomy_id"] = j;
      a["label"] = pa.label;
      nlohmann::json tokens = nlohmann::json::array();
      for (std::size_t t = 0; t < pa.visual_tokens.rows; ++t) {
        tokens.push_back(pa.visual_tokens.row(t));
      }
      a["visual_tokens"] = std::move(tokens);
      a["sentences"] = vecs_to_json(pa.sentences);
      anatomies.push_back(std::move(a));
    }
    line["anatomies"] = std::move(anatomies);
    body << line.dump() << "\n";
  }
  {
    nlohmann::json bank;
    bank["text_prototypes"] = vecs_to_json(cohort.text_prototypes);
    bank["vis_prototypes"] = vecs_to_json(cohort.vis_prototypes);
    nlohmann::json templates = nlohmann::json::array();
    for (const TemplateBank& tb : cohort.templates) {
      nlohmann::json t;
      nlohmann::json normals = nlohmann::json::array();
      for (const auto& sentences : tb[0]) normals.push_back(vecs_to_json(sentences));
      nlohmann::json abnormals = nlohmann::json::array();
      for (const auto& sentences : tb[1]) abnormals.push_back(vecs_to_json(sentences));
      t["normal"] = std::move(normals);
      t["abnormal"] = std::move(abnormals);
      templates.push_back(std::move(t));
    }
    bank["templates"] = std::move(templates);
    body << bank.dump() << "\n";
  }

  const std::string body_str = body.str();
  nlohmann::json header;
  header["version"] = kCohortVersion;
  header["config"] = config_to_json(cohort.config);
  header["checksum"] = checksum_hex(fnv1a64(body_str));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open cohort file for writing: " + path);
  out << header.dump() << "\n" << body_str;
  if (!out) throw IoError("write failed: " + path);
}

Cohort read_cohort(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open cohort file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string content = ss.str();

  const std::size_t header_end = content.find('\n');
  if (header_end == std::string::npos) {
    throw IoError("cohort file truncated: no header line in " + path);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(content.substr(0, header_end));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cohort parse error at line 1: " + std::string(e.what()));
  }

  Cohort cohort;
  std::string body;
  try {
    const int version = header.at("version").get<int>();
    if (version != kCohortVersion) {
      throw IoError("cohort version " + std::to_string(version) +
                    " unsupported (expected " + std::to_string(kCohortVersion) +
                    ")");
    }
    cohort.config = config_from_json(header.at("config"));
    body = content.substr(header_end + 1);
    const std::string expected = header.at("checksum").get<std::string>();
    const std::string actual = checksum_hex(fnv1a64(body));
    if (expected != actual) {
      throw IoError("cohort checksum mismatch in " + path + ": header says " +
                    expected + ", body hashes to " + actual);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cohort header error: " + std::string(e.what()));
  }

  const CohortConfig& cfg = cohort.config;
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < body.size()) {
    const std::size_t nl = body.find('\n', pos);
    if (nl == std::string::npos) {
      throw IoError("cohort file truncated: unterminated line in " + path);
    }
    lines.push_back(body.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (lines.size() != cfg.n_patients + 1) {
    throw IoError("cohort file truncated: expected " +
                  std::to_string(cfg.n_patients + 1) + " body lines, found " +
                  std::to_string(lines.size()));
  }

  cohort.patients.resize(cfg.n_patients);
  for (std::size_t i = 0; i < cfg.n_patients; ++i) {
    const std::size_t line_no = i + 2;  // 1-based, after the header
    nlohmann::json line;
    try {
      line = nlohmann::json::parse(lines[i]);
      if (line.at("patient_id").get<std::size_t>() != i) {
        throw IoError("cohort: patient_id out of order at line " +
                      std::to_string(line_no));
      }
      const auto& anatomies = line.at("anatomies");
      if (anatomies.size() != cfg.M) {
        throw IoError("cohort: wrong anatomy count at line " +
                      std::to_string(line_no));
      }
      cohort.patients[i].resize(cfg.M);
      for (std::size_t j = 0; j < cfg.M; ++j) {
        const auto& a = anatomies[j];
        if (a.at("anatomy_id").get<std::size_t>() != j) {
          throw IoError("cohort: anatomy_id out of order at line " +
                        std::to_string(line_no));
        }
        PatientAnatomy& pa = cohort.patients[i][j];
        pa.label = a.at("label").get<int>();
        const auto& tokens = a.at("visual_tokens");
        if (tokens.size() != cfg.tokens_per_anatomy) {
          throw IoError("cohort: wrong token count at line " +
                        std::to_string(line_no));
        }
        pa.visual_tokens = Matrix(cfg.tokens_per_anatomy, cfg.D);
        for (std::size_t t = 0; t < tokens.size(); ++t) {
          const Vec row = tokens[t].get<Vec>();
          if (row.size() != cfg.D) {
            throw IoError("cohort: bad token length at line " +
                          std::to_string(line_no));
          }
          std::copy(row.begin(), row.end(),
                    pa.visual_tokens.data.begin() +
                        static_cast<std::ptrdiff_t>(t * cfg.D));
        }
        pa.sentences = vecs_from_json(a.at("sentences"), cfg.D, "sentences");
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError("cohort parse error at line " + std::to_string(line_no) +
                    ": " + e.what());
    }
  }

  const std::size_t bank_line_no = cfg.n_patients + 2;
  try {
    const nlohmann::json bank = nlohmann::json::parse(lines.back());
    cohort.text_prototypes =
        vecs_from_json(bank.at("text_prototypes"), cfg.D, "text_prototypes");
    cohort.vis_prototypes =
        vecs_from_json(bank.at("vis_prototypes"), cfg.D, "vis_prototypes");
    if (cohort.text_prototypes.size() != cfg.M ||
        cohort.vis_prototypes.size() != cfg.M) {
      throw IoError("cohort: wrong prototype count at line " +
                    std::to_string(bank_line_no));
    }
    const auto& templates = bank.at("templates");
    if (templates.size() != cfg.M) {
      throw IoError("cohort: wrong template anatomy count at line " +
                    std::to_string(bank_line_no));
    }
    cohort.templates.resize(cfg.M);
    for (std::size_t j = 0; j < cfg.M; ++j) {
      for (int polarity = 0; polarity < 2; ++polarity) {
        const auto& lists =
            templates[j].at(polarity == 0 ? "normal" : "abnormal");
        if (lists.size() != cfg.n_templates) {
          throw IoError("cohort: wrong template count at line " +
                        std::to_string(bank_line_no));
        }
        auto& out = cohort.templates[j][polarity];
        out.resize(cfg.n_templates);
        for (std::size_t t = 0; t < cfg.n_templates; ++t) {
          out[t] = vecs_from_json(lists[t], cfg.D, "templates");
          if (out[t].empty()) {
            throw IoError("cohort: empty template sentence list at line " +
                          std::to_string(bank_line_no));
          }
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cohort parse error at line " + std::to_string(bank_line_no) +
                  ": " + e.what());
  }
  return cohort;
}

}  // namespace anatcl
