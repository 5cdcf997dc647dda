#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <json.hpp>

#include "scanet/corpus.hpp"
#include "scanet/digest.hpp"
#include "scanet/error.hpp"

namespace scanet {

/// Every tunable of a run in one flat record. Defaults are the reference
/// hyperparameters; `seed` has no default and must be supplied.
struct RunConfig {
  // model
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 128;
  // proposal generation
  std::size_t K = 12;
  std::size_t p_min = 5;
  std::size_t p_max = 14;
  double gauss_sigma = 8.0;
  double w_min = 0.05;
  double tau = 1.0;
  // losses
  double delta1 = 0.1;
  double delta2 = 0.5;
  double gamma = 0.5;
  double mvr_rate = 0.1;
  std::size_t mask_token_id = 1;
  // training
  double lr = 1e-3;
  std::size_t steps_stage1 = 2000;
  std::size_t steps_stage2 = 2000;
  std::size_t batch_size = 1;
  std::size_t k = 15;
  std::uint64_t seed = 0;
  // corpus
  std::size_t vocab_size = kDefaultVocabSize;
  std::size_t max_query_len = kDefaultMaxQueryLen;

  CorpusOptions corpus_options() const { return {vocab_size, max_query_len}; }

  void validate() const;
  nlohmann::json to_json() const;
  /// FNV-1a of the canonical (sorted-key) JSON form.
  std::string digest() const { return digest_hex(to_json().dump()); }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "integer config fields share one type");

struct ConfigField {
  const char* name;
  const char* doc;
  std::variant<std::size_t RunConfig::*, double RunConfig::*> member;
};

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      {"d_model", "joint embedding width d", &RunConfig::d_model},
      {"n_heads", "attention heads (must divide d_model)", &RunConfig::n_heads},
      {"ffn_dim", "hidden width of attention feed-forward layers", &RunConfig::ffn_dim},
      {"K", "codebook size, maximum scene complexity", &RunConfig::K},
      {"p_min", "smallest proposal count", &RunConfig::p_min},
      {"p_max", "largest proposal count", &RunConfig::p_max},
      {"gauss_sigma", "Gaussian mask hyperparameter (std = w / gauss_sigma)", &RunConfig::gauss_sigma},
      {"w_min", "lower clamp on proposal width", &RunConfig::w_min},
      {"tau", "Gumbel-Softmax temperature", &RunConfig::tau},
      {"delta1", "margin of the in-video contrastive hinge", &RunConfig::delta1},
      {"delta2", "margin of the cross-video contrastive hinge", &RunConfig::delta2},
      {"gamma", "calibration scale of the total loss", &RunConfig::gamma},
      {"mvr_rate", "per-frame masking probability for video reconstruction", &RunConfig::mvr_rate},
      {"mask_token_id", "vocabulary id of <mask> (fixed at 1)", &RunConfig::mask_token_id},
      {"lr", "Adam learning rate", &RunConfig::lr},
      {"steps_stage1", "optimizer steps without cross-video negatives", &RunConfig::steps_stage1},
      {"steps_stage2", "optimizer steps with cross-video negatives", &RunConfig::steps_stage2},
      {"batch_size", "(video, query) pairs accumulated per step", &RunConfig::batch_size},
      {"k", "hard negative videos cached per query", &RunConfig::k},
      {"seed", "master random seed (required)", &RunConfig::seed},
      {"vocab_size", "vocabulary capacity including <unk> and <mask>", &RunConfig::vocab_size},
      {"max_query_len", "queries are truncated to this many tokens", &RunConfig::max_query_len},
  };
  return fields;
}

inline nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : config_fields()) {
    std::visit([&](auto m) { j[f.name] = this->*m; }, f.member);
  }
  return j;
}

inline void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (d_model < 2 || d_model % 2 != 0) fail("d_model must be even and >= 2");
  if (n_heads < 1 || d_model % n_heads != 0) fail("n_heads must divide d_model");
  if (ffn_dim < 1) fail("ffn_dim must be >= 1");
  if (K < 1) fail("K must be >= 1");
  if (p_min < 1 || p_max < p_min) fail("need 1 <= p_min <= p_max");
  if (!(gauss_sigma > 0)) fail("gauss_sigma must be positive");
  if (!(w_min > 0 && w_min <= 1)) fail("w_min must lie in (0, 1]");
  if (!(tau > 0)) fail("tau must be positive");
  if (!(delta1 >= 0) || !(delta2 >= 0)) fail("margins must be non-negative");
  if (!(gamma > 0)) fail("gamma must be positive");
  if (!(mvr_rate >= 0 && mvr_rate <= 1)) fail("mvr_rate must lie in [0, 1]");
  if (mask_token_id != static_cast<std::size_t>(Vocab::kMaskId)) fail("mask_token_id must be 1");
  if (!(lr > 0)) fail("lr must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (vocab_size < 3) fail("vocab_size must be >= 3");
  if (max_query_len < 1) fail("max_query_len must be >= 1");
}

/// Applies `j` on top of `base`. Unknown keys and type mismatches are errors.
inline RunConfig apply_config_json(RunConfig base, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const ConfigField* field = nullptr;
    for (const auto& f : config_fields()) {
      if (key == f.name) field = &f;
    }
    if (!field) throw ConfigError("unknown config key '" + key + "'");
    try {
      std::visit([&](auto m) { base.*m = value.get<std::decay_t<decltype(base.*m)>>(); }, field->member);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + key + "' has the wrong type");
    }
  }
  return base;
}

/// Parses a complete config document; `seed` is mandatory.
inline RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("seed")) throw ConfigError("config: 'seed' is mandatory");
  RunConfig c = apply_config_json(RunConfig{}, j);
  c.validate();
  return c;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline RunConfig load_config(const std::string& path) { return config_from_json(read_json_file(path)); }

/// "key=value" override with the value parsed as JSON (bare numbers work).
inline RunConfig apply_override(const RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(assignment.substr(eq + 1));
  } catch (const nlohmann::json::parse_error&) {
    throw ConfigError("override '" + assignment + "' has an unparsable value");
  }
  return apply_config_json(c, nlohmann::json{{key, value}});
}

}  // namespace scanet
