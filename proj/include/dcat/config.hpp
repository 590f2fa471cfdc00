#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "dcat/cdm.hpp"
#include "dcat/trainer.hpp"
#include "json.hpp"

namespace dcat {

struct RunConfig {
  std::string data;
  CdmKind cdm = CdmKind::IRT;
  int min_interactions = 40;
  std::uint64_t split_seed = 0;
  std::array<double, 3> split_ratios{0.6, 0.2, 0.2};
  std::string out = "runs";
  std::string cdm_checkpoint;
  std::string policy_checkpoint;
  bool ood = false;
  PretrainConfig pretrain;
  TrainConfig train;

  // Throws ConfigError.
  void validate() const;
};

// Missing keys keep their defaults; unknown keys and ill-typed values throw ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);

// FNV-1a over the canonical JSON of the resolved config and the command name.
std::uint64_t config_hash(const RunConfig& c, const std::string& command);

}  // namespace dcat
