#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "topicrag/embeddings.hpp"
#include "topicrag/io.hpp"

namespace topicrag {

// Curation stages in their only valid relative order.
enum class StageKind { kFilter, kRelevance, kGenerateQa, kDedup, kIntents, kCluster, kSelect };

const char* stage_name(StageKind kind);
StageKind stage_from_name(const std::string& name);
// Stages up to generate_qa read passages; the rest read samples.
bool stage_reads_passages(StageKind kind);

struct StageConfig {
  StageKind kind;
  Json params;  // stage-specific settings, "name" removed
};

struct PipelineConfig {
  Json document;                    // the config as written; its hash tags every artifact
  std::filesystem::path base_dir;   // relative paths resolve against this
  std::filesystem::path input;
  std::filesystem::path output_dir;
  std::vector<StageConfig> stages;
  EmbedderSpec embedder;
  std::uint64_t seed = 42;
  std::optional<std::size_t> max_quarantined;  // more quarantines than this escalate

  // Parses and validates stage order and settings. Throws ConfigError.
  static PipelineConfig from_json(const Json& doc, const std::filesystem::path& base_dir);
  static PipelineConfig load(const std::filesystem::path& path);

  std::string hash() const { return config_hash(document); }
  // Checks that input and client files exist. Throws ConfigError.
  void check_paths() const;
  std::filesystem::path resolve(const std::string& p) const;
};

struct StageSummary {
  std::string name;
  std::size_t input = 0;
  std::size_t output = 0;
  std::size_t rejected = 0;
  std::size_t quarantined = 0;

  Json to_json() const;
};

struct CurateOptions {
  bool resume = false;                     // continue after the last valid checkpoint
  std::optional<std::string> from_stage;   // rerun from this stage using the previous checkpoint
};

struct CurateResult {
  std::string config_hash;
  std::vector<StageSummary> stages;  // stages run in this invocation
  std::filesystem::path dataset;
  std::size_t records = 0;
  std::size_t quarantined = 0;
  bool escalated = false;
  std::optional<std::string> resumed_from;

  Json summary() const;
};

// Runs the configured stages in order, writing checkpoints/NN-<stage>.jsonl
// and logs/NN-<stage>.jsonl after each stage and dataset.jsonl at the end.
// A failing stage propagates its error and leaves earlier checkpoints intact.
CurateResult cmd_curate(const PipelineConfig& cfg, const CurateOptions& opts = {});

// Writes config.snapshot.json (config plus hash) into `dir`.
void write_config_snapshot(const std::filesystem::path& dir, const Json& config);

}  // namespace topicrag
