#pragma once

#include "cma/cohort.hpp"
#include "cma/qc.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cma::pipeline {

/// Configuration faults exit with code 2 at the CLI.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Stage faults exit with code 3; an empty post-QC cohort with code 4.
struct StageError : std::runtime_error {
    StageError(const std::string& stage, const std::string& what)
        : std::runtime_error("stage " + stage + ": " + what), stage_name(stage) {}
    std::string stage_name;
};
struct EmptyCohortError : StageError {
    explicit EmptyCohortError(const std::string& stage)
        : StageError(stage, "QC rejected every subject") {}
};

/// Key=value configuration with defaults, file values and --set overrides.
/// All randomness derives from the seed key; there are no wall-clock
/// defaults anywhere.
class PipelineConfig {
  public:
    PipelineConfig();  // defaults only

    static PipelineConfig from_file(const std::string& path,
                                    const std::vector<std::string>& overrides = {});
    static PipelineConfig from_overrides(const std::vector<std::string>& overrides);

    void set(const std::string& key, const std::string& value);

    std::string get(const std::string& key) const;
    double get_double(const std::string& key) const;
    int get_int(const std::string& key) const;
    std::uint64_t get_seed(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    /// Sorted key=value text of every resolved entry (the canonical run
    /// configuration artifact, written to the output directory).
    std::string normalized_text() const;
    /// Sorted key=value text restricted to the given key prefixes.
    std::string slice(const std::vector<std::string>& prefixes) const;

    /// Typed views used by the stages; validation throws ConfigError.
    cohort::CohortConfig cohort_config() const;
    qc::QcThresholds qc_thresholds() const;

    std::string output_dir() const { return get("output"); }
    int jobs() const { return get_int("jobs"); }

  private:
    std::map<std::string, std::string> values_;
};

struct StageRecord {
    std::string name;
    bool cached = false;
    double seconds = 0.0;
    std::uint64_t config_checksum = 0;
    std::map<std::string, std::uint64_t> inputs;   // path -> checksum
    std::map<std::string, std::uint64_t> outputs;  // path -> checksum
};

struct RunManifest {
    std::vector<StageRecord> stages;
    int subjects_total = 0;
    int qc_excluded = 0;
    std::string config_text;

    const StageRecord* find(const std::string& name) const;
};

void write_manifest(const std::string& path, const RunManifest& manifest);
RunManifest read_manifest(const std::string& path);

/// Individual stages; each reads its documented input files from the output
/// directory and writes its outputs there. force bypasses the cache check.
void stage_synth(const PipelineConfig& config, RunManifest& manifest, bool force = false);
void stage_qc(const PipelineConfig& config, RunManifest& manifest, bool force = false);
void stage_atlas(const PipelineConfig& config, RunManifest& manifest, bool force = false);
void stage_features(const PipelineConfig& config, RunManifest& manifest, bool force = false);
void stage_embed(const PipelineConfig& config, RunManifest& manifest, bool force = false);
void stage_associate(const PipelineConfig& config, RunManifest& manifest, bool force = false);
void stage_report(const PipelineConfig& config, RunManifest& manifest, bool force = false);

/// Full run: synth -> qc -> atlas -> features -> embed -> associate ->
/// report, with per-stage caching against an existing manifest. Returns the
/// updated manifest (also written to <output>/manifest.json).
RunManifest run_pipeline(const PipelineConfig& config, bool force = false);

/// Runs one named stage (reusing the manifest on disk when present).
void run_stage(const std::string& name, const PipelineConfig& config, bool force = false);

/// Two-run comparison table for the report subcommand.
std::string compare_runs(const std::string& manifest_a, const std::string& manifest_b);

}  // namespace cma::pipeline
