#pragma once

#include "cma/atlas.hpp"
#include "cma/covariates.hpp"
#include "cma/embed.hpp"
#include "cma/geometry.hpp"
#include "cma/qc.hpp"
#include "cma/stats.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace cma::io {

// Line-oriented text formats; grammars are documented in the README. All
// writers emit round-trip precision and deterministic field order. Parse
// errors throw std::runtime_error naming the line.

void write_sequence(std::ostream& out, const geometry::LvSequence& seq);
geometry::LvSequence read_sequence(std::istream& in, const std::string& context = "");
void write_sequence_file(const std::string& path, const geometry::LvSequence& seq);
geometry::LvSequence read_sequence_file(const std::string& path);

void write_surface(std::ostream& out, const geometry::TriSurface& surface);
geometry::TriSurface read_surface(std::istream& in, const std::string& context = "");

void write_covariates_file(const std::string& path, const CovariateTable& table);
CovariateTable read_covariates_file(const std::string& path);

/// One row per subject: subject_id,frame_interval_ms,v0,v1,...
struct CurveTable {
    std::vector<std::string> subject_ids;
    std::vector<geometry::VolumeCurve> curves;
};
void write_curves_file(const std::string& path, const CurveTable& table);
CurveTable read_curves_file(const std::string& path);

/// Atlas bundle: mean medial mesh, long axis, axis point, rv direction,
/// per-vertex local basis and AHA labels.
struct AtlasBundle {
    atlas::AtlasSpace space;
    Vec3 rv_direction = Vec3::UnitX();
    geometry::AhaLabels labels;
};
void write_atlas_bundle(const std::string& path, const AtlasBundle& bundle);
AtlasBundle read_atlas_bundle(const std::string& path);

/// Per-subject normalization data produced by the atlas stage: the
/// subject-to-atlas transform plus the subject's medial ED vertices
/// (the push-forward sample points).
struct SubjectTransform {
    std::string subject_id;
    atlas::SubjectToAtlasTransform transform;
    std::vector<Vec3> medial_ed_vertices;
};
void write_transforms_file(const std::string& path, const std::vector<SubjectTransform>& subjects);
std::vector<SubjectTransform> read_transforms_file(const std::string& path);

void write_features_file(const std::string& path, const embed::FeatureMatrix& features,
                         const std::vector<std::string>& subject_ids);
embed::FeatureMatrix read_features_file(const std::string& path,
                                        std::vector<std::string>* subject_ids = nullptr);

/// Embedding bundle as a JSON document (D matrix, method, hyperparameters,
/// reconstruction error, optional error-vs-d curve).
void write_embedding_file(const std::string& path, const embed::Embedding& embedding,
                          const std::vector<std::string>& subject_ids,
                          const embed::GridSearchResult* grid = nullptr);
embed::Embedding read_embedding_file(const std::string& path,
                                     std::vector<std::string>* subject_ids = nullptr);

std::string qc_report_jsonl(const std::string& subject_id, const qc::QcReport& report);

/// Association report: JSON document plus a rendered text table mirroring
/// the per-covariate x {pca, lle, sda, ef} layout.
void write_association_report(const std::string& json_path, const std::string& text_path,
                              const std::vector<stats::AssociationResult>& rows);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::uint64_t checksum_file(const std::string& path);

}  // namespace cma::io
