#pragma once

#include "cma/covariates.hpp"
#include "cma/geometry.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cma::cohort {

using geometry::LvSequence;

/// Phase landmarks of the synthetic cycle, as fractions of the cycle length.
/// The activation waveform w rises 0 -> 1 over systole, returns to the
/// diastasis level during rapid inflow, holds flat, then decays to 0 through
/// atrial systole, so w(0) = 0 and the frame-0 mesh is end-diastole.
struct CycleTiming {
    double tau_es = 0.35;
    double tau_inflow_end = 0.55;
    double tau_atrial_start = 0.85;
    double diastasis_level = 0.15;
};

/// Activation w(tau) for tau in [0, 1]; piecewise cosine ramps, flat diastasis.
double cycle_waveform(double tau, const CycleTiming& timing);

/// Reduced contraction in a set of AHA segments. With preserve_ef set, the
/// unaffected sectors of every touched ring are boosted so the analytic
/// end-systolic cavity volume (and hence EF) matches the defect-free subject.
struct RegionalDefect {
    std::vector<int> segments;
    double amplitude_multiplier = 0.6;
    bool preserve_ef = false;
};

struct SubjectSpec {
    std::uint64_t seed = 0;
    std::string subject_id = "subject";
    // Endocardial prolate spheroid at end-diastole, mm.
    double semi_axis_a = 25.0;
    double semi_axis_b = 25.0;
    double semi_axis_c = 60.0;
    double wall_thickness = 9.0;
    double base_cut = 0.45;  // cos(polar angle) of the basal truncation
    // Motion parameters (fractions at peak activation).
    double contraction_amplitude = 0.30;
    double longitudinal_shortening = 0.18;
    double twist_degrees = 6.0;  // apex-to-base torsion, epicardium only
    std::optional<RegionalDefect> defect;
    CovariateRecord covariates{};
    // Sampling.
    int frames = 20;
    double frame_interval_ms = 50.0;
    int rings = 12;
    int azimuth = 20;
    CycleTiming timing{};
};

/// Analytic cavity volume (ml) of the spec's endocardial shell at activation
/// level w, including any regional defect. This is the closed-form oracle the
/// mesh-based volume is tested against.
double analytic_cavity_volume(const SubjectSpec& spec, double w);

/// Analytic ejection fraction in percent (volume ratio at w = 1).
double analytic_ejection_fraction(const SubjectSpec& spec);

/// Analytic material positions of every endo (or epi) vertex at activation
/// level w, in mesh vertex order. The trajectory oracle for motion tests.
std::vector<Vec3> analytic_positions(const SubjectSpec& spec, bool epi, double w);

/// Vertex index of (ring, azimuth) in the structured phantom mesh;
/// ring == spec.rings addresses the apex vertex.
int phantom_vertex_index(const SubjectSpec& spec, int ring, int az);

/// Deterministic prolate-spheroid LV sequence. Frame 0 is end-diastole.
LvSequence synth_subject(const SubjectSpec& spec);

/// Motion parameters a covariate effect can be wired into.
enum class MotionParam { ContractionAmplitude, LongitudinalShortening, Twist, DefectAmplitude };

struct EffectWiring {
    std::string covariate;
    MotionParam target = MotionParam::ContractionAmplitude;
    double effect_size = 0.0;  // relative change per standardized unit (or per flag)
};

struct CohortConfig {
    int subjects = 300;
    std::uint64_t seed = 1;
    SubjectSpec base{};        // template: geometry, motion defaults, sampling
    std::vector<EffectWiring> effects;
    RegionalDefect defect_template{{2, 3, 8, 9}, 0.6, false};  // used by DefectAmplitude wiring
    double noise_level = 0.03;  // sd of multiplicative nuisance on motion parameters
    // Demographic sampling defaults (population mean/sd and flag proportions);
    // also the standardization constants for continuous effect wiring.
    double age_mean = 61.0, age_sd = 8.0;
    double bmi_mean = 26.4, bmi_sd = 4.2;
    double bfp_mean = 28.2, bfp_sd = 7.7;
    double bmr_mean = 6650.1, bmr_sd = 1324.9;
    double smoking_rate = 0.382;
    double alcohol_rate = 0.489;
    double hypertension_rate = 0.484;
};

struct Cohort {
    std::vector<LvSequence> sequences;
    CovariateTable covariates;
    std::vector<SubjectSpec> specs;  // realized per-subject parameters
};

/// Samples covariates, wires configured effects into motion parameters with
/// multiplicative Gaussian nuisance noise, and synthesizes every subject.
/// Deterministic given config.seed.
Cohort synth_cohort(const CohortConfig& config);

enum class ArtifactKind { DoubleSystolicPeak, BumpyInflow, UnstableDiastasis, ExtraAtrialPeak };

ArtifactKind artifact_kind_from_string(const std::string& name);
std::string to_string(ArtifactKind kind);

/// Returns a copy of seq whose volume curve violates exactly the QC rule the
/// kind targets. Frames are rescaled uniformly about their cavity centroid to
/// hit a corrupted target volume profile, so mesh validity is preserved.
/// magnitude scales the corruption; 0 returns an identical sequence.
LvSequence inject_artifact(const LvSequence& seq, ArtifactKind kind, double magnitude = 1.0);

}  // namespace cma::cohort
