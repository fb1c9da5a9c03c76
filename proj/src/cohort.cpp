#include "cma/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace cma::cohort {

namespace {

[[noreturn]] void fail(const std::string& what) {
    throw std::invalid_argument("cohort: " + what);
}

double hann_bump(double x) {
    if (x <= 0.0 || x >= 1.0) return 0.0;
    return 0.5 * (1.0 - std::cos(2.0 * M_PI * x));
}

}  // namespace

double cycle_waveform(double tau, const CycleTiming& tm) {
    tau -= std::floor(tau);  // periodic
    const double wd = tm.diastasis_level;
    if (tau <= tm.tau_es) {
        const double x = tau / tm.tau_es;
        return 0.5 * (1.0 - std::cos(M_PI * x));
    }
    if (tau <= tm.tau_inflow_end) {
        const double x = (tau - tm.tau_es) / (tm.tau_inflow_end - tm.tau_es);
        const double c = std::cos(0.5 * M_PI * x);
        return wd + (1.0 - wd) * c * c;
    }
    if (tau <= tm.tau_atrial_start) {
        return wd;
    }
    const double x = (tau - tm.tau_atrial_start) / (1.0 - tm.tau_atrial_start);
    const double c = std::cos(0.5 * M_PI * x);
    return wd * c * c;
}

namespace {

// Longitudinal bands of the AHA scheme in normalized height s (apex 0, base 1),
// listed apex-first: cap, apical, mid, basal.
struct Band {
    double s0, s1;
    int first_segment, sector_count;
};
const Band kBands[4] = {
    {0.0, 1.0 / 6.0, 17, 1},
    {1.0 / 6.0, 1.0 / 3.0, 13, 4},
    {1.0 / 3.0, 2.0 / 3.0, 7, 6},
    {2.0 / 3.0, 1.0, 1, 6},
};

struct BandEffect {
    double flagged_fraction = 0.0;   // azimuthal fraction carrying the defect
    double flagged_mult = 1.0;       // amplitude multiplier in flagged sectors
    double unflagged_mult = 1.0;     // compensation multiplier elsewhere
};

// Per-band defect bookkeeping, including the EF-preserving compensation:
// the unaffected sectors of a touched ring are scaled so the mean squared
// radial contraction at peak activation matches the defect-free value.
std::array<BandEffect, 4> band_effects(const SubjectSpec& spec) {
    std::array<BandEffect, 4> out{};
    if (!spec.defect.has_value()) return out;
    const auto& defect = *spec.defect;
    std::set<int> flagged(defect.segments.begin(), defect.segments.end());
    for (int seg : flagged) {
        if (seg < 1 || seg > 16) fail("defect segments must be in 1..16");
    }
    const double a = spec.contraction_amplitude;
    for (int b = 1; b < 4; ++b) {  // cap band (index 0) carries no defect
        const Band& band = kBands[b];
        int count = 0;
        for (int s = 0; s < band.sector_count; ++s) {
            if (flagged.count(band.first_segment + s)) ++count;
        }
        if (count == 0) continue;
        auto& eff = out[b];
        eff.flagged_fraction = static_cast<double>(count) / band.sector_count;
        eff.flagged_mult = defect.amplitude_multiplier;
        if (defect.preserve_ef && a > 0.0) {
            if (count == band.sector_count) {
                fail("cannot preserve EF: defect covers a whole ring");
            }
            const double f = eff.flagged_fraction;
            const double rho_f = 1.0 - a * eff.flagged_mult;
            const double target = (1.0 - a) * (1.0 - a);
            const double rhs = (target - f * rho_f * rho_f) / (1.0 - f);
            if (rhs < 0.0) fail("cannot preserve EF: compensation would need negative area");
            eff.unflagged_mult = (1.0 - std::sqrt(rhs)) / a;
        }
    }
    return out;
}

int band_index_for_height(double s) {
    if (s < kBands[0].s1) return 0;
    if (s < kBands[1].s1) return 1;
    if (s < kBands[2].s1) return 2;
    return 3;
}

struct PhantomSurface {
    std::vector<Vec3> ed_positions;
    std::vector<double> amp_multiplier;  // per vertex
    std::vector<double> zeta;            // material height fraction (twist profile)
    std::vector<std::array<int, 3>> faces;
};

struct PhantomModel {
    PhantomSurface endo, epi;
    double base_height = 0.0;  // z of the basal plane at end-diastole
};

void validate_spec(const SubjectSpec& spec) {
    if (spec.semi_axis_a <= 0.0 || spec.semi_axis_b <= 0.0 || spec.semi_axis_c <= 0.0) {
        fail("semi-axes must be positive");
    }
    if (spec.wall_thickness <= 0.0) fail("wall thickness must be positive");
    if (spec.contraction_amplitude < 0.0 || spec.contraction_amplitude >= 1.0) {
        fail("contraction amplitude must be in [0,1)");
    }
    if (spec.longitudinal_shortening < 0.0 || spec.longitudinal_shortening >= 1.0) {
        fail("longitudinal shortening must be in [0,1)");
    }
    if (spec.frames < 4) fail("need at least 4 frames");
    if (spec.rings < 6 || spec.azimuth < 8) fail("mesh resolution too coarse (rings>=6, az>=8)");
    if (spec.base_cut <= -1.0 || spec.base_cut >= 1.0) fail("base_cut must be in (-1,1)");
}

PhantomSurface build_surface(const SubjectSpec& spec, bool epi_surface, double base_height,
                             const std::array<BandEffect, 4>& effects) {
    const double th = epi_surface ? spec.wall_thickness : 0.0;
    const double a = spec.semi_axis_a + th;
    const double b = spec.semi_axis_b + th;
    const double c = spec.semi_axis_c + th;
    const double center_z = spec.semi_axis_c;  // shared ellipsoid center
    // Truncate at the common basal plane.
    const double cos_base = (base_height - center_z) / c;
    if (cos_base <= -1.0 || cos_base >= 1.0) fail("basal plane does not cut the surface");
    const double u_base = std::acos(cos_base);

    const int K = spec.rings;
    const int A = spec.azimuth;
    PhantomSurface surf;
    surf.ed_positions.reserve(static_cast<std::size_t>(K) * A + 1);
    for (int k = 0; k < K; ++k) {
        const double u = u_base + (M_PI - u_base) * k / K;
        for (int j = 0; j < A; ++j) {
            const double phi = 2.0 * M_PI * j / A;
            surf.ed_positions.emplace_back(a * std::sin(u) * std::cos(phi),
                                           b * std::sin(u) * std::sin(phi),
                                           center_z + c * std::cos(u));
        }
    }
    surf.ed_positions.emplace_back(0.0, 0.0, center_z - c);  // apex pole

    // Quad strips between rings, apex fan at the bottom; outward orientation.
    const auto idx = [A](int k, int j) { return k * A + (j % A); };
    for (int k = 0; k + 1 < K; ++k) {
        for (int j = 0; j < A; ++j) {
            const int va = idx(k, j), vb = idx(k, j + 1);
            const int vc = idx(k + 1, j + 1), vd = idx(k + 1, j);
            surf.faces.push_back({va, vd, vb});
            surf.faces.push_back({vb, vd, vc});
        }
    }
    const int apex = K * A;
    for (int j = 0; j < A; ++j) {
        surf.faces.push_back({idx(K - 1, j), apex, idx(K - 1, j + 1)});
    }

    // Material height fraction and defect multiplier per vertex, both frozen
    // at end-diastole. Sector geometry matches aha_parcellate.
    const std::size_t n = surf.ed_positions.size();
    surf.amp_multiplier.assign(n, 1.0);
    surf.zeta.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& p = surf.ed_positions[i];
        const double s = p.z() / base_height;
        surf.zeta[i] = s;
        const int band = band_index_for_height(s);
        const BandEffect& eff = effects[band];
        if (eff.flagged_fraction <= 0.0) continue;
        const double r = std::hypot(p.x(), p.y());
        if (r <= 1e-12) continue;  // pole: no radial motion anyway
        double az = std::atan2(p.y(), p.x());
        if (az < 0.0) az += 2.0 * M_PI;
        const int sectors = kBands[band].sector_count;
        const int sector = std::min(sectors - 1, static_cast<int>(az / (2.0 * M_PI / sectors)));
        const int segment = kBands[band].first_segment + sector;
        const auto& segs = spec.defect->segments;
        const bool flagged = std::find(segs.begin(), segs.end(), segment) != segs.end();
        surf.amp_multiplier[i] = flagged ? eff.flagged_mult : eff.unflagged_mult;
    }
    return surf;
}

PhantomModel build_model(const SubjectSpec& spec) {
    validate_spec(spec);
    PhantomModel model;
    model.base_height = spec.semi_axis_c * (1.0 + spec.base_cut);
    const auto effects = band_effects(spec);
    for (const auto& eff : effects) {
        const double worst = std::max(eff.flagged_mult, eff.unflagged_mult);
        if (spec.contraction_amplitude * worst >= 1.0) {
            fail("contraction would collapse the radius (amplitude x multiplier >= 1)");
        }
    }
    model.endo = build_surface(spec, false, model.base_height, effects);
    model.epi = build_surface(spec, true, model.base_height, effects);
    return model;
}

std::vector<Vec3> deform_surface(const PhantomSurface& surf, const SubjectSpec& spec,
                                 bool apply_twist, double w) {
    const double shorten = 1.0 - spec.longitudinal_shortening * w;
    const double twist_rad = spec.twist_degrees * M_PI / 180.0;
    std::vector<Vec3> out(surf.ed_positions.size());
    for (std::size_t i = 0; i < surf.ed_positions.size(); ++i) {
        const Vec3& p = surf.ed_positions[i];
        const double rho = 1.0 - spec.contraction_amplitude * surf.amp_multiplier[i] * w;
        double x = p.x() * rho;
        double y = p.y() * rho;
        if (apply_twist && twist_rad != 0.0) {
            // Zero-mean apex-to-base torsion profile.
            const double angle = twist_rad * (surf.zeta[i] - 0.5) * w;
            const double cs = std::cos(angle), sn = std::sin(angle);
            const double xr = cs * x - sn * y;
            const double yr = sn * x + cs * y;
            x = xr;
            y = yr;
        }
        out[i] = Vec3(x, y, p.z() * shorten);
    }
    return out;
}

}  // namespace

double analytic_cavity_volume(const SubjectSpec& spec, double w) {
    validate_spec(spec);
    const auto effects = band_effects(spec);
    const double a = spec.semi_axis_a;
    const double b = spec.semi_axis_b;
    const double c = spec.semi_axis_c;
    const double zb = c * (1.0 + spec.base_cut);
    const double amp = spec.contraction_amplitude;
    double total_mm3 = 0.0;
    for (int band = 0; band < 4; ++band) {
        // Band limits in ellipsoid-centered axial coordinate.
        const double z0 = kBands[band].s0 * zb - c;
        const double z1 = kBands[band].s1 * zb - c;
        const double slab =
            M_PI * a * b * ((z1 - z0) - (z1 * z1 * z1 - z0 * z0 * z0) / (3.0 * c * c));
        const BandEffect& eff = effects[band];
        const double rho_f = 1.0 - amp * eff.flagged_mult * w;
        const double rho_u = 1.0 - amp * eff.unflagged_mult * w;
        const double mean_rho2 = eff.flagged_fraction * rho_f * rho_f +
                                 (1.0 - eff.flagged_fraction) * rho_u * rho_u;
        total_mm3 += slab * mean_rho2;
    }
    total_mm3 *= 1.0 - spec.longitudinal_shortening * w;
    return total_mm3 / 1000.0;
}

double analytic_ejection_fraction(const SubjectSpec& spec) {
    const double v_ed = analytic_cavity_volume(spec, 0.0);
    const double v_es = analytic_cavity_volume(spec, 1.0);
    return (v_ed - v_es) / v_ed * 100.0;
}

std::vector<Vec3> analytic_positions(const SubjectSpec& spec, bool epi, double w) {
    const PhantomModel model = build_model(spec);
    const PhantomSurface& surf = epi ? model.epi : model.endo;
    return deform_surface(surf, spec, epi, w);
}

int phantom_vertex_index(const SubjectSpec& spec, int ring, int az) {
    if (ring == spec.rings) return spec.rings * spec.azimuth;
    return ring * spec.azimuth + (az % spec.azimuth);
}

LvSequence synth_subject(const SubjectSpec& spec) {
    const PhantomModel model = build_model(spec);
    LvSequence seq;
    seq.subject_id = spec.subject_id;
    seq.frame_interval_ms = spec.frame_interval_ms;
    seq.frames.resize(spec.frames);
    for (int t = 0; t < spec.frames; ++t) {
        const double w = cycle_waveform(static_cast<double>(t) / spec.frames, spec.timing);
        auto& frame = seq.frames[t];
        frame.endo.vertices = deform_surface(model.endo, spec, false, w);
        frame.endo.faces = model.endo.faces;
        frame.epi.vertices = deform_surface(model.epi, spec, true, w);
        frame.epi.faces = model.epi.faces;
        const double shorten = 1.0 - spec.longitudinal_shortening * w;
        frame.basal_plane.point = Vec3(0.0, 0.0, model.base_height * shorten);
        frame.basal_plane.normal = Vec3(0.0, 0.0, 1.0);
    }
    return seq;
}

namespace {

double standardized_covariate(const CohortConfig& cfg, const CovariateRecord& rec,
                              const std::string& name) {
    if (name == "age") return (rec.age - cfg.age_mean) / cfg.age_sd;
    if (name == "bmi") return (rec.bmi - cfg.bmi_mean) / cfg.bmi_sd;
    if (name == "bfp") return (rec.bfp - cfg.bfp_mean) / cfg.bfp_sd;
    if (name == "bmr") return (rec.bmr - cfg.bmr_mean) / cfg.bmr_sd;
    // Categorical flags enter as 0/1: the effect is the group contrast.
    return covariate_value(rec, name);
}

}  // namespace

Cohort synth_cohort(const CohortConfig& config) {
    if (config.subjects < 2) fail("need at least 2 subjects");
    Cohort cohort;
    cohort.sequences.reserve(config.subjects);
    cohort.specs.reserve(config.subjects);
    Rng rng(config.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    for (int i = 0; i < config.subjects; ++i) {
        CovariateRecord rec;
        rec.age = std::clamp(config.age_mean + config.age_sd * gauss(rng), 40.0, 75.0);
        rec.bmi = std::max(15.0, config.bmi_mean + config.bmi_sd * gauss(rng));
        rec.bfp = std::clamp(config.bfp_mean + config.bfp_sd * gauss(rng), 5.0, 60.0);
        rec.bmr = std::max(2000.0, config.bmr_mean + config.bmr_sd * gauss(rng));
        rec.smoking = unif(rng) < config.smoking_rate ? 1 : 0;
        rec.alcohol = unif(rng) < config.alcohol_rate ? 1 : 0;
        rec.hypertension = unif(rng) < config.hypertension_rate ? 1 : 0;

        SubjectSpec spec = config.base;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "s%04d", i);
        spec.subject_id = buf;
        spec.seed = config.seed ^ fnv1a64(&i, sizeof(i));
        spec.covariates = rec;

        double amp_shift = 0.0, short_shift = 0.0, twist_shift = 0.0, defect_severity = 0.0;
        for (const auto& wiring : config.effects) {
            const double x = standardized_covariate(config, rec, wiring.covariate);
            const double delta = wiring.effect_size * x;
            switch (wiring.target) {
                case MotionParam::ContractionAmplitude: amp_shift += delta; break;
                case MotionParam::LongitudinalShortening: short_shift += delta; break;
                case MotionParam::Twist: twist_shift += delta; break;
                case MotionParam::DefectAmplitude: defect_severity += delta; break;
            }
        }
        amp_shift += config.noise_level * gauss(rng);
        short_shift += config.noise_level * gauss(rng);
        twist_shift += config.noise_level * gauss(rng);

        spec.contraction_amplitude =
            std::clamp(spec.contraction_amplitude * (1.0 + amp_shift), 0.02, 0.9);
        spec.longitudinal_shortening =
            std::clamp(spec.longitudinal_shortening * (1.0 + short_shift), 0.0, 0.9);
        spec.twist_degrees = std::clamp(spec.twist_degrees * (1.0 + twist_shift), -60.0, 60.0);
        if (defect_severity > 0.0) {
            const double severity = std::min(1.0, defect_severity);
            RegionalDefect defect = config.defect_template;
            defect.amplitude_multiplier =
                1.0 + severity * (config.defect_template.amplitude_multiplier - 1.0);
            spec.defect = defect;
        }

        cohort.sequences.push_back(synth_subject(spec));
        cohort.covariates.subject_ids.push_back(spec.subject_id);
        cohort.covariates.records.push_back(rec);
        cohort.specs.push_back(std::move(spec));
    }
    return cohort;
}

ArtifactKind artifact_kind_from_string(const std::string& name) {
    if (name == "double_systolic_peak") return ArtifactKind::DoubleSystolicPeak;
    if (name == "bumpy_inflow") return ArtifactKind::BumpyInflow;
    if (name == "unstable_diastasis") return ArtifactKind::UnstableDiastasis;
    if (name == "extra_atrial_peak") return ArtifactKind::ExtraAtrialPeak;
    fail("unknown artifact kind '" + name + "'");
}

std::string to_string(ArtifactKind kind) {
    switch (kind) {
        case ArtifactKind::DoubleSystolicPeak: return "double_systolic_peak";
        case ArtifactKind::BumpyInflow: return "bumpy_inflow";
        case ArtifactKind::UnstableDiastasis: return "unstable_diastasis";
        case ArtifactKind::ExtraAtrialPeak: return "extra_atrial_peak";
    }
    fail("unknown artifact kind");
}

namespace {

// Reshapes the monotone rise/fall of curve values over index range
// [first, last] (inclusive, cyclic) into a two-hump rate profile while
// keeping the endpoint values fixed. mag = 0 keeps the segment unchanged.
void remap_two_hump(std::vector<double>& values, int first, int last, double mag,
                    double center_a, double center_b, double width) {
    if (mag == 0.0) return;
    const int t_count = static_cast<int>(values.size());
    const int span = (last - first + t_count) % t_count;
    if (span < 3) return;
    std::vector<double> increments(span);
    std::vector<double> weights(span);
    double total_abs = 0.0;
    for (int k = 0; k < span; ++k) {
        const int i0 = (first + k) % t_count;
        const int i1 = (first + k + 1) % t_count;
        increments[k] = values[i1] - values[i0];
        total_abs += std::abs(increments[k]);
    }
    // Blend the natural rate profile with a synthetic two-hump profile whose
    // saddle sits at ~30% of the hump height, deep enough to leave two
    // prominent peaks after the QC smoothing window but too shallow to split
    // the phase at the 20% rate threshold.
    double total = 0.0;
    for (int k = 0; k < span; ++k) {
        const double x = (k + 0.5) / span;
        const double profile = 0.16 + hann_bump((x - center_a) / width + 0.5) +
                               hann_bump((x - center_b) / width + 0.5);
        weights[k] = (1.0 - mag) * std::abs(increments[k]) +
                     mag * total_abs * profile / span;
        total += weights[k];
    }
    const double segment_change =
        std::accumulate(increments.begin(), increments.end(), 0.0);
    if (total <= 0.0) return;
    double acc = 0.0;
    for (int k = 0; k + 1 < span; ++k) {
        acc += weights[k];
        const int i = (first + k + 1) % t_count;
        values[i] = values[first % t_count] + segment_change * (acc / total);
    }
}

}  // namespace

LvSequence inject_artifact(const LvSequence& seq, ArtifactKind kind, double magnitude) {
    const geometry::VolumeCurve curve = geometry::volume_curve(seq);
    const int t_count = static_cast<int>(curve.size());
    const auto& v = curve.volumes_ml;
    const int ed = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    const int es = static_cast<int>(std::min_element(v.begin(), v.end()) - v.begin());
    const int dia_len = (ed + t_count - es) % t_count;

    std::vector<double> target = v;
    switch (kind) {
        case ArtifactKind::DoubleSystolicPeak:
            remap_two_hump(target, ed, es, magnitude, 0.28, 0.72, 0.40);
            break;
        case ArtifactKind::BumpyInflow: {
            // Rapid inflow plus the early diastasis, so the second rate hump
            // survives the QC smoothing window.
            const int inflow_end = (es + std::max(5, static_cast<int>(0.45 * dia_len))) % t_count;
            remap_two_hump(target, es, inflow_end, magnitude, 0.25, 0.72, 0.30);
            break;
        }
        case ArtifactKind::UnstableDiastasis: {
            // Smooth swing confined to mid-diastasis; calibrated so the
            // realized (max-min)/V(start) equals 12% at magnitude 1.
            const int d0 = (es + static_cast<int>(0.36 * dia_len)) % t_count;
            const int span = std::max(3, static_cast<int>(0.32 * dia_len));
            double lo = 0.0, hi = 0.0;
            std::vector<double> wave(span + 1);
            for (int k = 0; k <= span; ++k) {
                const double x = static_cast<double>(k) / span;
                wave[k] = std::sin(2.0 * M_PI * x) * hann_bump(x);
                lo = std::min(lo, wave[k]);
                hi = std::max(hi, wave[k]);
            }
            const double scale = (hi - lo) > 0.0 ? 0.12 * magnitude / (hi - lo) : 0.0;
            for (int k = 0; k <= span; ++k) {
                target[(d0 + k) % t_count] *= 1.0 + scale * wave[k];
            }
            break;
        }
        case ArtifactKind::ExtraAtrialPeak: {
            // Late diastasis plus atrial systole: the extra kick lands just
            // ahead of the real one with a saddle that keeps both in the
            // terminal peak group.
            const int atrial_start = (es + static_cast<int>(0.58 * dia_len)) % t_count;
            remap_two_hump(target, atrial_start, ed, magnitude, 0.28, 0.74, 0.30);
            break;
        }
    }

    LvSequence out = seq;
    for (int t = 0; t < t_count; ++t) {
        if (target[t] == v[t]) continue;
        const double s = std::cbrt(target[t] / v[t]);
        auto& frame = out.frames[t];
        const Vec3 center = geometry::centroid(frame.endo.vertices);
        for (auto& p : frame.endo.vertices) p = center + s * (p - center);
        for (auto& p : frame.epi.vertices) p = center + s * (p - center);
        frame.basal_plane.point = center + s * (frame.basal_plane.point - center);
    }
    return out;
}

}  // namespace cma::cohort
