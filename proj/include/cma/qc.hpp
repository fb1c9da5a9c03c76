#pragma once

#include "cma/geometry.hpp"

#include <string>
#include <vector>

namespace cma::qc {

using geometry::VolumeCurve;

enum class Reason {
    SystoleMultiPeak,
    InflowMultiPeak,
    DiastasisUnstable,
    AtrialMultiPeak,
    MalformedCurve,
};

std::string to_string(Reason reason);

struct QcThresholds {
    double peak_prominence = 0.05;      // fraction of max |dV/dt| after smoothing
    double inflow_rate_fraction = 0.20; // rapid-inflow boundary, fraction of peak inflow rate
    double diastasis_max_swing = 0.10;  // strict: swings above this fail
    int smoothing_window = 5;           // centered moving average, cyclic
};

/// Diastolic phase boundaries. All indices are absolute frame indices; a
/// phase [begin, end) is walked cyclically. diastasis may be empty.
struct DiastolicPhases {
    int rapid_inflow_begin = 0;  // == es index
    int rapid_inflow_end = 0;    // first frame past rapid inflow
    int diastasis_end = 0;       // first frame of atrial systole (== end of diastole if none)
    int diastole_end = 0;        // == ed index + T
    bool diastasis_empty = false;
};

struct QcReport {
    bool pass = false;
    std::vector<Reason> reasons;
    int ed_index = 0;
    int es_index = 0;
    DiastolicPhases phases;
    bool diastasis_empty = false;  // informational, not a failure
};

/// (argmax, argmin) of the curve, earliest index on ties.
/// Throws on a constant curve (malformed).
std::pair<int, int> detect_ed_es(const VolumeCurve& curve);

/// True iff the systolic descent ED -> ES has a single prominent peak of
/// -dV/dt. Throws on segments shorter than 3 samples.
bool analyze_systole(const VolumeCurve& curve, int ed, int es, const QcThresholds& thr = {});

/// Splits diastole (ES -> next ED) into rapid inflow, diastasis and atrial
/// systole. Rapid inflow ends where dV/dt first falls below the configured
/// fraction of the peak inflow rate (after that peak). Atrial systole starts
/// at the rate valley preceding the terminal group of prominent dV/dt peaks;
/// peaks are grouped while the saddle between them stays above 20% of the
/// group maximum. Diastasis is the remainder and may be empty.
DiastolicPhases segment_diastole(const VolumeCurve& curve, int es, int ed,
                                 const QcThresholds& thr = {});

/// Diastolic rules: multi-peak rapid inflow, unstable diastasis
/// (relative swing above threshold, strict), multi-peak atrial systole.
std::vector<Reason> analyze_diastole(const VolumeCurve& curve, const DiastolicPhases& phases,
                                     const QcThresholds& thr = {});

/// Full screen. A malformed curve short-circuits with that single reason.
QcReport qc_volume_curve(const VolumeCurve& curve, const QcThresholds& thr = {});

/// Smoothed cyclic derivative (per frame) used by the rules; exposed for
/// tests and reporting.
std::vector<double> smoothed_rate(const VolumeCurve& curve, int window = 5);

}  // namespace cma::qc
