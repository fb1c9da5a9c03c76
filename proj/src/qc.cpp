#include "cma/qc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cma::qc {

namespace {

struct MalformedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<double> cyclic_smooth(const std::vector<double>& v, int window) {
    const int n = static_cast<int>(v.size());
    if (window <= 1) return v;
    const int half = window / 2;
    std::vector<double> out(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int k = -half; k <= half; ++k) sum += v[((i + k) % n + n) % n];
        out[i] = sum / (2 * half + 1);
    }
    return out;
}

// Topographic prominence of the local maxima of y (a linear segment, not
// cyclic). A plateau counts as one peak at its first sample.
struct Peak {
    int index;
    double prominence;
};

std::vector<Peak> find_peaks(const std::vector<double>& y) {
    const int n = static_cast<int>(y.size());
    std::vector<Peak> peaks;
    for (int i = 1; i + 1 < n; ++i) {
        if (!(y[i] > y[i - 1])) continue;
        int j = i;
        while (j + 1 < n && y[j + 1] == y[i]) ++j;  // plateau
        if (j + 1 >= n || !(y[j + 1] < y[i])) continue;
        double left_min = y[i];
        for (int k = i - 1; k >= 0; --k) {
            if (y[k] > y[i]) break;
            left_min = std::min(left_min, y[k]);
        }
        double right_min = y[i];
        for (int k = j + 1; k < n; ++k) {
            if (y[k] > y[i]) break;
            right_min = std::min(right_min, y[k]);
        }
        peaks.push_back({i, y[i] - std::max(left_min, right_min)});
        i = j;
    }
    return peaks;
}

int count_prominent(const std::vector<double>& y, double min_prominence) {
    int count = 0;
    for (const auto& p : find_peaks(y)) {
        if (p.prominence >= min_prominence) ++count;
    }
    return count;
}

std::vector<double> segment_of(const std::vector<double>& v, int begin, int length) {
    const int n = static_cast<int>(v.size());
    std::vector<double> out(length);
    for (int k = 0; k < length; ++k) out[k] = v[((begin + k) % n + n) % n];
    return out;
}

void validate_curve(const VolumeCurve& curve) {
    if (curve.size() < 4) throw MalformedError("too few frames");
    for (double v : curve.volumes_ml) {
        if (!std::isfinite(v) || v <= 0.0) throw MalformedError("non-positive volume sample");
    }
}

}  // namespace

std::string to_string(Reason reason) {
    switch (reason) {
        case Reason::SystoleMultiPeak: return "systole-multi-peak";
        case Reason::InflowMultiPeak: return "inflow-multi-peak";
        case Reason::DiastasisUnstable: return "diastasis-unstable";
        case Reason::AtrialMultiPeak: return "atrial-multi-peak";
        case Reason::MalformedCurve: return "malformed-curve";
    }
    return "unknown";
}

std::vector<double> smoothed_rate(const VolumeCurve& curve, int window) {
    const auto smooth = cyclic_smooth(curve.volumes_ml, window);
    const int n = static_cast<int>(smooth.size());
    std::vector<double> rate(n);
    for (int i = 0; i < n; ++i) {
        rate[i] = 0.5 * (smooth[(i + 1) % n] - smooth[(i - 1 + n) % n]);
    }
    return rate;
}

std::pair<int, int> detect_ed_es(const VolumeCurve& curve) {
    validate_curve(curve);
    const auto& v = curve.volumes_ml;
    int ed = 0, es = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i) {
        if (v[i] > v[ed]) ed = i;
        if (v[i] < v[es]) es = i;
    }
    if (v[ed] == v[es]) throw MalformedError("constant volume curve");
    return {ed, es};
}

bool analyze_systole(const VolumeCurve& curve, int ed, int es, const QcThresholds& thr) {
    const int n = static_cast<int>(curve.size());
    const int len = (es - ed + n) % n + 1;
    if (len < 3) throw MalformedError("systolic segment shorter than 3 samples");
    const auto rate = smoothed_rate(curve, thr.smoothing_window);
    double max_abs = 0.0;
    for (double r : rate) max_abs = std::max(max_abs, std::abs(r));
    auto seg = segment_of(rate, ed, len);
    for (double& r : seg) r = -r;  // downslope: peaks of -dV/dt
    return count_prominent(seg, thr.peak_prominence * max_abs) <= 1;
}

DiastolicPhases segment_diastole(const VolumeCurve& curve, int es, int ed,
                                 const QcThresholds& thr) {
    const int n = static_cast<int>(curve.size());
    const int len = (ed - es + n) % n;  // diastole spans es .. es+len (== next ed)
    if (len < 3) throw MalformedError("diastolic segment shorter than 3 samples");
    const auto rate_full = smoothed_rate(curve, thr.smoothing_window);
    double max_abs = 0.0;
    for (double r : rate_full) max_abs = std::max(max_abs, std::abs(r));
    const auto rate = segment_of(rate_full, es, len + 1);

    // Rapid inflow: up to the first drop below the relative rate threshold
    // after the inflow peak.
    int peak_at = 0;
    for (int k = 1; k <= len; ++k) {
        if (rate[k] > rate[peak_at]) peak_at = k;
    }
    if (!(rate[peak_at] > 0.0)) throw MalformedError("no inflow in diastole");
    const double inflow_threshold = thr.inflow_rate_fraction * rate[peak_at];
    int inflow_end = len;  // may never drop below: no diastasis
    for (int k = peak_at + 1; k <= len; ++k) {
        if (rate[k] < inflow_threshold) {
            inflow_end = k;
            break;
        }
    }

    // Terminal peak group for atrial systole: prominent rate peaks after the
    // inflow peak, merged backwards from the last one while the saddle stays
    // above 20% of the group maximum and the peaks sit within a quarter of
    // the diastole of each other (double atrial kicks are close together;
    // a separate E wave is not).
    const auto peaks = find_peaks(rate);
    std::vector<int> late_peaks;
    for (const auto& p : peaks) {
        if (p.index > peak_at && p.prominence >= thr.peak_prominence * max_abs) {
            late_peaks.push_back(p.index);
        }
    }
    int atrial_begin = len;  // empty if no late peaks
    if (!late_peaks.empty()) {
        int first_of_group = late_peaks.back();
        double group_max = rate[first_of_group];
        for (int p = static_cast<int>(late_peaks.size()) - 2; p >= 0; --p) {
            const int cand = late_peaks[p];
            if (first_of_group - cand > len / 4) break;
            double saddle = rate[cand];
            for (int k = cand; k <= first_of_group; ++k) saddle = std::min(saddle, rate[k]);
            const double merged_max = std::max(group_max, rate[cand]);
            if (saddle < 0.2 * merged_max) break;
            first_of_group = cand;
            group_max = merged_max;
        }
        // Upstroke onset: after the last sub-floor rate before the group, or
        // at the rate valley behind the group when the rate never drops.
        const double floor_rate = 0.2 * group_max;
        int previous_peak = peak_at;
        for (int p : late_peaks) {
            if (p < first_of_group) previous_peak = p;
        }
        atrial_begin = -1;
        for (int k = first_of_group; k > previous_peak; --k) {
            if (rate[k - 1] < floor_rate) {
                atrial_begin = k;
                break;
            }
        }
        if (atrial_begin < 0) {
            atrial_begin = first_of_group;
            for (int k = first_of_group; k > previous_peak; --k) {
                if (rate[k] <= rate[atrial_begin]) atrial_begin = k;
            }
        }
    }

    if (atrial_begin < inflow_end) {
        // The terminal upstroke begins inside what the threshold rule still
        // calls rapid inflow: no diastasis, atrial boundary wins.
        inflow_end = atrial_begin;
    }

    DiastolicPhases phases;
    phases.rapid_inflow_begin = es;
    phases.rapid_inflow_end = es + inflow_end;
    phases.diastasis_end = es + atrial_begin;
    phases.diastole_end = es + len;
    phases.diastasis_empty = (atrial_begin <= inflow_end);
    return phases;
}

std::vector<Reason> analyze_diastole(const VolumeCurve& curve, const DiastolicPhases& phases,
                                     const QcThresholds& thr) {
    std::vector<Reason> reasons;
    const int n = static_cast<int>(curve.size());
    const auto rate_full = smoothed_rate(curve, thr.smoothing_window);
    double max_abs = 0.0;
    for (double r : rate_full) max_abs = std::max(max_abs, std::abs(r));
    const double min_prom = thr.peak_prominence * max_abs;

    const int inflow_len = phases.rapid_inflow_end - phases.rapid_inflow_begin;
    if (inflow_len >= 3) {
        const auto seg = segment_of(rate_full, phases.rapid_inflow_begin, inflow_len + 1);
        if (count_prominent(seg, min_prom) > 1) reasons.push_back(Reason::InflowMultiPeak);
    }

    const int diastasis_len = phases.diastasis_end - phases.rapid_inflow_end;
    if (diastasis_len >= 1) {
        const auto seg = segment_of(curve.volumes_ml, phases.rapid_inflow_end, diastasis_len + 1);
        const double v_start = seg.front();
        const auto [lo, hi] = std::minmax_element(seg.begin(), seg.end());
        if (v_start > 0.0 && (*hi - *lo) / v_start > thr.diastasis_max_swing) {
            reasons.push_back(Reason::DiastasisUnstable);
        }
    }

    const int atrial_len = phases.diastole_end - phases.diastasis_end;
    if (atrial_len >= 3) {
        const auto seg = segment_of(rate_full, phases.diastasis_end % n, atrial_len + 1);
        if (count_prominent(seg, min_prom) > 1) reasons.push_back(Reason::AtrialMultiPeak);
    }
    return reasons;
}

QcReport qc_volume_curve(const VolumeCurve& curve, const QcThresholds& thr) {
    QcReport report;
    try {
        const auto [ed, es] = detect_ed_es(curve);
        report.ed_index = ed;
        report.es_index = es;
        if (!analyze_systole(curve, ed, es, thr)) {
            report.reasons.push_back(Reason::SystoleMultiPeak);
        }
        report.phases = segment_diastole(curve, es, ed, thr);
        report.diastasis_empty = report.phases.diastasis_empty;
        const auto diastole = analyze_diastole(curve, report.phases, thr);
        report.reasons.insert(report.reasons.end(), diastole.begin(), diastole.end());
    } catch (const MalformedError&) {
        report.reasons = {Reason::MalformedCurve};
        report.pass = false;
        return report;
    }
    report.pass = report.reasons.empty();
    return report;
}

}  // namespace cma::qc
