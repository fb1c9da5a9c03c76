#include "cma/pipeline.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace cma::pipeline {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

const std::map<std::string, std::string>& default_values() {
    static const std::map<std::string, std::string> defaults = {
        {"seed", "1"},
        {"jobs", "1"},
        {"output", "out"},
        // Cohort synthesis.
        {"cohort.subjects", "300"},
        {"cohort.frames", "20"},
        {"cohort.noise_level", "0.03"},
        {"cohort.artifact_fraction", "0"},
        {"cohort.artifact_kinds", "double_systolic_peak,unstable_diastasis"},
        // covariate -> target:size, comma separated; empty = no wiring.
        {"cohort.effects", ""},
        {"cohort.defect.segments", "2,3,8,9"},
        {"cohort.defect.multiplier", "0.6"},
        {"cohort.defect.preserve_ef", "0"},
        {"cohort.age_mean", "61"},
        {"cohort.age_sd", "8"},
        {"cohort.bmi_mean", "26.4"},
        {"cohort.bmi_sd", "4.2"},
        {"cohort.bfp_mean", "28.2"},
        {"cohort.bfp_sd", "7.7"},
        {"cohort.bmr_mean", "6650.1"},
        {"cohort.bmr_sd", "1324.9"},
        {"cohort.smoking_rate", "0.382"},
        {"cohort.alcohol_rate", "0.489"},
        {"cohort.hypertension_rate", "0.484"},
        // Phantom geometry and motion defaults.
        {"phantom.semi_axis_a", "25"},
        {"phantom.semi_axis_b", "25"},
        {"phantom.semi_axis_c", "60"},
        {"phantom.wall_thickness", "9"},
        {"phantom.base_cut", "0.45"},
        {"phantom.rings", "12"},
        {"phantom.azimuth", "24"},
        {"phantom.amplitude", "0.30"},
        {"phantom.shortening", "0.18"},
        {"phantom.twist_degrees", "6"},
        {"phantom.frame_interval_ms", "50"},
        // QC thresholds.
        {"qc.enabled", "1"},
        {"qc.prominence", "0.05"},
        {"qc.inflow_fraction", "0.20"},
        {"qc.diastasis_swing", "0.10"},
        {"qc.smoothing_window", "5"},
        // Atlas formation.
        {"atlas.medial_target", "1000"},
        {"atlas.tps_lambda", "0"},
        {"atlas.gpa_tol", "1e-10"},
        {"atlas.gpa_max_iter", "200"},
        // Motion fitting.
        {"motion.ffd_spacing", "20"},
        {"motion.ffd_ridge", "-1"},
        {"motion.spacing4d", "25"},
        {"motion.temporal_spacing", "5"},
        // Dimensionality reduction.
        {"embed.pca_variance", "0.99"},
        {"embed.lle_neighbours", "10"},
        {"embed.lle_regularization", "1e-3"},
        {"embed.lle_grid", "1"},
        {"embed.lle_d", "8"},
        {"embed.grid_max", "64"},
        {"embed.sda_grid", "0"},
        {"embed.sda_d", "16"},
        {"embed.sda_widths", "auto"},
        {"embed.sda_learning_rate", "0.01"},
        {"embed.sda_corruption", "0.5"},
        {"embed.sda_pretrain_epochs", "12"},
        {"embed.sda_finetune_epochs", "25"},
        {"embed.sda_batch", "32"},
        // Statistics.
        {"stats.alpha", "0.05"},
        {"stats.bonferroni_m", "7"},
    };
    return defaults;
}

}  // namespace

PipelineConfig::PipelineConfig() : values_(default_values()) {}

PipelineConfig PipelineConfig::from_file(const std::string& path,
                                         const std::vector<std::string>& overrides) {
    PipelineConfig config;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line.substr(0, line.find('#')));
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
        }
        config.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    }
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set needs KEY=VALUE, got '" + kv + "'");
        config.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    return config;
}

PipelineConfig PipelineConfig::from_overrides(const std::vector<std::string>& overrides) {
    PipelineConfig config;
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set needs KEY=VALUE, got '" + kv + "'");
        config.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    return config;
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
    if (!default_values().count(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
}

std::string PipelineConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

double PipelineConfig::get_double(const std::string& key) const {
    const std::string v = get(key);
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not a number: '" + v + "'");
    }
}

int PipelineConfig::get_int(const std::string& key) const {
    const double x = get_double(key);
    const int i = static_cast<int>(x);
    if (static_cast<double>(i) != x) {
        throw ConfigError("config key '" + key + "' is not an integer");
    }
    return i;
}

std::uint64_t PipelineConfig::get_seed(const std::string& key) const {
    const std::string v = get(key);
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not a seed: '" + v + "'");
    }
}

bool PipelineConfig::get_bool(const std::string& key) const {
    const std::string v = get(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: '" + v + "'");
}

std::string PipelineConfig::normalized_text() const {
    std::ostringstream out;
    for (const auto& [key, value] : values_) out << key << " = " << value << '\n';
    return out.str();
}

std::string PipelineConfig::slice(const std::vector<std::string>& prefixes) const {
    std::ostringstream out;
    for (const auto& [key, value] : values_) {
        for (const auto& prefix : prefixes) {
            if (key.rfind(prefix, 0) == 0) {
                out << key << " = " << value << '\n';
                break;
            }
        }
    }
    return out.str();
}

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string token;
    std::istringstream ss(s);
    while (std::getline(ss, token, ',')) {
        token.erase(std::remove_if(token.begin(), token.end(), ::isspace), token.end());
        if (!token.empty()) out.push_back(token);
    }
    return out;
}

cohort::MotionParam parse_target(const std::string& name) {
    if (name == "amplitude") return cohort::MotionParam::ContractionAmplitude;
    if (name == "shortening") return cohort::MotionParam::LongitudinalShortening;
    if (name == "twist") return cohort::MotionParam::Twist;
    if (name == "defect") return cohort::MotionParam::DefectAmplitude;
    throw ConfigError("unknown effect target '" + name +
                      "' (expected amplitude|shortening|twist|defect)");
}

}  // namespace

cohort::CohortConfig PipelineConfig::cohort_config() const {
    cohort::CohortConfig cfg;
    cfg.subjects = get_int("cohort.subjects");
    cfg.seed = get_seed("seed");
    cfg.noise_level = get_double("cohort.noise_level");
    cfg.age_mean = get_double("cohort.age_mean");
    cfg.age_sd = get_double("cohort.age_sd");
    cfg.bmi_mean = get_double("cohort.bmi_mean");
    cfg.bmi_sd = get_double("cohort.bmi_sd");
    cfg.bfp_mean = get_double("cohort.bfp_mean");
    cfg.bfp_sd = get_double("cohort.bfp_sd");
    cfg.bmr_mean = get_double("cohort.bmr_mean");
    cfg.bmr_sd = get_double("cohort.bmr_sd");
    cfg.smoking_rate = get_double("cohort.smoking_rate");
    cfg.alcohol_rate = get_double("cohort.alcohol_rate");
    cfg.hypertension_rate = get_double("cohort.hypertension_rate");

    auto& base = cfg.base;
    base.semi_axis_a = get_double("phantom.semi_axis_a");
    base.semi_axis_b = get_double("phantom.semi_axis_b");
    base.semi_axis_c = get_double("phantom.semi_axis_c");
    base.wall_thickness = get_double("phantom.wall_thickness");
    base.base_cut = get_double("phantom.base_cut");
    base.rings = get_int("phantom.rings");
    base.azimuth = get_int("phantom.azimuth");
    base.contraction_amplitude = get_double("phantom.amplitude");
    base.longitudinal_shortening = get_double("phantom.shortening");
    base.twist_degrees = get_double("phantom.twist_degrees");
    base.frames = get_int("cohort.frames");
    base.frame_interval_ms = get_double("phantom.frame_interval_ms");

    cfg.defect_template.segments.clear();
    for (const auto& seg : split_list(get("cohort.defect.segments"))) {
        try {
            cfg.defect_template.segments.push_back(std::stoi(seg));
        } catch (const std::exception&) {
            throw ConfigError("bad defect segment '" + seg + "'");
        }
    }
    cfg.defect_template.amplitude_multiplier = get_double("cohort.defect.multiplier");
    cfg.defect_template.preserve_ef = get_bool("cohort.defect.preserve_ef");

    for (const auto& item : split_list(get("cohort.effects"))) {
        const auto eq = item.find('=');
        const auto colon = item.find(':');
        if (eq == std::string::npos || colon == std::string::npos || colon < eq) {
            throw ConfigError("bad effect '" + item + "' (expected covariate=target:size)");
        }
        cohort::EffectWiring wiring;
        wiring.covariate = item.substr(0, eq);
        wiring.target = parse_target(item.substr(eq + 1, colon - eq - 1));
        try {
            wiring.effect_size = std::stod(item.substr(colon + 1));
        } catch (const std::exception&) {
            throw ConfigError("bad effect size in '" + item + "'");
        }
        bool known = false;
        for (const auto& name : covariate_names()) known |= (name == wiring.covariate);
        if (!known) throw ConfigError("unknown covariate in effect '" + item + "'");
        cfg.effects.push_back(wiring);
    }
    return cfg;
}

qc::QcThresholds PipelineConfig::qc_thresholds() const {
    qc::QcThresholds thr;
    thr.peak_prominence = get_double("qc.prominence");
    thr.inflow_rate_fraction = get_double("qc.inflow_fraction");
    thr.diastasis_max_swing = get_double("qc.diastasis_swing");
    thr.smoothing_window = get_int("qc.smoothing_window");
    if (thr.peak_prominence < 0.0 || thr.peak_prominence > 1.0 ||
        thr.inflow_rate_fraction <= 0.0 || thr.inflow_rate_fraction >= 1.0 ||
        thr.diastasis_max_swing <= 0.0 || thr.smoothing_window < 1 ||
        thr.smoothing_window % 2 == 0) {
        throw ConfigError("QC thresholds out of range");
    }
    return thr;
}

}  // namespace cma::pipeline
