#pragma once

#include <string>
#include <vector>

namespace cma {

/// Per-subject clinical covariates; continuous fields plus 0/1 flags.
struct CovariateRecord {
    double age = 0.0;   // years
    double bmi = 0.0;   // kg/m^2
    double bfp = 0.0;   // body fat %
    double bmr = 0.0;   // kJ
    int smoking = 0;
    int alcohol = 0;
    int hypertension = 0;
};

struct CovariateTable {
    std::vector<std::string> subject_ids;
    std::vector<CovariateRecord> records;

    std::size_t size() const { return records.size(); }
};

inline const std::vector<std::string>& covariate_names() {
    static const std::vector<std::string> names = {"age",     "bmi",     "bfp",         "bmr",
                                                   "smoking", "alcohol", "hypertension"};
    return names;
}

inline bool covariate_is_categorical(const std::string& name) {
    return name == "smoking" || name == "alcohol" || name == "hypertension";
}

/// Value of a named covariate (categorical flags returned as 0/1 doubles).
double covariate_value(const CovariateRecord& r, const std::string& name);

}  // namespace cma
