#include "cma/covariates.hpp"

#include <stdexcept>

namespace cma {

double covariate_value(const CovariateRecord& r, const std::string& name) {
    if (name == "age") return r.age;
    if (name == "bmi") return r.bmi;
    if (name == "bfp") return r.bfp;
    if (name == "bmr") return r.bmr;
    if (name == "smoking") return r.smoking;
    if (name == "alcohol") return r.alcohol;
    if (name == "hypertension") return r.hypertension;
    throw std::invalid_argument("unknown covariate '" + name + "'");
}

}  // namespace cma
