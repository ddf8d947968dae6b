#pragma once

#include "qrlab/common.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <string>

namespace qrlab {

inline double norm_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Upper tail 1 - Phi(x), accurate for large x.
inline double norm_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

inline double norm_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("norm_quantile", "probability must be in (0,1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

/// Error laws of the location-scale family.
enum class ErrorKind { normal, uniform, exponential, student_t };

struct ErrorDist {
    ErrorKind kind = ErrorKind::normal;
    double df = 0.0;  // Student-t degrees of freedom

    static ErrorDist normal() { return {ErrorKind::normal, 0.0}; }
    static ErrorDist uniform() { return {ErrorKind::uniform, 0.0}; }
    static ErrorDist exponential() { return {ErrorKind::exponential, 0.0}; }
    static ErrorDist student_t(double df) {
        require(df > 0.0, "ErrorDist", "Student-t degrees of freedom must be positive");
        return {ErrorKind::student_t, df};
    }

    double cdf(double e) const {
        switch (kind) {
        case ErrorKind::normal: return norm_cdf(e);
        case ErrorKind::uniform: return std::clamp(e, 0.0, 1.0);
        case ErrorKind::exponential: return e <= 0.0 ? 0.0 : -std::expm1(-e);
        case ErrorKind::student_t:
            return boost::math::cdf(boost::math::students_t_distribution<double>(df), e);
        }
        return 0.0;
    }

    /// 1 - cdf(e), computed without cancellation where possible.
    double sf(double e) const {
        switch (kind) {
        case ErrorKind::normal: return norm_sf(e);
        case ErrorKind::uniform: return 1.0 - std::clamp(e, 0.0, 1.0);
        case ErrorKind::exponential: return e <= 0.0 ? 1.0 : std::exp(-e);
        case ErrorKind::student_t:
            return boost::math::cdf(
                boost::math::complement(boost::math::students_t_distribution<double>(df), e));
        }
        return 0.0;
    }

    double pdf(double e) const {
        switch (kind) {
        case ErrorKind::normal: return norm_pdf(e);
        case ErrorKind::uniform: return (e > 0.0 && e < 1.0) ? 1.0 : 0.0;
        case ErrorKind::exponential: return e < 0.0 ? 0.0 : std::exp(-e);
        case ErrorKind::student_t:
            return boost::math::pdf(boost::math::students_t_distribution<double>(df), e);
        }
        return 0.0;
    }

    double quantile(double u) const {
        if (!(u > 0.0 && u < 1.0)) throw InvalidArgument("quantile", "tau must lie in (0,1)");
        switch (kind) {
        case ErrorKind::normal: return norm_quantile(u);
        case ErrorKind::uniform: return u;
        case ErrorKind::exponential: return -std::log1p(-u);
        case ErrorKind::student_t:
            return boost::math::quantile(boost::math::students_t_distribution<double>(df), u);
        }
        return 0.0;
    }

    /// d/dtau of the quantile function: the sparsity 1/f(F^-1(tau)).
    double sparsity(double tau) const { return 1.0 / pdf(quantile(tau)); }

    std::string name() const {
        switch (kind) {
        case ErrorKind::normal: return "normal";
        case ErrorKind::uniform: return "uniform";
        case ErrorKind::exponential: return "exponential";
        case ErrorKind::student_t: return "student_t";
        }
        return "";
    }

    static ErrorDist parse(const std::string& s, double df = 0.0) {
        if (s == "normal") return normal();
        if (s == "uniform") return uniform();
        if (s == "exponential") return exponential();
        if (s == "student_t" || s == "t") return student_t(df);
        throw InvalidArgument("error_dist", "unknown error distribution '" + s + "'");
    }
};

}  // namespace qrlab
