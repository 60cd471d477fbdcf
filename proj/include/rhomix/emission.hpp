#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rhomix/rng.hpp"

namespace rhomix {

inline constexpr double pi_v = 3.14159265358979323846;
inline constexpr double inv_sqrt_2pi = 0.39894228040143267794;

enum class FamilyKind {
    Gaussian,
    Cauchy,
    Laplace,
    SkewGaussian,
    Uniform,
    Spike,
    KnownShifted,
};

struct Interval {
    double lo = -1e12;
    double hi = 1e12;
    bool contains(double x) const { return x >= lo && x <= hi; }
    double clamp(double x) const { return std::min(std::max(x, lo), hi); }
};

// A parametric emission family: the distribution class one mixture component
// is assumed to belong to, together with its VC-index bound and the parameter
// domains used when building finite nets.
struct EmissionSpec {
    FamilyKind kind = FamilyKind::Gaussian;
    double shape = 0.0;  // SkewGaussian slant / Spike exponent in (0,1)
    // KnownShifted: a location family over a fixed base density.
    FamilyKind base_kind = FamilyKind::Gaussian;
    double base_shape = 0.0;
    double base_scale = 1.0;
    Interval location_domain{};
    std::optional<Interval> scale_domain;
    int vc_bound = 5;

    bool has_scale() const { return scale_domain.has_value(); }

    static EmissionSpec gaussian() {
        EmissionSpec s;
        s.kind = FamilyKind::Gaussian;
        s.scale_domain = Interval{1e-9, 1e12};
        s.vc_bound = 5;
        return s;
    }
    static EmissionSpec cauchy() {
        EmissionSpec s;
        s.kind = FamilyKind::Cauchy;
        s.scale_domain = Interval{1e-9, 1e12};
        s.vc_bound = 5;
        return s;
    }
    static EmissionSpec laplace() {
        EmissionSpec s;
        s.kind = FamilyKind::Laplace;
        s.vc_bound = 5;
        return s;
    }
    static EmissionSpec skew_gaussian(double slant) {
        if (!std::isfinite(slant)) throw std::domain_error("skew_gaussian: slant must be finite");
        EmissionSpec s;
        s.kind = FamilyKind::SkewGaussian;
        s.shape = slant;
        s.vc_bound = 10;
        return s;
    }
    static EmissionSpec uniform(int vc = 3) {
        EmissionSpec s;
        s.kind = FamilyKind::Uniform;
        s.scale_domain = Interval{1e-9, 1e12};
        s.vc_bound = vc;
        return s;
    }
    static EmissionSpec spike(double alpha) {
        if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("spike: alpha must lie in (0,1)");
        EmissionSpec s;
        s.kind = FamilyKind::Spike;
        s.shape = alpha;
        s.vc_bound = 10;
        return s;
    }
    static EmissionSpec known_shifted(const EmissionSpec& base, double fixed_scale) {
        if (base.kind == FamilyKind::KnownShifted)
            throw std::domain_error("known_shifted: base may not itself be known_shifted");
        if (!(fixed_scale > 0.0)) throw std::domain_error("known_shifted: fixed scale must be positive");
        EmissionSpec s;
        s.kind = FamilyKind::KnownShifted;
        s.base_kind = base.kind;
        s.base_shape = base.shape;
        s.base_scale = fixed_scale;
        s.vc_bound = base.vc_bound;  // location subfamily inherits the bound
        return s;
    }
};

struct EmissionParams {
    double location = 0.0;
    double scale = 1.0;  // 1 for location-only kinds

    friend bool operator==(const EmissionParams& a, const EmissionParams& b) {
        return a.location == b.location && a.scale == b.scale;
    }
};

inline void validate_params(const EmissionSpec& spec, const EmissionParams& p) {
    if (!(p.scale > 0.0)) throw std::domain_error("emission params: scale must be positive");
    if (!spec.location_domain.contains(p.location))
        throw std::domain_error("emission params: location outside spec domain");
    if (spec.scale_domain && !spec.scale_domain->contains(p.scale))
        throw std::domain_error("emission params: scale outside spec domain");
}

namespace detail {

inline double gaussian_pdf(double x, double mu, double sigma) {
    double t = (x - mu) / sigma;
    return inv_sqrt_2pi / sigma * std::exp(-0.5 * t * t);
}

inline double normal_cdf(double t) { return 0.5 * std::erfc(-t * 0.70710678118654752440); }

inline double cauchy_pdf(double x, double z, double s) {
    double t = (x - z) / s;
    return 1.0 / (pi_v * s * (1.0 + t * t));
}

inline double laplace_pdf(double x, double z) { return 0.5 * std::exp(-std::abs(x - z)); }

inline double skew_gaussian_pdf(double x, double z, double slant) {
    double t = x - z;
    return 2.0 * inv_sqrt_2pi * std::exp(-0.5 * t * t) * normal_cdf(slant * t);
}

inline double uniform_pdf(double x, double lo, double width) {
    return (x >= lo && x <= lo + width) ? 1.0 / width : 0.0;
}

// Density is unbounded at x == z; point evaluation there reports +infinity
// and integration routines must split the domain at z.
inline double spike_pdf(double x, double z, double alpha) {
    double r = std::abs(x - z);
    if (r > 1.0) return 0.0;
    if (r == 0.0) return std::numeric_limits<double>::infinity();
    return (1.0 - alpha) / (2.0 * std::pow(r, alpha));
}

}  // namespace detail

inline double density(const EmissionSpec& spec, const EmissionParams& p, double x) {
    if (!(p.scale > 0.0)) throw std::domain_error("density: scale must be positive");
    switch (spec.kind) {
        case FamilyKind::Gaussian: return detail::gaussian_pdf(x, p.location, p.scale);
        case FamilyKind::Cauchy: return detail::cauchy_pdf(x, p.location, p.scale);
        case FamilyKind::Laplace: return detail::laplace_pdf(x, p.location);
        case FamilyKind::SkewGaussian: return detail::skew_gaussian_pdf(x, p.location, spec.shape);
        case FamilyKind::Uniform: return detail::uniform_pdf(x, p.location, p.scale);
        case FamilyKind::Spike: return detail::spike_pdf(x, p.location, spec.shape);
        case FamilyKind::KnownShifted: {
            EmissionSpec base;
            base.kind = spec.base_kind;
            base.shape = spec.base_shape;
            return density(base, EmissionParams{p.location, spec.base_scale}, x);
        }
    }
    throw std::logic_error("density: unknown family kind");
}

inline double sample_one(const EmissionSpec& spec, const EmissionParams& p, RngStream& rng) {
    switch (spec.kind) {
        case FamilyKind::Gaussian: return p.location + p.scale * rng.normal();
        case FamilyKind::Cauchy: return p.location + p.scale * rng.cauchy();
        case FamilyKind::Laplace: return p.location + rng.laplace();
        case FamilyKind::SkewGaussian: {
            double d = spec.shape / std::sqrt(1.0 + spec.shape * spec.shape);
            double u0 = rng.normal();
            double u1 = rng.normal();
            return p.location + d * std::abs(u0) + std::sqrt(1.0 - d * d) * u1;
        }
        case FamilyKind::Uniform: return p.location + p.scale * rng.uniform01();
        case FamilyKind::Spike: {
            double r = std::pow(rng.uniform01_open0(), 1.0 / (1.0 - spec.shape));
            double sign = rng.uniform01() < 0.5 ? -1.0 : 1.0;
            return p.location + sign * r;
        }
        case FamilyKind::KnownShifted: {
            EmissionSpec base;
            base.kind = spec.base_kind;
            base.shape = spec.base_shape;
            return sample_one(base, EmissionParams{p.location, spec.base_scale}, rng);
        }
    }
    throw std::logic_error("sample_one: unknown family kind");
}

inline std::vector<double> sample(const EmissionSpec& spec, const EmissionParams& p, std::size_t n,
                                  RngStream& rng) {
    if (n < 1) throw std::domain_error("sample: n must be >= 1");
    validate_params(spec, p);
    std::vector<double> out(n);
    for (auto& x : out) x = sample_one(spec, p, rng);
    return out;
}

inline int vc_index_bound(const EmissionSpec& spec) { return spec.vc_bound; }

// ---- support metadata used by the quadrature engine ----

// Points where the density is discontinuous or kinked; integration panels are
// split there.
inline std::vector<double> density_breakpoints(const EmissionSpec& spec, const EmissionParams& p) {
    switch (spec.kind) {
        case FamilyKind::Uniform: return {p.location, p.location + p.scale};
        case FamilyKind::Spike: return {p.location - 1.0, p.location, p.location + 1.0};
        case FamilyKind::Laplace: return {p.location};
        case FamilyKind::KnownShifted: {
            EmissionSpec base;
            base.kind = spec.base_kind;
            base.shape = spec.base_shape;
            return density_breakpoints(base, EmissionParams{p.location, spec.base_scale});
        }
        default: return {};
    }
}

struct SingularPoint {
    double x = 0.0;
    double order = 0.0;  // density ~ |t-x|^{-order} near x, order in (0,1)
};

inline std::vector<SingularPoint> density_singularities(const EmissionSpec& spec,
                                                        const EmissionParams& p) {
    if (spec.kind == FamilyKind::Spike) return {{p.location, spec.shape}};
    if (spec.kind == FamilyKind::KnownShifted && spec.base_kind == FamilyKind::Spike)
        return {{p.location, spec.base_shape}};
    return {};
}

// Mass outside [lo, hi]; exact for most kinds, an upper bound for the skew
// Gaussian (density dominated by twice the standard normal).
inline double tail_mass(const EmissionSpec& spec, const EmissionParams& p, double lo, double hi) {
    auto below = [&](double t) -> double {  // P(X <= t)
        switch (spec.kind) {
            case FamilyKind::Gaussian: return detail::normal_cdf((t - p.location) / p.scale);
            case FamilyKind::Cauchy:
                return 0.5 + std::atan((t - p.location) / p.scale) / pi_v;
            case FamilyKind::Laplace: {
                double d = t - p.location;
                return d < 0.0 ? 0.5 * std::exp(d) : 1.0 - 0.5 * std::exp(-d);
            }
            case FamilyKind::SkewGaussian:
                return std::min(1.0, 2.0 * detail::normal_cdf(t - p.location));
            case FamilyKind::Uniform: {
                double u = (t - p.location) / p.scale;
                return std::min(1.0, std::max(0.0, u));
            }
            case FamilyKind::Spike: {
                double d = t - p.location;
                double a = spec.shape;
                if (d <= -1.0) return 0.0;
                if (d >= 1.0) return 1.0;
                if (d <= 0.0) return 0.5 * (1.0 - std::pow(-d, 1.0 - a));
                return 0.5 * (1.0 + std::pow(d, 1.0 - a));
            }
            case FamilyKind::KnownShifted: {
                EmissionSpec base;
                base.kind = spec.base_kind;
                base.shape = spec.base_shape;
                return tail_mass(base, EmissionParams{p.location, spec.base_scale}, t,
                                 std::numeric_limits<double>::infinity());
            }
        }
        return 0.0;
    };
    double m_lo = below(lo);
    double m_hi = 1.0 - below(hi);
    if (spec.kind == FamilyKind::SkewGaussian) {
        // both tails bounded by twice the normal tail
        m_lo = std::min(1.0, 2.0 * detail::normal_cdf(lo - p.location));
        m_hi = std::min(1.0, 2.0 * detail::normal_cdf(p.location - hi));
    }
    return std::min(1.0, m_lo + m_hi);
}

// Smallest symmetric-ish range around the location whose outside mass is <= eps.
inline std::pair<double, double> range_for_mass(const EmissionSpec& spec, const EmissionParams& p,
                                                double eps) {
    double s = spec.has_scale() ? p.scale : 1.0;
    if (spec.kind == FamilyKind::KnownShifted) s = spec.base_scale;
    double lo = p.location - 2.0 * s, hi = p.location + 2.0 * s;
    for (int i = 0; i < 400 && tail_mass(spec, p, lo, hi) > eps; ++i) {
        double w = hi - lo;
        lo -= w * 0.5;
        hi += w * 0.5;
    }
    return {lo, hi};
}

// ---- finite parameter nets ----

inline double sorted_quantile(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw std::domain_error("quantile: empty data");
    if (sorted.size() == 1) return sorted[0];
    double pos = q * static_cast<double>(sorted.size() - 1);
    auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= sorted.size()) return sorted.back();
    double frac = pos - static_cast<double>(i);
    return sorted[i] * (1.0 - frac) + sorted[i + 1] * frac;
}

// L evenly spaced locations over the data range widened by one step per side,
// and S log-uniform scales spanning [r/S, r] with r = 1.5 * IQR.
inline std::vector<EmissionParams> build_net(const EmissionSpec& spec, std::span<const double> data,
                                             std::size_t locations, std::size_t scales) {
    if (data.empty()) throw std::domain_error("build_net: empty data");
    if (locations < 1) throw std::domain_error("build_net: need at least one location");
    if (spec.has_scale() && scales < 1) throw std::domain_error("build_net: need at least one scale");

    std::vector<double> sorted(data.begin(), data.end());
    std::sort(sorted.begin(), sorted.end());
    double lo = sorted.front(), hi = sorted.back();
    double iqr = sorted_quantile(sorted, 0.75) - sorted_quantile(sorted, 0.25);
    double r = std::max(1.5 * iqr, 1e-9);

    std::size_t S = spec.has_scale() ? scales : 1;
    std::vector<double> locs, scls;
    if (locations == 1 && S == 1) {
        locs.push_back(sorted_quantile(sorted, 0.5));
    } else {
        double margin = (hi - lo) / static_cast<double>(locations);
        double a = lo - margin, b = hi + margin;
        if (locations == 1) {
            locs.push_back(sorted_quantile(sorted, 0.5));
        } else {
            for (std::size_t i = 0; i < locations; ++i)
                locs.push_back(a + (b - a) * static_cast<double>(i) /
                                       static_cast<double>(locations - 1));
        }
    }
    if (spec.has_scale()) {
        if (S == 1) {
            scls.push_back(r);
        } else {
            double s_lo = r / static_cast<double>(S);
            double ratio = std::log(r / s_lo);
            for (std::size_t j = 0; j < S; ++j)
                scls.push_back(s_lo * std::exp(ratio * static_cast<double>(j) /
                                               static_cast<double>(S - 1)));
        }
    } else {
        scls.push_back(1.0);
    }

    std::vector<EmissionParams> net;
    net.reserve(locs.size() * scls.size());
    for (double z : locs)
        for (double s : scls) {
            EmissionParams p;
            p.location = spec.location_domain.clamp(z);
            p.scale = spec.scale_domain ? spec.scale_domain->clamp(s) : 1.0;
            net.push_back(p);
        }
    return net;
}

// Like build_net but tuned for mixture fitting: the location span is clipped
// to a quantile window so far outliers and heavy-tailed draws cannot stretch
// the grid away from the bulk of the sample, and the scale grid reaches below
// the full-sample IQR, which overstates the within-component scale whenever
// the components are separated.
inline std::vector<EmissionParams> build_net_robust(const EmissionSpec& spec,
                                                    std::span<const double> data,
                                                    std::size_t locations, std::size_t scales) {
    if (data.empty()) throw std::domain_error("build_net_robust: empty data");
    std::vector<double> sorted(data.begin(), data.end());
    std::sort(sorted.begin(), sorted.end());
    double q25 = sorted_quantile(sorted, 0.25), q75 = sorted_quantile(sorted, 0.75);
    double iqr = std::max(q75 - q25, 1e-9);
    double lo = std::max(sorted.front(), sorted_quantile(sorted, 0.05) - 0.5 * iqr);
    double hi = std::min(sorted.back(), sorted_quantile(sorted, 0.95) + 0.5 * iqr);

    if (locations < 1) throw std::domain_error("build_net_robust: need at least one location");
    if (spec.has_scale() && scales < 1) throw std::domain_error("build_net_robust: need at least one scale");
    double r = std::max(1.5 * iqr, 1e-9);
    std::size_t S = spec.has_scale() ? scales : 1;

    std::vector<double> locs, scls;
    double margin = (hi - lo) / static_cast<double>(locations);
    if (locations == 1) {
        locs.push_back(sorted_quantile(sorted, 0.5));
    } else {
        double a = lo - margin, b = hi + margin;
        for (std::size_t i = 0; i < locations; ++i)
            locs.push_back(a + (b - a) * static_cast<double>(i) /
                                   static_cast<double>(locations - 1));
    }
    if (spec.has_scale()) {
        if (S == 1) {
            scls.push_back(r);
        } else {
            double s_lo = r / (3.0 * static_cast<double>(S));
            double ratio = std::log(r / s_lo);
            for (std::size_t j = 0; j < S; ++j)
                scls.push_back(s_lo * std::exp(ratio * static_cast<double>(j) /
                                               static_cast<double>(S - 1)));
        }
    } else {
        scls.push_back(1.0);
    }

    std::vector<EmissionParams> net;
    net.reserve(locs.size() * scls.size());
    for (double z : locs)
        for (double s : scls) {
            EmissionParams p;
            p.location = spec.location_domain.clamp(z);
            p.scale = spec.scale_domain ? spec.scale_domain->clamp(s) : 1.0;
            net.push_back(p);
        }
    return net;
}

// ---- stable family-kind tokens used in config files and candidate dumps ----

inline std::string kind_name(FamilyKind k) {
    switch (k) {
        case FamilyKind::Gaussian: return "gaussian";
        case FamilyKind::Cauchy: return "cauchy";
        case FamilyKind::Laplace: return "laplace";
        case FamilyKind::SkewGaussian: return "skew_gaussian";
        case FamilyKind::Uniform: return "uniform";
        case FamilyKind::Spike: return "spike";
        case FamilyKind::KnownShifted: return "known_shifted";
    }
    return "?";
}

inline std::string spec_token(const EmissionSpec& spec) {
    std::ostringstream os;
    os.precision(17);
    os << kind_name(spec.kind);
    if (spec.kind == FamilyKind::SkewGaussian || spec.kind == FamilyKind::Spike)
        os << ':' << spec.shape;
    if (spec.kind == FamilyKind::KnownShifted) {
        os << ':' << kind_name(spec.base_kind);
        if (spec.base_kind == FamilyKind::SkewGaussian || spec.base_kind == FamilyKind::Spike)
            os << ':' << spec.base_shape;
        os << ':' << spec.base_scale;
    }
    return os.str();
}

inline EmissionSpec spec_from_token(const std::string& token) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (start <= token.size()) {
        auto pos = token.find(':', start);
        if (pos == std::string::npos) {
            parts.push_back(token.substr(start));
            break;
        }
        parts.push_back(token.substr(start, pos - start));
        start = pos + 1;
    }
    if (parts.empty()) throw std::domain_error("spec_from_token: empty token");
    const std::string& name = parts[0];
    auto num = [&](std::size_t i) {
        if (i >= parts.size()) throw std::domain_error("spec_from_token: missing parameter in '" + token + "'");
        return std::stod(parts[i]);
    };
    if (name == "gaussian") return EmissionSpec::gaussian();
    if (name == "cauchy") return EmissionSpec::cauchy();
    if (name == "laplace") return EmissionSpec::laplace();
    if (name == "uniform") return EmissionSpec::uniform();
    if (name == "skew_gaussian") return EmissionSpec::skew_gaussian(num(1));
    if (name == "spike") return EmissionSpec::spike(num(1));
    if (name == "known_shifted") {
        if (parts.size() < 3) throw std::domain_error("spec_from_token: known_shifted needs base and scale");
        std::string base_name = parts[1];
        if (base_name == "spike" || base_name == "skew_gaussian") {
            EmissionSpec base = base_name == "spike" ? EmissionSpec::spike(num(2))
                                                     : EmissionSpec::skew_gaussian(num(2));
            return EmissionSpec::known_shifted(base, num(3));
        }
        EmissionSpec base = spec_from_token(base_name);
        return EmissionSpec::known_shifted(base, num(2));
    }
    throw std::domain_error("spec_from_token: unknown family '" + name + "'");
}

}  // namespace rhomix
