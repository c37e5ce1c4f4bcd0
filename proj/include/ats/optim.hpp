#pragma once

#include <gsl/gsl_blas.h>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <gsl/gsl_vector.h>

#include <functional>

#include "ats/linalg.hpp"

namespace ats {

// Objective value; fills the gradient when `grad` is non-null.
using Objective = std::function<double(const Vec& x, Vec* grad)>;

struct MinResult {
    Vec x;
    double value = 0.0;
    bool converged = false;
    int iterations = 0;
};

namespace detail {
struct GslBridge {
    const Objective* obj;
    Eigen::Index n;
};
inline Vec from_gsl(const gsl_vector* v) {
    Vec out(static_cast<Eigen::Index>(v->size));
    for (std::size_t i = 0; i < v->size; ++i) out(static_cast<Eigen::Index>(i)) = gsl_vector_get(v, i);
    return out;
}
inline double gsl_f(const gsl_vector* x, void* p) {
    auto* b = static_cast<GslBridge*>(p);
    return (*b->obj)(from_gsl(x), nullptr);
}
inline void gsl_df(const gsl_vector* x, void* p, gsl_vector* g) {
    auto* b = static_cast<GslBridge*>(p);
    Vec gr(b->n);
    (*b->obj)(from_gsl(x), &gr);
    for (Eigen::Index i = 0; i < b->n; ++i) gsl_vector_set(g, static_cast<std::size_t>(i), gr(i));
}
inline void gsl_fdf(const gsl_vector* x, void* p, double* f, gsl_vector* g) {
    auto* b = static_cast<GslBridge*>(p);
    Vec gr(b->n);
    *f = (*b->obj)(from_gsl(x), &gr);
    for (Eigen::Index i = 0; i < b->n; ++i) gsl_vector_set(g, static_cast<std::size_t>(i), gr(i));
}
}  // namespace detail

// Quasi-Newton (BFGS) minimization. Stops when the gradient norm falls below
// gtol * (1 + |f|) or the relative change in f stays below ftol.
inline MinResult minimize_bfgs(const Objective& obj, const Vec& x0, double gtol = 1e-10, double ftol = 1e-14,
                               int max_iter = 1000) {
    MinResult r;
    const Eigen::Index n = x0.size();
    if (n == 0) {
        r.x = x0;
        r.value = obj(x0, nullptr);
        r.converged = true;
        return r;
    }
    gsl_set_error_handler_off();
    detail::GslBridge bridge{&obj, n};
    gsl_multimin_function_fdf fdf;
    fdf.n = static_cast<std::size_t>(n);
    fdf.f = &detail::gsl_f;
    fdf.df = &detail::gsl_df;
    fdf.fdf = &detail::gsl_fdf;
    fdf.params = &bridge;
    gsl_vector* x = gsl_vector_alloc(fdf.n);
    for (Eigen::Index i = 0; i < n; ++i) gsl_vector_set(x, static_cast<std::size_t>(i), x0(i));
    gsl_multimin_fdfminimizer* s = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, fdf.n);
    const double step = 0.1 * (1.0 + x0.norm());
    gsl_multimin_fdfminimizer_set(s, &fdf, x, step, 0.1);
    double prev = s->f;
    int stalls = 0;
    for (int it = 1; it <= max_iter; ++it) {
        r.iterations = it;
        const int status = gsl_multimin_fdfminimizer_iterate(s);
        const double gn = gsl_blas_dnrm2(s->gradient);
        if (gn < gtol * (1.0 + std::abs(s->f))) {
            r.converged = true;
            break;
        }
        if (status != GSL_SUCCESS) {
            // no further progress possible from the line search
            r.converged = gn < 1e-6 * (1.0 + std::abs(s->f));
            break;
        }
        if (std::abs(prev - s->f) <= ftol * (1.0 + std::abs(s->f))) {
            if (++stalls >= 3) {
                r.converged = gn < 1e-6 * (1.0 + std::abs(s->f));
                break;
            }
        } else {
            stalls = 0;
        }
        prev = s->f;
    }
    r.x = detail::from_gsl(s->x);
    r.value = s->f;
    gsl_multimin_fdfminimizer_free(s);
    gsl_vector_free(x);
    return r;
}

}  // namespace ats
