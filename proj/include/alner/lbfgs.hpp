#ifndef ALNER_LBFGS_HPP
#define ALNER_LBFGS_HPP

#include "error.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

/**
 * @file lbfgs.hpp
 *
 * @brief Limited-memory quasi-Newton minimization.
 *
 * Plain L-BFGS uses the More-Thuente line search. When an L1 coefficient is given the
 * orthant-wise variant (OWL-QN) is used instead, with its projected backtracking line search.
 */

namespace alner {

struct LbfgsParams {
    int memory = 6;
    double epsilon = 1e-5;     ///< Stop when ||g|| / max(1, ||x||) < epsilon.
    int past = 10;             ///< Period of the relative-decrease test; 0 disables it.
    double delta = 1e-5;       ///< Relative decrease threshold over `past` iterations.
    int max_iterations = 100;  ///< 0 means unlimited.
    int max_linesearch = 20;
    double min_step = 1e-20;
    double max_step = 1e20;
    double ftol = 1e-4;
    double gtol = 0.9;
    double xtol = 1e-16;
    double orthantwise_c = 0;  ///< L1 coefficient; enables OWL-QN when positive.
};

enum class LbfgsStatus {
    Converged,          ///< Gradient test met.
    Stopped,            ///< Relative decrease test met.
    AlreadyMinimized,   ///< Initial point already satisfied the gradient test.
    MaxIterations,
    LineSearchFailed,   ///< Returned the last accepted iterate.
};

inline const char* to_string(LbfgsStatus status) {
    switch (status) {
        case LbfgsStatus::Converged: return "converged";
        case LbfgsStatus::Stopped: return "stopped";
        case LbfgsStatus::AlreadyMinimized: return "already_minimized";
        case LbfgsStatus::MaxIterations: return "max_iterations";
        case LbfgsStatus::LineSearchFailed: return "line_search_failed";
    }
    return "unknown";
}

struct LbfgsResult {
    LbfgsStatus status = LbfgsStatus::MaxIterations;
    int iterations = 0;
    int evaluations = 0;
    double value = 0;
    std::vector<double> trace; ///< Objective after every accepted iteration, starting with the initial point.
};

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

inline double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline double norm1(const std::vector<double>& a) {
    double s = 0;
    for (double v : a) {
        s += std::abs(v);
    }
    return s;
}

inline void pseudo_gradient(std::vector<double>& pg, const std::vector<double>& x, const std::vector<double>& g, double c) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < 0) {
            pg[i] = g[i] - c;
        } else if (x[i] > 0) {
            pg[i] = g[i] + c;
        } else if (g[i] + c < 0) {
            pg[i] = g[i] + c;
        } else if (g[i] - c > 0) {
            pg[i] = g[i] - c;
        } else {
            pg[i] = 0;
        }
    }
}

enum class SearchOutcome { Ok, Failed };

// Safeguarded step from the More-Thuente paper; x is the best step so far, y the other
// endpoint of the interval, t the current trial.
inline bool update_trial_interval(double& x, double& fx, double& dx, double& y, double& fy, double& dy, double& t, double ft, double dt,
                                  double tmin, double tmax, bool& brackt) {
    const bool dsign = dt * (dx / std::abs(dx)) < 0;
    if (brackt) {
        if (t <= std::min(x, y) || std::max(x, y) <= t) {
            return false;
        }
        if (0 <= dx * (t - x)) {
            return false;
        }
        if (tmax < tmin) {
            return false;
        }
    }

    auto cubic = [](double u, double fu, double du, double v, double fv, double dv) {
        const double d = v - u;
        const double theta = (fu - fv) * 3 / d + du + dv;
        const double s = std::max({std::abs(theta), std::abs(du), std::abs(dv)});
        const double a = theta / s;
        double gamma = s * std::sqrt(std::max(0.0, a * a - (du / s) * (dv / s)));
        if (v < u) {
            gamma = -gamma;
        }
        const double p = gamma - du + theta;
        const double q = gamma - du + gamma + dv;
        return u + (p / q) * d;
    };
    auto cubic_clamped = [](double u, double fu, double du, double v, double fv, double dv, double lo, double hi) {
        const double d = v - u;
        const double theta = (fu - fv) * 3 / d + du + dv;
        const double s = std::max({std::abs(theta), std::abs(du), std::abs(dv)});
        const double a = theta / s;
        double gamma = s * std::sqrt(std::max(0.0, a * a - (du / s) * (dv / s)));
        if (u < v) {
            gamma = -gamma;
        }
        const double p = gamma - dv + theta;
        const double q = gamma - dv + gamma + du;
        const double r = p / q;
        if (r < 0 && gamma != 0) {
            return v - r * d;
        }
        return v > u ? hi : lo;
    };
    auto quad = [](double u, double fu, double du, double v, double fv) {
        const double a = v - u;
        return u + du / ((fu - fv) / a + du) / 2 * a;
    };
    auto quad_secant = [](double u, double du, double v, double dv) {
        const double a = u - v;
        return v + dv / (dv - du) * a;
    };

    double newt;
    bool bound;
    if (fx < ft) {
        brackt = true;
        bound = true;
        const double mc = cubic(x, fx, dx, t, ft, dt);
        const double mq = quad(x, fx, dx, t, ft);
        newt = std::abs(mc - x) < std::abs(mq - x) ? mc : mc + 0.5 * (mq - mc);
    } else if (dsign) {
        brackt = true;
        bound = false;
        const double mc = cubic(x, fx, dx, t, ft, dt);
        const double mq = quad_secant(x, dx, t, dt);
        newt = std::abs(mc - t) > std::abs(mq - t) ? mc : mq;
    } else if (std::abs(dt) < std::abs(dx)) {
        bound = true;
        const double mc = cubic_clamped(x, fx, dx, t, ft, dt, tmin, tmax);
        const double mq = quad_secant(x, dx, t, dt);
        if (brackt) {
            newt = std::abs(t - mc) < std::abs(t - mq) ? mc : mq;
        } else {
            newt = std::abs(t - mc) > std::abs(t - mq) ? mc : mq;
        }
    } else {
        bound = false;
        if (brackt) {
            newt = cubic(t, ft, dt, y, fy, dy);
        } else if (x < t) {
            newt = tmax;
        } else {
            newt = tmin;
        }
    }

    if (fx < ft) {
        y = t;
        fy = ft;
        dy = dt;
    } else {
        if (dsign) {
            y = x;
            fy = fx;
            dy = dx;
        }
        x = t;
        fx = ft;
        dx = dt;
    }

    newt = std::clamp(newt, tmin, tmax);
    if (brackt && bound) {
        const double mq = x + 0.66 * (y - x);
        if (x < y) {
            newt = std::min(newt, mq);
        } else {
            newt = std::max(newt, mq);
        }
    }
    t = newt;
    return true;
}

template<typename Evaluate>
SearchOutcome more_thuente(std::vector<double>& x, double& f, std::vector<double>& g, const std::vector<double>& s, double& stp,
                           const std::vector<double>& xp, Evaluate& evaluate, const LbfgsParams& param, int& evaluations) {
    if (stp <= 0) {
        return SearchOutcome::Failed;
    }
    const double dginit = dot(g, s);
    if (dginit > 0) {
        return SearchOutcome::Failed;
    }
    bool brackt = false;
    bool stage1 = true;
    bool uinfo_ok = true;
    const double finit = f;
    const double dgtest = param.ftol * dginit;
    double width = param.max_step - param.min_step;
    double prev_width = 2.0 * width;
    double stx = 0, sty = 0;
    double fx = finit, fy = finit;
    double dgx = dginit, dgy = dginit;
    int count = 0;

    for (;;) {
        double stmin, stmax;
        if (brackt) {
            stmin = std::min(stx, sty);
            stmax = std::max(stx, sty);
        } else {
            stmin = stx;
            stmax = stp + 4.0 * (stp - stx);
        }
        stp = std::clamp(stp, param.min_step, param.max_step);
        if ((brackt && ((stp <= stmin || stmax <= stp) || param.max_linesearch <= count + 1 || !uinfo_ok)) ||
            (brackt && (stmax - stmin <= param.xtol * stmax))) {
            stp = stx;
        }

        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = xp[i] + stp * s[i];
        }
        f = evaluate(x, g);
        ++evaluations;
        const double dg = dot(g, s);
        const double ftest1 = finit + stp * dgtest;
        ++count;

        if (!std::isfinite(f)) {
            return SearchOutcome::Failed;
        }
        if (brackt && ((stp <= stmin || stmax <= stp) || !uinfo_ok)) {
            return SearchOutcome::Failed;
        }
        if (stp == param.max_step && f <= ftest1 && dg <= dgtest) {
            return SearchOutcome::Failed;
        }
        if (stp == param.min_step && (ftest1 < f || dgtest <= dg)) {
            return SearchOutcome::Failed;
        }
        if (brackt && (stmax - stmin) <= param.xtol * stmax) {
            return SearchOutcome::Failed;
        }
        if (f <= ftest1 && std::abs(dg) <= param.gtol * (-dginit)) {
            return SearchOutcome::Ok;
        }
        if (param.max_linesearch <= count) {
            return SearchOutcome::Failed;
        }

        if (stage1 && f <= ftest1 && std::min(param.ftol, param.gtol) * dginit <= dg) {
            stage1 = false;
        }
        if (stage1 && ftest1 < f && f <= fx) {
            const double fm = f - stp * dgtest;
            double fxm = fx - stx * dgtest;
            double fym = fy - sty * dgtest;
            const double dgm = dg - dgtest;
            double dgxm = dgx - dgtest;
            double dgym = dgy - dgtest;
            uinfo_ok = update_trial_interval(stx, fxm, dgxm, sty, fym, dgym, stp, fm, dgm, stmin, stmax, brackt);
            fx = fxm + stx * dgtest;
            fy = fym + sty * dgtest;
            dgx = dgxm + dgtest;
            dgy = dgym + dgtest;
        } else {
            uinfo_ok = update_trial_interval(stx, fx, dgx, sty, fy, dgy, stp, f, dg, stmin, stmax, brackt);
        }

        if (brackt) {
            if (0.66 * prev_width <= std::abs(sty - stx)) {
                stp = stx + 0.5 * (sty - stx);
            }
            prev_width = width;
            width = std::abs(sty - stx);
        }
    }
}

template<typename Evaluate>
SearchOutcome backtracking_owlqn(std::vector<double>& x, double& f, std::vector<double>& g, const std::vector<double>& s, double& stp,
                                 const std::vector<double>& xp, const std::vector<double>& pg, Evaluate& evaluate, const LbfgsParams& param,
                                 int& evaluations) {
    if (stp <= 0) {
        return SearchOutcome::Failed;
    }
    const double finit = f;
    std::vector<double> orthant(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        orthant[i] = xp[i] == 0 ? -pg[i] : xp[i];
    }
    int count = 0;
    for (;;) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = xp[i] + stp * s[i];
            if (x[i] * orthant[i] <= 0) {
                x[i] = 0;
            }
        }
        f = evaluate(x, g) + param.orthantwise_c * norm1(x);
        ++evaluations;
        ++count;
        double dgtest = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            dgtest += (x[i] - xp[i]) * pg[i];
        }
        if (std::isfinite(f) && f <= finit + param.ftol * dgtest) {
            return SearchOutcome::Ok;
        }
        if (stp < param.min_step || stp > param.max_step || param.max_linesearch <= count) {
            return SearchOutcome::Failed;
        }
        stp *= 0.5;
    }
}

}

/**
 * Minimize f(x) starting from `x`, which is overwritten with the result.
 *
 * `evaluate(x, g)` must return f(x) and fill g with its gradient. With an L1 coefficient the
 * minimized objective is f(x) + c * ||x||_1 and the reported value includes the penalty.
 */
template<typename Evaluate>
LbfgsResult lbfgs_minimize(std::vector<double>& x, Evaluate&& evaluate, const LbfgsParams& param) {
    const std::size_t n = x.size();
    const bool orthantwise = param.orthantwise_c > 0;
    const std::size_t m = static_cast<std::size_t>(std::max(1, param.memory));

    LbfgsResult result;
    std::vector<double> g(n), xp(n), gp(n), pg(orthantwise ? n : 0), d(n);
    std::vector<std::vector<double>> s_hist(m, std::vector<double>(n)), y_hist(m, std::vector<double>(n));
    std::vector<double> ys_hist(m), alpha(m);
    std::vector<double> past_values(static_cast<std::size_t>(std::max(1, param.past)));

    double fx = evaluate(x, g);
    ++result.evaluations;
    if (orthantwise) {
        fx += param.orthantwise_c * detail::norm1(x);
        detail::pseudo_gradient(pg, x, g, param.orthantwise_c);
    }
    if (!std::isfinite(fx)) {
        throw NumericError("objective is not finite at the initial point");
    }
    result.trace.push_back(fx);
    past_values[0] = fx;

    const auto& steepest = orthantwise ? pg : g;
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = -steepest[i];
    }
    double xnorm = std::max(1.0, detail::norm2(x));
    double gnorm = detail::norm2(steepest);
    result.value = fx;
    if (gnorm / xnorm <= param.epsilon) {
        result.status = LbfgsStatus::AlreadyMinimized;
        return result;
    }

    double step = 1.0 / detail::norm2(d);
    std::size_t stored = 0;
    std::size_t end = 0;
    int k = 1;
    for (;;) {
        xp = x;
        gp = g;
        detail::SearchOutcome outcome;
        if (orthantwise) {
            outcome = detail::backtracking_owlqn(x, fx, g, d, step, xp, pg, evaluate, param, result.evaluations);
            if (outcome == detail::SearchOutcome::Ok) {
                detail::pseudo_gradient(pg, x, g, param.orthantwise_c);
            }
        } else {
            outcome = detail::more_thuente(x, fx, g, d, step, xp, evaluate, param, result.evaluations);
        }
        if (outcome == detail::SearchOutcome::Failed) {
            x = xp;
            g = gp;
            fx = result.trace.back();
            result.status = LbfgsStatus::LineSearchFailed;
            break;
        }
        result.iterations = k;
        result.trace.push_back(fx);

        xnorm = std::max(1.0, detail::norm2(x));
        gnorm = detail::norm2(orthantwise ? pg : g);
        if (gnorm / xnorm <= param.epsilon) {
            result.status = LbfgsStatus::Converged;
            break;
        }
        if (param.past > 0) {
            const std::size_t past = static_cast<std::size_t>(param.past);
            if (past <= static_cast<std::size_t>(k)) {
                const double rate = (past_values[static_cast<std::size_t>(k) % past] - fx) / fx;
                if (std::abs(rate) < param.delta) {
                    result.status = LbfgsStatus::Stopped;
                    break;
                }
            }
            past_values[static_cast<std::size_t>(k) % past] = fx;
        }
        if (param.max_iterations > 0 && param.max_iterations < k + 1) {
            result.status = LbfgsStatus::MaxIterations;
            break;
        }

        auto& s = s_hist[end];
        auto& y = y_hist[end];
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = x[i] - xp[i];
            y[i] = g[i] - gp[i];
        }
        const double ys = detail::dot(y, s);
        const double yy = detail::dot(y, y);
        ++k;
        const auto& dir_source = orthantwise ? pg : g;
        for (std::size_t i = 0; i < n; ++i) {
            d[i] = -dir_source[i];
        }
        if (ys > 0 && yy > 0) {
            ys_hist[end] = ys;
            stored = std::min(stored + 1, m);
            end = (end + 1) % m;

            std::size_t j = end;
            for (std::size_t i = 0; i < stored; ++i) {
                j = (j + m - 1) % m;
                alpha[j] = detail::dot(s_hist[j], d) / ys_hist[j];
                for (std::size_t t = 0; t < n; ++t) {
                    d[t] -= alpha[j] * y_hist[j][t];
                }
            }
            const double scale = ys / yy;
            for (auto& v : d) {
                v *= scale;
            }
            for (std::size_t i = 0; i < stored; ++i) {
                const double beta = detail::dot(y_hist[j], d) / ys_hist[j];
                for (std::size_t t = 0; t < n; ++t) {
                    d[t] += (alpha[j] - beta) * s_hist[j][t];
                }
                j = (j + 1) % m;
            }
        } else {
            // Curvature information unusable; restart from steepest descent.
            stored = 0;
            end = 0;
        }
        if (orthantwise) {
            for (std::size_t i = 0; i < n; ++i) {
                if (d[i] * pg[i] >= 0) {
                    d[i] = 0;
                }
            }
        }
        step = stored == 0 ? 1.0 / std::max(detail::norm2(d), 1e-300) : 1.0;
    }
    result.value = fx;
    return result;
}

}

#endif
