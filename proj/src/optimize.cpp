#include "floq/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "floq/charfun.hpp"

namespace floq::optimize {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using cxd = std::complex<double>;

bool same_value(cxd a, cxd b) {
    return std::abs(a - b) <= 1e-8 * std::max(1.0, std::abs(a));
}

void sort_pairs(std::vector<solve::FloquetPair>& pairs) {
    std::sort(pairs.begin(), pairs.end(),
              [](const solve::FloquetPair& a, const solve::FloquetPair& b) {
                  double ma = std::abs(a.mu), mb = std::abs(b.mu);
                  if (ma != mb) return ma > mb;
                  return a.mu.imag() > b.mu.imag();
              });
}

// Gap from the dominant modulus to the nearest pair that is not its
// conjugate partner; the distance to zero when no other pair is known.
double tie_gap_of(const std::vector<solve::FloquetPair>& pairs) {
    const cxd mu = pairs.front().mu;
    for (std::size_t j = 1; j < pairs.size(); ++j) {
        if (std::abs(mu.imag()) > 1e-10 && same_value(pairs[j].mu, std::conj(mu)))
            continue;
        return std::abs(mu) - std::abs(pairs[j].mu);
    }
    return std::abs(mu);
}

ObjectiveEval finish_eval(const model::PeriodicDelaySystem& sys,
                          const model::CommensurateGrid& grid,
                          const VectorXd& K, const ObjectiveOpts& opts,
                          const std::vector<solve::FloquetPair>& pairs) {
    if (pairs.empty())
        throw std::runtime_error("objective: no multipliers survived correction");
    ObjectiveEval out;
    out.K = K;
    out.pair = pairs.front();
    const double rho = std::abs(out.pair.mu);
    out.rho_sq = rho * rho;
    out.tie_gap = tie_gap_of(pairs);
    if (!opts.want_gradient) return out;

    sensitivity::GradientOpts go;
    go.delta = opts.stage.delta;
    go.scheme = opts.stage.scheme;
    Eigen::VectorXcd dmu;
    try {
        dmu = sensitivity::gradient(sys, grid, out.pair, K, go).dmu_dK;
    } catch (const sensitivity::NearDefective&) {
        out.nonsmooth = true;  // one-sided information at best
        go.allow_flagged = true;
        dmu = sensitivity::gradient(sys, grid, out.pair, K, go).dmu_dK;
    }
    out.grad = (2.0 * std::conj(out.pair.mu) * dmu.array()).real();
    if (!out.grad.allFinite()) {
        out.nonsmooth = true;
        out.grad.setConstant(std::numeric_limits<double>::quiet_NaN());
    }
    return out;
}

// A sweep that discards more stage-1 seeds than it keeps has under-resolved
// the operator at this parameter point (coefficient norms grow with K, and
// the surviving branches may all be subdominant); one retry at doubled M
// restores an honest dominant before anything downstream trusts the value.
std::vector<solve::FloquetPair> swept_pairs(
    const model::PeriodicDelaySystem& sys, const model::CommensurateGrid& grid,
    solve::TwoStageOpts stage) {
    auto rep = solve::two_stage(sys, grid, stage);
    if (rep.discarded > static_cast<int>(rep.pairs.size())) {
        stage.M *= 2;
        rep = solve::two_stage(sys, grid, stage);
    }
    return std::move(rep.pairs);
}

// Objective evaluator with the warm-start cache: small parameter moves
// re-correct the previously found branches instead of re-running stage 1.
struct Evaluator {
    const model::PeriodicDelaySystem& sys;
    const model::CommensurateGrid& grid;
    const ObjectiveOpts& opts;
    double warm_radius;
    int* full_sweeps;
    int* warm_evals;

    // Warm corrections are trusted only near the last full sweep; letting
    // each warm result re-anchor the radius would allow an unverified walk
    // arbitrarily far from stage 1, silently losing the dominant branch.
    std::optional<VectorXd> anchor_K;
    std::vector<solve::FloquetPair> cache;  // Im >= 0 representatives

    ObjectiveEval eval(const VectorXd& K) {
        if (anchor_K && !cache.empty() && (K - *anchor_K).norm() < warm_radius) {
            if (auto warm = corrected_cache(K)) {
                ++*warm_evals;
                return finish_eval(sys, grid, K, opts, *warm);
            }
        }
        ++*full_sweeps;
        solve::TwoStageOpts stage = opts.stage;
        stage.params = K;
        auto pairs = swept_pairs(sys, grid, stage);
        remember(K, pairs);
        return finish_eval(sys, grid, K, opts, pairs);
    }

  private:
    std::optional<std::vector<solve::FloquetPair>> corrected_cache(
        const VectorXd& K) {
        const charfun::CharEvalContext ctx(sys, grid, K, opts.stage.scheme,
                                           opts.stage.delta);
        std::vector<solve::FloquetPair> done;
        try {
            for (const auto& p : cache) {
                auto c = solve::broyden_correct(ctx, p.mu, p.v,
                                                opts.stage.corrector);
                if (!c.converged) return std::nullopt;
                done.push_back(std::move(c));
            }
        } catch (const std::runtime_error&) {
            return std::nullopt;  // a branch was lost; fall back to stage 1
        }
        // tracked branches can merge at a coalescence point
        std::vector<solve::FloquetPair> unique;
        for (auto& p : done) {
            bool dup = false;
            for (const auto& q : unique) dup = dup || same_value(p.mu, q.mu);
            if (!dup) unique.push_back(std::move(p));
        }
        sort_pairs(unique);
        return unique;
    }

    void remember(const VectorXd& K, const std::vector<solve::FloquetPair>& pairs) {
        anchor_K = K;
        cache.clear();
        for (const auto& p : pairs) {
            if (p.mu.imag() < -1e-10) continue;  // conjugate twin
            cache.push_back(p);
            if (cache.size() == 4) break;
        }
    }
};

}  // namespace

ObjectiveEval objective(const model::PeriodicDelaySystem& sys,
                        const model::CommensurateGrid& grid,
                        const Eigen::VectorXd& K, const ObjectiveOpts& opts) {
    if (K.size() != sys.num_params())
        throw std::invalid_argument("parameter vector does not match the system");
    solve::TwoStageOpts stage = opts.stage;
    stage.params = K;
    return finish_eval(sys, grid, K, opts, swept_pairs(sys, grid, stage));
}

MinimizeResult minimize(const model::PeriodicDelaySystem& sys,
                        const model::CommensurateGrid& grid,
                        const Eigen::VectorXd& K0, const MinimizeOpts& opts) {
    const int k = sys.num_params();
    if (k < 1) throw std::invalid_argument("minimize needs a parametrized system");
    if (K0.size() != k)
        throw std::invalid_argument("parameter vector does not match the system");

    OptimizerTrace trace;
    trace.opts = opts;
    Evaluator eng{sys,          grid,
                  opts.objective, opts.warm_radius,
                  &trace.full_sweeps, &trace.warm_evals};
    auto try_eval = [&](const VectorXd& K) -> std::optional<ObjectiveEval> {
        try {
            return eng.eval(K);
        } catch (const std::exception&) {
            return std::nullopt;  // unevaluable trial point
        }
    };

    ObjectiveEval cur = eng.eval(K0);  // the start must evaluate
    trace.iterates.push_back(K0);
    trace.rho_sq.push_back(cur.rho_sq);
    ObjectiveEval best = cur;

    // Unit-length first trial: an unscaled H = I would probe K0 - g, and a
    // steep objective can throw that far outside the resolved region.
    MatrixXd H = MatrixXd::Identity(k, k) /
                 std::max(1.0, cur.grad.allFinite() ? cur.grad.norm() : 1.0);
    bool h_scaled = false;
    StopReason reason = StopReason::max_iterations;

    for (int it = 0; it < opts.max_iter; ++it) {
        if (!cur.grad.allFinite()) {
            reason = StopReason::line_search_failed;  // no usable direction
            break;
        }
        if (cur.grad.norm() <= opts.gtol) {
            reason = StopReason::gradient_norm;
            break;
        }
        VectorXd p = -H * cur.grad;
        double dphi0 = cur.grad.dot(p);
        if (!(dphi0 < 0.0)) {  // stale model lost positive definiteness
            H = MatrixXd::Identity(k, k) / std::max(1.0, cur.grad.norm());
            h_scaled = true;
            p = -H * cur.grad;
            dphi0 = cur.grad.dot(p);
        }

        // weak-Wolfe bisection: double until bracketed, then halve
        double lo = 0.0, hi = std::numeric_limits<double>::infinity();
        double alpha = 1.0;
        std::optional<ObjectiveEval> accepted, lo_point;
        double accepted_alpha = 0.0;
        int evals = 0;
        for (int b = 0; b <= opts.max_bisections; ++b) {
            auto t = try_eval(cur.K + alpha * p);
            ++evals;
            const bool armijo =
                t && t->rho_sq <= cur.rho_sq + opts.c1 * alpha * dphi0;
            const bool curv = armijo && t->grad.allFinite() &&
                              t->grad.dot(p) >= opts.c2 * dphi0;
            if (!armijo) {
                hi = alpha;
            } else if (!curv) {
                lo = alpha;
                lo_point = t;
                accepted_alpha = alpha;
            } else {
                accepted = t;
                accepted_alpha = alpha;
                break;
            }
            alpha = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * alpha;
            // the bracket can no longer hold a step above the step
            // tolerance, so stop probing it
            if (std::isfinite(hi) && (hi - lo) * p.norm() <= opts.step_tol)
                break;
        }
        if (!accepted && lo_point) accepted = lo_point;  // Armijo-only progress
        if (!accepted) {
            if (trace.restarts >= opts.max_restarts) {
                reason = StopReason::line_search_failed;
                break;
            }
            ++trace.restarts;  // retry from a scaled steepest-descent model
            H = MatrixXd::Identity(k, k) / std::max(1.0, cur.grad.norm());
            h_scaled = true;
            continue;
        }

        const VectorXd s = accepted->K - cur.K;
        if (accepted->grad.allFinite()) {
            const VectorXd y = accepted->grad - cur.grad;
            const double sy = s.dot(y);
            if (sy > 1e-12 * s.norm() * y.norm()) {
                if (!h_scaled) {  // calibrate before the first update
                    H = MatrixXd::Identity(k, k) * (sy / y.squaredNorm());
                    h_scaled = true;
                }
                const double r = 1.0 / sy;
                const MatrixXd A =
                    MatrixXd::Identity(k, k) - r * (s * y.transpose());
                H = A * H * A.transpose() + r * (s * s.transpose());
            }
        }

        cur = *accepted;
        trace.iterates.push_back(cur.K);
        trace.rho_sq.push_back(cur.rho_sq);
        trace.step_lengths.push_back(accepted_alpha);
        trace.line_search_evals.push_back(evals);
        if (cur.rho_sq < best.rho_sq) best = cur;
        if (s.norm() <= opts.step_tol) {
            reason = StopReason::step_size;
            break;
        }
    }

    trace.reason = reason;
    return {best.K, best, trace};
}

const char* to_string(StopReason reason) {
    switch (reason) {
        case StopReason::gradient_norm: return "gradient_norm";
        case StopReason::step_size: return "step_size";
        case StopReason::max_iterations: return "max_iterations";
        case StopReason::line_search_failed: return "line_search_failed";
    }
    return "unknown";
}

}  // namespace floq::optimize
