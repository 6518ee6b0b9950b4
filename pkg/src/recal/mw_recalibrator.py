"""Multiplicative-weights baseline over the lifted payoff coordinates.

The (m+2)-dimensional payoff is lifted through the matrix M whose rows
are all sign patterns over the calibration block (zero on the regret
coordinate) plus one row selecting the regret coordinate, giving
d = 2**(m+1) + 1 coordinates.  Multiplicative weights over those
coordinates would cost O(d) per round; the product structure of the
weights lets every quantity be computed from m+2 stored per-coordinate
exponentials instead.  Unlike the halfspace recalibrator this baseline
uses raw, unnormalized regret coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import GameConfig, nearest_grid_index
from .scoring import score

# Outside this range the stored exponentials switch to log space.
OVERFLOW_LIMIT = 1e300


def lifted_dimension(m: int) -> int:
    return 2 ** (m + 1) + 1


@dataclass
class MWState:
    """Stored per-coordinate exponentials of the accumulated losses.

    In the default linear mode pos[k] and neg[k] hold
    exp(+-eta * sum_s loss_k^s) and reg holds exp(eta * sum_s loss_d^s).
    When any stored value leaves [1/OVERFLOW_LIMIT, OVERFLOW_LIMIT] the
    state switches to log mode and the same fields hold the exponents
    themselves.
    """

    cfg: GameConfig
    eta: float
    T: int
    pos: list = field(default_factory=list)
    neg: list = field(default_factory=list)
    reg: float = 1.0
    t: int = 0
    log_mode: bool = False


def mw_init(cfg: GameConfig, T: int) -> MWState:
    d = lifted_dimension(cfg.m)
    log_d = math.log(d)
    if T < log_d:
        raise ValueError(f"horizon T={T} is below ln(d) = {log_d:.3f} for m={cfg.m}")
    C = max(1.0, cfg.rule.lipschitz)
    eta = math.sqrt(log_d / (4.0 * T * C * C))
    n = cfg.m + 1
    return MWState(cfg=cfg, eta=eta, T=T, pos=[1.0] * n, neg=[1.0] * n)


def _to_log_mode(state: MWState) -> None:
    state.pos = [math.log(v) for v in state.pos]
    state.neg = [math.log(v) for v in state.neg]
    state.reg = math.log(state.reg)
    state.log_mode = True


def _loss_parts(cfg: GameConfig, x, q: float, y: int):
    """Raw loss of playing distribution x: calibration block and regret."""
    grid = cfg.grid
    score_y = cfg.score1 if y else cfg.score0
    sq = score(cfg.rule, q, y)
    cal = [0.0] * (cfg.m + 1)
    reg = -sq
    for k in range(cfg.m + 1):
        xk = x[k]
        if xk:
            cal[k] = xk * (grid[k] - y)
            reg += xk * score_y[k]
    return cal, reg


def dp_denominator(state: MWState) -> float:
    """Total lifted weight mass, reg + prod_k (pos_k + neg_k).

    Equals the brute-force sum of the d per-coordinate exponentials.
    In log mode the true value may exceed float range, in which case
    inf is returned; callers needing ratios use the stable internals.
    """
    if not state.log_mode:
        prod = 1.0
        for p, n in zip(state.pos, state.neg):
            prod *= p + n
        if not math.isinf(prod):
            return state.reg + prod
        _to_log_mode(state)
    log_prod = 0.0
    for p, n in zip(state.pos, state.neg):
        log_prod += float(np.logaddexp(p, n))
    return math.exp(float(np.logaddexp(state.reg, log_prod)))


def _ratio_parts(state: MWState):
    """(rho, g_log) with rho_k = (pos_k - neg_k) / (pos_k + neg_k) and
    g_log = log(reg / prod_k (pos_k + neg_k)), valid in either mode."""
    if state.log_mode:
        rho = [math.tanh((p - n) / 2.0) for p, n in zip(state.pos, state.neg)]
        log_prod = 0.0
        for p, n in zip(state.pos, state.neg):
            log_prod += float(np.logaddexp(p, n))
        return rho, state.reg - log_prod
    rho = [(p - n) / (p + n) for p, n in zip(state.pos, state.neg)]
    log_prod = 0.0
    for p, n in zip(state.pos, state.neg):
        log_prod += math.log(p + n)
    return rho, math.log(state.reg) - log_prod


def dp_weighted_loss(state: MWState, x, q: float, y: int) -> float:
    """Current-weights expected lifted loss of playing x against label y.

    Computed from the stored per-coordinate exponentials in O(m); the
    sign patterns never have to be enumerated because the weight of a
    pattern factors across coordinates.
    """
    cal, r = _loss_parts(state.cfg, x, q, y)
    if not state.log_mode:
        n = len(state.pos)
        A = [p + ng for p, ng in zip(state.pos, state.neg)]
        pre = [1.0] * n
        running = 1.0
        for k in range(n):
            pre[k] = running
            running *= A[k]
        if math.isinf(running):
            _to_log_mode(state)
        else:
            suf = [1.0] * n
            running2 = 1.0
            for k in range(n - 1, -1, -1):
                suf[k] = running2
                running2 *= A[k]
            num = state.reg * r
            for k in range(n):
                ck = cal[k]
                if ck:
                    num += ck * (state.pos[k] - state.neg[k]) * pre[k] * suf[k]
            return num / (state.reg + running)
    rho, g_log = _ratio_parts(state)
    weighted = 0.0
    for k, ck in enumerate(cal):
        if ck:
            weighted += ck * rho[k]
    if g_log <= 0.0:
        g = math.exp(g_log)
        return (weighted + r * g) / (1.0 + g)
    ginv = math.exp(-g_log)
    return (weighted * ginv + r) / (ginv + 1.0)


def _vertex_losses(state: MWState, q: float, y: int):
    """dp_weighted_loss of every point mass, in O(m) total."""
    cfg = state.cfg
    grid = cfg.grid
    score_y = cfg.score1 if y else cfg.score0
    sq = score(cfg.rule, q, y)
    n = cfg.m + 1
    if not state.log_mode:
        A = [p + ng for p, ng in zip(state.pos, state.neg)]
        pre = [1.0] * n
        running = 1.0
        for k in range(n):
            pre[k] = running
            running *= A[k]
        if math.isinf(running):
            _to_log_mode(state)
        else:
            suf = [1.0] * n
            running2 = 1.0
            for k in range(n - 1, -1, -1):
                suf[k] = running2
                running2 *= A[k]
            den = state.reg + running
            return [
                ((grid[j] - y) * (state.pos[j] - state.neg[j]) * pre[j] * suf[j]
                 + state.reg * (score_y[j] - sq)) / den
                for j in range(n)
            ]
    rho, g_log = _ratio_parts(state)
    if g_log <= 0.0:
        g = math.exp(g_log)
        return [((grid[j] - y) * rho[j] + (score_y[j] - sq) * g) / (1.0 + g)
                for j in range(n)]
    ginv = math.exp(-g_log)
    return [((grid[j] - y) * rho[j] * ginv + (score_y[j] - sq)) / (ginv + 1.0)
            for j in range(n)]


def mw_choose(state: MWState, q: float) -> np.ndarray:
    """Distribution minimizing the worst-label weighted loss.

    Both label losses are linear in x, so the minimum over the simplex
    of their max is attained at a vertex or at a two-vertex mixture
    that equalizes them; all O(m^2) such candidates are scanned
    exactly.  Ties keep the grid point nearest to q.
    """
    n = state.cfg.m + 1
    h0 = _vertex_losses(state, q, 0)
    h1 = _vertex_losses(state, q, 1)

    j_star = nearest_grid_index(q, state.cfg.m)
    best_val = max(h0[j_star], h1[j_star])
    best = (j_star, None, 0.0)
    for j in range(n):
        v = max(h0[j], h1[j])
        if v < best_val:
            best_val = v
            best = (j, None, 0.0)
    diff = [h0[j] - h1[j] for j in range(n)]
    for i in range(n):
        di = diff[i]
        if di == 0.0:
            continue
        for j in range(i + 1, n):
            dj = diff[j]
            if di * dj < 0.0:
                t = dj / (dj - di)
                v = t * h0[i] + (1.0 - t) * h0[j]
                if v < best_val:
                    best_val = v
                    best = (i, j, t)
    x = np.zeros(n)
    i, j, t = best
    if j is None:
        x[i] = 1.0
    else:
        x[i] = t
        x[j] = 1.0 - t
    return x


def mw_update(state: MWState, x, q: float, y: int) -> MWState:
    """Fold one round's loss into the stored exponentials."""
    cal, r = _loss_parts(state.cfg, x, q, y)
    eta = state.eta
    if not state.log_mode:
        overflow = False
        for k, ck in enumerate(cal):
            if ck:
                e = math.exp(eta * ck)
                pk = state.pos[k] * e
                nk = state.neg[k] / e
                state.pos[k] = pk
                state.neg[k] = nk
                if not (1.0 / OVERFLOW_LIMIT < pk < OVERFLOW_LIMIT
                        and 1.0 / OVERFLOW_LIMIT < nk < OVERFLOW_LIMIT):
                    overflow = True
        state.reg *= math.exp(eta * r)
        if not 1.0 / OVERFLOW_LIMIT < state.reg < OVERFLOW_LIMIT:
            overflow = True
        if overflow:
            _to_log_mode(state)
    else:
        for k, ck in enumerate(cal):
            if ck:
                state.pos[k] += eta * ck
                state.neg[k] -= eta * ck
        state.reg += eta * r
    state.t += 1
    return state


def lifted_max_coordinate(cal_avg, reg_avg: float) -> float:
    """Largest lifted coordinate of (cal_avg, reg_avg).

    The sign rows realize every signed sum of the calibration block, so
    their max is the l1 norm; the last row contributes reg_avg.
    """
    return max(float(np.abs(np.asarray(cal_avg)).sum()), reg_avg)
