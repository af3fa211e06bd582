"""Composite Gauss-Legendre quadrature over parameter and observation domains.

All Θ-integrals against a prior (or a prior reweighted by a likelihood) go
through :func:`prior_expectation`; integrals over an observation coordinate
go through :func:`line_integral` / :func:`piecewise_integrals`. Accuracy is
controlled by panel doubling: the panel count is doubled until two
successive passes agree to ``max(abs_tol, rel_tol * |value|)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .core import Prior

_EPS = np.finfo(float).eps
_WIDE = 64.0  # finite pieces wider than this many scales get tail maps
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
PEAK_HALF_WIDTH = 6.0
END_GRADING = 8  # geometric sub-panels toward a finite support end


class IntegrationError(ArithmeticError):
    """Integrand produced a non-finite value at a quadrature node."""


class IntegrationWarning(RuntimeWarning):
    """Tolerance not met after the maximum number of panel doublings."""


@dataclass(frozen=True)
class QuadratureSettings:
    """Knobs for every quadrature in the package.

    ``node_count`` is the total Gauss-Legendre node budget of the first pass,
    split evenly over ``panel_count`` panels.
    """

    node_count: int = 257
    panel_count: int = 8
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    truncation_mass: float = 1e-12
    max_doublings: int = 6

    def __post_init__(self):
        if self.node_count < 3:
            raise ValueError("node_count must be >= 3")
        if self.panel_count < 1:
            raise ValueError("panel_count must be >= 1")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.truncation_mass < 1e-6:
            raise ValueError("truncation_mass must lie in (0, 1e-6)")
        if not 1 <= self.max_doublings <= 6:
            raise ValueError("max_doublings must lie in [1, 6]")

    @property
    def order(self) -> int:
        """Gauss-Legendre points per panel."""
        return max(3, self.node_count // self.panel_count)


DEFAULT_SETTINGS = QuadratureSettings()


class IntegrationResult(NamedTuple):
    value: float
    error: float
    converged: bool = True


@lru_cache(maxsize=None)
def _leggauss(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_rule(edges, order: int):
    """Nodes and weights of the composite rule on consecutive ``edges``."""
    edges = np.asarray(edges, dtype=float)
    x, w = _leggauss(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x).ravel()
    weights = (half[:, None] * w).ravel()
    return nodes, weights


def _bisect_panels(edges: np.ndarray) -> np.ndarray:
    out = np.empty(2 * len(edges) - 1)
    out[0::2] = edges
    out[1::2] = 0.5 * (edges[1:] + edges[:-1])
    return out


def _tolerance(value, settings: QuadratureSettings):
    return np.maximum(settings.abs_tol, settings.rel_tol * np.abs(value))


def _check_finite(values, nodes, what: str):
    values = np.asarray(values)
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.unravel_index(int(np.argmax(bad)), values.shape)
        raise IntegrationError(f"non-finite {what} integrand ({values[idx]!r}) at node {nodes[idx[0]]!r}")


# ---------------------------------------------------------------------------
# Parameter-space integrals
# ---------------------------------------------------------------------------


def golden_section_max(h: Callable, lo: float, hi: float, iters: int = 100) -> float:
    """Maximiser of a unimodal scalar function on ``[lo, hi]``."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    hc, hd = h(c), h(d)
    for _ in range(iters):
        if b - a <= 1e-15 * max(1.0, abs(a) + abs(b)):
            break
        if hc >= hd:
            b, d, hd = d, c, hc
            c = b - _GOLDEN * (b - a)
            hc = h(c)
        else:
            a, c, hc = c, d, hd
            d = a + _GOLDEN * (b - a)
            hd = h(d)
    return 0.5 * (a + b)


def locate_peak(log_integrand: Callable, lo: float, hi: float, grid_size: int = 129):
    """Mode and curvature standard deviation of a unimodal log-integrand.

    Returns ``(mode, sd)``; ``sd`` is ``None`` when the curvature at the mode
    is not negative (flat or boundary maximum). Returns ``None`` when the
    integrand vanishes on the whole grid.
    """
    grid = np.linspace(lo, hi, grid_size)[1:-1]
    with np.errstate(all="ignore"):
        vals = np.asarray(log_integrand(grid), dtype=float)
    vals = np.where(np.isnan(vals), -np.inf, vals)
    if not np.isfinite(vals).any():
        return None
    i = int(np.argmax(vals))
    a = grid[i - 1] if i > 0 else lo
    b = grid[i + 1] if i < len(grid) - 1 else hi

    def h(t):
        with np.errstate(all="ignore"):
            v = float(np.asarray(log_integrand(np.array([t])))[0])
        return v if not math.isnan(v) else -math.inf

    mode = golden_section_max(h, a, b)
    step = 0.25 * (b - a)
    sd = None
    for _ in range(3):
        s = min(step, mode - lo, hi - mode)
        if not s > 0:
            return mode, None
        curv = (h(mode + s) - 2.0 * h(mode) + h(mode - s)) / (s * s)
        if not (math.isfinite(curv) and curv < 0):
            return mode, None
        sd = 1.0 / math.sqrt(-curv)
        if abs(0.25 * sd - step) <= 0.05 * step:
            break
        step = 0.25 * sd
    return mode, sd


def theta_edges(prior: Prior, settings: QuadratureSettings, log_peak: Callable | None = None) -> np.ndarray:
    """Panel edges over the truncated prior support.

    With ``log_peak`` the mode of ``log_peak + log prior`` is located and
    ``panel_count`` panels are packed into ``mode ± 6 sd``; the outer regions
    get ``panel_count // 2`` panels each. The end panel at a finite support
    bound is graded geometrically, since integrands of the form
    ``θ^k exp(-cθ)`` with large ``c`` sit far inside it.
    """
    lo, hi = prior.truncated_support(settings.truncation_mass)
    p = settings.panel_count
    if log_peak is not None:

        def logpost(t):
            return np.asarray(log_peak(t)) + prior.logpdf(t)

        peak = locate_peak(logpost, lo, hi)
        if peak is not None and peak[1] is not None:
            mode, sd = peak
            c0 = max(lo, mode - PEAK_HALF_WIDTH * sd)
            c1 = min(hi, mode + PEAK_HALF_WIDTH * sd)
            pieces = []
            side = max(1, p // 2)
            if c0 > lo:
                pieces.append(np.linspace(lo, c0, side + 1))
            pieces.append(np.linspace(c0, c1, p + 1))
            if c1 < hi:
                pieces.append(np.linspace(c1, hi, side + 1))
            return _grade_ends(np.unique(np.concatenate(pieces)), prior)
    return _grade_ends(np.linspace(lo, hi, p + 1), prior)


def _grade_ends(edges, prior: Prior):
    slo, shi = prior.support.bounds
    ratios = 4.0 ** -np.arange(1, END_GRADING + 1)
    extra = []
    if edges[0] == slo:
        extra.append(edges[0] + (edges[1] - edges[0]) * ratios)
    if edges[-1] == shi:
        extra.append(edges[-1] - (edges[-1] - edges[-2]) * ratios)
    return np.unique(np.concatenate([edges] + extra)) if extra else edges


def _prior_rule_integral(integrand, prior: Prior, settings: QuadratureSettings, log_peak=None):
    """Shared driver; returns the result and the final ``(nodes, dQ-weights, edges)`` rule.

    ``edges`` is ``None`` for finite priors.
    """
    if prior.is_finite:
        nodes = prior.point_array
        w = prior.weight_array
        vals = np.asarray(integrand(nodes), dtype=float)
        keep = w > 0
        _check_finite(vals[keep], nodes[keep], "parameter")
        if vals.ndim == 1:
            value = math.fsum(w[keep] * vals[keep])
        else:
            value = np.tensordot(w[keep], vals[keep], axes=1)
        return IntegrationResult(value, 0.0 * np.abs(value), True), (nodes, w, None)

    edges = theta_edges(prior, settings, log_peak)

    def evaluate(edges):
        nodes, gw = composite_rule(edges, settings.order)
        dq = gw * prior.pdf(nodes)
        vals = np.asarray(integrand(nodes), dtype=float)
        keep = dq > 0
        _check_finite(vals[keep], nodes[keep], "parameter")
        vals = np.where(keep.reshape((-1,) + (1,) * (vals.ndim - 1)), vals, 0.0)
        terms = np.tensordot(dq, vals, axes=1)
        mag = np.tensordot(dq, np.abs(vals), axes=1)
        return terms, mag, (nodes, dq, edges)

    prev, _, rule = evaluate(edges)
    for _ in range(settings.max_doublings):
        edges = _bisect_panels(edges)
        cur, mag, rule = evaluate(edges)
        err = np.maximum(np.abs(cur - prev), 64 * _EPS * mag)
        if np.all(np.abs(cur - prev) <= _tolerance(cur, settings)):
            return IntegrationResult(_scalar(cur), _scalar(err), True), rule
        prev = cur
    warnings.warn(
        f"parameter integral did not reach rel_tol={settings.rel_tol} after "
        f"{settings.max_doublings} panel doublings (change {np.max(np.abs(err)):.3g})",
        IntegrationWarning,
        stacklevel=3,
    )
    return IntegrationResult(_scalar(cur), _scalar(err), False), rule


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def prior_expectation(
    integrand: Callable,
    prior: Prior,
    settings: QuadratureSettings = DEFAULT_SETTINGS,
    log_peak: Callable | None = None,
) -> IntegrationResult:
    """``∫ g(θ) dQ(θ)`` for a vectorised integrand ``g``.

    Finite priors give the exact weighted sum. Unbounded supports are
    truncated at the prior quantiles leaving ``truncation_mass`` per tail.
    ``log_peak`` (e.g. a log-likelihood) concentrates panels around the
    peak of ``log_peak + log prior``. Array-valued integrands are allowed
    (leading axis = nodes).
    """
    result, _ = _prior_rule_integral(integrand, prior, settings, log_peak)
    return result


# ---------------------------------------------------------------------------
# Observation-space integrals
# ---------------------------------------------------------------------------


def _tail_rule(a: float, b: float, panels: int, order: int, scale: float, rightward: bool):
    """``x = start ± scale·u/(1-u)`` on ``[a, b]``, starting at ``a`` (rightward) or ``b``."""
    d = b - a
    u, w = composite_rule(np.linspace(0.0, d / (scale + d), panels + 1), order)
    off = scale * u / (1.0 - u)
    w = w * scale / (1.0 - u) ** 2
    return (a + off, w) if rightward else (b - off[::-1], w[::-1])


def _piece_rule(a: float, b: float, panels: int, order: int, loc: float, scale: float):
    """Nodes and weights on ``[a, b]``, mapping infinite ends to a bounded variable."""
    fa, fb = math.isfinite(a), math.isfinite(b)
    if fa and fb:
        if b - a <= _WIDE * scale:
            return composite_rule(np.linspace(a, b, panels + 1), order)
        # wide finite piece: a window around loc plus two truncated tail maps
        lo_w, hi_w = max(a, loc - 4.0 * scale), min(b, loc + 4.0 * scale)
        parts = []
        if lo_w >= hi_w:
            parts.append(_tail_rule(a, b, panels, order, scale, a >= loc))
        else:
            if lo_w > a:
                parts.append(_tail_rule(a, lo_w, panels, order, scale, False))
            parts.append(composite_rule(np.linspace(lo_w, hi_w, panels + 1), order))
            if hi_w < b:
                parts.append(_tail_rule(hi_w, b, panels, order, scale, True))
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
    if fa or fb:
        u, w = composite_rule(np.linspace(0.0, 1.0, panels + 1), order)
        off = scale * u / (1.0 - u)
        w = w * scale / (1.0 - u) ** 2
        return (a + off, w) if fa else (b - off[::-1], w[::-1])
    u, w = composite_rule(np.linspace(-1.0, 1.0, panels + 1), order)
    d = 1.0 - u * u
    return loc + scale * u / d, w * scale * (1.0 + u * u) / (d * d)


def piecewise_integrals(
    f: Callable,
    edges: Sequence[float],
    settings: QuadratureSettings = DEFAULT_SETTINGS,
    loc: float = 0.0,
    scale: float = 1.0,
):
    """Integrals of ``f`` over each ``[edges[i], edges[i+1]]`` in one batched pass.

    ``f`` is called once per pass on the concatenated nodes of every piece.
    Convergence is judged per piece against the tolerance of the total.
    Returns ``(values, errors, converged)`` arrays.
    """
    edges = np.asarray(edges, dtype=float)
    if np.any(np.diff(edges) < 0):
        raise ValueError("edges must be nondecreasing")
    if not scale > 0:
        raise ValueError("scale must be positive")
    npieces = len(edges) - 1
    if npieces < 1:
        return np.zeros(0), np.zeros(0), True

    def evaluate(panels):
        all_nodes, all_w, owner = [], [], []
        for k in range(npieces):
            a, b = edges[k], edges[k + 1]
            if a == b:
                continue
            x, w = _piece_rule(a, b, panels, settings.order, loc, scale)
            all_nodes.append(x)
            all_w.append(w)
            owner.append(np.full(x.shape, k))
        if not all_nodes:
            z = np.zeros(npieces)
            return z, z
        x = np.concatenate(all_nodes)
        w = np.concatenate(all_w)
        idx = np.concatenate(owner)
        vals = np.asarray(f(x), dtype=float)
        _check_finite(vals, x, "observation")
        vals = np.broadcast_to(vals, x.shape)
        return (
            np.bincount(idx, weights=w * vals, minlength=npieces),
            np.bincount(idx, weights=w * np.abs(vals), minlength=npieces),
        )

    panels = settings.panel_count
    prev, _ = evaluate(panels)
    for _ in range(settings.max_doublings):
        panels *= 2
        cur, mag = evaluate(panels)
        diff = np.abs(cur - prev)
        err = np.maximum(diff, 64 * _EPS * mag)
        tol = _tolerance(cur.sum(), settings)
        if np.all(diff <= tol):
            return cur, err, True
        prev = cur
    warnings.warn(
        f"observation integral did not reach tolerance after {settings.max_doublings} "
        f"panel doublings (change {diff.max():.3g})",
        IntegrationWarning,
        stacklevel=2,
    )
    return cur, err, False


def line_integral(
    f: Callable,
    domain: Sequence[float],
    settings: QuadratureSettings = DEFAULT_SETTINGS,
    loc: float = 0.0,
    scale: float = 1.0,
    breakpoints: Sequence[float] = (),
) -> IntegrationResult:
    """``∫_domain f(t) dt`` for a vectorised ``f``.

    Infinite ends go through ``t = a + scale·u/(1-u)`` (one-sided) or
    ``t = loc + scale·u/(1-u²)`` (two-sided). ``breakpoints`` split the
    domain where ``f`` has kinks or jumps.
    """
    a, b = float(domain[0]), float(domain[1])
    if b < a:
        raise ValueError(f"empty domain [{a}, {b}]")
    inner = sorted(float(p) for p in breakpoints if a < p < b)
    edges = [a, *inner, b]
    vals, errs, ok = piecewise_integrals(f, edges, settings, loc, scale)
    return IntegrationResult(math.fsum(vals), float(errs.sum()), bool(ok))
