"""Property suites run by ``roma selftest`` (and reused by the test-suite).

Each suite returns a list of ``Result`` rows; a suite never raises on a
failed property, it reports it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .gradcheck import check as grad_check
from .losses import (LossParams, default_pairs, nt_xent, nt_xent_roma, simsiam, simsiam_roma,
                     triplet_ce, triplet_ce_from_similarities, triplet_ce_loss)
from .rngmap import DISTRIBUTIONS, RandomMap, generate, project


@dataclass
class Result:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}".rstrip()


def _unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _raw(rng, n, d):
    return T.Tensor(rng.standard_normal((n, d)), requires_grad=True)


def _rmap(rng, d):
    dist = DISTRIBUTIONS[int(rng.integers(0, 3))]
    d_out = int(rng.integers(max(2, d // 2), 2 * d + 1))
    return generate(dist, d_out, d, seed=int(rng.integers(0, 2**31)), index=1)


# -- gradient checks -------------------------------------------------------------

def _triplet_case(rng, with_map: bool, params: LossParams):
    """Random triplet instance whose hinge margins sit away from the kink."""
    while True:
        b, d = int(rng.integers(2, 9)), int(rng.integers(2, 17))
        raw = [_raw(rng, b, d) for _ in range(3)]
        rmap = _rmap(rng, d) if with_map else None

        def fn(raw=raw, rmap=rmap):
            a, p, n = (T.l2_normalize(r) for r in raw)
            return triplet_ce_loss(a, p, n, params, rmap)

        a, p, n = (project(rmap, T.l2_normalize(r.detach())) for r in raw)
        margin = params.gamma - (a.data * p.data).sum(1) + (a.data * n.data).sum(1)
        if np.min(np.abs(margin)) > 1e-3:
            return fn, raw


def _ntxent_case(rng, with_map: bool, params: LossParams):
    n, d = int(rng.integers(2, 5)), int(rng.integers(2, 17))
    raw = [_raw(rng, 2 * n, d)]
    rmap = _rmap(rng, d) if with_map else None
    perm = rng.permutation(2 * n)
    pairs = np.empty(2 * n, dtype=np.intp)
    pairs[perm[0::2]] = perm[1::2]
    pairs[perm[1::2]] = perm[0::2]
    return (lambda: nt_xent_roma(T.l2_normalize(raw[0]), pairs, params, rmap)), raw


def _simsiam_case(rng, with_map: bool):
    b, d = int(rng.integers(2, 9)), int(rng.integers(2, 17))
    raw = [_raw(rng, b, d) for _ in range(4)]
    rmap = _rmap(rng, d) if with_map else None

    def fn():
        p1, p2, z1, z2 = (T.l2_normalize(r) for r in raw)
        return simsiam_roma(p1, p2, z1, z2, rmap)

    # z1, z2 sit behind stop_gradient, so only p1, p2 are compared
    return fn, raw[:2]


def gradient_suite(trials: int = 100, seed: int = 0, tol: float = 1e-4) -> list[Result]:
    rng = np.random.default_rng(seed)
    params = LossParams(gamma=1.0, lam=8.0, tau=0.5)
    cases: dict[str, Callable] = {
        "grad.triplet_ce": lambda: _triplet_case(rng, False, params),
        "grad.triplet_ce_roma": lambda: _triplet_case(rng, True, params),
        "grad.nt_xent": lambda: _ntxent_case(rng, False, params),
        "grad.nt_xent_roma": lambda: _ntxent_case(rng, True, params),
        "grad.simsiam": lambda: _simsiam_case(rng, False),
        "grad.simsiam_roma": lambda: _simsiam_case(rng, True),
    }
    out = []
    for name, make in cases.items():
        worst = 0.0
        for _ in range(trials):
            fn, inputs = make()
            worst = max(worst, grad_check(fn, inputs))
        out.append(Result(name, worst < tol, f"max rel err {worst:.2e} over {trials} trials"))
    return out


# -- identity reduction ----------------------------------------------------------

def identity_suite(trials: int = 100, seed: int = 1) -> list[Result]:
    rng = np.random.default_rng(seed)
    ident = RandomMap.identity()
    params = LossParams(gamma=1.0, lam=8.0, tau=0.5)
    bad = {"triplet_ce": 0, "nt_xent": 0, "simsiam": 0}
    for _ in range(trials):
        b, d = int(rng.integers(2, 9)), int(rng.integers(2, 17))
        a, p, n = (T.Tensor(_unit_rows(rng, b, d)) for _ in range(3))
        if triplet_ce_loss(a, p, n, params, ident).item() != triplet_ce(a, p, n, params).item():
            bad["triplet_ce"] += 1
        v = T.Tensor(_unit_rows(rng, 2 * b, d))
        pairs = default_pairs(b)
        if nt_xent_roma(v, pairs, params, ident).item() != nt_xent(v, pairs, params).item():
            bad["nt_xent"] += 1
        if nt_xent_roma(v, pairs, params, ident).item() != nt_xent_roma(v, pairs, params).item():
            bad["nt_xent"] += 1
        q = [T.Tensor(_unit_rows(rng, b, d)) for _ in range(4)]
        if simsiam_roma(*q, ident).item() != simsiam(*q).item():
            bad["simsiam"] += 1
    return [Result(f"identity.{k}", v == 0, f"{v} mismatches in {trials}") for k, v in bad.items()]


# -- bilinear / projection equivalence --------------------------------------------

def psd_suite(trials: int = 1000, seed: int = 2, tol: float = 1e-10) -> list[Result]:
    rng = np.random.default_rng(seed)
    worst = {d: 0.0 for d in DISTRIBUTIONS[:3]}
    min_quad = math.inf
    worst_pert = 0.0
    for t in range(trials):
        dist = DISTRIBUTIONS[t % 3]
        d_in, d_out = int(rng.integers(1, 129)), int(rng.integers(1, 65))
        L = generate(dist, d_out, d_in, seed=int(rng.integers(0, 2**31)), index=t).L
        u, v = rng.standard_normal(d_in), rng.standard_normal(d_in)
        bil = u @ (L.T @ L) @ v
        proj = (L @ u) @ (L @ v)
        worst[dist] = max(worst[dist], abs(bil - proj) / (abs(bil) + 1e-12))
        min_quad = min(min_quad, float(v @ (L.T @ L) @ v))
        m1, m2 = rng.standard_normal((d_in, d_in)), rng.standard_normal((d_in, d_in))
        lhs = u @ (np.eye(d_in) + m1 + m2) @ v
        rhs = u @ v + u @ m1 @ v + u @ m2 @ v
        worst_pert = max(worst_pert, abs(lhs - rhs) / (abs(u) @ (np.eye(d_in) + abs(m1) + abs(m2)) @ abs(v)))
    out = [Result(f"psd.equivalence.{k}", w < tol, f"max rel err {w:.2e}") for k, w in worst.items()]
    out.append(Result("psd.nonnegative", min_quad >= -1e-12, f"min v^T M v {min_quad:.3e}"))
    out.append(Result("psd.perturbation_identity", worst_pert < 1e-13, f"max scaled err {worst_pert:.2e}"))
    return out


# -- closed-form values ------------------------------------------------------------

def closed_form_cases() -> list[tuple[str, float, float]]:
    """(name, computed, expected) for the hand-derived loss values."""
    e1, e2 = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
    t = lambda a: T.Tensor(a)
    p1 = LossParams(gamma=1.0, lam=1.0, tau=0.5)
    p8 = LossParams(gamma=1.0, lam=8.0, tau=0.5)
    return [
        ("triplet_ce.all_equal", triplet_ce(t(e1), t(e1), t(e1), p1).item(), 1 + math.log(2)),
        ("triplet_ce.all_equal.lambda8", triplet_ce(t(e1), t(e1), t(e1), p8).item(), 1 + 8 * math.log(2)),
        ("triplet_ce.easy", triplet_ce(t(e1), t(e1), t(e2), p1).item(), math.log1p(math.exp(-2))),
        ("triplet_ce.adversarial", triplet_ce(t(e1), t(e2), t(e1), p1).item(), 2 + math.log1p(math.exp(2))),
        ("nt_xent.all_equal", nt_xent(t(np.vstack([e1] * 4)), None, p1).item(), math.log(3)),
        ("nt_xent.two_axes", nt_xent(t(np.vstack([e1, e2, e1, e2])), None, p1).item(),
         math.log1p(2 * math.exp(-2))),
        ("simsiam.aligned", simsiam(t(e1), t(e2), t(e2), t(e1)).item(), -1.0),
        ("simsiam.orthogonal", simsiam(t(e1), t(e1), t(e2), t(e2)).item(), 0.0),
    ]


def closed_form_suite(tol: float = 1e-9) -> list[Result]:
    return [Result(f"closed_form.{name}", abs(got - want) < tol, f"{got:.12f} vs {want:.12f}")
            for name, got, want in closed_form_cases()]


# -- monotonicity ------------------------------------------------------------------

def monotonicity(params: LossParams, points: int = 41) -> tuple[bool, bool]:
    """(non-increasing in s_pos, non-decreasing in s_neg) on a grid over [-1, 1]^2."""
    grid = np.linspace(-1.0, 1.0, points)
    sp, sn = np.meshgrid(grid, grid, indexing="ij")
    vals = np.array([triplet_ce_from_similarities(T.Tensor(np.array([a])), T.Tensor(np.array([b])), params).item()
                     for a, b in zip(sp.ravel(), sn.ravel())]).reshape(sp.shape)
    tol = 1e-12
    return bool(np.all(np.diff(vals, axis=0) <= tol)), bool(np.all(np.diff(vals, axis=1) >= -tol))


def monotonicity_suite(faithful_eq1: bool = False) -> list[Result]:
    out = []
    for parts in ("triplet", "triplet_ce"):
        params = LossParams(gamma=1.0, lam=8.0, tau=0.5, faithful_eq1=faithful_eq1, parts=parts)
        dec_pos, inc_neg = monotonicity(params)
        note = "" if dec_pos and inc_neg else " (sign flip: printed hinge convention)" if faithful_eq1 else ""
        out.append(Result(f"monotone.{parts}.s_pos", dec_pos, f"non-increasing in s_pos: {dec_pos}{note}"))
        out.append(Result(f"monotone.{parts}.s_neg", inc_neg, f"non-decreasing in s_neg: {inc_neg}{note}"))
    return out


def run_all(faithful_eq1: bool = False, grad_trials: int = 20) -> list[Result]:
    return (gradient_suite(grad_trials) + identity_suite() + psd_suite() + closed_form_suite()
            + monotonicity_suite(faithful_eq1))
