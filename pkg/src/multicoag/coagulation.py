"""Weak and strong forms of the coagulation operator on discrete measures.

For discrete measures all integrals are finite double sums over atom pairs.
Sums are accumulated over row blocks in a fixed order, so results do not depend
on the block size used.

Convention: the raw bilinear gain and loss measures

    Q+(mu, nu) = sum K(x, y) w_x w_y delta_{x+y}
    Q-(mu, nu) = sum K(x, y) w_x w_y delta_x

are exposed verbatim, while the operator applied to a single measure is
``(1/2) Q+(mu, mu) - Q-(mu, mu)``.  Only with the factor 1/2 on the symmetric
gain does the strong form integrate to the weak form
``(1/2) sum K [phi(x+y) - phi(x) - phi(y)] w_x w_y``, and conserve mass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .composition import WeightParams, _values
from .kernels import KernelSpec
from .measures import SignedDiscreteMeasure, weighted_norm

PAIR_BLOCK = 1 << 20  # pairs evaluated per block


def _row_blocks(n: int, m: int) -> Iterator[slice]:
    rows = max(1, PAIR_BLOCK // max(m, 1))
    for start in range(0, n, rows):
        yield slice(start, min(n, start + rows))


def _check_pair(mu: SignedDiscreteMeasure, nu: SignedDiscreteMeasure) -> None:
    if mu.d != nu.d:
        raise ValueError(f"dimension mismatch: {mu.d} vs {nu.d}")


def weak_apply(k: KernelSpec, mu: SignedDiscreteMeasure, nu: SignedDiscreteMeasure,
               phi: Callable) -> float:
    """``(1/2) sum_{x in mu} sum_{y in nu} K(x,y) [phi(x+y) - phi(x) - phi(y)] w_x w_y``."""
    _check_pair(mu, nu)
    if len(mu) == 0 or len(nu) == 0:
        return 0.0
    px, py = mu.points, nu.points
    phi_x = _values(phi, px)
    phi_y = _values(phi, py)
    total = 0.0
    for rows in _row_blocks(len(mu), len(nu)):
        x = px[rows, None, :]
        y = py[None, :, :]
        kk = np.asarray(k(x, y))
        s = (x + y).reshape(-1, mu.d)
        phi_s = _values(phi, s).reshape(kk.shape)
        bracket = phi_s - phi_x[rows, None] - phi_y[None, :]
        total += float(np.sum(kk * bracket * mu.weights[rows, None] * nu.weights[None, :]))
    return 0.5 * total


def _pair_products(k: KernelSpec, mu: SignedDiscreteMeasure, nu: SignedDiscreteMeasure):
    for rows in _row_blocks(len(mu), len(nu)):
        x = mu.points[rows, None, :]
        y = nu.points[None, :, :]
        kk = np.asarray(k(x, y)) * mu.weights[rows, None] * nu.weights[None, :]
        yield rows, x, y, kk


def strong_gain(k: KernelSpec, mu: SignedDiscreteMeasure, nu: SignedDiscreteMeasure) -> SignedDiscreteMeasure:
    """``Q+(mu, nu) = sum K(x, y) w_x w_y delta_{x+y}`` (no factor 1/2)."""
    _check_pair(mu, nu)
    if len(mu) == 0 or len(nu) == 0:
        return SignedDiscreteMeasure.empty(mu.d)
    pts, wts = [], []
    for _, x, y, kk in _pair_products(k, mu, nu):
        pts.append((x + y).reshape(-1, mu.d))
        wts.append(kk.reshape(-1))
    return SignedDiscreteMeasure(np.concatenate(pts), np.concatenate(wts), d=mu.d)


def strong_loss(k: KernelSpec, mu: SignedDiscreteMeasure, nu: SignedDiscreteMeasure) -> SignedDiscreteMeasure:
    """``Q-(mu, nu) = sum K(x, y) w_x w_y delta_x``."""
    _check_pair(mu, nu)
    if len(mu) == 0 or len(nu) == 0:
        return SignedDiscreteMeasure.empty(mu.d)
    row_sums = np.zeros(len(mu))
    for rows, _, _, kk in _pair_products(k, mu, nu):
        row_sums[rows] = kk.sum(axis=1)
    return SignedDiscreteMeasure(mu.points, row_sums, d=mu.d)


@dataclass
class OperatorOutput:
    """Raw gain ``Q+(mu, mu)``, raw loss ``Q-(mu, mu)`` and ``combined = gain/2 - loss``."""

    gain: SignedDiscreteMeasure
    loss: SignedDiscreteMeasure
    combined: SignedDiscreteMeasure


def operator(k: KernelSpec, mu: SignedDiscreteMeasure) -> OperatorOutput:
    gain = strong_gain(k, mu, mu)
    loss = strong_loss(k, mu, mu)
    return OperatorOutput(gain, loss, 0.5 * gain - loss)


def strong_apply(k: KernelSpec, mu: SignedDiscreteMeasure) -> SignedDiscreteMeasure:
    """``(1/2) Q+(mu, mu) - Q-(mu, mu)``, the time derivative of a strong solution
    without source."""
    return operator(k, mu).combined


@dataclass
class NormBoundReport:
    """Ratios of operator norms to their explicit bilinear bounds."""

    gain_norm: float
    gain_bound: float
    loss_norm: float
    loss_bound: float
    passed: bool

    @property
    def gain_ratio(self) -> float:
        return _ratio(self.gain_norm, self.gain_bound)

    @property
    def loss_ratio(self) -> float:
        return _ratio(self.loss_norm, self.loss_bound)


def _ratio(value: float, bound: float) -> float:
    if bound == 0.0:
        return 0.0 if value == 0.0 else np.inf
    return value / bound


def gain_constant(k: KernelSpec, p: WeightParams) -> float:
    return 4.0 * max(2.0**p.alpha, 2.0**p.beta) * k.c_u


def input_weight(k: KernelSpec, p: WeightParams) -> WeightParams:
    """Weight ``omega_{-theta1, beta+theta2}`` controlling the operator's input."""
    return WeightParams(-k.theta1, p.beta + k.theta2)


def _check_nonneg_params(p: WeightParams) -> None:
    if p.alpha < 0 or p.beta < 0:
        raise ValueError("operator norm bounds need alpha, beta >= 0")


def operator_norm_bound_check(k: KernelSpec, mu: SignedDiscreteMeasure,
                              nu: SignedDiscreteMeasure, p: WeightParams,
                              rtol: float = 1e-12) -> NormBoundReport:
    """Check ``||Q+(mu,nu)|| <= 4 max(2^a, 2^b) c_u ||mu|| ||nu||`` and
    ``||Q-(mu,nu)|| <= c_u ||mu|| ||nu||``.

    Output norms use ``p = (alpha, beta)``, input norms ``(-theta1, beta+theta2)``.
    ``rtol`` absorbs summation roundoff only.
    """
    _check_nonneg_params(p)
    q = input_weight(k, p)
    prod = weighted_norm(mu, q) * weighted_norm(nu, q)
    gain_norm = weighted_norm(strong_gain(k, mu, nu), p)
    loss_norm = weighted_norm(strong_loss(k, mu, nu), p)
    gain_bound = gain_constant(k, p) * prod
    loss_bound = k.c_u * prod
    passed = gain_norm <= gain_bound * (1 + rtol) and loss_norm <= loss_bound * (1 + rtol)
    return NormBoundReport(gain_norm, gain_bound, loss_norm, loss_bound, passed)


def difference_bound_check(k: KernelSpec, mu: SignedDiscreteMeasure,
                           nu: SignedDiscreteMeasure, p: WeightParams,
                           rtol: float = 1e-12) -> NormBoundReport:
    """Same constants applied to ``||Q+-(mu,mu) - Q+-(nu,nu)|| <= C ||mu-nu|| ||mu+nu||``."""
    _check_nonneg_params(p)
    q = input_weight(k, p)
    prod = weighted_norm(mu - nu, q) * weighted_norm(mu + nu, q)
    gain_norm = weighted_norm(strong_gain(k, mu, mu) - strong_gain(k, nu, nu), p)
    loss_norm = weighted_norm(strong_loss(k, mu, mu) - strong_loss(k, nu, nu), p)
    gain_bound = gain_constant(k, p) * prod
    loss_bound = k.c_u * prod
    # Differences of two large nearly equal measures carry cancellation error
    # proportional to the undifferenced norms.
    slack = rtol * (weighted_norm(mu, q) + weighted_norm(nu, q)) ** 2 * gain_constant(k, p)
    passed = gain_norm <= gain_bound + slack and loss_norm <= loss_bound + slack
    return NormBoundReport(gain_norm, gain_bound, loss_norm, loss_bound, passed)


def weak_scale(k: KernelSpec, mu: SignedDiscreteMeasure, nu: SignedDiscreteMeasure,
               phi: Callable) -> float:
    """``(1/2) sum K |w_x w_y| (|phi(x+y)| + |phi(x)| + |phi(y)|)``: magnitude scale for
    relative comparisons against :func:`weak_apply`."""
    _check_pair(mu, nu)
    if len(mu) == 0 or len(nu) == 0:
        return 0.0
    phi_x = np.abs(_values(phi, mu.points))
    phi_y = np.abs(_values(phi, nu.points))
    total = 0.0
    for rows, x, y, kk in _pair_products(k, mu, nu):
        phi_s = np.abs(_values(phi, (x + y).reshape(-1, mu.d))).reshape(kk.shape)
        total += float(np.sum(np.abs(kk) * (phi_s + phi_x[rows, None] + phi_y[None, :])))
    return 0.5 * total
