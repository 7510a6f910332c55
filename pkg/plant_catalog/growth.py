"""Two-sigmoid growth function of cover ratio over time.

``f(t) = g * S(lambda_g (t - t_g)) - [d > 0] * d * S(lambda_d (t - t_d))`` with the
logistic ``S``. The dying term is fitted as a separate branch because the gate
makes the objective non-smooth at ``d = 0``.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit

from plant_catalog.errors import DegenerateInputError

logger = logging.getLogger(__name__)

MIN_POINTS_GROWING = 4
MIN_POINTS_FULL = 7
BRANCH_GROWING = "growing"
BRANCH_FULL = "full"
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class GrowthParams:
    g: float
    lambda_g: float
    t_g: float
    d: float = 0.0
    lambda_d: float = 0.0
    t_d: float = 0.0

    @property
    def dying(self) -> bool:
        return self.d > 0

    def as_array(self) -> np.ndarray:
        return np.array([self.g, self.lambda_g, self.t_g, self.d, self.lambda_d, self.t_d])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "GrowthParams":
        values = [float(v) for v in values] + [0.0] * (6 - len(values))
        return cls(*values[:6])


@dataclass
class GrowthFit:
    params: GrowthParams
    residual: float
    branch: str
    converged: bool
    n_points: int
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "residual": self.residual,
            "branch": self.branch,
            "converged": self.converged,
            "n_points": self.n_points,
            "message": self.message,
        }


def growth_eval(params: GrowthParams, t):
    """Evaluate the growth function; overflow-safe through ``expit``."""
    t = np.asarray(t, dtype=float)
    value = params.g * expit(params.lambda_g * (t - params.t_g))
    if params.dying:
        value = value - params.d * expit(params.lambda_d * (t - params.t_d))
    return float(value) if value.ndim == 0 else value


def growth_jacobian(params: GrowthParams, t) -> np.ndarray:
    """Partial derivatives w.r.t. (g, lambda_g, t_g, d, lambda_d, t_d), shape (N, 6).

    The dying columns are zero while the gate is closed.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    jac = np.zeros((t.size, 6))
    jac[:, :3] = _sigmoid_jacobian(params.g, params.lambda_g, params.t_g, t)
    if params.dying:
        jac[:, 3:] = -_sigmoid_jacobian(params.d, params.lambda_d, params.t_d, t)
    return jac


def _sigmoid_jacobian(amplitude: float, slope: float, offset: float, t: np.ndarray) -> np.ndarray:
    s = expit(slope * (t - offset))
    ds = s * (1.0 - s)
    return np.column_stack([s, amplitude * ds * (t - offset), -amplitude * slope * ds])


def _growing_model(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    return x[0] * expit(x[1] * (t - x[2]))


def _full_model(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    # ungated: d is bounded at 0 so the branch stays differentiable
    return _growing_model(x[:3], t) - x[3] * expit(x[4] * (t - x[5]))


def _full_jacobian(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.hstack([
        _sigmoid_jacobian(x[0], x[1], x[2], t),
        -_sigmoid_jacobian(x[3], x[4], x[5], t),
    ])


def _first_crossing(t: np.ndarray, c: np.ndarray, level: float) -> float:
    above = np.nonzero(c >= level)[0]
    return float(t[above[0]]) if above.size else float(t[-1])


def initial_guess(t: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Heuristic start for (g, lambda_g, t_g, d, lambda_d, t_d)."""
    g0 = float(np.max(c))
    t_g0 = _first_crossing(t, c, 0.5 * g0)
    rise = _first_crossing(t, c, 0.8 * g0) - _first_crossing(t, c, 0.2 * g0)
    lambda_g0 = 4.0 / max(rise, 1.0)

    peak = int(np.argmax(c))
    decline = g0 - float(c[-1])
    if peak < c.size - 1 and decline > 0:
        d0 = decline
        after = np.nonzero(c[peak:] <= g0 - 0.5 * decline)[0]
        t_d0 = float(t[peak + after[0]]) if after.size else float(t[-1])
    else:
        d0 = 0.1 * g0
        t_d0 = float(t[-1])
    return np.array([g0, lambda_g0, t_g0, d0, lambda_g0, t_d0])


def _fit_branch(model, jac, x0, lower, upper, t, c, max_nfev):
    x0 = np.clip(x0, lower + 1e-12, upper - 1e-12)
    result = least_squares(
        lambda x: model(x, t) - c,
        x0,
        jac=lambda x: jac(x, t),
        bounds=(lower, upper),
        method="trf",
        x_scale="jac",
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=max_nfev,
    )
    ssr = float(np.sum(result.fun ** 2))
    return result.x, ssr, result.status > 0, str(result.message)


def fit_growth(
    t: Sequence[float],
    c: Sequence[float],
    allow_dying: bool = True,
    max_nfev: int = 2000,
) -> GrowthFit:
    """Least-squares fit of the growth function to a cover-ratio series.

    Both branches are fitted when enough samples exist and the one with the
    lower residual is kept; residuals within ``TIE_TOLERANCE`` keep the growing
    branch. The full branch starts from the decline heuristic and from the
    growing optimum with a small late dying term, and keeps the better start.
    ``allow_dying=False`` ignores the dying phase.

    Raises:
        DegenerateInputError: fewer than four samples
    """
    t = np.asarray(t, dtype=float)
    c = np.asarray(c, dtype=float)
    if t.shape != c.shape:
        raise ValueError("time and cover series differ in length")
    n = t.size
    if n < MIN_POINTS_GROWING:
        raise DegenerateInputError(
            f"Growth fit needs at least {MIN_POINTS_GROWING} samples, got {n}"
        )
    order = np.argsort(t, kind="stable")
    t, c = t[order], c[order]

    x0 = initial_guess(t, c)
    span = max(float(t[-1] - t[0]), 1.0)
    t_low, t_high = float(t[0]) - 2 * span, float(t[-1]) + 2 * span

    grow_lower = np.array([1e-9, 1e-6, t_low])
    grow_upper = np.array([2.0, 10.0, t_high])
    x_grow, ssr_grow, ok_grow, msg_grow = _fit_branch(
        _growing_model,
        lambda x, tt: _sigmoid_jacobian(x[0], x[1], x[2], tt),
        x0[:3], grow_lower, grow_upper, t, c, max_nfev,
    )
    best = GrowthFit(
        params=GrowthParams.from_array(x_grow),
        residual=ssr_grow,
        branch=BRANCH_GROWING,
        converged=ok_grow,
        n_points=n,
        message=msg_grow,
    )

    if allow_dying and n >= MIN_POINTS_FULL:
        full_lower = np.concatenate([grow_lower, [0.0, 1e-6, t_low]])
        full_upper = np.concatenate([grow_upper, [2.0, 10.0, t_high]])
        starts = [x0, np.concatenate([x_grow, [0.01 * x_grow[0], x_grow[1], float(t[-1])]])]
        fits = [
            _fit_branch(_full_model, _full_jacobian, start, full_lower, full_upper, t, c, max_nfev)
            for start in starts
        ]
        x_full, ssr_full, ok_full, msg_full = min(fits, key=lambda fit: fit[1])
        logger.debug(f"Growth residuals: growing {ssr_grow:.3e}, full {ssr_full:.3e}")
        if ssr_full < ssr_grow - TIE_TOLERANCE:
            best = GrowthFit(
                params=GrowthParams.from_array(x_full),
                residual=ssr_full,
                branch=BRANCH_FULL,
                converged=ok_full,
                n_points=n,
                message=msg_full,
            )

    if not best.converged:
        logger.warning(f"Growth fit did not converge: {best.message}")
    logger.info(
        f"✓ Growth fit ({best.branch}): g={best.params.g:.3f} "
        f"t_g={best.params.t_g:.1f} residual={best.residual:.3e}"
    )
    return best


def smooth_cover_ratios(fit: GrowthFit, t: Sequence[float]) -> np.ndarray:
    """Cover ratios predicted by the fit, used to order acquisitions."""
    return np.atleast_1d(growth_eval(fit.params, t))


def save_growth(fit: GrowthFit, path: str, series: Optional[Tuple[Sequence[float], Sequence[float]]] = None) -> None:
    data = fit.to_dict()
    if series is not None:
        data["series"] = [{"t": float(a), "cover_ratio": float(b)} for a, b in zip(*series)]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(data, handle, indent=2)
