"""Zero-concentrated DP accounting and the private sampling primitives.

Logs are natural logs throughout. Exponential noise is parameterized by its
mean (scale), not its rate.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import ChargeAfterHalt, DeltaOutOfRange, EmptyCandidates


def _check_delta(delta: float) -> None:
    if not (0.0 < delta < 1.0) or math.isnan(delta):
        raise DeltaOutOfRange(f"delta must lie in (0, 1), got {delta}")


def zcdp_compose(rho1: float, rho2: float) -> float:
    if rho1 < 0 or rho2 < 0:
        raise ValueError("zCDP parameters are non-negative")
    return rho1 + rho2


def dp_to_zcdp(eps: float) -> float:
    if eps < 0:
        raise ValueError("epsilon must be non-negative")
    return 0.5 * eps * eps


def zcdp_to_dp(rho: float, delta: float) -> float:
    if rho < 0:
        raise ValueError("rho must be non-negative")
    _check_delta(delta)
    return rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))


def invert_budget(eps: float, delta: float) -> float:
    """The ``rho`` with ``zcdp_to_dp(rho, delta) == eps``.

    With ``L = ln(1/delta)`` and ``u = sqrt(rho)`` the relation is
    ``u^2 + 2 sqrt(L) u - eps = 0``; the positive root is written as
    ``eps / (sqrt(L + eps) + sqrt(L))`` to avoid cancellation.
    """
    if not eps > 0 or not math.isfinite(eps):
        raise ValueError("epsilon must be positive and finite")
    _check_delta(delta)
    L = math.log(1.0 / delta)
    u = eps / (math.sqrt(L + eps) + math.sqrt(L))
    return u * u


def advanced_composition(eps_list: Sequence[float], delta: float) -> float:
    _check_delta(delta)
    eps = [float(e) for e in eps_list]
    if any(e < 0 for e in eps):
        raise ValueError("epsilons must be non-negative")
    first = math.fsum(e * math.expm1(e) for e in eps)
    second = math.sqrt(math.fsum(e * e for e in eps) * math.log(1.0 / delta) / 2.0)
    return first + second


class FilterState(str, enum.Enum):
    CONT = "CONT"
    HALT = "HALT"


@dataclass
class PrivacyLedger:
    """Append-only list of zCDP spends acting as a privacy filter.

    The state becomes HALT as soon as the exact sum of spends exceeds the
    budget; no further charges are accepted after that.
    """

    budget: float
    spends: list[float] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    state: FilterState = FilterState.CONT

    def __post_init__(self):
        if not self.budget >= 0:
            raise ValueError("budget must be non-negative")

    @property
    def total(self) -> float:
        return math.fsum(self.spends)

    @property
    def remaining(self) -> float:
        return self.budget - self.total

    def charge(self, rho: float, label: str = "") -> FilterState:
        if self.state is FilterState.HALT:
            raise ChargeAfterHalt("ledger already halted")
        if not rho >= 0 or not math.isfinite(rho):
            raise ValueError(f"charge must be finite and non-negative, got {rho}")
        self.spends.append(float(rho))
        self.labels.append(label)
        # sign of the correctly rounded exact difference, so no rounding slack
        if math.fsum(self.spends + [-self.budget]) > 0:
            self.state = FilterState.HALT
        return self.state

    def epsilon(self, delta: float) -> float:
        return zcdp_to_dp(self.total, delta)

    def to_json(self) -> dict[str, Any]:
        return {"budget": self.budget, "spends": list(self.spends), "state": self.state.value}

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "PrivacyLedger":
        led = cls(float(doc["budget"]))
        led.spends = [float(s) for s in doc["spends"]]
        led.labels = [""] * len(led.spends)
        led.state = FilterState(doc["state"])
        return led


def ledger_charge(ledger: PrivacyLedger, rho: float) -> FilterState:
    return ledger.charge(rho)


def exponential_mechanism_log_weights(scores: Sequence[float] | np.ndarray, param: float,
                                      sensitivity: float) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise EmptyCandidates("no candidates to select from")
    if not sensitivity > 0:
        raise ValueError("sensitivity must be positive")
    if not param > 0:
        raise ValueError("privacy parameter must be positive")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    return (param / (2.0 * sensitivity)) * s


def exponential_mechanism_probabilities(scores, param: float, sensitivity: float) -> np.ndarray:
    logits = exponential_mechanism_log_weights(scores, param, sensitivity)
    w = np.exp(logits - logits.max())
    return w / w.sum()


def exponential_mechanism(scores, param: float, sensitivity: float,
                          rng: np.random.Generator) -> int:
    """Select index ``i`` with probability proportional to
    ``exp(param * scores[i] / (2 * sensitivity))`` via the Gumbel-max trick.

    Costs ``param**2 / 2`` zCDP; the caller does the charging.
    """
    logits = exponential_mechanism_log_weights(scores, param, sensitivity)
    return int(np.argmax(logits + rng.gumbel(size=logits.shape[0])))


def sample_exponential_vector(eta: float, d: int, rng: np.random.Generator) -> np.ndarray:
    if not eta > 0:
        raise ValueError("eta must be positive")
    return rng.exponential(eta, size=d)


def sample_laplace_vector(eta: float, M: int, rng: np.random.Generator) -> np.ndarray:
    if not eta > 0:
        raise ValueError("eta must be positive")
    return rng.laplace(0.0, eta, size=M)
