from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ParameterVector


@dataclass
class FitReport:
    """Outcome of one fit, shared by the erasure machine and the baselines.

    ``energy_trace[t]`` is the mean observed energy of the parameters held at
    the start of iteration ``t``; the last entry belongs to the final ``w``.
    """

    method: str
    w: ParameterVector
    iterations: int = 0
    converged: bool = False
    diverged: bool = False
    epsilon: float | None = None
    guard_violated: bool = False
    final_energy: float = float("nan")
    energy_trace: list[float] = field(default_factory=list)
    trajectory: list[tuple[int, np.ndarray]] = field(default_factory=list)
    seconds: float = 0.0
    extras: dict = field(default_factory=dict)

    def to_dict(self, timing: bool = True, trace: bool = False) -> dict:
        d = {
            "method": self.method,
            "M": self.w.M,
            "w": self.w.w.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "diverged": self.diverged,
            "epsilon": self.epsilon,
            "guard_violated": self.guard_violated,
            "final_energy": self.final_energy,
        }
        d.update({k: v for k, v in self.extras.items() if not k.endswith("_trace")})
        if trace:
            d["energy_trace"] = list(self.energy_trace)
        if timing:
            d["seconds"] = self.seconds
        return d
