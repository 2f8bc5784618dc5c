from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class ModelParams:
    """Lattice dimension, infection rate and torus side.

    ``L`` must be at least 3. Odd sides give the origin a symmetric box and are
    required by the torus resolvent and the CLT harness; the tiny-torus oracle
    also accepts even sides (``require_odd=False``).
    """

    d: int
    lam: float
    L: int = 15
    require_odd: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d: must be a positive integer, got {self.d!r}")
        if not self.lam > 0:
            raise ValueError(f"lambda: must be positive, got {self.lam!r}")
        if int(self.L) != self.L or self.L < 3:
            raise ValueError(f"L: must be an integer >= 3, got {self.L!r}")
        if self.require_odd and self.L % 2 == 0:
            raise ValueError(f"L: must be odd, got {self.L}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "L", int(self.L))
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def n_sites(self) -> int:
        return self.L**self.d

    @property
    def reset_rate(self) -> float:
        """Per-site reset rate 1/(2 lambda d)."""
        return 1.0 / (2.0 * self.lam * self.d)

    @property
    def drift(self) -> float:
        """Drift coefficient c = 1/(2 lambda d) - 1."""
        return self.reset_rate - 1.0

    @property
    def total_rate(self) -> float:
        return self.n_sites * (1.0 + self.reset_rate)

    @property
    def lambda_threshold(self) -> float:
        """Infection rate above which h > 0 (infinite for d < 3)."""
        if self.d < 3:
            return float("inf")
        from .rw import escape_probability

        g = escape_probability(self.d)
        return 1.0 / (2 * self.d * (2 * g - 1))

    @property
    def supercritical(self) -> bool:
        return self.d >= 3 and self.lam > self.lambda_threshold

    def bcpp_time(self, t: float) -> float:
        """BCPP clock matching NBCPP time t."""
        return (1 + 2 * self.lam * self.d) * t / (2 * self.lam * self.d)
