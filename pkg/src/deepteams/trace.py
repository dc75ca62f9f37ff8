"""Per-iteration optimizer records and their CSV schema."""

import csv
from dataclasses import dataclass

from .model import Policy


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    cost: float
    gap: float
    grad_norm: float
    gain_error: float
    rejected_samples: int | None = None
    estimate_stderr: float | None = None


@dataclass
class RunTrace:
    """Optimizer run record: one row per iteration plus the final policy.

    ``status`` is one of ``converged`` (gradient tolerance reached),
    ``max_iters``, ``stalled`` (backtracking exhausted), or ``unstable``
    (an iterate left the stable/feasible set; ``final_policy`` is the last
    stable one).
    """

    algo: str
    rows: list
    final_policy: Policy
    status: str

    @property
    def final_gain_error(self) -> float:
        return self.rows[-1].gain_error if self.rows else float("nan")

    def to_csv(self, path):
        zo = any(r.rejected_samples is not None for r in self.rows)
        header = ["iter", "J", "gap", "grad_norm", "gain_err"]
        if zo:
            header += ["rejected_samples", "estimate_stderr"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in self.rows:
                row = [r.iteration, repr(float(r.cost)), repr(float(r.gap)),
                       repr(float(r.grad_norm)), repr(float(r.gain_error))]
                if zo:
                    row += [r.rejected_samples if r.rejected_samples is not None else "",
                            repr(float(r.estimate_stderr)) if r.estimate_stderr is not None else ""]
                w.writerow(row)
