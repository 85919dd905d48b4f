"""Uniform pass/fail rows for theorem checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

RTOL = 1e-9


class TheoremViolation(AssertionError):
    def __init__(self, check):
        super().__init__(f"{check.name}: measured {check.measured!r} > bound {check.bound!r}")
        self.check = check


@dataclass
class Check:
    name: str
    measured: float
    bound: float
    passed: bool
    detail: dict = field(default_factory=dict)

    @property
    def slack(self):
        if math.isinf(self.bound) and math.isinf(self.measured):
            return 0.0
        return self.bound - self.measured

    def require(self):
        if not self.passed:
            raise TheoremViolation(self)
        return self


def leq(name, measured, bound, rtol=RTOL, **detail):
    """measured <= bound up to a relative tolerance."""
    measured, bound = float(measured), float(bound)
    ok = measured <= bound or measured <= bound + rtol * max(abs(bound), abs(measured))
    return Check(name, measured, bound, bool(ok), detail)


def flag(name, ok, **detail):
    return Check(name, 1.0 if ok else 0.0, 1.0, bool(ok), detail)
