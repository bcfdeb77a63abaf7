"""Symbolic compiler from structured Hamiltonians to piecewise delay equations.

On the segment owned by copy k the pulled-back loop satisfies

    v'(t) = rate_k(t) * sum_p c_p [prod_{m in S_p, m != k}
            F^{p,m}(v(delta^k_m(t) mod 1), theta_k(t))] * X_{F^{p,k}}(v(t), theta_k(t))

with all intervals, time profiles, and delayed-time maps exact rationals
for affine chains.  Delayed-time maps are stored unreduced with a mod-1
flag; on affine chains their values already lie in [0, 1], which is the
canonical representative renderers display.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .hamiltonians import Factor, StructuredHamiltonian, hamiltonian_field
from .transforms import (
    AffineMap,
    DiscreteCurve,
    TransformChain,
    delayed_time,
    format_rational,
)


@dataclass(frozen=True, eq=False)
class DelayCoefficient:
    """One delayed prefactor: the factor of copy m read at delta(t)."""

    factor: Factor
    delay: object
    mod1: bool = True

    def to_json(self):
        delay = self.delay.to_json() if hasattr(self.delay, "to_json") else {"kind": "numeric"}
        return {"factor": self.factor.to_json(), "delay": delay, "mod1": self.mod1}


@dataclass(frozen=True, eq=False)
class DelayTermSpec:
    term_index: int
    coeff: float
    driver: Factor
    coefficients: tuple[DelayCoefficient, ...]

    def to_json(self):
        return {
            "term": self.term_index,
            "coeff": self.coeff,
            "driver": self.driver.to_json(),
            "coefficients": [c.to_json() for c in self.coefficients],
        }


@dataclass(frozen=True, eq=False)
class SegmentEquation:
    """The equation rows active on one copy's interval."""

    copy: int
    lo: object
    hi: object
    theta: object
    sign: int
    terms: tuple[DelayTermSpec, ...]

    def rate(self, t):
        return self.sign * np.asarray(self.theta.deriv(t))

    def constant_rate(self):
        """Exact rate for affine segments, None otherwise."""
        if getattr(self.theta, "is_affine", False):
            return self.sign * self.theta.slope
        return None

    def to_json(self):
        rate = self.constant_rate()
        return {
            "copy": self.copy + 1,
            "interval": [_fmt_endpoint(self.lo), _fmt_endpoint(self.hi)],
            "theta": self.theta.to_json() if hasattr(self.theta, "to_json") else {"kind": "numeric"},
            "rate": format_rational(rate) if rate is not None else None,
            "terms": [t.to_json() for t in self.terms],
        }


def _fmt_endpoint(x):
    return format_rational(x) if isinstance(x, Fraction) else float(x)


@dataclass(frozen=True, eq=False)
class DelayEquationDescriptor:
    """The full piecewise system, segments ordered along [0, 1]."""

    level: int
    chain: TransformChain
    segments: tuple[SegmentEquation, ...]

    def segment_at(self, t: float) -> SegmentEquation:
        """Segment whose interval contains t, right limit at breakpoints."""
        los = [float(s.lo) for s in self.segments]
        idx = int(np.searchsorted(los, t, side="right")) - 1
        return self.segments[max(idx, 0)]

    def breakpoints(self) -> tuple:
        return tuple(s.lo for s in self.segments[1:])

    def to_json(self):
        return {
            "level": self.level,
            "chain": self.chain.to_json(),
            "segments": [s.to_json() for s in self.segments],
        }


def generate(K: StructuredHamiltonian, chain: TransformChain) -> DelayEquationDescriptor:
    """Compiles the delay equation satisfied by pullbacks of K's chords."""
    if K.level != chain.level:
        raise ValueError("Hamiltonian level does not match the chain length")
    table = chain.table
    segments = []
    for entry in table.by_interval():
        k = entry.copy
        terms = []
        for p, (c, factors) in enumerate(K.terms):
            by_copy = {f.copy: f for f in factors}
            if k not in by_copy:
                continue
            coeffs = tuple(
                DelayCoefficient(f, delayed_time(chain, k, f.copy))
                for f in factors
                if f.copy != k
            )
            terms.append(DelayTermSpec(p, c, by_copy[k], coeffs))
        segments.append(SegmentEquation(k, entry.lo, entry.hi, entry.theta, entry.sign, tuple(terms)))
    return DelayEquationDescriptor(chain.level, chain, tuple(segments))


def rhs_eval(d: DelayEquationDescriptor, loop, t):
    """Right-hand side along a periodic loop at times t (scalar or array).

    loop is a level-0 DiscreteCurve or any object with .evaluate(times)
    returning (len(times), 1, dim); delayed reads reduce times mod 1.
    """
    interp = loop.interpolant() if isinstance(loop, DiscreteCurve) else loop
    ts = np.atleast_1d(np.asarray(t, float))
    scalar = np.ndim(t) == 0
    ts = np.mod(ts, 1.0)
    los = np.array([float(s.lo) for s in d.segments])
    idx = np.clip(np.searchsorted(los, ts, side="right") - 1, 0, len(d.segments) - 1)
    probe = interp.evaluate(ts[:1])
    out = np.zeros((len(ts), probe.shape[-1]))
    for i, seg in enumerate(d.segments):
        mask = idx == i
        if not np.any(mask):
            continue
        tt = ts[mask]
        theta = np.asarray(seg.theta(tt))
        rate = np.asarray(seg.rate(tt))
        v_now = interp.evaluate(tt)[:, 0, :]
        acc = np.zeros((len(tt), out.shape[-1]))
        for term in seg.terms:
            pref = np.full(len(tt), term.coeff)
            for coeff in term.coefficients:
                delayed = np.mod(np.asarray(coeff.delay(tt)), 1.0)
                vals = interp.evaluate(delayed)[:, 0, :]
                pref = pref * coeff.factor.value(vals, theta)
            acc += pref[:, None] * hamiltonian_field(term.driver.grad(v_now, theta))
        out[mask] = rate[:, None] * acc
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# rendering


def _factor_label(f: Factor, time_expr: str) -> str:
    return f"F{f.copy + 1}[{time_expr}]"


def _delay_expr(c: DelayCoefficient) -> str:
    # delayed_time maps already take values in [0,1], the canonical mod-1 form
    if isinstance(c.delay, AffineMap):
        return c.delay.pretty()
    return "delta(t)"


def _term_text(term: DelayTermSpec, time_expr: str) -> str:
    parts = []
    if term.coeff != 1.0:
        parts.append(f"{term.coeff:g}")
    for c in term.coefficients:
        parts.append(f"{_factor_label(c.factor, time_expr)}(v({_delay_expr(c)}))")
    parts.append(f"X_{_factor_label(term.driver, time_expr)}(v(t))")
    return " ".join(parts)


def render(d: DelayEquationDescriptor, fmt: str = "text") -> str:
    """Deterministic rendering; rows ordered by interval left endpoint."""
    if fmt == "json":
        return json.dumps(d.to_json(), indent=2)
    if fmt == "text":
        lines = []
        for seg in d.segments:
            time_expr = seg.theta.pretty() if isinstance(seg.theta, AffineMap) else "theta(t)"
            interval = f"t in [{_fmt_endpoint(seg.lo)}, {_fmt_endpoint(seg.hi)}]"
            rate = seg.constant_rate()
            if not seg.terms:
                lines.append(f"v'(t) = 0,  {interval}")
                continue
            body = " + ".join(_term_text(t, time_expr) for t in seg.terms)
            if rate is not None:
                lines.append(f"({format_rational(1 / rate)}) v'(t) = {body},  {interval}")
            else:
                lines.append(f"v'(t) = rate(t) * [{body}],  {interval}")
        return "\n".join(lines)
    if fmt == "latex":
        rows = []
        for seg in d.segments:
            time_expr = seg.theta.pretty() if isinstance(seg.theta, AffineMap) else r"\theta(t)"
            interval = (
                rf"t \in \left[{_latex_frac(seg.lo)}, {_latex_frac(seg.hi)}\right]"
            )
            rate = seg.constant_rate()
            if not seg.terms:
                rows.append(rf"\dot v(t) = 0, & {interval} \\")
                continue
            body = r" + ".join(_term_latex(t, time_expr) for t in seg.terms)
            if rate is not None:
                rows.append(rf"{_latex_frac(1 / rate)}\,\dot v(t) = {body}, & {interval} \\")
            else:
                rows.append(rf"\dot v(t) = \rho(t)\left[{body}\right], & {interval} \\")
        return "\n".join([r"\begin{array}{ll}"] + rows + [r"\end{array}"])
    raise ValueError(f"unknown render format {fmt!r}")


def _latex_frac(x) -> str:
    if isinstance(x, Fraction):
        if x.denominator == 1:
            return str(x.numerator)
        sign = "-" if x < 0 else ""
        return rf"{sign}\tfrac{{{abs(x.numerator)}}}{{{x.denominator}}}"
    return f"{float(x):g}"


def _term_latex(term: DelayTermSpec, time_expr: str) -> str:
    parts = []
    if term.coeff != 1.0:
        parts.append(f"{term.coeff:g}")
    for c in term.coefficients:
        parts.append(rf"F^{{{c.factor.copy + 1}}}_{{{time_expr}}}\bigl(v({_delay_expr(c)})\bigr)")
    parts.append(rf"X_{{F^{{{term.driver.copy + 1}}}_{{{time_expr}}}}}(v(t))")
    return r"\, ".join(parts)
