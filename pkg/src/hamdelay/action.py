"""Action functionals on loops and chords, and the pushforward identity.

Areas are computed through the boundary primitive lambda = (1/2) sum
(x_i dy_i - y_i dx_i), never by filling disks: the signed sum of per-copy
line integrals equals the half-disk area because matched diagonal pairs
carry opposite signs, so the diagonal boundary segments contribute nothing.
Torus curves are lifted to the plane first; a lift that cannot be glued
consistently around the matching cycle means the loop is non-contractible.
"""

from __future__ import annotations

import numpy as np

from .geometry import LevelStructure, build_level
from .hamiltonians import lift
from .transforms import DiscreteCurve, TransformChain, psi_chain


class NonContractibleError(ValueError):
    """The curve has no consistent planar lift with zero winding."""


def unwrap_loop(loop: DiscreteCurve):
    """Continuous planar lift of a level-0 loop and its integer winding."""
    if loop.level != 0:
        raise ValueError("unwrap_loop expects a level-0 loop")
    s = loop.samples[:, 0, :]
    if loop.space.topology != "torus":
        return s.copy(), np.zeros(s.shape[1], dtype=int)
    diffs = s[1:] - s[:-1]
    diffs -= np.ceil(diffs - 0.5)
    lifted = np.empty_like(s)
    lifted[0] = s[0]
    lifted[1:] = s[0] + np.cumsum(diffs, axis=0)
    winding_f = lifted[-1] - lifted[0]
    winding = np.round(winding_f).astype(int)
    if np.max(np.abs(winding_f - winding)) > 1e-6:
        raise ValueError("loop does not close up to tolerance")
    return lifted, winding


def _line_integral(samples: np.ndarray) -> float:
    """Trapezoid integral of lambda along an open planar path."""
    d = samples.shape[1] // 2
    x, y = samples[:, :d], samples[:, d:]
    return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


def loop_area(loop: DiscreteCurve) -> float:
    """Symplectic area enclosed by a contractible loop (boundary integral)."""
    lifted, winding = unwrap_loop(loop)
    if np.any(winding != 0):
        raise NonContractibleError(f"loop has winding {winding.tolist()}")
    return _line_integral(lifted)


def _h_quadrature(ham, samples: np.ndarray, ts: np.ndarray) -> float:
    """Trapezoid rule for the perturbation integral along sampled nodes."""
    vals = np.asarray(ham.value(samples, ts), dtype=float)
    h = ts[1] - ts[0]
    return float(h * (0.5 * vals[0] + np.sum(vals[1:-1]) + 0.5 * vals[-1]))


def action_loop(ham, loop: DiscreteCurve) -> float:
    """A_H(v) = -area(v) - int_0^1 H_t(v(t)) dt."""
    area = loop_area(loop)
    return -area - _h_quadrature(ham, loop.samples, loop.times())


def chord_lifts(path: DiscreteCurve, level: LevelStructure):
    """Per-copy planar lifts glued along the matching cycle.

    Copy lifts are anchored sequentially so matched pairs share lifted
    boundary values; an inconsistent cycle closure raises
    NonContractibleError (the pulled-back loop would wind).
    """
    s = path.samples
    copies = s.shape[1]
    if path.space.topology != "torus":
        return s.copy()
    lifted = np.empty_like(s)
    for j in range(copies):
        diffs = s[1:, j] - s[:-1, j]
        diffs -= np.ceil(diffs - 0.5)
        lifted[0, j] = s[0, j]
        lifted[1:, j] = s[0, j] + np.cumsum(diffs, axis=0)
    if level.level == 0:
        return lifted
    # propagate integer offsets along the union cycle of the two matchings
    edges = [(a, b, 0) for a, b in level.matching0] + [(a, b, -1) for a, b in level.matching1]
    offsets = [None] * copies
    offsets[0] = np.zeros(s.shape[2])
    adj: dict[int, list[tuple[int, int]]] = {j: [] for j in range(copies)}
    for e, (a, b, end) in enumerate(edges):
        adj[a].append((b, e))
        adj[b].append((a, e))
    stack = [0]
    used = set()
    while stack:
        a = stack.pop()
        for b, e in adj[a]:
            _, _, end = edges[e]
            gap = lifted[end, a] + offsets[a] - lifted[end, b]
            shift = np.round(gap)
            if np.max(np.abs(gap - shift)) > 1e-6:
                raise NonContractibleError("matched boundary pair does not glue on the lift")
            if offsets[b] is None:
                offsets[b] = shift
                stack.append(b)
            elif e not in used:
                if np.any(offsets[b] != shift):
                    raise NonContractibleError("lift does not close around the matching cycle")
            used.add(e)
    return lifted + np.asarray(offsets)[None, :, :]


def chord_area(path: DiscreteCurve, level: LevelStructure) -> float:
    """Half-disk area of a chord: signed sum of per-copy boundary integrals."""
    lifted = chord_lifts(path, level)
    return float(sum(level.sign_vector[j] * _line_integral(lifted[:, j, :]) for j in range(path.copies)))


def action_chord(ham, path: DiscreteCurve, level: LevelStructure) -> float:
    """A_K(w) = -half-disk area - int_0^1 K_t(w(t)) dt."""
    area = chord_area(path, level)
    return -area - _h_quadrature(ham, path.samples, path.times())


def pushforward_gap(ham, loop: DiscreteCurve, chain: TransformChain, variant: str = "derived") -> float:
    """|A_{H^n}(Psi^n v) - A_H(v)| at the loop's sampling resolution."""
    lifted_ham = lift(ham, chain, variant=variant)
    w = psi_chain(chain, loop)
    level = build_level(loop.space, chain.level)
    return abs(action_chord(lifted_ham, w, level) - action_loop(ham, loop))


def action_report(ham, loop: DiscreteCurve) -> dict:
    """JSON-ready action breakdown for one loop."""
    lifted, winding = unwrap_loop(loop)
    area = loop_area(loop)
    pert = _h_quadrature(ham, loop.samples, loop.times())
    return {
        "action": -area - pert,
        "area_term": area,
        "perturbation_term": pert,
        "winding": winding.tolist(),
    }
