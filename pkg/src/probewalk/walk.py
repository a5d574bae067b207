"""Pointer random walk: Born-rule sampling, correction pulses and ensembles.

All trajectories in a batch advance in lockstep through one vectorized
kernel. Matrix-vector products and norms are written as explicit sums in a
fixed order, so each trajectory's arithmetic is identical whether it runs
alone or inside a batch of any size. Each trajectory draws from its own
Philox stream keyed by ``(seed, index)``; together these make ensemble
results independent of batching and thread count.

Correction pulses are applied on retracing steps, i.e. whenever a step
moves the pointer back towards the origin and thereby undoes the last step
of the reduced (monotone) path. ``pulse_rule="reversal"`` applies them only
when the step direction flips.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .linalg import proportionality_residual, phase_fitted_fidelity, is_unitary
from .probe import ProbeScheme, step_operator
from .reversibility import correction_pulse

RNG_BLOCK = 256
RENORM_EVERY = 100
P_FLOOR = 1e-14
PULSE_RULES = ("retrace", "reversal", "none")


class NumericalDegeneracy(RuntimeError):
    """The sampled outcome had probability below ``1e-14``."""


def _lattice_index(value: float, delta: float, name: str) -> int:
    k = round(value / delta)
    if abs(value - k * delta) > 1e-12 * max(1.0, abs(value)):
        raise ValueError(f"{name} must be an integer multiple of delta")
    return int(k)


@dataclass(frozen=True)
class WalkConfig:
    delta: float
    boundary_pos: float
    boundary_neg: Optional[float] = None
    max_steps: Optional[int] = None
    seed: int = 0
    record_states: bool = False
    pulse_rule: str = "retrace"
    renorm_every: int = RENORM_EVERY

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.boundary_neg is None:
            object.__setattr__(self, "boundary_neg", -self.boundary_pos)
        if not self.boundary_neg < 0 < self.boundary_pos:
            raise ValueError("boundaries must satisfy boundary_neg < 0 < boundary_pos")
        _lattice_index(self.boundary_pos, self.delta, "boundary")
        _lattice_index(self.boundary_neg, self.delta, "boundary")
        if self.max_steps is None:
            X = max(self.boundary_pos, -self.boundary_neg)
            object.__setattr__(self, "max_steps", int(math.ceil(50 * (X / self.delta) ** 2)))
        if self.pulse_rule not in PULSE_RULES:
            raise ValueError(f"pulse_rule must be one of {PULSE_RULES}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def n_pos(self) -> int:
        return _lattice_index(self.boundary_pos, self.delta, "boundary")

    @property
    def n_neg(self) -> int:
        return _lattice_index(self.boundary_neg, self.delta, "boundary")


@dataclass
class TrajectoryRecord:
    steps: list
    final_state: np.ndarray
    boundary: int  # +1, -1, or 0 for timeout
    total_operator: Optional[np.ndarray]
    reversal_count: int
    renorm_count: int = 0
    states: Optional[list] = None

    @property
    def timed_out(self) -> bool:
        return self.boundary == 0

    @property
    def outcome(self) -> Optional[int]:
        return {1: 1, -1: 2}.get(self.boundary)


@dataclass
class EnsembleStats:
    n: int
    freq_outcome1: float
    mean_steps: float
    mean_fidelity_1: float
    mean_fidelity_2: float
    ci95_halfwidth: float
    timeouts: int = 0
    renorms: int = 0
    counts: tuple = (0, 0)
    records: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "freq_outcome1": self.freq_outcome1,
            "ci95": self.ci95_halfwidth,
            "mean_fidelity_1": self.mean_fidelity_1,
            "mean_fidelity_2": self.mean_fidelity_2,
            "mean_steps": self.mean_steps,
            "timeouts": self.timeouts,
            "renorms": self.renorms,
        }


# -- tables -------------------------------------------------------------------


class StepTable:
    """Step operators and pulses on the lattice ``x = j delta``, ``n_neg <= j <= n_pos``."""

    def __init__(self, scheme: ProbeScheme, config: WalkConfig, pulses: bool = True):
        self.scheme, self.delta = scheme, config.delta
        self.j0 = config.n_neg
        js = np.arange(config.n_neg, config.n_pos + 1)
        d = scheme.dim
        dl = config.delta
        # index 0 -> branch -1, index 1 -> branch +1
        self.M = np.empty((2, len(js), d, d), dtype=complex)
        self.P = np.empty((2, len(js), d, d), dtype=complex)
        for k, j in enumerate(js):
            x = j * dl
            self.M[0, k] = step_operator(scheme, x, -1, dl)
            self.M[1, k] = step_operator(scheme, x, 1, dl)
            if pulses:
                self.P[0, k] = correction_pulse(scheme, x, dl, -1)
                self.P[1, k] = correction_pulse(scheme, x, dl, 1)
            else:
                self.P[:, k] = np.eye(d)

    def step(self, j: int, branch: int) -> np.ndarray:
        return self.M[(branch + 1) // 2, j - self.j0]

    def pulse(self, j: int, branch: int) -> np.ndarray:
        return self.P[(branch + 1) // 2, j - self.j0]


_TABLE_CACHE: dict = {}


def step_table(scheme: ProbeScheme, config: WalkConfig) -> StepTable:
    key = (id(scheme), config.delta, config.n_neg, config.n_pos, config.pulse_rule != "none")
    hit = _TABLE_CACHE.get(key)
    if hit is None or hit[0] is not scheme:
        tab = StepTable(scheme, config, pulses=config.pulse_rule != "none")
        if len(_TABLE_CACHE) > 32:
            _TABLE_CACHE.clear()
        _TABLE_CACHE[key] = (scheme, tab)
        return tab
    return hit[1]


# -- deterministic primitives -----------------------------------------------------


def _matvec(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Batched ``M @ v`` summed in a fixed order; ``M`` is (n,d,d), ``v`` is (n,d)."""
    out = M[:, :, 0] * v[:, 0, None]
    for k in range(1, v.shape[1]):
        out = out + M[:, :, k] * v[:, k, None]
    return out


def _norm2(v: np.ndarray) -> np.ndarray:
    re, im = v.real, v.imag
    acc = re[:, 0] * re[:, 0] + im[:, 0] * im[:, 0]
    for k in range(1, v.shape[1]):
        acc = acc + (re[:, k] * re[:, k] + im[:, k] * im[:, k])
    return acc


def _needs_pulse(rule: str, j_old, j_new, prev_dir, direction):
    if rule == "retrace":
        return np.abs(j_new) < np.abs(j_old)
    if rule == "reversal":
        return (prev_dir != 0) & (prev_dir != direction)
    return np.zeros_like(direction, dtype=bool)


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for trajectory ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(index)))


class _UniformBuffer:
    """Block-buffered uniforms, one stream per trajectory."""

    def __init__(self, gens):
        self.gens = gens
        self.buf = np.empty((len(gens), RNG_BLOCK))
        self.pos = RNG_BLOCK

    def next(self) -> np.ndarray:
        if self.pos == RNG_BLOCK:
            for i, g in enumerate(self.gens):
                self.buf[i] = g.random(RNG_BLOCK)
            self.pos = 0
        col = self.buf[:, self.pos]
        self.pos += 1
        return col


# -- batched kernel -----------------------------------------------------------------


@dataclass
class _BatchResult:
    boundary: np.ndarray
    steps: np.ndarray
    final: np.ndarray
    pulses: np.ndarray
    renorms: np.ndarray
    operators: Optional[np.ndarray]
    records: dict


def _run_batch(initial, scheme, config, indices, table, track_operator=False, record=(), uniforms=None) -> _BatchResult:
    n = len(indices)
    d = scheme.dim
    psi0 = np.asarray(initial, dtype=complex)
    psi0 = psi0 / np.sqrt(_norm2(psi0[None, :])[0])
    state = np.tile(psi0, (n, 1))
    j = np.zeros(n, dtype=np.int64)
    prev = np.zeros(n, dtype=np.int64)
    boundary = np.zeros(n, dtype=np.int64)
    nsteps = np.zeros(n, dtype=np.int64)
    pulses = np.zeros(n, dtype=np.int64)
    renorms = np.zeros(n, dtype=np.int64)
    T = np.tile(np.eye(d, dtype=complex), (n, 1, 1)) if track_operator else None
    alive = np.ones(n, dtype=bool)
    if uniforms is None:
        uniforms = _UniformBuffer([trajectory_rng(config.seed, i) for i in indices])
    rec_pos = {int(np.nonzero(np.asarray(indices) == r)[0][0]): r for r in record if r in set(indices)}
    records = {r: {"steps": [], "states": []} for r in rec_pos.values()}
    j0 = table.j0
    I = np.eye(d, dtype=complex)

    for t in range(config.max_steps):
        u_all = uniforms.next()
        idx = np.nonzero(alive)[0]
        if len(idx) == 0:
            break
        u = u_all[idx]
        jj = j[idx]
        k = jj - j0
        ap = _matvec(table.M[1, k], state[idx])
        am = _matvec(table.M[0, k], state[idx])
        pp = _norm2(ap)
        pm = _norm2(am)
        up = u < pp
        direction = np.where(up, 1, -1)
        p_sel = np.where(up, pp, pm)
        if np.any(p_sel < P_FLOOR):
            bad = idx[np.argmax(p_sel < P_FLOOR)]
            raise NumericalDegeneracy(
                f"trajectory {indices[bad]}: selected outcome has probability below {P_FLOOR:g}"
            )
        new = np.where(up[:, None], ap, am) / np.sqrt(p_sel)[:, None]
        j_new = jj + direction
        pulse = _needs_pulse(config.pulse_rule, jj, j_new, prev[idx], direction)
        if np.any(pulse):
            Ps = np.where(
                pulse[:, None, None],
                table.P[(1 - direction) // 2, j_new - j0],  # branch of the undone step is -direction
                I,
            )
            new = _matvec(Ps, new)
            pulses[idx] += pulse
        if track_operator:
            Ms = np.where(up[:, None, None], table.M[1, k], table.M[0, k])
            step_op = Ms
            if np.any(pulse):
                step_op = np.einsum("nab,nbc->nac", Ps, Ms)
            T[idx] = np.einsum("nab,nbc->nac", step_op, T[idx])
        state[idx] = new
        prev[idx] = direction
        j[idx] = j_new
        nsteps[idx] += 1
        for pos, r in rec_pos.items():
            w = np.nonzero(idx == pos)[0]
            if len(w):
                w = w[0]
                records[r]["steps"].append((float(jj[w] * config.delta), int(direction[w]), float(pp[w])))
                if config.record_states:
                    records[r]["states"].append(new[w].copy())
        if track_operator and (t + 1) % config.renorm_every == 0:
            for w in idx:
                s = np.linalg.norm(T[w], 2)
                if s > 0:
                    T[w] /= s
                    renorms[w] += 1
        hit_pos = j_new >= config.n_pos
        hit_neg = j_new <= config.n_neg
        boundary[idx[hit_pos]] = 1
        boundary[idx[hit_neg]] = -1
        alive[idx[hit_pos | hit_neg]] = False
    return _BatchResult(boundary, nsteps, state, pulses, renorms, T, records)


# -- public API ------------------------------------------------------------------------


def run_step(state, scheme: ProbeScheme, x: float, config: WalkConfig, rng: np.random.Generator, prev_direction: int = 0):
    """One weak measurement and pointer move.

    Returns ``(state', x', outcome, p_plus)``. A correction pulse is applied
    when ``config.pulse_rule`` says the move undoes an earlier step.
    """
    table = step_table(scheme, config)
    jj = _lattice_index(x, config.delta, "x")
    psi = np.asarray(state, dtype=complex)[None, :]
    ap = _matvec(table.step(jj, 1)[None], psi)
    am = _matvec(table.step(jj, -1)[None], psi)
    pp, pm = _norm2(ap)[0], _norm2(am)[0]
    up = rng.random() < pp
    direction = 1 if up else -1
    p_sel = pp if up else pm
    if p_sel < P_FLOOR:
        raise NumericalDegeneracy(f"selected outcome has probability {p_sel:.3e}")
    new = (ap if up else am) / np.sqrt(p_sel)
    if _needs_pulse(config.pulse_rule, np.array([jj]), np.array([jj + direction]), np.array([prev_direction]), np.array([direction]))[0]:
        new = _matvec(table.pulse(jj + direction, -direction)[None], new)
    return new[0], (jj + direction) * config.delta, direction, float(pp)


def run_trajectory(initial, scheme: ProbeScheme, config: WalkConfig, index: int = 0, track_operator: bool = True) -> TrajectoryRecord:
    """Walk from ``x = 0`` until a boundary or ``config.max_steps``.

    Uses trajectory stream ``index`` of ``config.seed``, so the outcome
    sequence equals that of trajectory ``index`` in :func:`run_ensemble`.
    """
    table = step_table(scheme, config)
    res = _run_batch(initial, scheme, config, [index], table, track_operator=track_operator, record=[index])
    rec = res.records[index]
    return TrajectoryRecord(
        steps=rec["steps"],
        final_state=res.final[0],
        boundary=int(res.boundary[0]),
        total_operator=res.operators[0] if track_operator else None,
        reversal_count=int(res.pulses[0]),
        renorm_count=int(res.renorms[0]),
        states=rec["states"] if config.record_states else None,
    )


def _fidelity_sum(states, mask, target_op, psi0):
    if target_op is None or not np.any(mask):
        return [], 0
    tgt = target_op @ psi0
    if np.linalg.norm(tgt) == 0:
        return [], 0
    vals = [phase_fitted_fidelity(s, tgt) for s in states[mask]]
    return vals, len(vals)


def run_ensemble(initial, scheme: ProbeScheme, config: WalkConfig, n: int, endpoints=None, workers: int = 1, chunk: int = 2048, record: int = 0) -> EnsembleStats:
    """``n`` independent trajectories with streams ``(config.seed, i)``.

    ``endpoints = (M1, M2)`` enables post-state fidelities against
    ``M_i |psi> / sqrt(p_i)``, fitted over a diagonal phase. Sums are
    accumulated with :func:`math.fsum` in trajectory order, so results do not
    depend on ``workers`` or ``chunk``. ``record`` keeps full records for
    the first ``record`` trajectories.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    table = step_table(scheme, config)
    psi0 = np.asarray(initial, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)
    chunks = [list(range(s, min(s + chunk, n))) for s in range(0, n, chunk)]
    rec_ids = list(range(min(record, n)))

    def work(ids):
        return _run_batch(psi0, scheme, config, ids, table, record=[r for r in rec_ids if r in ids])

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]

    boundary = np.concatenate([p.boundary for p in parts])
    steps = np.concatenate([p.steps for p in parts])
    final = np.concatenate([p.final for p in parts])
    pulses = np.concatenate([p.pulses for p in parts])
    records = {}
    for p in parts:
        records.update(p.records)

    done = boundary != 0
    n_done = int(done.sum())
    n1 = int((boundary == 1).sum())
    freq = n1 / n_done if n_done else float("nan")
    M1, M2 = endpoints if endpoints is not None else (None, None)
    f1, k1 = _fidelity_sum(final, boundary == 1, M1, psi0)
    f2, k2 = _fidelity_sum(final, boundary == -1, M2, psi0)
    recs = []
    for r in rec_ids:
        recs.append(
            TrajectoryRecord(
                steps=records[r]["steps"],
                final_state=final[r],
                boundary=int(boundary[r]),
                total_operator=None,
                reversal_count=int(pulses[r]),
                states=records[r]["states"] if config.record_states else None,
            )
        )
    return EnsembleStats(
        n=n,
        freq_outcome1=freq,
        mean_steps=math.fsum(steps.tolist()) / n,
        mean_fidelity_1=math.fsum(f1) / k1 if k1 else float("nan"),
        mean_fidelity_2=math.fsum(f2) / k2 if k2 else float("nan"),
        ci95_halfwidth=1.96 * math.sqrt(freq * (1 - freq) / n_done) if n_done else float("nan"),
        timeouts=int(n - n_done),
        renorms=0,
        counts=(n1, n_done - n1),
        records=recs,
    )


def run_forced_path(scheme: ProbeScheme, path, config: WalkConfig, renormalize: bool = True):
    """Ordered product of step operators (and pulses) along a prescribed ``+-1`` path.

    Returns ``(operator, pulses_applied)``; the operator is rescaled to unit
    spectral norm every ``config.renorm_every`` steps when ``renormalize``.
    """
    table = step_table(scheme, config)
    d = scheme.dim
    T = np.eye(d, dtype=complex)
    j, prev, count = 0, 0, 0
    for t, b in enumerate(path):
        b = int(b)
        if b not in (1, -1):
            raise ValueError("path entries must be +1 or -1")
        if not (config.n_neg < j < config.n_pos):
            raise ValueError("path leaves the walk interval")
        op = table.step(j, b)
        jn = j + b
        if _needs_pulse(config.pulse_rule, np.array([j]), np.array([jn]), np.array([prev]), np.array([b]))[0]:
            op = table.pulse(jn, -b) @ op
            count += 1
        T = op @ T
        j, prev = jn, b
        if renormalize and (t + 1) % config.renorm_every == 0:
            T = T / np.linalg.norm(T, 2)
    return T, count


def endpoint_operators_numeric(scheme: ProbeScheme, config: WalkConfig):
    """Products along the straight paths to ``+X`` and ``X1``, each scaled to unit spectral norm."""
    T1, _ = run_forced_path(scheme, [1] * config.n_pos, config)
    T2, _ = run_forced_path(scheme, [-1] * (-config.n_neg), config)
    return T1 / np.linalg.norm(T1, 2), T2 / np.linalg.norm(T2, 2)


def proportionality_to(A, B) -> float:
    """``|| A/|A| - lam B/|B| ||_F`` for the best complex ``lam``."""
    from .linalg import mutual_proportionality_residual

    return mutual_proportionality_residual(A, B)


def apply_unitary_padding(scheme: ProbeScheme, V: Callable[[float], np.ndarray], h: float = 1e-5) -> ProbeScheme:
    """Scheme with step operators ``V(x + b delta) M_b(x) V(x)^dag``.

    Raises
    ------
    ValueError
        If ``V(0)`` is not the identity, ``V`` is not unitary, or its
        finite-difference generator is unbounded at ``x = 0``.
    """
    d = scheme.dim
    V0 = np.asarray(V(0.0), dtype=complex)
    if V0.shape != (d, d):
        raise ValueError(f"V(x) must be {d}x{d}")
    if np.linalg.norm(V0 - np.eye(d)) > 1e-10:
        raise ValueError("padding family must satisfy V(0) = 1")
    for x in (-h, h, 0.5, -0.5):
        if not is_unitary(V(x)):
            raise ValueError("padding family must be unitary")
    gen = np.linalg.norm((V(h) - V(-h)) / (2 * h))
    if not np.isfinite(gen) or gen > 1e6:
        raise ValueError("padding family is not continuous at x = 0")
    if scheme.padding is not None:
        inner = scheme.padding
        W = lambda x: np.asarray(V(x)) @ inner(x)
    else:
        W = lambda x: np.asarray(V(x), dtype=complex)
    return scheme.with_(padding=W, name=scheme.name + "+padded")
