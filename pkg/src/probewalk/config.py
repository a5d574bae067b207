"""Line-oriented run configuration.

::

    scheme = zz
    alpha = 0.8
    beta = 0.2
    boundary = 3.0
    delta = 0.05
    trajectories = 10000
    seed = 42
    initial_state = 1, 1        # complex amplitudes, normalized on load

    [custom]
    H_Z = 1, 0, 0, -1           # row-major entries, Python complex literals
    probe = 0, 0, 1             # n1 at x = 0
    detector = 1, 0, 0          # n2 at x = 0
    warp_c = -1:0.2, 1:-0.2     # piecewise-linear table x:c

Comments start with ``#``. Keys in the ``[custom]`` block are only allowed
there.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

log = logging.getLogger(__name__)

TOP_KEYS = {
    "scheme": str,
    "alpha": float,
    "beta": float,
    "boundary": float,
    "boundary_neg": float,
    "delta": float,
    "trajectories": int,
    "seed": int,
    "initial_state": "state",
    "output_dir": str,
    "record_states": bool,
    "record_trajectories": int,
    "workers": int,
    "variant": str,
    "pulse_rule": str,
}
CUSTOM_KEYS = {
    "H_S": "matrix",
    "H_X": "matrix",
    "H_Y": "matrix",
    "H_Z": "matrix",
    "probe": "vector",
    "detector": "vector",
    "rotation_axis": "vector",
    "rotation_rate": float,
    "warp_c": "table",
    "warp_psi": "table",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CustomBlock:
    H_S: tuple | None = None
    H_X: tuple | None = None
    H_Y: tuple | None = None
    H_Z: tuple | None = None
    probe: tuple = (0.0, 0.0, 1.0)
    detector: tuple = (1.0, 0.0, 0.0)
    rotation_axis: tuple = (0.0, 0.0, 1.0)
    rotation_rate: float = 0.0
    warp_c: tuple = ((0.0, 0.0),)
    warp_psi: tuple = ((0.0, 0.0),)

    @property
    def dim(self) -> int:
        for M in (self.H_X, self.H_Y, self.H_Z, self.H_S):
            if M is not None:
                return int(round(math.sqrt(len(M))))
        raise ConfigError("custom: at least one of H_X, H_Y, H_Z must be given")

    def matrix(self, name) -> np.ndarray | None:
        v = getattr(self, name)
        if v is None:
            return None
        d = self.dim
        return np.array(v, dtype=complex).reshape(d, d)


@dataclass(frozen=True)
class RunConfig:
    scheme: str = "zz"
    alpha: float = 0.8
    beta: float = 0.2
    boundary: float = 3.0
    boundary_neg: float | None = None
    delta: float = 0.05
    trajectories: int = 10000
    seed: int = 0
    initial_state: tuple = (1 / math.sqrt(2), 1 / math.sqrt(2))
    output_dir: str = "out"
    record_states: bool = False
    record_trajectories: int = 1
    workers: int = 1
    variant: str = "derived"
    pulse_rule: str = "retrace"
    custom: CustomBlock | None = None

    @property
    def dim(self) -> int:
        return len(self.initial_state)


# -- value parsing --------------------------------------------------------------


def _parse_bool(key, s):
    t = s.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {s!r}")


def _parse_complex(key, s):
    try:
        return complex(s.strip().replace(" ", ""))
    except ValueError:
        raise ConfigError(f"{key}: cannot parse complex number {s!r}") from None


def _split(s):
    return [p for p in (t.strip() for t in s.split(",")) if p]


def _parse_value(key, kind, s):
    try:
        if kind is float:
            v = float(s)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind is int:
            return int(s)
        if kind is bool:
            return _parse_bool(key, s)
        if kind is str:
            return s.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {s!r} as {kind.__name__}") from None
    if kind in ("state", "matrix"):
        vals = tuple(_parse_complex(key, p) for p in _split(s))
        if not vals:
            raise ConfigError(f"{key}: empty list")
        return vals
    if kind == "vector":
        try:
            v = tuple(float(p) for p in _split(s))
        except ValueError:
            raise ConfigError(f"{key}: expected three reals") from None
        if len(v) != 3:
            raise ConfigError(f"{key}: expected three reals")
        return v
    if kind == "table":
        rows = []
        for p in _split(s):
            try:
                xs, cs = p.split(":")
                rows.append((float(xs), float(cs)))
            except ValueError:
                raise ConfigError(f"{key}: table entries must look like x:value, got {p!r}") from None
        rows.sort()
        if not rows:
            raise ConfigError(f"{key}: empty table")
        return tuple(rows)
    raise AssertionError(kind)  # pragma: no cover


def _tokenize(text: str):
    top, custom = {}, {}
    section = top
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line.lower() != "[custom]":
                raise ConfigError(f"line {lineno}: unknown section {line}")
            section = custom
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        k, v = (t.strip() for t in line.split("=", 1))
        known = TOP_KEYS if section is top else CUSTOM_KEYS
        if k not in known:
            where = "" if section is top else " in [custom]"
            raise ConfigError(f"unknown key {k!r}{where}")
        if k in section:
            raise ConfigError(f"duplicate key {k!r}")
        section[k] = v
    return top, custom, section is custom or bool(custom)


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a configuration; ``overrides`` replace file keys."""
    top, custom, has_custom = _tokenize(text)
    values = {k: _parse_value(k, TOP_KEYS[k], v) for k, v in top.items()}
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in TOP_KEYS:
            raise ConfigError(f"unknown key {k!r}")
        values[k] = v
    if has_custom:
        cvals = {k: _parse_value(k, CUSTOM_KEYS[k], v) for k, v in custom.items()}
        values["custom"] = CustomBlock(**cvals)
    return validate(RunConfig(**values))


def validate(cfg: RunConfig) -> RunConfig:
    from .zz import InfeasibleTarget, shift_for_amplitude, VARIANTS

    if cfg.scheme not in ("zz", "custom"):
        raise ConfigError("scheme must be 'zz' or 'custom'")
    if not cfg.delta > 0:
        raise ConfigError("delta must be positive")
    if not cfg.boundary > 0:
        raise ConfigError("boundary must be positive")
    for key, b in (("boundary", cfg.boundary), ("boundary_neg", cfg.boundary_neg)):
        if b is None:
            continue
        k = round(b / cfg.delta)
        if k == 0 or abs(b - k * cfg.delta) > 1e-12 * max(1.0, abs(b)):
            raise ConfigError(f"{key} must be an integer multiple of delta")
    if cfg.boundary_neg is not None and not cfg.boundary_neg < 0:
        raise ConfigError("boundary_neg must be negative")
    if cfg.trajectories < 1:
        raise ConfigError("trajectories must be at least 1")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.workers < 1:
        raise ConfigError("workers must be at least 1")
    if cfg.record_trajectories < 0:
        raise ConfigError("record_trajectories must be non-negative")
    if cfg.pulse_rule not in ("retrace", "reversal", "none"):
        raise ConfigError("pulse_rule must be retrace, reversal or none")
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}")

    psi = np.array(cfg.initial_state, dtype=complex)
    nrm = np.linalg.norm(psi)
    if nrm == 0:
        raise ConfigError("initial_state must be nonzero")
    if abs(nrm - 1) > 1e-6:
        log.warning("initial_state renormalized (norm was %.6g)", nrm)
    if abs(nrm - 1) > 1e-13:
        psi = psi / nrm  # dividing a unit vector again would perturb the last bit
    cfg = replace(cfg, initial_state=tuple(complex(z) for z in psi))

    if cfg.scheme == "zz":
        for key in ("alpha", "beta"):
            if not 0 < getattr(cfg, key) < 1:
                raise ConfigError(f"{key} must lie in (0,1)")
        if cfg.dim != 2:
            raise ConfigError("initial_state must have 2 amplitudes for the zz scheme")
        if cfg.boundary_neg is not None and cfg.boundary_neg != -cfg.boundary:
            raise ConfigError("boundary_neg: the zz scheme uses symmetric boundaries")
        for key in ("alpha", "beta"):
            try:
                shift_for_amplitude(getattr(cfg, key), cfg.boundary, cfg.variant)
            except InfeasibleTarget as e:
                raise ConfigError(f"{key}: {e}") from None
    else:
        if cfg.custom is None:
            raise ConfigError("scheme = custom needs a [custom] block")
        _validate_custom(cfg)
    return cfg


def _validate_custom(cfg: RunConfig):
    from .linalg import anti_hermitian_norm, is_hermitian

    c = cfg.custom
    d = c.dim
    for name in ("H_S", "H_X", "H_Y", "H_Z"):
        v = getattr(c, name)
        if v is None:
            continue
        if len(v) != d * d:
            raise ConfigError(f"{name}: expected {d * d} entries, got {len(v)}")
        M = c.matrix(name)
        if not is_hermitian(M):
            raise ConfigError(f"{name}: block is not Hermitian (||M - M^dag||_F = {anti_hermitian_norm(M):.3e})")
    if cfg.dim != d:
        raise ConfigError(f"initial_state: expected {d} amplitudes for the custom blocks")
    for key in ("probe", "detector", "rotation_axis"):
        if np.linalg.norm(getattr(c, key)) == 0:
            raise ConfigError(f"{key}: zero vector")


# -- serialization ---------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, complex):
        return repr(v).strip("()")
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize(cfg: RunConfig) -> str:
    """Text that :func:`parse_config` maps back to an equal config."""
    lines = []
    for f in fields(RunConfig):
        if f.name == "custom":
            continue
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if isinstance(v, tuple):
            lines.append(f"{f.name} = " + ", ".join(_fmt(z) for z in v))
        else:
            lines.append(f"{f.name} = {_fmt(v)}")
    if cfg.custom is not None:
        lines.append("")
        lines.append("[custom]")
        for f in fields(CustomBlock):
            v = getattr(cfg.custom, f.name)
            if v is None:
                continue
            if f.name in ("warp_c", "warp_psi"):
                lines.append(f"{f.name} = " + ", ".join(f"{x!r}:{y!r}" for x, y in v))
            elif isinstance(v, tuple):
                lines.append(f"{f.name} = " + ", ".join(_fmt(z) for z in v))
            else:
                lines.append(f"{f.name} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


# -- scheme construction ----------------------------------------------------------


def build_scheme(cfg: RunConfig):
    """``(scheme, target_or_None)`` for a validated config."""
    from .zz import DiagonalTarget, build_zz_scheme

    if cfg.scheme == "zz":
        target = DiagonalTarget(cfg.alpha, cfg.beta)
        return build_zz_scheme(target, cfg.boundary, cfg.delta, cfg.variant), target
    return build_custom_scheme(cfg.custom, cfg.delta), None


def build_custom_scheme(c: CustomBlock, delta: float):
    from scipy.spatial.transform import Rotation

    from .probe import InteractionHamiltonian, build_probe_basis, rotating_scheme
    from .reversibility import calibrate_pulse_signs

    H = InteractionHamiltonian.from_blocks(
        H_X=c.matrix("H_X"), H_Y=c.matrix("H_Y"), H_Z=c.matrix("H_Z"), H_S=c.matrix("H_S"), dim=c.dim
    )
    n2 = np.asarray(c.detector, float) / np.linalg.norm(c.detector)
    s = np.asarray(c.probe, float) / np.linalg.norm(c.probe)
    b0 = build_probe_basis(s, n2, delta)
    base = Rotation.from_matrix(b0.frame_matrix())
    axis = np.asarray(c.rotation_axis, float)
    omega = c.rotation_rate * axis / np.linalg.norm(axis)
    cx, cy = np.array(c.warp_c).T
    px, py = np.array(c.warp_psi).T
    scheme = rotating_scheme(
        H,
        base,
        omega,
        c=lambda x: float(np.interp(x, cx, cy)),
        psi=lambda x: float(np.interp(x, px, py)),
        name="custom",
    )
    return scheme.with_(pulse_signs=calibrate_pulse_signs(scheme))
