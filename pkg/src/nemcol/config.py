"""Flat key=value run configuration.

Sections use dotted keys (material.a, bodies.0.radius); the format is
deliberately line-diffable.  Unknown keys are rejected, missing required
keys raise with the key name, and every SimConfig invariant is checked
before a config is returned.
"""

from __future__ import annotations

import math

import numpy as np

from . import rigid_body as rb
from .fields import Grid
from .solver import FeedbackConfig, QInit, SimConfig, UInit
from .tensor_algebra import MaterialConstants


class ConfigError(ValueError):
    pass


_KNOWN_SCALAR_KEYS = {
    "material.a", "material.b", "material.c", "material.gamma", "material.mu",
    "penalty.n", "penalty.delta",
    "time.dt", "time.t_end",
    "q_init.kind", "q_init.s0", "q_init.director", "q_init.clearance_cells",
    "u_init.kind", "u_init.amplitude",
    "feedback.enabled", "feedback.h1", "feedback.kp", "feedback.kd",
    "grid.cells", "grid.lengths",
    "ledger.tol",
    "solver.stick_tol", "solver.merge_tol",
    "output.every",
    "seed",
}

_KNOWN_BODY_KEYS = {"radius", "center", "velocity", "omega", "frozen"}

_REQUIRED = [
    "material.a", "material.b", "material.c", "material.gamma", "material.mu",
    "grid.cells", "grid.lengths", "time.dt", "time.t_end",
]


def read_keyvalues(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key in entries:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            entries[key] = val
    return entries


def _float(entries, key, default=None):
    if key not in entries:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    val = entries.pop(key)
    if val.lower() in ("inf", "infinity"):
        return math.inf
    try:
        return float(val)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse {val!r} as a number") from exc


def _floats(entries, key, default=None):
    if key not in entries:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    val = entries.pop(key)
    try:
        return tuple(float(part) for part in val.split(","))
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse {val!r} as a comma list") from exc


def _ints(entries, key):
    vals = _floats(entries, key)
    out = tuple(int(round(v)) for v in vals)
    if any(abs(v - o) > 1e-9 for v, o in zip(vals, out)):
        raise ConfigError(f"key {key!r}: expected integers")
    return out


def _bool(entries, key, default=False):
    if key not in entries:
        return default
    val = entries.pop(key).lower()
    if val in ("true", "1", "yes", "on"):
        return True
    if val in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"key {key!r}: expected a boolean, got {val!r}")


def _str(entries, key, default):
    return entries.pop(key) if key in entries else default


def parse_config(path) -> SimConfig:
    """Load, validate, and materialize a SimConfig from a config file."""
    entries = read_keyvalues(path)

    for key in _REQUIRED:
        if key not in entries:
            raise ConfigError(f"missing required key {key!r}")

    # collect body sections first so unknown-key detection can see them
    body_ids = set()
    for key in entries:
        parts = key.split(".")
        if parts[0] == "bodies":
            if len(parts) != 3 or not parts[1].isdigit() or parts[2] not in _KNOWN_BODY_KEYS:
                raise ConfigError(f"unknown key {key!r}")
            body_ids.add(int(parts[1]))
        elif key not in _KNOWN_SCALAR_KEYS:
            raise ConfigError(f"unknown key {key!r}")

    try:
        mc = MaterialConstants(
            a=_float(entries, "material.a"),
            b=_float(entries, "material.b"),
            c=_float(entries, "material.c"),
            gamma=_float(entries, "material.gamma"),
            mu=_float(entries, "material.mu"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    try:
        grid = Grid(_ints(entries, "grid.cells"), _floats(entries, "grid.lengths"))
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc

    ndim = grid.ndim
    bodies = []
    for i in sorted(body_ids):
        prefix = f"bodies.{i}"
        radius = _float(entries, f"{prefix}.radius")
        center = _floats(entries, f"{prefix}.center")
        if len(center) != ndim:
            raise ConfigError(f"{prefix}.center must have {ndim} components")
        velocity = _floats(entries, f"{prefix}.velocity", default=(0.0,) * ndim)
        if len(velocity) != ndim:
            raise ConfigError(f"{prefix}.velocity must have {ndim} components")
        if ndim == 2:
            omega = _float(entries, f"{prefix}.omega", default=0.0)
        else:
            omega = _floats(entries, f"{prefix}.omega", default=(0.0, 0.0, 0.0))
        frozen = _bool(entries, f"{prefix}.frozen", default=False)
        if radius <= 0:
            raise ConfigError(f"{prefix}.radius: need radius > 0")
        body = rb.make_body(rb.ColloidShape.ball(radius, ndim), center,
                            ell=None if frozen else velocity,
                            omega=None if frozen else omega, frozen=frozen)
        for c, r in body.world_components():
            for k in range(ndim):
                if c[k] - r < 0 or c[k] + r > grid.lengths[k]:
                    raise ConfigError(
                        f"{prefix}: body overlaps the container wall along axis {k}"
                    )
        bodies.append(body)

    director = _floats(entries, "q_init.director", default=(1.0, 0.0, 0.0))
    if len(director) != 3 or not any(director):
        raise ConfigError("q_init.director must be a nonzero 3-vector")
    q_init = QInit(
        kind=_str(entries, "q_init.kind", "uniaxial"),
        s0=_float(entries, "q_init.s0", default=0.3),
        director=director,
        body_clearance_cells=_float(entries, "q_init.clearance_cells", default=3.0),
    )
    if q_init.kind not in ("uniaxial", "zero"):
        raise ConfigError(f"q_init.kind: unknown kind {q_init.kind!r}")

    u_init = UInit(
        kind=_str(entries, "u_init.kind", "zero"),
        amplitude=_float(entries, "u_init.amplitude", default=0.0),
    )
    if u_init.kind not in ("zero", "vortex"):
        raise ConfigError(f"u_init.kind: unknown kind {u_init.kind!r}")

    fb_enabled = _bool(entries, "feedback.enabled", default=False)
    feedback = FeedbackConfig(enabled=False)
    if fb_enabled:
        h1 = _floats(entries, "feedback.h1")
        if len(h1) != ndim:
            raise ConfigError(f"feedback.h1 must have {ndim} components")
        feedback = FeedbackConfig(
            enabled=True, h1=h1,
            kp=_float(entries, "feedback.kp"),
            kd=_float(entries, "feedback.kd", default=0.0),
        )
        if feedback.kp <= 0:
            raise ConfigError("feedback.kp: need kp > 0")
        if feedback.kd < 0:
            raise ConfigError("feedback.kd: need kd >= 0")
    else:
        for key in ("feedback.h1", "feedback.kp", "feedback.kd"):
            entries.pop(key, None)

    stick = entries.pop("solver.stick_tol", None)
    merge = entries.pop("solver.merge_tol", None)
    every = int(_float(entries, "output.every", default=0.0))
    seed = int(_float(entries, "seed", default=1234.0))

    try:
        config = SimConfig(
            mc=mc,
            grid=grid,
            dt=_float(entries, "time.dt"),
            t_end=_float(entries, "time.t_end"),
            n_penalty=_float(entries, "penalty.n", default=1e3),
            delta=_float(entries, "penalty.delta", default=0.0),
            bodies=bodies,
            q_init=q_init,
            u_init=u_init,
            feedback=feedback,
            eps_ledger=_float(entries, "ledger.tol", default=5e-2),
            stick_tol=float(stick) if stick is not None else None,
            merge_tol=float(merge) if merge is not None else None,
            output_every=every,
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if entries:
        raise ConfigError(f"unknown key {sorted(entries)[0]!r}")
    return config


def config_snapshot(config: SimConfig) -> list[str]:
    """Round-trippable key=value snapshot of a SimConfig (for manifests)."""
    lines = [
        f"material.a = {config.mc.a:.17g}",
        f"material.b = {config.mc.b:.17g}",
        f"material.c = {config.mc.c:.17g}",
        f"material.gamma = {config.mc.gamma:.17g}",
        f"material.mu = {config.mc.mu:.17g}",
        f"grid.cells = {','.join(str(n) for n in config.grid.shape)}",
        f"grid.lengths = {','.join(f'{L:.17g}' for L in config.grid.lengths)}",
        f"time.dt = {config.dt:.17g}",
        f"time.t_end = {config.t_end:.17g}",
        f"penalty.n = {'inf' if math.isinf(config.n_penalty) else f'{config.n_penalty:.17g}'}",
        f"penalty.delta = {config.delta:.17g}",
        f"q_init.kind = {config.q_init.kind}",
        f"q_init.s0 = {config.q_init.s0:.17g}",
        f"q_init.director = {','.join(f'{v:.17g}' for v in config.q_init.director)}",
        f"q_init.clearance_cells = {config.q_init.body_clearance_cells:.17g}",
        f"u_init.kind = {config.u_init.kind}",
        f"u_init.amplitude = {config.u_init.amplitude:.17g}",
        f"ledger.tol = {config.eps_ledger:.17g}",
        f"output.every = {config.output_every}",
        f"seed = {config.seed}",
    ]
    for i, b in enumerate(config.bodies):
        radius = b.shape.components[0][1]
        lines.append(f"bodies.{i}.radius = {radius:.17g}")
        lines.append(f"bodies.{i}.center = {','.join(f'{v:.17g}' for v in b.h)}")
        lines.append(f"bodies.{i}.velocity = {','.join(f'{v:.17g}' for v in b.ell)}")
        if b.ndim == 2:
            lines.append(f"bodies.{i}.omega = {float(b.omega):.17g}")
        else:
            lines.append(f"bodies.{i}.omega = {','.join(f'{v:.17g}' for v in b.omega)}")
        lines.append(f"bodies.{i}.frozen = {'true' if b.frozen else 'false'}")
    if config.feedback.enabled:
        lines.append("feedback.enabled = true")
        lines.append(f"feedback.h1 = {','.join(f'{v:.17g}' for v in config.feedback.h1)}")
        lines.append(f"feedback.kp = {config.feedback.kp:.17g}")
        lines.append(f"feedback.kd = {config.feedback.kd:.17g}")
    return lines
