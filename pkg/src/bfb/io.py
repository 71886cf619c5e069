"""Run configuration, diagnostics CSV, binary checkpoints and RNG streams.

Configuration documents are plain ``key = value`` lines with dotted section
prefixes, ``#`` comments and blank lines::

    grid.nx = 16
    physics.alpha = 2
    integration.t_end = 10
    seed = 7

Checkpoint layout (all little-endian)::

    4s   magic "BFB1"
    u32  version (1)
    u32  kind (0 = state, 1 = observation stream)
    u32  nx, ny, nz
    f64  L, dealias_fraction
    u32  n_fields
    u8   parity per field (0 = even, 1 = odd)
    32s  params hash (sha256 of the canonical parameter string, or zeros)
    u32  metadata length, then that many bytes of UTF-8 JSON
    u32  n_records
    per record: f64 time, then n_fields blocks of nx*ny*nz complex values as
    interleaved (real, imag) f64 in C order over (m, n, q), FFT index order.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .diagnostics import DiagnosticsRecord
from .integrator import IntegratorConfig
from .model import PhysicalParams, State, THETA_PARITY, U_PARITY
from .spectral import Grid, GridError, Parity, SpectralField, build_grid

MAGIC = b"BFB1"
VERSION = 1
KIND_STATE = 0
KIND_OBSERVATIONS = 1

CSV_COLUMNS = ["time", "u_H0", "theta_H1", "u_V0dot", "theta_V1", "u_L2a2",
               "theta_Hm1", "e_H0", "e_Hm1", "e_V0dot", "dt"]

_STREAM_IDS = {"initial": 0, "nudged-initial": 1, "properties": 2}


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class CheckpointError(ValueError):
    pass


def rng_for(seed, stream):
    """Counter-based generator: Philox keyed by ``seed``, counter by stream.

    Streams are ``"initial"`` (0), ``"nudged-initial"`` (1), ``"properties"``
    (2) or any non-negative integer.
    """
    sid = _STREAM_IDS.get(stream, stream)
    if not isinstance(sid, int) or sid < 0:
        raise ValueError(f"unknown RNG stream {stream!r}")
    return np.random.Generator(np.random.Philox(key=int(seed),
                                                counter=[0, 0, 0, sid]))


# -- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class InitialSection:
    kind: str = "conduction"
    energy: float = 0.0
    k0: float = 4 * math.pi
    theta_fraction: float = 0.5
    path: str | None = None


@dataclass(frozen=True)
class AssimilationSection:
    mu: float
    interpolant: str = "modal"
    h: float = 0.25
    cadence: int = 1
    v0_strategy: str = "zero"
    v0_radius: float = 0.0


@dataclass(frozen=True)
class OutputSection:
    diagnostics: str | None = None
    checkpoint: str | None = None
    checkpoint_enabled: bool = False
    cadence: int = 0


@dataclass(frozen=True)
class RunConfig:
    grid: Grid
    params: PhysicalParams
    integration: IntegratorConfig
    initial: InitialSection = InitialSection()
    assimilation: AssimilationSection | None = None
    output: OutputSection = OutputSection()
    seed: int = 0


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _float(text):
    t = text.strip()
    if "/" in t:
        num, den = t.split("/", 1)
        return float(num) / float(den)
    return float(t)


def _str(text):
    return text.strip()


_SCHEMA = {
    "grid.nx": _int, "grid.ny": _int, "grid.nz": _int, "grid.L": _float,
    "grid.dealias_fraction": _float,
    "physics.nu": _float, "physics.kappa": _float, "physics.a": _float,
    "physics.alpha": _float,
    "integration.dt_init": _float, "integration.cfl_number": _float,
    "integration.t_end": _float, "integration.max_dt": _float,
    "integration.min_dt": _float, "integration.sample_every": _int,
    "initial.kind": _str, "initial.energy": _float, "initial.k0": _float,
    "initial.theta_fraction": _float, "initial.path": _str,
    "assimilation.mu": _float, "assimilation.interpolant": _str,
    "assimilation.h": _float, "assimilation.cadence": _int,
    "assimilation.v0_strategy": _str, "assimilation.v0_radius": _float,
    "output.diagnostics": _str, "output.checkpoint": _str,
    "output.checkpoint_enabled": _bool, "output.cadence": _int,
    "seed": _int,
}

_REQUIRED = ["grid.nx", "grid.ny", "grid.nz", "grid.L", "physics.nu",
             "physics.kappa", "physics.a", "physics.alpha",
             "integration.t_end"]

_DEFAULTS = {
    "grid.dealias_fraction": 2.0 / 3.0,
    "integration.dt_init": 1e-3, "integration.cfl_number": 0.5,
    "integration.max_dt": 1e-2, "integration.min_dt": 1e-8,
    "integration.sample_every": 10,
}


def parse_config(text):
    """Parse and validate a run configuration; raise ConfigError listing all
    problems found."""
    errors = []
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _SCHEMA:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in raw:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        try:
            raw[key] = _SCHEMA[key](value)
        except ValueError as exc:
            errors.append(f"{key}: {exc}")
    for key in _REQUIRED:
        if key not in raw and not any(e.startswith(key + ":") for e in errors):
            errors.append(f"{key}: required key missing")
    vals = {**_DEFAULTS, **raw}

    def check(cond, msg):
        if not cond:
            errors.append(msg)

    for k in ("grid.nx", "grid.ny", "grid.nz"):
        if k in vals:
            check(vals[k] >= 4 and vals[k] % 2 == 0,
                  f"{k}={vals[k]}: must be even and >= 4")
    if "grid.L" in vals:
        check(vals["grid.L"] > 0, f"grid.L={vals['grid.L']}: must be > 0")
    f = vals["grid.dealias_fraction"]
    check(0 < f <= 1, f"grid.dealias_fraction={f}: must lie in (0, 1]")
    for k in ("physics.nu", "physics.kappa", "physics.a"):
        if k in vals:
            check(vals[k] > 0, f"{k}={vals[k]}: must be > 0")
    if "physics.alpha" in vals:
        check(vals["physics.alpha"] >= 0,
              f"physics.alpha={vals['physics.alpha']}: must be >= 0")
    cfl = vals["integration.cfl_number"]
    check(0 < cfl <= 1, f"integration.cfl_number={cfl}: must lie in (0, 1]")
    lo, d0, hi = (vals["integration.min_dt"], vals["integration.dt_init"],
                  vals["integration.max_dt"])
    check(0 < lo <= d0 <= hi,
          f"integration.min_dt/dt_init/max_dt={lo}/{d0}/{hi}: need "
          "0 < min_dt <= dt_init <= max_dt")
    if "integration.t_end" in vals:
        check(vals["integration.t_end"] >= 0,
              f"integration.t_end={vals['integration.t_end']}: must be >= 0")
    check(vals["integration.sample_every"] >= 1,
          "integration.sample_every: must be >= 1")
    kind = vals.get("initial.kind", "conduction")
    check(kind in ("conduction", "random", "admissible", "checkpoint"),
          f"initial.kind={kind!r}: must be conduction, random, admissible "
          "or checkpoint")
    if kind == "checkpoint":
        check("initial.path" in vals,
              "initial.path: required when initial.kind = checkpoint")
    check(vals.get("initial.energy", 0.0) >= 0,
          "initial.energy: must be >= 0")
    tf = vals.get("initial.theta_fraction", 0.5)
    check(0 <= tf <= 1, f"initial.theta_fraction={tf}: must lie in [0, 1]")
    assim_keys = [k for k in vals if k.startswith("assimilation.")]
    if assim_keys:
        if "assimilation.mu" not in vals:
            errors.append("assimilation.mu: required when an assimilation "
                          "section is given")
        else:
            check(vals["assimilation.mu"] > 0,
                  f"assimilation.mu={vals['assimilation.mu']}: must be > 0")
        interp = vals.get("assimilation.interpolant", "modal")
        check(interp in ("modal", "volume"),
              f"assimilation.interpolant={interp!r}: must be modal or volume")
        h = vals.get("assimilation.h", 0.25)
        if "grid.L" in vals:
            check(0 < h < min(vals["grid.L"], 2.0),
                  f"assimilation.h={h}: must lie in (0, min(L, 2))")
        check(vals.get("assimilation.cadence", 1) >= 1,
              "assimilation.cadence: must be >= 1")
        v0 = vals.get("assimilation.v0_strategy", "zero")
        check(v0 in ("zero", "random_ball"),
              f"assimilation.v0_strategy={v0!r}: must be zero or random_ball")
        check(vals.get("assimilation.v0_radius", 0.0) >= 0,
              "assimilation.v0_radius: must be >= 0")
    check(vals.get("output.cadence", 0) >= 0, "output.cadence: must be >= 0")
    if errors:
        raise ConfigError(errors)

    grid = build_grid(vals["grid.nx"], vals["grid.ny"], vals["grid.nz"],
                      vals["grid.L"], vals["grid.dealias_fraction"])
    params = PhysicalParams(vals["physics.nu"], vals["physics.kappa"],
                            vals["physics.a"], vals["physics.alpha"],
                            vals["grid.L"])
    integ = IntegratorConfig(
        t_end=vals["integration.t_end"], dt_init=d0,
        cfl_number=cfl, max_dt=hi, min_dt=lo,
        sample_every=vals["integration.sample_every"],
        keep_states=vals.get("output.cadence", 0) > 0)

    def section(prefix, cls, **extra):
        kw = {k.split(".", 1)[1]: v for k, v in vals.items()
              if k.startswith(prefix + ".")}
        kw.update(extra)
        return cls(**kw)

    initial = section("initial", InitialSection)
    assim = section("assimilation", AssimilationSection) if assim_keys else None
    output = section("output", OutputSection)
    return RunConfig(grid, params, integ, initial, assim, output,
                     vals.get("seed", 0))


# -- diagnostics CSV ---------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    return format(float(v), ".17g")


def write_diagnostics(records, path):
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in records:
                w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write diagnostics to {path}: {exc}") from exc


def read_diagnostics(path):
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read diagnostics from {path}: {exc}") from exc
    if not rows or rows[0] != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected diagnostics header")
    out = []
    for i, row in enumerate(rows[1:], 2):
        if len(row) != len(CSV_COLUMNS):
            raise ValueError(f"{path}:{i}: expected {len(CSV_COLUMNS)} columns")
        vals = {c: (float(x) if x != "" else None)
                for c, x in zip(CSV_COLUMNS, row)}
        out.append(DiagnosticsRecord(**vals))
    return out


# -- checkpoints -------------------------------------------------------------

def params_hash(params):
    if params is None:
        return bytes(32)
    text = (f"nu={params.nu!r};kappa={params.kappa!r};a={params.a!r};"
            f"alpha={params.alpha!r};L={params.L!r}")
    return hashlib.sha256(text.encode()).digest()


_HEAD = struct.Struct("<4sIIIIIddI")


def _write(path, grid, parities, records, kind, params, meta):
    path = Path(path)
    meta_b = json.dumps(meta, sort_keys=True).encode()
    parts = [
        _HEAD.pack(MAGIC, VERSION, kind, grid.nx, grid.ny, grid.nz,
                   float(grid.L), float(grid.dealias_fraction), len(parities)),
        bytes(0 if p is Parity.EVEN else 1 for p in parities),
        params_hash(params),
        struct.pack("<I", len(meta_b)), meta_b,
        struct.pack("<I", len(records)),
    ]
    for t, arrays in records:
        parts.append(struct.pack("<d", float(t)))
        for a in arrays:
            parts.append(np.ascontiguousarray(a, dtype="<c16").tobytes())
    try:
        path.write_bytes(b"".join(parts))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


@dataclass(frozen=True)
class CheckpointHeader:
    version: int
    kind: int
    nx: int
    ny: int
    nz: int
    L: float
    dealias_fraction: float
    parities: tuple
    params_hash: bytes
    metadata: dict
    n_records: int
    payload_offset: int

    def grid(self):
        return build_grid(self.nx, self.ny, self.nz, self.L,
                          self.dealias_fraction)


def read_header(path):
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(_HEAD.size)
        if len(head) < _HEAD.size:
            raise CheckpointError(f"{path}: truncated header")
        magic, ver, kind, nx, ny, nz, L, frac, nf = _HEAD.unpack(head)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        if ver != VERSION:
            raise CheckpointError(f"{path}: unsupported version {ver}")
        par = fh.read(nf)
        ph = fh.read(32)
        mlen_b = fh.read(4)
        if len(par) < nf or len(ph) < 32 or len(mlen_b) < 4:
            raise CheckpointError(f"{path}: truncated header")
        (mlen,) = struct.unpack("<I", mlen_b)
        meta_b = fh.read(mlen)
        nrec_b = fh.read(4)
        if len(meta_b) < mlen or len(nrec_b) < 4:
            raise CheckpointError(f"{path}: truncated header")
        (nrec,) = struct.unpack("<I", nrec_b)
        offset = fh.tell()
    parities = tuple(Parity.EVEN if b == 0 else Parity.ODD for b in par)
    return CheckpointHeader(ver, kind, nx, ny, nz, L, frac, parities, ph,
                            json.loads(meta_b.decode() or "{}"), nrec, offset)


def _read_records(path, header, grid):
    nf = len(header.parities)
    block = grid.npoints * 16
    rec_size = 8 + nf * block
    data = Path(path).read_bytes()[header.payload_offset:]
    if len(data) < rec_size * header.n_records:
        raise CheckpointError(
            f"{path}: truncated payload ({len(data)} of "
            f"{rec_size * header.n_records} bytes)")
    out = []
    for r in range(header.n_records):
        base = r * rec_size
        (t,) = struct.unpack_from("<d", data, base)
        arrays = []
        for i in range(nf):
            start = base + 8 + i * block
            a = np.frombuffer(data, dtype="<c16", count=grid.npoints,
                              offset=start).reshape(grid.shape)
            arrays.append(a.astype(complex))
        out.append((t, arrays))
    return out


def _check_grid(header, expected_grid, path):
    if expected_grid is None:
        return header.grid()
    if (header.nx, header.ny, header.nz) != expected_grid.shape or \
            header.L != expected_grid.L or \
            header.dealias_fraction != expected_grid.dealias_fraction:
        raise CheckpointError(
            f"{path}: grid {(header.nx, header.ny, header.nz, header.L)} does "
            f"not match expected {expected_grid.key()[:4]}")
    return expected_grid


def write_checkpoint(state, path, params=None):
    grid = state.grid
    meta = {} if params is None else {"exploratory": params.exploratory}
    _write(path, grid, U_PARITY + (THETA_PARITY,),
           [(state.time, [c.coeffs for c in state.u] + [state.theta.coeffs])],
           KIND_STATE, params, meta)


def read_checkpoint(path, expected_grid=None, params=None):
    header = read_header(path)
    if header.kind != KIND_STATE:
        raise CheckpointError(f"{path}: not a state checkpoint")
    if header.parities != U_PARITY + (THETA_PARITY,) or header.n_records != 1:
        raise CheckpointError(f"{path}: unexpected field layout")
    if params is not None and header.params_hash not in (
            params_hash(params), bytes(32)):
        raise CheckpointError(f"{path}: parameter hash mismatch")
    grid = _check_grid(header, expected_grid, path)
    ((t, arrays),) = _read_records(path, header, grid)
    return State.from_arrays(np.stack(arrays[:3]), arrays[3], grid, t)


def write_observations(stream, path, params=None):
    from .assimilation import effective_h  # noqa: F401  (keeps import light)
    grid = stream.frames[0][0].grid if stream.frames else None
    if grid is None:
        raise ValueError("cannot serialise an empty observation stream")
    meta = {"kind": stream.spec.kind.value, "h": stream.spec.h,
            "c0": stream.spec.c0, "c1": stream.spec.c1}
    _write(path, grid, (Parity.EVEN, Parity.EVEN),
           [(t, [f[0].coeffs, f[1].coeffs])
            for t, f in zip(stream.times, stream.frames)],
           KIND_OBSERVATIONS, params, meta)


def read_observations(path, expected_grid=None):
    from .assimilation import InterpolantSpec, ObservationStream
    header = read_header(path)
    if header.kind != KIND_OBSERVATIONS:
        raise CheckpointError(f"{path}: not an observation stream")
    grid = _check_grid(header, expected_grid, path)
    m = header.metadata
    spec = InterpolantSpec(m["kind"], m["h"], m["c0"], m["c1"])
    stream = ObservationStream(spec)
    for t, arrays in _read_records(path, header, grid):
        stream.append(t, tuple(SpectralField(a, Parity.EVEN, grid)
                               for a in arrays))
    return stream
