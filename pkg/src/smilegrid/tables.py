"""Cumulative-probability lookup tables with capped interpolation error.

Builders:

FS    fixed increment, no error cap
CPU1  sequential; on a failing cell halve the step until it passes, then
      return to the full increment
CPU2  as CPU1 but recover by doubling the last accepted step
DS1   FS grid, then a single scan that splits the first failing cell in place
      (single-worker tail shift)
DS2   DS1 with a vectorised tail shift; identical output
DS3   FS grid, then whole passes that double the resolution of every
      contiguous error zone, zones handled right to left

The midpoint error of cell i is |P((x_i + x_{i+1})/2) - (p_i + p_{i+1})/2|.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels as _k
from .errors import OutOfRangeError, TableGrowthError

BUILDERS = ("FS", "CPU1", "CPU2", "DS1", "DS2", "DS3")
CAPPED_BUILDERS = BUILDERS[1:]
DEFAULT_N = 500
MAX_TABLE_SIZE = 2 ** 20
CAPACITY_FACTOR = 8
SNAP_REL = 1e-9  # accumulated end points this close to x_f (in units of dx) snap to it

_MAGIC = b"SGLT"
_VERSION = 1
_HEADER = struct.Struct("<4sHHQddd8s")


@dataclass(frozen=True)
class TableBuildConfig:
    n_initial: int = DEFAULT_N
    x_s: float | None = None
    x_f: float | None = None
    zeta_cap: float | None = None
    max_table_size: int = MAX_TABLE_SIZE

    def __post_init__(self):
        if self.n_initial < 2:
            raise ValueError("n_initial must be >= 2")
        if self.zeta_cap is not None and not self.zeta_cap > 0.0:
            raise ValueError("zeta_cap must be positive when given")
        if self.x_s is not None and self.x_f is not None and not self.x_s < self.x_f:
            raise ValueError("need x_s < x_f")
        if self.max_table_size < self.n_initial:
            raise ValueError("max_table_size must be >= n_initial")

    def domain(self, model):
        x_s = model.x_lo if self.x_s is None else float(self.x_s)
        x_f = model.x_hi if self.x_f is None else float(self.x_f)
        if not x_s < x_f:
            raise ValueError("need x_s < x_f")
        return x_s, x_f


@dataclass(frozen=True)
class BuildStats:
    evals: int = 0
    passes: int = 0
    insertions: int = 0
    zones_first_pass: int = 0
    refined_cells_first_pass: int = 0


@dataclass(frozen=True)
class ErrorZone:
    start_idx: int
    end_idx: int  # inclusive

    @property
    def cells(self):
        return self.end_idx - self.start_idx + 1


@dataclass(frozen=True)
class LookupTable:
    xs: np.ndarray
    ps: np.ndarray
    x_s: float
    x_f: float
    zeta_cap: float | None = None
    built_by: str = "FS"
    stats: BuildStats = field(default_factory=BuildStats, compare=False)

    def __post_init__(self):
        xs = np.ascontiguousarray(self.xs, dtype=float)
        ps = np.ascontiguousarray(self.ps, dtype=float)
        if xs.ndim != 1 or xs.shape != ps.shape or len(xs) < 2:
            raise ValueError("xs and ps must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(xs) <= 0.0):
            raise ValueError("xs must be strictly increasing")
        if np.any(np.diff(ps) < 0.0):
            raise ValueError("ps must be non-decreasing")
        if ps[0] < 0.0 or ps[-1] > 1.0:
            raise ValueError("ps must lie in [0, 1]")
        xs.flags.writeable = False
        ps.flags.writeable = False
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ps", ps)

    @property
    def n(self):
        return len(self.xs)

    def same_arrays(self, other):
        return (self.xs.tobytes() == other.xs.tobytes()
                and self.ps.tobytes() == other.ps.tobytes())


# -- errors and lookup -------------------------------------------------------

def _cell_errors(model, xa, xb, pa, pb):
    mid = 0.5 * (xa + xb)
    return np.abs(model.cdf(mid) - 0.5 * (pa + pb))


def _cell_error(model, a, b, pa, pb):
    return abs(model(0.5 * (a + b)) - 0.5 * (pa + pb))


def midpoint_errors(table: LookupTable, model) -> np.ndarray:
    """Independent midpoint-error sweep; size N - 1."""
    xs, ps = table.xs, table.ps
    return _cell_errors(model, xs[:-1], xs[1:], ps[:-1], ps[1:])


def _locate(ps, p):
    a = np.searchsorted(ps, p, side="right") - 1
    return np.minimum(a, len(ps) - 2)


def inverse_lookup(table: LookupTable, p: float) -> float:
    """x with P(x) = p by binary search and linear interpolation; exact at nodes."""
    ps, xs = table.ps, table.xs
    if not ps[0] <= p <= ps[-1]:
        raise OutOfRangeError(p, float(ps[0]), float(ps[-1]))
    a = int(_locate(ps, p))
    if p == ps[a]:
        return float(xs[a])
    b = a + 1
    return float(xs[a] + (xs[b] - xs[a]) / (ps[b] - ps[a]) * (p - ps[a]))


def inverse_lookup_array(table: LookupTable, p) -> np.ndarray:
    """Vectorised :func:`inverse_lookup` with identical arithmetic."""
    ps, xs = table.ps, table.xs
    p = np.asarray(p, dtype=float)
    bad = np.flatnonzero((p < ps[0]) | (p > ps[-1]) | np.isnan(p))
    if len(bad):
        k = int(bad[0])
        raise OutOfRangeError(float(p.flat[k]), float(ps[0]), float(ps[-1]), index=k)
    a = _locate(ps, p)
    b = a + 1
    with np.errstate(divide="ignore", invalid="ignore"):
        x = xs[a] + (xs[b] - xs[a]) / (ps[b] - ps[a]) * (p - ps[a])
    return np.where(p == ps[a], xs[a], x)


def find_zones(zeta, cap) -> list[ErrorZone]:
    """Maximal runs of consecutive cells with error above ``cap``."""
    mask = np.asarray(zeta) > cap
    if not mask.any():
        return []
    edges = np.diff(np.concatenate([[0], mask.view(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [ErrorZone(int(s), int(e)) for s, e in zip(starts, ends)]


# -- storage -----------------------------------------------------------------

class _Buffer:
    """Growable contiguous storage for nodes and cell errors."""

    def __init__(self, xs, ps, capacity, limit):
        self.limit = limit
        self.size = len(xs)
        cap = max(capacity, self.size + 1)
        self.xs = np.empty(cap)
        self.ps = np.empty(cap)
        self.zs = np.empty(cap)
        self.xs[:self.size] = xs
        self.ps[:self.size] = ps

    def reserve(self, extra):
        need = self.size + extra
        if need > self.limit:
            raise TableGrowthError(f"table would grow to {need} points (limit {self.limit})")
        if need <= len(self.xs):
            return
        cap = min(max(need, 2 * len(self.xs)), self.limit + 1)
        for name in ("xs", "ps", "zs"):
            old = getattr(self, name)
            new = np.empty(cap)
            new[:self.size] = old[:self.size]
            setattr(self, name, new)

    def arrays(self):
        n = self.size
        return self.xs[:n].copy(), self.ps[:n].copy()


def _advance(x, h, x_f, dx):
    nxt = x + h
    if abs(x_f - nxt) <= SNAP_REL * dx:
        nxt = x_f  # absorb accumulated rounding on either side of the end point
    return nxt


def _fixed_nodes(x_s, x_f, n):
    dx = (x_f - x_s) / (n - 1)
    xs = [x_s]
    while xs[-1] < x_f:
        xs.append(_advance(xs[-1], dx, x_f, dx))
    return np.array(xs), dx


def _make(model, cfg, builder, xs, ps, x_s, x_f, evals0, **stats):
    return LookupTable(xs, ps, x_s, x_f, cfg.zeta_cap, builder,
                       BuildStats(evals=model.evals - evals0, **stats))


# -- builders ----------------------------------------------------------------

def build_fixed(model, cfg: TableBuildConfig) -> LookupTable:
    """N equally spaced nodes by repeated addition of dx; no error cap."""
    e0 = model.evals
    x_s, x_f = cfg.domain(model)
    xs, _ = _fixed_nodes(x_s, x_f, cfg.n_initial)
    return _make(model, cfg, "FS", xs, model.cdf(xs), x_s, x_f, e0)


def _build_sequential(model, cfg, doubling, tag):
    e0 = model.evals
    x_s, x_f = cfg.domain(model)
    dx = (x_f - x_s) / (cfg.n_initial - 1)
    cap = cfg.zeta_cap
    xs, ps = [x_s], [model(x_s)]
    h_prev = dx
    insertions = 0
    while xs[-1] < x_f:
        x, p = xs[-1], ps[-1]
        h = min(2.0 * h_prev, dx) if doubling else dx
        while True:
            x_new = _advance(x, h, x_f, dx)
            p_new = model(x_new)
            if cap is None or _cell_error(model, x, x_new, p, p_new) <= cap:
                break
            h *= 0.5
            insertions += 1
            if not x + h > x:
                raise TableGrowthError(f"step underflow at x={x}; cap {cap} unreachable")
        xs.append(x_new)
        ps.append(p_new)
        h_prev = h
        if len(xs) > cfg.max_table_size:
            raise TableGrowthError(f"table exceeded {cfg.max_table_size} points")
    return _make(model, cfg, tag, np.array(xs), np.array(ps), x_s, x_f, e0,
                 insertions=insertions)


def build_cpu1(model, cfg: TableBuildConfig) -> LookupTable:
    return _build_sequential(model, cfg, False, "CPU1")


def build_cpu2(model, cfg: TableBuildConfig) -> LookupTable:
    return _build_sequential(model, cfg, True, "CPU2")


def _shift_numpy(buf, pos, x_new, p_new, z_left, z_right):
    n = buf.size
    buf.xs[pos + 1:n + 1] = buf.xs[pos:n]
    buf.ps[pos + 1:n + 1] = buf.ps[pos:n]
    buf.zs[pos + 1:n] = buf.zs[pos:n - 1]
    buf.xs[pos] = x_new
    buf.ps[pos] = p_new
    buf.zs[pos - 1] = z_left
    buf.zs[pos] = z_right
    buf.size = n + 1


def _scan_split(buf, model, cap, single_worker):
    i = 0
    insertions = 0
    while i < buf.size - 1:
        while buf.zs[i] > cap:
            a, b = buf.xs[i], buf.xs[i + 1]
            pa, pb = buf.ps[i], buf.ps[i + 1]
            x_new = 0.5 * (a + b)
            if not a < x_new < b:
                raise TableGrowthError(f"cell [{a}, {b}] cannot be split further")
            p_new = model(x_new)
            z_left = _cell_error(model, a, x_new, pa, p_new)
            z_right = _cell_error(model, x_new, b, p_new, pb)
            buf.reserve(1)
            if single_worker:
                buf.size = _k.ds_shift_insert(buf.xs, buf.ps, buf.zs, buf.size, i + 1,
                                              x_new, p_new, z_left, z_right)
            else:
                _shift_numpy(buf, i + 1, x_new, p_new, z_left, z_right)
            insertions += 1
        i += 1
    return insertions


def _refine_zones(buf, model, zones):
    """Split every cell of every zone at its midpoint; zones right to left so
    earlier indices stay valid while the tail moves."""
    buf.reserve(sum(z.cells for z in zones))
    for z in reversed(zones):
        s, e, n = z.start_idx, z.end_idx, z.cells
        size = buf.size
        old_x = buf.xs[s:e + 2].copy()
        old_p = buf.ps[s:e + 2].copy()
        # open n slots after the zone (tail nodes and cells move right by n)
        buf.xs[e + 2 + n:size + n] = buf.xs[e + 2:size]
        buf.ps[e + 2 + n:size + n] = buf.ps[e + 2:size]
        buf.zs[e + 1 + n:size - 1 + n] = buf.zs[e + 1:size - 1]
        mid_x = 0.5 * (old_x[:-1] + old_x[1:])
        if np.any(~((old_x[:-1] < mid_x) & (mid_x < old_x[1:]))):
            raise TableGrowthError("error zone cannot be split further")
        mid_p = model.cdf(mid_x)
        new_x = np.empty(2 * n + 1)
        new_p = np.empty(2 * n + 1)
        new_x[0::2], new_x[1::2] = old_x, mid_x
        new_p[0::2], new_p[1::2] = old_p, mid_p
        buf.xs[s:s + 2 * n + 1] = new_x
        buf.ps[s:s + 2 * n + 1] = new_p
        buf.zs[s:s + 2 * n] = _cell_errors(model, new_x[:-1], new_x[1:], new_p[:-1], new_p[1:])
        buf.size = size + n


def ds3_pass(xs, ps, zeta, model, zeta_cap):
    """One DS3 pass on explicit arrays; returns ``(xs, ps, zeta, zones)``.

    ``zeta`` is taken as given (it decides the zones); refined cells get
    fresh errors from ``model``.
    """
    xs = np.asarray(xs, dtype=float)
    buf = _Buffer(xs, np.asarray(ps, dtype=float), CAPACITY_FACTOR * len(xs), MAX_TABLE_SIZE)
    buf.zs[:len(xs) - 1] = zeta
    zones = find_zones(zeta, zeta_cap)
    if zones:
        _refine_zones(buf, model, zones)
    n = buf.size
    return buf.xs[:n].copy(), buf.ps[:n].copy(), buf.zs[:n - 1].copy(), zones


def build_ds(model, cfg: TableBuildConfig, variant: str = "DS3") -> LookupTable:
    variant = variant.upper()
    if variant not in ("DS1", "DS2", "DS3"):
        raise ValueError(f"unknown DS variant {variant!r}")
    e0 = model.evals
    x_s, x_f = cfg.domain(model)
    xs, _ = _fixed_nodes(x_s, x_f, cfg.n_initial)
    ps = model.cdf(xs)
    if cfg.zeta_cap is None:
        return _make(model, cfg, variant, xs, ps, x_s, x_f, e0)
    cap = cfg.zeta_cap
    buf = _Buffer(xs, ps, CAPACITY_FACTOR * cfg.n_initial, cfg.max_table_size)
    buf.zs[:buf.size - 1] = _cell_errors(model, xs[:-1], xs[1:], ps[:-1], ps[1:])
    stats = {}
    if variant in ("DS1", "DS2"):
        stats["insertions"] = _scan_split(buf, model, cap, variant == "DS1")
        stats["passes"] = 1
    else:
        passes = inserted = 0
        while True:
            zones = find_zones(buf.zs[:buf.size - 1], cap)
            if not zones:
                break
            if passes == 0:
                stats["zones_first_pass"] = len(zones)
                stats["refined_cells_first_pass"] = sum(z.cells for z in zones)
            passes += 1
            inserted += sum(z.cells for z in zones)
            _refine_zones(buf, model, zones)
        stats["passes"] = passes
        stats["insertions"] = inserted
    xs, ps = buf.arrays()
    return _make(model, cfg, variant, xs, ps, x_s, x_f, e0, **stats)


def build_table(model, cfg: TableBuildConfig, builder: str) -> LookupTable:
    builder = builder.upper()
    if builder == "FS":
        return build_fixed(model, cfg)
    if builder == "CPU1":
        return build_cpu1(model, cfg)
    if builder == "CPU2":
        return build_cpu2(model, cfg)
    if builder in ("DS1", "DS2", "DS3"):
        return build_ds(model, cfg, builder)
    raise ValueError(f"unknown builder {builder!r}; expected one of {', '.join(BUILDERS)}")


# -- serialization -----------------------------------------------------------

def to_bytes(table: LookupTable) -> bytes:
    cap = math.nan if table.zeta_cap is None else float(table.zeta_cap)
    head = _HEADER.pack(_MAGIC, _VERSION, 0, table.n, table.x_s, table.x_f, cap,
                        table.built_by.encode("ascii").ljust(8, b"\0"))
    return head + table.xs.astype("<f8").tobytes() + table.ps.astype("<f8").tobytes()


def from_bytes(data: bytes) -> LookupTable:
    if len(data) < _HEADER.size:
        raise ValueError("truncated table header")
    magic, version, _, n, x_s, x_f, cap, tag = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError("not a lookup-table file (bad magic or version)")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if len(body) != 2 * n:
        raise ValueError(f"expected {2 * n} values, found {len(body)}")
    return LookupTable(body[:n].astype(float), body[n:].astype(float), x_s, x_f,
                       None if math.isnan(cap) else cap, tag.rstrip(b"\0").decode("ascii"))


def to_csv(table: LookupTable) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["N", "x_s", "x_f", "zeta_cap", "builder"])
    w.writerow([table.n, repr(table.x_s), repr(table.x_f),
                "" if table.zeta_cap is None else repr(float(table.zeta_cap)), table.built_by])
    w.writerow(["x", "p"])
    for x, p in zip(table.xs.tolist(), table.ps.tolist()):
        w.writerow([repr(x), repr(p)])
    return out.getvalue()


def from_csv(text: str) -> LookupTable:
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 3 or rows[0] != ["N", "x_s", "x_f", "zeta_cap", "builder"] or rows[2] != ["x", "p"]:
        raise ValueError("malformed table CSV header")
    n, x_s, x_f, cap, tag = rows[1]
    data = np.array([[float(a), float(b)] for a, b in rows[3:]])
    if len(data) != int(n):
        raise ValueError(f"header says {n} rows, found {len(data)}")
    return LookupTable(data[:, 0], data[:, 1], float(x_s), float(x_f),
                       float(cap) if cap else None, tag)


def save(table: LookupTable, path, fmt=None):
    fmt = fmt or ("csv" if str(path).endswith(".csv") else "bin")
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            fh.write(to_csv(table))
    else:
        with open(path, "wb") as fh:
            fh.write(to_bytes(table))


def load(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] == _MAGIC:
        return from_bytes(data)
    return from_csv(data.decode("utf-8"))
