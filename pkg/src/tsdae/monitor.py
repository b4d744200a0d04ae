"""Per-step observation, CSV/JSONL emission and a solver summary report."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import sys
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from .adapt import AdaptConfig, AdaptKind
from .core import SolveOptions, ToleranceSpec
from .steppers.base import Stepper
from .steppers.solve import SolveResult, StepInfo, solve
from .tableaux import RosTableau, tableau_to_json

BASE_COLUMNS = ("step", "t", "dt", "accepted", "werr", "newton_iters", "linear_iters", "events")


@dataclass
class MonitorRecord:
    step_index: int
    t: float
    dt: float
    accepted: bool
    werr: float
    newton_iters: int
    linear_iters: int
    event_flags: tuple[int, ...] = ()
    u_snapshot: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, MonitorRecord):
            return NotImplemented
        same_u = (
            (self.u_snapshot is None and other.u_snapshot is None)
            or (self.u_snapshot is not None and other.u_snapshot is not None
                and np.array_equal(self.u_snapshot, other.u_snapshot))
        )
        return same_u and _key(self) == _key(other)


def _key(r: MonitorRecord):
    w = "nan" if math.isnan(r.werr) else r.werr
    return (r.step_index, r.t, r.dt, r.accepted, w, r.newton_iters, r.linear_iters,
            tuple(r.event_flags))


# sinks ------------------------------------------------------------------------


class MemorySink:
    def __init__(self):
        self.records: list[MonitorRecord] = []

    def write(self, rec: MonitorRecord) -> None:
        self.records.append(rec)

    def close(self) -> None:
        pass


class FileSink:
    """Streams records to ``path`` as CSV or JSONL (chosen by suffix unless
    ``fmt`` is given).  CSV snapshots need ``dim`` to fix the header."""

    def __init__(self, path, fmt: str | None = None, dim: int | None = None):
        self.path = str(path)
        self.fmt = fmt or ("jsonl" if self.path.endswith(".jsonl") else "csv")
        if self.fmt not in ("csv", "jsonl"):
            raise ValueError(f"unknown monitor format {self.fmt!r}")
        self.dim = dim
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._header_done = False

    def write(self, rec: MonitorRecord) -> None:
        if self.fmt == "csv":
            if not self._header_done:
                self._fh.write(",".join(_columns(self.dim)) + "\n")
                self._header_done = True
            self._fh.write(",".join(_csv_row(rec, self.dim)) + "\n")
        else:
            self._fh.write(_json_line(rec, self.dim) + "\n")

    def close(self) -> None:
        if self.fmt == "csv" and not self._header_done:
            self._fh.write(",".join(_columns(self.dim)) + "\n")
            self._header_done = True
        self._fh.close()


class Monitor:
    """Solve-loop observer; sink errors stop this monitor, never the solve."""

    def __init__(self, sink, every_k: int = 1, snapshot: bool = False):
        if every_k < 1:
            raise ValueError("every_k must be >= 1")
        self.sink = sink
        self.every_k = every_k
        self.snapshot = snapshot
        self.error: Exception | None = None

    def __call__(self, info: StepInfo) -> None:
        if self.error is not None or info.step_index % self.every_k:
            return
        u = None
        if self.snapshot and info.accepted and info.u is not None:
            u = np.array(info.u, dtype=float, copy=True)
        rec = MonitorRecord(info.step_index, float(info.t), float(info.dt), bool(info.accepted),
                            float(info.werr), int(info.newton_iters), int(info.linear_iters),
                            tuple(info.event_ids), u)
        try:
            self.sink.write(rec)
        except OSError as exc:
            self.error = exc
            print(f"monitor disabled: {exc}", file=sys.stderr)


@dataclass
class SolveConfig:
    """Everything :func:`solve` needs besides the initial state."""

    problem: object
    stepper: Stepper
    opts: SolveOptions
    tol: ToleranceSpec | None = None
    adapt: AdaptConfig | None = None
    events: object = None
    monitors: list = field(default_factory=list)

    def run(self, u0, **kw) -> SolveResult:
        return solve(self.problem, self.stepper, u0, self.opts, self.tol, self.adapt,
                     self.events, monitors=list(self.monitors), **kw)


def attach_monitor(config, sink, every_k: int = 1, snapshot: bool = False) -> Monitor:
    """Append a monitor writing to ``sink``.  ``config`` is a
    :class:`SolveConfig` or a plain list of monitors."""
    mon = Monitor(sink, every_k, snapshot)
    target = config if isinstance(config, list) else config.monitors
    target.append(mon)
    return mon


# formats ------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else format(x, ".17g")


def _columns(dim: int | None) -> list[str]:
    return list(BASE_COLUMNS) + [f"u{i}" for i in range(dim or 0)]


def _csv_row(r: MonitorRecord, dim: int | None) -> list[str]:
    row = [str(r.step_index), _fmt(r.t), _fmt(r.dt), "1" if r.accepted else "0", _fmt(r.werr),
           str(r.newton_iters), str(r.linear_iters), ";".join(str(e) for e in r.event_flags)]
    if dim:
        if r.u_snapshot is None:
            row += [""] * dim
        else:
            row += [_fmt(float(x)) for x in r.u_snapshot]
    return row


def _json_line(r: MonitorRecord, dim: int | None) -> str:
    def num(x):
        return "null" if math.isnan(x) else _fmt(x)

    parts = [
        f'"step": {r.step_index}', f'"t": {num(r.t)}', f'"dt": {num(r.dt)}',
        f'"accepted": {"true" if r.accepted else "false"}', f'"werr": {num(r.werr)}',
        f'"newton_iters": {r.newton_iters}', f'"linear_iters": {r.linear_iters}',
        f'"events": {json.dumps(list(r.event_flags))}',
    ]
    for i in range(dim or 0):
        v = "null" if r.u_snapshot is None else num(float(r.u_snapshot[i]))
        parts.append(f'"u{i}": {v}')
    return "{" + ", ".join(parts) + "}"


def _infer_dim(records: Iterable[MonitorRecord]) -> int:
    return max((r.u_snapshot.size for r in records if r.u_snapshot is not None), default=0)


def emit(records: list[MonitorRecord], fmt: str = "csv", dim: int | None = None) -> bytes:
    """Serialize records; floats carry 17 significant digits."""
    if dim is None:
        dim = _infer_dim(records)
    if fmt == "csv":
        lines = [",".join(_columns(dim))] + [",".join(_csv_row(r, dim)) for r in records]
    elif fmt == "jsonl":
        lines = [_json_line(r, dim) for r in records]
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return ("\n".join(lines) + "\n").encode() if lines else b""


def parse_csv(data: bytes | str) -> list[MonitorRecord]:
    text = data.decode() if isinstance(data, bytes) else data
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return []
    header, body = rows[0], rows[1:]
    if tuple(header[: len(BASE_COLUMNS)]) != BASE_COLUMNS:
        raise ValueError(f"unexpected header {header}")
    ucols = len(header) - len(BASE_COLUMNS)
    out = []
    for row in body:
        ev = tuple(int(e) for e in row[7].split(";") if e)
        u = None
        if ucols and row[8] != "":
            u = np.array([float(x) for x in row[8:8 + ucols]])
        out.append(MonitorRecord(int(row[0]), float(row[1]), float(row[2]), row[3] == "1",
                                 float(row[4]), int(row[5]), int(row[6]), ev, u))
    return out


def parse_jsonl(data: bytes | str) -> list[MonitorRecord]:
    text = data.decode() if isinstance(data, bytes) else data
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        ukeys = sorted((k for k in d if k.startswith("u") and k[1:].isdigit()), key=lambda k: int(k[1:]))
        u = None
        if ukeys and d[ukeys[0]] is not None:
            u = np.array([d[k] for k in ukeys], dtype=float)
        nan = lambda v: math.nan if v is None else float(v)  # noqa: E731
        out.append(MonitorRecord(d["step"], nan(d["t"]), nan(d["dt"]), d["accepted"], nan(d["werr"]),
                                 d["newton_iters"], d["linear_iters"], tuple(d["events"]), u))
    return out


# summary ------------------------------------------------------------------------


def coefficients_digest(stepper: Stepper) -> str:
    tab = getattr(stepper, "tab", None)
    if tab is not None:
        payload = tableau_to_json(tab, indent=None)
    elif hasattr(stepper, "theta"):
        payload = repr(("theta", stepper.theta))
    else:
        payload = repr((stepper.family, stepper.order))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _g(x) -> str:
    return format(float(x), "g")


def view_summary(result: SolveResult, config: SolveConfig) -> str:
    """Plain-text report in the spirit of a solver ``view``."""
    st, opts = config.stepper, config.opts
    adapt = config.adapt or AdaptConfig(kind=AdaptKind.NONE)
    c = result.counters
    lines = [
        "time stepper",
        f"  type: {st.family}",
        f"  scheme: {st.name} (order {st.order}, embedded "
        f"{st.embedded_order if st.embedded_order is not None else 'none'})",
        f"  coefficients digest: {coefficients_digest(st)}",
        f"  maximum steps={opts.max_steps}",
        f"  maximum time={_g(opts.max_time)}",
        f"  final time policy: {opts.final_time_policy.value}",
        f"  total number of nonlinear solver iterations={c.nonlinear_iters}",
        f"  total number of nonlinear solve failures={c.nonlinear_failures}",
        f"  total number of linear solver iterations={c.linear_iters}",
        f"  total number of rejected steps={c.rejected_steps}",
        f"  total number of right-hand side evaluations={c.rhs_evals}",
        f"  total number of Jacobian evaluations={c.jac_evals}",
        f"  steps taken={result.steps_taken}",
    ]
    tab = getattr(st, "tab", None)
    if isinstance(tab, RosTableau):
        lines.append(f"    Abscissa of A       = {' '.join(f'{x:9.6f}' for x in tab.c)}")
        lines.append(f"    Row sums of Gamma   = {' '.join(f'{x:9.6f}' for x in tab.gamma_sums)}")
    lines.append("  adapter")
    lines.append(f"    type: {adapt.kind.value}")
    if adapt.kind is not AdaptKind.NONE:
        lines.append(f"    clip fastest decrease {_g(adapt.clip_low)}, fastest increase {_g(adapt.clip_high)}")
        lines.append(f"    safety factor {_g(adapt.safety)}, extra factor after step rejection "
                     f"{_g(adapt.reject_factor)}")
        if adapt.kind is AdaptKind.DSP:
            b1, b2, a2 = adapt.dsp_filter
            lines.append(f"    filter beta1={_g(b1)} beta2={_g(b2)} alpha2={_g(a2)}")
        lines.append(f"    error norm: {adapt.norm}")
    if config.tol is not None:
        atol = np.atleast_1d(config.tol.atol)
        lines.append(f"  tolerances: rtol={_g(config.tol.rtol)} atol={' '.join(_g(a) for a in atol)}")
    lines.append(f"  final time={_g(result.final_t)}")
    lines.append(f"  termination: {result.termination.value}")
    return "\n".join(lines) + "\n"
