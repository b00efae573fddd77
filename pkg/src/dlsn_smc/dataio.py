"""Contact-list ingestion, time-window aggregation and (de)serialisation.

Tabular outputs are CSV with floats written by ``repr`` so that reading them
back reproduces the same doubles. Runs are described by a JSON manifest.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import model as dlsn

MANIFEST_SCHEMA_VERSION = 1


class ParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ManifestVersionError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# -- edge lists --------------------------------------------------------------


@dataclass(frozen=True)
class ContactRecord:
    timestamp: int
    node_a: int
    node_b: int


@dataclass
class EdgeList:
    """Parsed contacts with dense node indices; ``nodes[k]`` is the original id of index ``k``."""

    records: list
    nodes: list
    self_ties: int = 0
    filtered: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def __len__(self):
        return len(self.records)


def _split(line: str):
    return line.replace(",", " ").split()


def _node_key(node: str):
    # numeric ids sort numerically, anything else lexically after them
    try:
        return (0, int(node), node)
    except ValueError:
        return (1, 0, node)


def parse_edge_list(lines: Iterable[str], nodes: Optional[Iterable] = None) -> EdgeList:
    """Parse ``t,i,j`` lines (commas or whitespace; extra columns ignored).

    A first line whose timestamp field is not an integer is taken as a header.
    Blank lines and ``#`` comments are skipped. Self-ties are dropped and
    counted. With ``nodes`` given, only contacts between listed nodes are kept.
    Records are sorted by timestamp (stable), and node ids are mapped to
    indices in sorted id order.
    """
    keep = None if nodes is None else {str(n) for n in nodes}
    raw = []
    self_ties = filtered = 0
    seen_data = False
    for line_no, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        fields = _split(text)
        if len(fields) < 3:
            if not seen_data and len(fields) >= 1 and not _is_int(fields[0]):
                seen_data = True
                continue
            raise ParseError(line_no, f"expected at least 3 fields, got {len(fields)}")
        if not _is_int(fields[0]):
            if not seen_data:
                seen_data = True
                continue
            raise ParseError(line_no, f"timestamp {fields[0]!r} is not an integer")
        seen_data = True
        ts, a, b = int(fields[0]), fields[1], fields[2]
        if a == b:
            self_ties += 1
            continue
        if keep is not None and (a not in keep or b not in keep):
            filtered += 1
            continue
        raw.append((ts, a, b))
    raw.sort(key=lambda r: r[0])
    ids = sorted({n for _, a, b in raw for n in (a, b)}, key=_node_key)
    index = {n: k for k, n in enumerate(ids)}
    records = [ContactRecord(ts, index[a], index[b]) for ts, a, b in raw]
    return EdgeList(records, ids, self_ties, filtered)


def _is_int(text: str) -> bool:
    try:
        int(text)
    except ValueError:
        return False
    return True


def read_edge_list(path, nodes=None) -> EdgeList:
    with open(path, newline="") as fh:
        return parse_edge_list(fh, nodes=nodes)


def read_node_metadata(path) -> dict:
    """Whitespace/comma separated ``node group`` lines into a dict."""
    out = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            fields = _split(line)
            if not fields or fields[0].startswith("#"):
                continue
            if len(fields) < 2:
                raise ParseError(line_no, "expected 'node group'")
            out[fields[0]] = fields[1]
    return out


@dataclass(frozen=True)
class WindowSpec:
    """Half-open windows ``[origin + kL, origin + (k+1)L)``; ``origin`` defaults to the first timestamp."""

    window_length: int = 240
    mode: str = "binary"
    origin: Optional[int] = None

    def __post_init__(self):
        if not self.window_length > 0:
            raise ValueError("window_length must be positive")
        if self.mode not in ("binary", "count"):
            raise ValueError(f"mode must be 'binary' or 'count', got {self.mode!r}")


def aggregate(edges: EdgeList, spec: WindowSpec = WindowSpec(), n_nodes: Optional[int] = None) -> np.ndarray:
    """Aggregate contacts into a ``(T, N, N)`` integer series.

    Windows tile ``[origin, max timestamp]`` and the final partial window is
    kept. ``binary`` marks pairs with at least one contact, ``count`` counts
    contacts.
    """
    if len(edges.records) == 0:
        raise ValueError("cannot aggregate an empty edge list")
    ts = np.array([r.timestamp for r in edges.records], dtype=np.int64)
    a = np.array([r.node_a for r in edges.records], dtype=np.int64)
    b = np.array([r.node_b for r in edges.records], dtype=np.int64)
    origin = int(ts.min()) if spec.origin is None else int(spec.origin)
    if ts.min() < origin:
        raise ValueError("records precede the window origin")
    N = edges.n_nodes if n_nodes is None else int(n_nodes)
    if N < edges.n_nodes:
        raise ValueError("n_nodes is smaller than the number of observed nodes")
    win = (ts - origin) // spec.window_length
    T = int(win.max()) + 1
    Y = np.zeros((T, N, N), dtype=np.int64)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    np.add.at(Y, (win, lo, hi), 1)
    if spec.mode == "binary":
        Y = (Y > 0).astype(np.int64)
    return Y + np.transpose(Y, (0, 2, 1))


# -- CSV tables --------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path):
    """Return ``(header, rows)`` with every cell as a string."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)


def _expect(header, expected, path):
    if header != list(expected):
        raise ValueError(f"{path}: expected columns {list(expected)}, found {header}")


def save_series(path, obs):
    """Dense long format ``t,i,j,y`` over every pair ``i < j`` and ``t = 1..T``."""
    obs = np.asarray(obs)
    T, N = obs.shape[:2]
    iu, ju = np.triu_indices(N, k=1)
    rows = ((t + 1, i, j, int(obs[t, i, j])) for t in range(T) for i, j in zip(iu, ju))
    write_table(path, ["t", "i", "j", "y"], rows)


def load_series(path) -> np.ndarray:
    header, rows = read_table(path)
    _expect(header, ["t", "i", "j", "y"], path)
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    T = int(arr[:, 0].max()) if len(arr) else 0
    N = int(arr[:, 2].max()) + 1 if len(arr) else 0
    Y = np.zeros((T, N, N), dtype=np.int64)
    t, i, j, y = arr.T
    Y[t - 1, i, j] = y
    Y[t - 1, j, i] = y
    return Y


def save_latents(path, latent):
    """Rows ``t,node,u1..ud``; ``t`` starts at 0 for the initial configuration."""
    latent = np.asarray(latent, dtype=float)
    T1, N, d = latent.shape
    header = ["t", "node"] + [f"u{k + 1}" for k in range(d)]
    write_table(path, header, ([t, i, *latent[t, i]] for t in range(T1) for i in range(N)))


def load_latents(path) -> np.ndarray:
    header, rows = read_table(path)
    d = len(header) - 2
    arr = np.array(rows, dtype=object)
    t = arr[:, 0].astype(np.int64)
    i = arr[:, 1].astype(np.int64)
    out = np.zeros((t.max() + 1, i.max() + 1, d))
    out[t, i] = np.array([[float(v) for v in r[2:]] for r in rows])
    return out


def save_probabilities(path, probs):
    """Rows ``t,i,j,p`` over pairs ``i < j`` with ``t = 1..T``."""
    probs = np.asarray(probs, dtype=float)
    T, N = probs.shape[:2]
    iu, ju = np.triu_indices(N, k=1)
    rows = ((t + 1, i, j, probs[t, i, j]) for t in range(T) for i, j in zip(iu, ju))
    write_table(path, ["t", "i", "j", "p"], rows)


def load_probabilities(path) -> np.ndarray:
    header, rows = read_table(path)
    _expect(header, ["t", "i", "j", "p"], path)
    t = np.array([int(r[0]) for r in rows])
    i = np.array([int(r[1]) for r in rows])
    j = np.array([int(r[2]) for r in rows])
    p = np.array([float(r[3]) for r in rows])
    N = int(j.max()) + 1
    out = np.zeros((int(t.max()), N, N))
    out[t - 1, i, j] = p
    out[t - 1, j, i] = p
    return out


PARAM_COLUMNS = ["alpha", "sigma", "phi", "sigma_tilde", "phi_tilde", "log_lik_estimate"]


def save_params_trace(path, params, log_liks=None, index_name="iteration", start=1):
    """One row per parameter set with both parameterisations and the log-likelihood estimate."""
    rows = []
    for k, p in enumerate(params):
        ll = float("nan") if log_liks is None or k >= len(log_liks) else float(log_liks[k])
        rows.append([k + start, float(p.alpha), float(p.sigma), float(p.phi),
                     math.log(p.sigma), math.log(p.phi / (1.0 - p.phi)), ll])
    write_table(path, [index_name] + PARAM_COLUMNS, rows)


def load_params_trace(path, link=dlsn.Link.EUCLIDEAN, likelihood=dlsn.Likelihood.BERNOULLI):
    """Returns ``(index, params, log_liks)``."""
    header, rows = read_table(path)
    if header[1:] != PARAM_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {header}")
    idx = [int(r[0]) for r in rows]
    params = [dlsn.StaticParams(float(r[1]), float(r[2]), float(r[3]), link=link, likelihood=likelihood)
              for r in rows]
    return idx, params, [float(r[6]) for r in rows]


def save_filter_trace(path, trace):
    write_table(path, ["t", "s", "ess", "loglik_increment"],
                ([r.t, r.s, r.ess, r.loglik_increment] for r in trace.records))


def load_filter_trace(path):
    from .smc import FilterTrace

    header, rows = read_table(path)
    _expect(header, ["t", "s", "ess", "loglik_increment"], path)
    tr = FilterTrace()
    for r in rows:
        tr.append(int(r[0]), int(r[1]), float(r[2]), float(r[3]))
    return tr


def save_node_map(path, nodes):
    write_table(path, ["index", "node_id"], enumerate(nodes))


def load_node_map(path) -> list:
    header, rows = read_table(path)
    _expect(header, ["index", "node_id"], path)
    return [r[1] for r in sorted(rows, key=lambda r: int(r[0]))]


# -- manifest and config -----------------------------------------------------


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    seed: int
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    results: Optional[dict] = None
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "results": self.results,
        }


def params_to_dict(p: dlsn.StaticParams) -> dict:
    return {"alpha": p.alpha, "sigma": p.sigma, "phi": p.phi,
            "link": p.link.value, "likelihood": p.likelihood.value}


def params_from_dict(d: dict) -> dlsn.StaticParams:
    return dlsn.StaticParams(float(d["alpha"]), float(d["sigma"]), float(d["phi"]),
                             link=d.get("link", "euclidean"), likelihood=d.get("likelihood", "bernoulli"))


def save_manifest(path, manifest: RunManifest):
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> RunManifest:
    with open(path) as fh:
        data = json.load(fh)
    version = data.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise ManifestVersionError(
            f"manifest schema version {version!r} is not supported (expected {MANIFEST_SCHEMA_VERSION})")
    return RunManifest(
        command=data["command"], seed=int(data["seed"]), config=data.get("config", {}),
        inputs=data.get("inputs", {}), outputs=data.get("outputs", []), results=data.get("results"),
        schema_version=version,
    )


def load_config(path=None, text: Optional[str] = None) -> dict:
    """Read an INI file into ``{section: {key: value}}`` with string values."""
    parser = configparser.ConfigParser()
    try:
        if text is not None:
            parser.read_string(text)
        elif path is not None:
            if not os.path.exists(path):
                raise ConfigError(f"config file {path} does not exist")
            parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return {sec: dict(parser.items(sec)) for sec in parser.sections()}


def dump_config(cfg: dict) -> str:
    parser = configparser.ConfigParser()
    for sec, values in cfg.items():
        parser[sec] = {k: str(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
