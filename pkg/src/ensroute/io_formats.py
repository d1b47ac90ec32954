"""TSPLIB / CVRPLIB text formats, solution files and coordinate normalization.

Supported grammar (one keyword per line, ``KEY : VALUE``)::

    NAME, COMMENT, TYPE (TSP | CVRP), DIMENSION, EDGE_WEIGHT_TYPE, CAPACITY
    NODE_COORD_SECTION   id x y          (DIMENSION lines)
    DEMAND_SECTION       id demand       (DIMENSION lines, CVRP)
    DEPOT_SECTION        id ... -1       (optional, single depot)
    EOF

``EDGE_WEIGHT_TYPE`` is ``EUC_2D`` (distances rounded to the nearest integer)
or ``EXACT_2D`` (unrounded Euclidean; used when writing generated instances).
"""
from __future__ import annotations

import csv
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .instances import DistanceMode, Instance, Kind

EDGE_TYPES = {"EUC_2D": DistanceMode.ROUNDED_INT, "EXACT_2D": DistanceMode.CONTINUOUS}
HEADER_KEYS = {"NAME", "COMMENT", "TYPE", "DIMENSION", "EDGE_WEIGHT_TYPE", "CAPACITY"}
SECTIONS = {"NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION"}
_BKS_RE = re.compile(r"(?:optimal value|best value|bks|opt)\s*[:=]?\s*(-?[0-9]+(?:\.[0-9]+)?)", re.I)


class VrplibParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnsupportedFormatError(VrplibParseError):
    pass


class InfeasibleSolutionError(ValueError):
    def __init__(self, report):
        self.report = report
        super().__init__("infeasible solution: " + "; ".join(report.violations))


class DegenerateInstanceError(ValueError):
    pass


@dataclass
class VrplibMeta:
    edge_weight_type: str = "EUC_2D"
    declared_dimension: int = 0
    comment: str = ""
    bks: Optional[float] = None


@dataclass(frozen=True)
class NormalizationRecord:
    offset: Tuple[float, float]
    scale: float

    def denormalize(self, coords):
        return np.asarray(coords) * self.scale + np.asarray(self.offset)


def _fmt(v) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def parse_vrplib(text: str) -> Tuple[Instance, VrplibMeta]:
    lines = text.splitlines()
    header: Dict[str, str] = {}
    coords: Dict[int, Tuple[float, float]] = {}
    demands: Dict[int, int] = {}
    depots: List[int] = []
    section = None
    section_start = {}
    n_lines = len(lines)

    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        toks = line.replace(":", " : ", 1).split() if ":" in line else line.split()
        head = toks[0].upper()
        if section is not None and (_is_number(toks[0])):
            vals = line.split()
            try:
                if section == "NODE_COORD_SECTION":
                    if len(vals) != 3:
                        raise ValueError
                    nid = int(vals[0])
                    if nid in coords:
                        raise VrplibParseError(f"duplicate node id {nid}", lineno)
                    coords[nid] = (float(vals[1]), float(vals[2]))
                elif section == "DEMAND_SECTION":
                    if len(vals) != 2:
                        raise ValueError
                    demands[int(vals[0])] = int(float(vals[1]))
                elif section == "DEPOT_SECTION":
                    for v in vals:
                        iv = int(float(v))
                        if iv == -1:
                            section = None
                            break
                        depots.append(iv)
            except ValueError:
                raise VrplibParseError(f"malformed {section} line: {raw!r}", lineno) from None
            continue
        if head == "EOF":
            break
        if head in SECTIONS:
            section = head
            section_start[head] = lineno
            continue
        if head.endswith("_SECTION"):
            warnings.warn(f"line {lineno}: skipping unsupported section {head}")
            section = "SKIP"
            continue
        section = None
        if len(toks) >= 2 and toks[1] == ":":
            key, value = head, " ".join(line.split(":", 1)[1].split())
        else:
            key, value = head, " ".join(toks[1:])
        if key in HEADER_KEYS:
            header[key] = value
        else:
            warnings.warn(f"line {lineno}: skipping unknown keyword {key}")

    for key in ("TYPE", "DIMENSION"):
        if key not in header:
            raise VrplibParseError(f"missing mandatory keyword {key}", n_lines)
    kind_s = header["TYPE"].upper()
    if kind_s not in ("TSP", "CVRP"):
        raise UnsupportedFormatError(f"unsupported problem TYPE {kind_s}")
    kind = Kind(kind_s)
    ewt = header.get("EDGE_WEIGHT_TYPE", "EUC_2D").upper()
    if ewt not in EDGE_TYPES:
        raise UnsupportedFormatError(f"unsupported EDGE_WEIGHT_TYPE {ewt}")
    try:
        dim = int(header["DIMENSION"])
    except ValueError:
        raise VrplibParseError("DIMENSION is not an integer") from None

    if not coords:
        raise VrplibParseError("missing mandatory NODE_COORD_SECTION", n_lines)
    if len(coords) != dim:
        raise VrplibParseError(
            f"DIMENSION={dim} but NODE_COORD_SECTION has {len(coords)} entries",
            section_start.get("NODE_COORD_SECTION"),
        )
    ids = sorted(coords)

    comment = header.get("COMMENT", "")
    m = _BKS_RE.search(comment)
    meta = VrplibMeta(edge_weight_type=ewt, declared_dimension=dim, comment=comment,
                      bks=float(m.group(1)) if m else None)
    name = header.get("NAME", "")
    mode = EDGE_TYPES[ewt]

    if kind is Kind.TSP:
        xy = np.array([coords[i] for i in ids])
        inst = Instance(kind, xy, name=name, distance_mode=mode, node_ids=np.array(ids))
        return inst, meta

    if "CAPACITY" not in header:
        raise VrplibParseError("missing mandatory keyword CAPACITY", n_lines)
    if not demands:
        raise VrplibParseError("missing mandatory DEMAND_SECTION", n_lines)
    if set(demands) != set(ids):
        raise VrplibParseError("DEMAND_SECTION ids do not match NODE_COORD_SECTION",
                               section_start.get("DEMAND_SECTION"))
    if len(depots) > 1:
        raise UnsupportedFormatError("multiple depots are not supported",
                                     section_start.get("DEPOT_SECTION"))
    depot = depots[0] if depots else ids[0]
    if depot not in coords:
        raise VrplibParseError(f"depot id {depot} has no coordinates",
                               section_start.get("DEPOT_SECTION"))
    order = [depot] + [i for i in ids if i != depot]
    xy = np.array([coords[i] for i in order])
    dem = np.array([demands[i] for i in order])
    if dem[0] != 0:
        warnings.warn(f"depot demand {dem[0]} reset to 0")
        dem[0] = 0
    inst = Instance(kind, xy, demands=dem, capacity=int(float(header["CAPACITY"])),
                    name=name, distance_mode=mode, node_ids=np.array(order))
    return inst, meta


def read_vrplib(path) -> Tuple[Instance, VrplibMeta]:
    inst, meta = parse_vrplib(Path(path).read_text())
    if not inst.name:
        inst.name = Path(path).stem
    return inst, meta


def write_vrplib(inst: Instance, meta: Optional[VrplibMeta] = None) -> str:
    ewt = "EUC_2D" if inst.distance_mode is DistanceMode.ROUNDED_INT else "EXACT_2D"
    out = [f"NAME : {inst.name}"]
    if meta is not None and meta.comment:
        out.append(f"COMMENT : {meta.comment}")
    out.append(f"TYPE : {inst.kind.value}")
    out.append(f"DIMENSION : {inst.n_nodes}")
    out.append(f"EDGE_WEIGHT_TYPE : {ewt}")
    if inst.kind is Kind.CVRP:
        out.append(f"CAPACITY : {inst.capacity}")
    order = np.argsort(inst.node_ids, kind="stable")
    out.append("NODE_COORD_SECTION")
    for i in order:
        x, y = inst.coords[i]
        out.append(f"{inst.node_ids[i]} {_fmt(x)} {_fmt(y)}")
    if inst.kind is Kind.CVRP:
        out.append("DEMAND_SECTION")
        for i in order:
            out.append(f"{inst.node_ids[i]} {int(inst.demands[i])}")
        out.append("DEPOT_SECTION")
        out.append(str(inst.node_ids[0]))
        out.append("-1")
    out.append("EOF")
    return "\n".join(out) + "\n"


def split_routes(inst: Instance, tour) -> List[List[int]]:
    tour = [int(v) for v in tour]
    if inst.kind is Kind.TSP:
        return [tour]
    routes, cur = [], None
    for v in tour:
        if v == 0:
            if cur is not None:
                routes.append(cur)
            cur = []
        else:
            if cur is None:  # tour did not open at the depot
                cur = []
            cur.append(v)
    if cur:
        routes.append(cur)
    return routes


def write_solution(inst: Instance, tour, cost: Optional[float] = None) -> str:
    """Route-per-line solution text in the instance's original node ids."""
    from .env import feasibility_check, tour_length

    report = feasibility_check(inst, tour)
    if not report.ok:
        raise InfeasibleSolutionError(report)
    if cost is None:
        cost = tour_length(inst, tour)
    lines = []
    for k, route in enumerate(split_routes(inst, tour), start=1):
        ids = " ".join(str(inst.node_ids[v]) for v in route)
        lines.append(f"Route #{k}: {ids}")
    lines.append(f"Cost {_fmt(cost)}")
    return "\n".join(lines) + "\n"


def parse_solution(text: str, inst: Instance) -> Tuple[List[int], Optional[float]]:
    """Inverse of :func:`write_solution`; returns the internal tour and the cost."""
    pos = {int(nid): i for i, nid in enumerate(inst.node_ids)}
    tour: List[int] = [0] if inst.kind is Kind.CVRP else []
    cost = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.lower().startswith("route"):
            body = line.split(":", 1)[1].split()
            try:
                nodes = [pos[int(v)] for v in body]
            except (KeyError, ValueError):
                raise VrplibParseError(f"unknown node id in {raw!r}", lineno) from None
            tour.extend(nodes)
            if inst.kind is Kind.CVRP:
                tour.append(0)
        elif line.lower().startswith("cost"):
            cost = float(line.split()[1])
        else:
            raise VrplibParseError(f"unexpected solution line {raw!r}", lineno)
    return tour, cost


def load_bks_csv(path) -> Dict[str, float]:
    """Best-known values from a ``name,bks`` CSV (a header row is optional)."""
    table = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            name, val = row[0].strip(), row[1].strip()
            if name.lower() == "name":
                continue
            table[name] = float(val)
    return table


def normalize_coords(inst: Instance) -> Tuple[Instance, NormalizationRecord]:
    """Map coordinates into the unit square with one uniform scale factor."""
    xy = inst.coords
    lo = xy.min(axis=0)
    span = float((xy.max(axis=0) - lo).max())
    if not span > 0.0:
        raise DegenerateInstanceError("all nodes are coincident")
    rec = NormalizationRecord(offset=(float(lo[0]), float(lo[1])), scale=span)
    norm = inst.with_coords((xy - lo) / span, distance_mode=DistanceMode.CONTINUOUS)
    return norm, rec
