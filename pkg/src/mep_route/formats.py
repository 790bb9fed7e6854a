"""TSPLIB subset I/O, synthetic instance generators and SVG rendering."""
from __future__ import annotations

import io
import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import TsplibError
from .instance import ProblemInstance, Solution, Variant, make_instance, tour_points

TextSource = Union[str, io.TextIOBase]

PAPER59_SEED = 59
PAPER59_BOX = (0.0, 0.0, 1.0, 1.0)


@dataclass(frozen=True)
class TsplibHeader:
    name: str
    dimension: int
    edge_weight_type: str


def _read_text(source: TextSource) -> str:
    return source if isinstance(source, str) else source.read()


def parse_tsplib_full(source: TextSource) -> Tuple[TsplibHeader, ProblemInstance]:
    """Parse a EUC_2D TSPLIB file into its header and a basic instance."""
    text = _read_text(source)
    header = {}
    coords = {}
    in_coords = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.upper() == "EOF":
            break
        if in_coords:
            parts = line.split()
            if len(parts) < 3:
                # a keyword after the coordinates ends the section
                in_coords = False
            else:
                try:
                    coords[int(parts[0])] = (float(parts[1]), float(parts[2]))
                except ValueError as exc:
                    raise TsplibError(f"bad coordinate line: {line!r}") from exc
                continue
        if line.upper().startswith("NODE_COORD_SECTION"):
            in_coords = True
            continue
        key, sep, value = line.partition(":")
        if sep:
            header[key.strip().upper()] = value.strip()
    if "DIMENSION" not in header:
        raise TsplibError("missing dimension")
    try:
        dim = int(header["DIMENSION"])
    except ValueError as exc:
        raise TsplibError(f"missing dimension: {header['DIMENSION']!r} is not an integer") from exc
    ewt = header.get("EDGE_WEIGHT_TYPE", "").upper()
    if ewt != "EUC_2D":
        raise TsplibError(f"unsupported edge weight type: {ewt or 'none given'}")
    if len(coords) != dim:
        raise TsplibError(f"dimension mismatch: DIMENSION {dim}, {len(coords)} nodes read")
    ids = sorted(coords)
    xy = np.array([coords[i] for i in ids], dtype=float).reshape(-1, 2)
    if ids != list(range(1, dim + 1)):
        raise TsplibError("node ids must run from 1 to DIMENSION")
    return TsplibHeader(header.get("NAME", ""), dim, ewt), make_instance(xy)


def parse_tsplib(source: TextSource) -> ProblemInstance:
    """Parse a TSPLIB ``EUC_2D`` file (text or text stream) into a basic instance.

    Unknown header keys are ignored.

    Raises:
        TsplibError: missing dimension, a weight type other than EUC_2D, or a
            node count that disagrees with DIMENSION.
    """
    return parse_tsplib_full(source)[1]


def write_tsplib(instance: ProblemInstance, name: str = "instance", comment: str = "") -> str:
    """Canonical TSPLIB text for the instance's node coordinates."""
    lines = [f"NAME : {name}"]
    if comment:
        lines.append(f"COMMENT : {comment}")
    lines += ["TYPE : TSP", f"DIMENSION : {instance.n}", "EDGE_WEIGHT_TYPE : EUC_2D",
              "NODE_COORD_SECTION"]
    lines += [f"{nd.id} {nd.position[0]!r} {nd.position[1]!r}" for nd in instance.nodes]
    lines.append("EOF")
    return "\n".join(lines) + "\n"


# ---- generators --------------------------------------------------------------

def generate_rings(per_ring: int = 15, radii: Tuple[float, float] = (1.0, 2.0), seed: int = 0,
                   variant: Variant = Variant.RETURNING, salesmen: int = 2) -> ProblemInstance:
    """Two concentric rings of ``per_ring`` equally spaced nodes around the origin.

    Each ring gets its own seeded angular offset in ``[0, 2*pi/per_ring)``.
    """
    if per_ring < 3:
        raise ValueError("per_ring must be >= 3")
    rng = np.random.default_rng(seed)
    step = 2.0 * math.pi / per_ring
    pts = []
    for r in radii:
        offset = rng.uniform(0.0, step)
        ang = offset + step * np.arange(per_ring)
        pts.append(r * np.column_stack([np.cos(ang), np.sin(ang)]))
    return make_instance(np.vstack(pts), variant, salesmen)


def generate_uniform(n: int, box: Sequence[float] = (0.0, 0.0, 1.0, 1.0), radius: float = 0.0,
                     seed: int = 0, variant: Optional[Variant] = None, salesmen: int = 1,
                     depot=None, eta: float = 0.0) -> ProblemInstance:
    """``n`` i.i.d. uniform nodes in ``box = (xmin, ymin, xmax, ymax)``.

    The variant defaults to CETSP when ``radius > 0`` and the basic tour
    otherwise.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x0, y0, x1, y1 = box
    rng = np.random.default_rng(seed)
    xy = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    if variant is None:
        variant = Variant.CETSP if radius > 0 else Variant.BASIC
    return make_instance(xy, variant, salesmen, depot=depot,
                         radius=radius if variant is Variant.CETSP else 0.0, eta=eta)


def paper59(eta: float = 0.0, variant: Variant = Variant.DEPOT, salesmen: int = 2) -> ProblemInstance:
    """The fixed 59-node uniform preset; for depot tours the depot sits at the box centre."""
    x0, y0, x1, y1 = PAPER59_BOX
    depot = ((x0 + x1) / 2, (y0 + y1) / 2) if variant is Variant.DEPOT else None
    return generate_uniform(59, PAPER59_BOX, 0.0, PAPER59_SEED, variant, salesmen,
                            depot=depot, eta=eta if variant is Variant.DEPOT else 0.0)


# ---- SVG ---------------------------------------------------------------------

_SIZE = 600.0
_MARGIN = 30.0
_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _removed_links(solution: Solution, instance: ProblemInstance):
    """Links of the single chain that the split removed, as node-id pairs."""
    tours = [t for t in solution.tours if t]
    if len(tours) < 2:
        return []
    pairs = [(tours[i][-1], tours[i + 1][0]) for i in range(len(tours) - 1)]
    if instance.variant is Variant.RETURNING:
        pairs.append((tours[-1][-1], tours[0][0]))
    return pairs


def render_svg(solution: Solution, instance: ProblemInstance, config: Optional[dict] = None) -> str:
    """SVG 1.1 drawing of the tours.

    One polyline per tour with at least two points, dashed lines for the
    links removed when the chain was split, a square marker per node, a
    diamond for the depot and a circle of radius rho for every disk node.
    ``config`` is embedded as JSON in the ``<metadata>`` element.
    """
    x = instance.coords
    pts = [x]
    rad = instance.radii
    if instance.depot is not None:
        pts.append(instance.depot_xy[None, :])
    if solution.waypoints is not None:
        pts.append(np.asarray(solution.waypoints, dtype=float).reshape(-1, 2))
    allp = np.vstack(pts)
    lo = np.minimum(allp.min(axis=0), (x - rad[:, None]).min(axis=0))
    hi = np.maximum(allp.max(axis=0), (x + rad[:, None]).max(axis=0))
    span = float(max(hi[0] - lo[0], hi[1] - lo[1])) or 1.0
    k = (_SIZE - 2 * _MARGIN) / span

    def tx(p):
        return _MARGIN + (p[0] - lo[0]) * k, _SIZE - _MARGIN - (p[1] - lo[1]) * k

    def fmt(v):
        return f"{v:.3f}"

    svg = ET.Element("svg", {
        "xmlns": "http://www.w3.org/2000/svg", "version": "1.1",
        "width": fmt(_SIZE), "height": fmt(_SIZE), "viewBox": f"0 0 {_SIZE:g} {_SIZE:g}",
    })
    ET.SubElement(svg, "title").text = f"{Variant(solution.variant).value} solution"
    if config is not None:
        ET.SubElement(svg, "metadata").text = json.dumps(config, sort_keys=True)
    group = ET.SubElement(svg, "g", {"fill": "none", "stroke-width": "2"})
    closed = instance.variant.returning and instance.variant is not Variant.DEPOT
    for t, tour in enumerate(solution.tours):
        if instance.variant is Variant.CETSP and solution.waypoints is not None:
            seq = np.asarray(solution.waypoints, dtype=float).reshape(-1, 2)
        else:
            seq = tour_points(tour, instance)
        if len(seq) < 2:
            continue
        if closed:
            seq = np.vstack([seq, seq[:1]])
        coords = " ".join(f"{fmt(a)},{fmt(b)}" for a, b in map(tx, seq))
        ET.SubElement(group, "polyline", {"points": coords,
                                          "stroke": _COLOURS[t % len(_COLOURS)]})
    for a, b in _removed_links(solution, instance):
        (x1, y1), (x2, y2) = tx(x[a - 1]), tx(x[b - 1])
        ET.SubElement(group, "line", {"x1": fmt(x1), "y1": fmt(y1), "x2": fmt(x2), "y2": fmt(y2),
                                      "stroke": "#777777", "stroke-dasharray": "6,4"})
    if instance.variant is Variant.CETSP:
        disks = ET.SubElement(svg, "g", {"fill": "none", "stroke": "#999999"})
        for i, r in enumerate(rad):
            cx, cy = tx(x[i])
            ET.SubElement(disks, "circle", {"cx": fmt(cx), "cy": fmt(cy), "r": fmt(r * k)})
    marks = ET.SubElement(svg, "g", {"fill": "#000000"})
    for nd in instance.nodes:
        cx, cy = tx(nd.position)
        ET.SubElement(marks, "rect", {"x": fmt(cx - 3), "y": fmt(cy - 3), "width": "6",
                                      "height": "6", "id": f"node{nd.id}"})
    if instance.depot is not None:
        cx, cy = tx(instance.depot_xy)
        diamond = f"{fmt(cx)},{fmt(cy - 8)} {fmt(cx + 8)},{fmt(cy)} {fmt(cx)},{fmt(cy + 8)} {fmt(cx - 8)},{fmt(cy)}"
        ET.SubElement(svg, "polygon", {"points": diamond, "fill": "#ff7f0e", "id": "depot"})
    body = ET.tostring(svg, encoding="unicode")
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + body + "\n"
