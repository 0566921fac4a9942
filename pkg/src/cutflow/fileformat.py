"""On-disk formats.

``.cfprog.json``
    Canonical JSON: sorted keys, elements listed in natural ID order,
    expressions stored as text.  Layout::

        {"format": "cfprog", "version": 1, "name": ..., "start": "s1", "next_id": 17,
         "symbols":    {"N": {"lo": null, "hi": null}},
         "containers": {"A": {"dtype": "f64", "shape": ["N"], "transient": false}},
         "states":     [{"id": "s1", "label": "", "nodes": [...], "edges": [...]}],
         "interstate": [{"id": "t3", "src": "s1", "dst": "s2",
                         "condition": "i < N", "assignments": {"i": "0"}}]}

    Node records carry ``kind`` in {access, tasklet, opaque, map_entry,
    map_exit}; edge records carry an optional ``memlet`` with ``data``,
    ``subset``, ``wcr`` and ``other_subset``.

``.cfdata``
    ``b"CFDATA\\x00\\x01"`` magic, little-endian u64 header length, a JSON
    header (symbols plus name/dtype/shape/offset per buffer) and the raw
    little-endian buffers back to back.
"""

from __future__ import annotations

import json
import struct
from typing import Optional

import numpy as np

from .errors import CutflowError, MalformedDocument, UnknownVersion
from .ir import (AccessNode, DataDescriptor, Edge, InterstateEdge, MapEntry, MapExit, Memlet,
                 Opaque, Program, State, SymbolInfo, Tasklet, id_key)
from .symexpr import SubsetRange, parse

PROGRAM_VERSION = 1
DATA_VERSION = 1
_MAGIC = b"CFDATA\x00\x01"
_LE_DTYPES = {"f64": "<f8", "f32": "<f4", "i64": "<i8", "i32": "<i4", "bool": "|b1"}
_FROM_NP = {np.dtype(np.float64): "f64", np.dtype(np.float32): "f32", np.dtype(np.int64): "i64",
            np.dtype(np.int32): "i32", np.dtype(np.bool_): "bool"}


def canonical_json(doc) -> bytes:
    return (json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=True) + "\n").encode()


def _by_id(items):
    return sorted(items, key=lambda x: id_key(x.id))


# -- programs ---------------------------------------------------------------

def program_to_doc(p: Program) -> dict:
    return {
        "format": "cfprog",
        "version": PROGRAM_VERSION,
        "name": p.name,
        "start": p.start,
        "next_id": p.next_id,
        "symbols": {k: {"lo": v.lo, "hi": v.hi} for k, v in p.symbols.items()},
        "containers": {k: {"dtype": d.dtype, "shape": [str(s) for s in d.shape],
                           "transient": d.transient} for k, d in p.containers.items()},
        "states": [{"id": s.id, "label": s.label,
                    "nodes": [_node_doc(n) for n in _by_id(s.nodes.values())],
                    "edges": [_edge_doc(e) for e in _by_id(s.edges.values())]}
                   for s in _by_id(p.states.values())],
        "interstate": [{"id": e.id, "src": e.src, "dst": e.dst, "condition": str(e.condition),
                        "assignments": {k: str(v) for k, v in e.assignments.items()}}
                       for e in _by_id(p.interstate.values())],
    }


def _node_doc(n) -> dict:
    if isinstance(n, AccessNode):
        return {"id": n.id, "kind": "access", "data": n.data}
    if isinstance(n, (Tasklet, Opaque)):
        doc = {"id": n.id, "kind": "tasklet" if isinstance(n, Tasklet) else "opaque",
               "label": n.label, "inputs": list(n.inputs), "outputs": list(n.outputs),
               "code": {k: str(v) for k, v in n.code.items()}}
        if isinstance(n, Opaque):
            doc["may_have_side_effects"] = n.may_have_side_effects
        return doc
    if isinstance(n, MapEntry):
        return {"id": n.id, "kind": "map_entry", "label": n.label, "params": list(n.params),
                "ranges": [str(r) for r in n.ranges]}
    if isinstance(n, MapExit):
        return {"id": n.id, "kind": "map_exit", "entry": n.entry}
    raise TypeError(n)


def _edge_doc(e: Edge) -> dict:
    m = None
    if e.memlet is not None:
        m = {"data": e.memlet.data, "subset": str(e.memlet.subset), "wcr": e.memlet.wcr,
             "other_subset": None if e.memlet.other_subset is None else str(e.memlet.other_subset)}
    return {"id": e.id, "src": e.src, "src_conn": e.src_conn, "dst": e.dst,
            "dst_conn": e.dst_conn, "memlet": m}


def serialize(p: Program) -> bytes:
    return canonical_json(program_to_doc(p))


def deserialize(data) -> Program:
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode()
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not UTF-8: {exc}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}") from None
    return program_from_doc(doc)


def program_from_doc(doc) -> Program:
    if not isinstance(doc, dict) or doc.get("format") != "cfprog":
        raise MalformedDocument("not a cfprog document")
    if doc.get("version") != PROGRAM_VERSION:
        raise UnknownVersion(f"unsupported cfprog version {doc.get('version')!r}")
    try:
        p = Program(name=doc["name"], start=doc["start"], next_id=int(doc["next_id"]))
        for k, v in doc["symbols"].items():
            p.symbols[k] = SymbolInfo(v.get("lo"), v.get("hi"))
        for k, v in doc["containers"].items():
            p.containers[k] = DataDescriptor(k, v["dtype"], tuple(parse(s) for s in v["shape"]),
                                             bool(v["transient"]))
        for sd in doc["states"]:
            st = State(sd["id"], sd.get("label", ""))
            for nd in sd["nodes"]:
                node = _node_from_doc(nd)
                st.nodes[node.id] = node
            for ed in sd["edges"]:
                md = ed.get("memlet")
                memlet = None
                if md is not None:
                    other = md.get("other_subset")
                    memlet = Memlet(md["data"], SubsetRange.parse(md["subset"]), md.get("wcr"),
                                    None if other is None else SubsetRange.parse(other))
                st.edges[ed["id"]] = Edge(ed["id"], ed["src"], ed.get("src_conn"), ed["dst"],
                                          ed.get("dst_conn"), memlet)
            p.states[st.id] = st
        for ed in doc["interstate"]:
            p.interstate[ed["id"]] = InterstateEdge(
                ed["id"], ed["src"], ed["dst"], parse(ed["condition"]),
                {k: parse(v) for k, v in ed["assignments"].items()})
    except MalformedDocument:
        raise
    except (KeyError, TypeError, ValueError, AttributeError, CutflowError) as exc:
        raise MalformedDocument(f"bad cfprog document: {type(exc).__name__}: {exc}") from None
    return p


def _node_from_doc(nd: dict):
    kind = nd["kind"]
    if kind == "access":
        return AccessNode(nd["id"], nd["data"])
    if kind in ("tasklet", "opaque"):
        code = {k: parse(v) for k, v in nd["code"].items()}
        if kind == "tasklet":
            return Tasklet(nd["id"], nd["label"], tuple(nd["inputs"]), tuple(nd["outputs"]), code)
        return Opaque(nd["id"], nd["label"], tuple(nd["inputs"]), tuple(nd["outputs"]), code,
                      bool(nd.get("may_have_side_effects", True)))
    if kind == "map_entry":
        ranges = tuple(SubsetRange.parse(r).dims[0] for r in nd["ranges"])
        return MapEntry(nd["id"], nd["label"], tuple(nd["params"]), ranges)
    if kind == "map_exit":
        return MapExit(nd["id"], nd["entry"])
    raise MalformedDocument(f"unknown node kind {kind!r}")


def load_program(path) -> Program:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def save_program(p: Program, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(p))


# -- data files -------------------------------------------------------------

def encode_data(symbols: dict, data: dict) -> bytes:
    header = {"version": DATA_VERSION, "symbols": {k: int(v) for k, v in sorted(symbols.items())},
              "buffers": []}
    payload = bytearray()
    for name in sorted(data):
        arr = np.asarray(data[name])
        tag = _FROM_NP.get(arr.dtype)
        if tag is None:
            raise MalformedDocument(f"unsupported dtype {arr.dtype} for {name}")
        raw = np.ascontiguousarray(arr, dtype=_LE_DTYPES[tag]).tobytes()
        header["buffers"].append({"name": name, "dtype": tag, "shape": list(arr.shape),
                                  "offset": len(payload), "nbytes": len(raw)})
        payload += raw
    head = json.dumps(header, sort_keys=True).encode()
    return _MAGIC + struct.pack("<Q", len(head)) + head + bytes(payload)


def decode_data(blob: bytes) -> tuple:
    """Inverse of :func:`encode_data`; returns (symbols, {name: ndarray})."""
    if not blob.startswith(_MAGIC) or len(blob) < len(_MAGIC) + 8:
        raise MalformedDocument("not a cfdata file")
    (hlen,) = struct.unpack_from("<Q", blob, len(_MAGIC))
    start = len(_MAGIC) + 8
    try:
        header = json.loads(blob[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedDocument(f"bad cfdata header: {exc}") from None
    if header.get("version") != DATA_VERSION:
        raise UnknownVersion(f"unsupported cfdata version {header.get('version')!r}")
    body = blob[start + hlen:]
    out = {}
    try:
        for b in header["buffers"]:
            chunk = body[b["offset"]:b["offset"] + b["nbytes"]]
            if len(chunk) != b["nbytes"]:
                raise MalformedDocument(f"truncated buffer {b['name']}")
            arr = np.frombuffer(chunk, dtype=_LE_DTYPES[b["dtype"]]).reshape(b["shape"])
            out[b["name"]] = arr.astype(arr.dtype.newbyteorder("="))
        symbols = {k: int(v) for k, v in header["symbols"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedDocument(f"bad cfdata file: {exc}") from None
    return symbols, out


def save_data(path, symbols: dict, data: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_data(symbols, data))


def load_data(path) -> tuple:
    with open(path, "rb") as fh:
        return decode_data(fh.read())


# -- DOT ----------------------------------------------------------------------

def _q(text: str) -> str:
    return '"' + str(text).replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(p: Program, highlight: Optional[set] = None) -> str:
    highlight = highlight or set()
    lines = [f"digraph {_q(p.name)} {{", "  compound=true;"]
    for s in _by_id(p.states.values()):
        lines.append(f"  subgraph {_q('cluster_' + s.id)} {{")
        lines.append(f"    label={_q(s.id + ' ' + s.label)};")
        for n in _by_id(s.nodes.values()):
            if isinstance(n, AccessNode):
                label, shape = n.data, "ellipse"
            elif isinstance(n, MapEntry):
                rng = ", ".join(f"{a}={r}" for a, r in n.domain())
                label, shape = f"{n.label}[{rng}]", "trapezium"
            elif isinstance(n, MapExit):
                label, shape = f"exit {n.entry}", "invtrapezium"
            else:
                code = "; ".join(f"{k} = {v}" for k, v in n.code.items())
                label, shape = f"{n.label}: {code}", "octagon"
            style = ", style=filled, fillcolor=lightpink" if n.id in highlight else ""
            lines.append(f"    {_q(n.id)} [label={_q(n.id + ': ' + label)}, shape={shape}{style}];")
        for e in _by_id(s.edges.values()):
            lab = "" if e.memlet is None else str(e.memlet)
            lines.append(f"    {_q(e.src)} -> {_q(e.dst)} [label={_q(lab)}];")
        lines.append("  }")
    for e in _by_id(p.interstate.values()):
        lab = str(e.condition) + "".join(f"; {k}={v}" for k, v in e.assignments.items())
        lines.append(f"  {_q('state_' + e.src)} -> {_q('state_' + e.dst)} [label={_q(lab)}];")
    for s in p.states.values():
        lines.append(f"  {_q('state_' + s.id)} [shape=box, label={_q(s.id)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
