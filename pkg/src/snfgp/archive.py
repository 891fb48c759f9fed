"""Single-file model archive, format ``snfgp-v1``.

Layout::

    8 bytes   magic b"SNFGPv1\\n"
    8 bytes   header length n, unsigned little-endian
    n bytes   UTF-8 JSON header
    rest      payload: float64 little-endian arrays, back to back

The header lists every array as ``{"name", "shape", "offset"}`` (offset in
bytes from the start of the payload) and carries the SHA-256 of the payload,
so truncation and bit rot are detected before anything is parsed. Arrays are
written as raw IEEE doubles, which makes save -> load bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ArchiveError, CorruptArchiveError, InvariantError, NumericalError, VersionMismatchError
from .flow import NET_PARAM_NAMES, CouplingLayer, FlowParams, flow_forward
from .gp import GpHyperparams
from .model import TRAIN_Z_TOLERANCE, SnfgpModel
from .pca import PcaBasis

FORMAT = "snfgp-v1"
MAGIC = b"SNFGPv1\n"
_DTYPE = np.dtype("<f8")


def _collect_arrays(model: SnfgpModel):
    arrays = [
        ("pca.mean", model.pca.mean),
        ("pca.basis", model.pca.basis),
        ("pca.explained_variance", model.pca.explained_variance),
    ]
    arrays += model.flow.named_arrays()
    gp_table = np.array([[gp.signal_variance, *gp.length_scales, gp.noise_variance] for gp in model.gps])
    arrays += [("gps", gp_table), ("train_X", model.train_X), ("train_W", model.train_W), ("train_Z", model.train_Z)]
    return arrays


def save_model(model: SnfgpModel, path) -> None:
    problems = model.check_consistency()
    if problems:
        raise InvariantError(*problems[0])

    entries, chunks, offset = [], [], 0
    for name, arr in _collect_arrays(model):
        data = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)

    header = {
        "format": FORMAT,
        "dims": {"K": model.K, "D": model.D, "P": model.P, "N": int(model.train_X.shape[0])},
        "pca": {"total_variance_fraction": model.pca.total_variance_fraction},
        "flow": {
            "dim": model.flow.dim,
            "n_layers": len(model.flow.layers),
            "masks": [layer.mask.astype(int).tolist() for layer in model.flow.layers],
            "s_max": [layer.s_max for layer in model.flow.layers],
        },
        "gps": [
            {
                "signal_variance": gp.signal_variance,
                "length_scales": gp.length_scales.tolist(),
                "noise_variance": gp.noise_variance,
            }
            for gp in model.gps
        ],
        "metadata": model.metadata,
        "arrays": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(payload)


def read_header(path) -> dict:
    """Parse and return the JSON header only (checks magic and format)."""
    header, _ = _read(path)
    return header


def _read(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ArchiveError(f"cannot read model archive {path}: {exc}") from exc
    if len(raw) < 16 or raw[:6] != MAGIC[:6]:
        raise CorruptArchiveError(f"{path} is not an snfgp model archive")
    if raw[:8] != MAGIC:
        raise VersionMismatchError(f"{path}: unsupported archive magic {raw[:8]!r}, expected {FORMAT}")
    (n,) = struct.unpack("<Q", raw[8:16])
    if 16 + n > len(raw):
        raise CorruptArchiveError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptArchiveError(f"{path}: unreadable header ({exc})") from exc
    if header.get("format") != FORMAT:
        raise VersionMismatchError(f"{path}: format {header.get('format')!r}, expected {FORMAT}")
    payload = raw[16 + n:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CorruptArchiveError(f"{path}: payload checksum mismatch (truncated or modified file)")
    return header, payload


def _arrays(header, payload, path):
    out = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        stop = start + count * _DTYPE.itemsize
        if start < 0 or stop > len(payload):
            raise CorruptArchiveError(f"{path}: array {entry['name']} extends past the payload")
        out[entry["name"]] = np.frombuffer(payload[start:stop], dtype=_DTYPE).reshape(shape).astype(float)
    return out


def load_model(path) -> SnfgpModel:
    """Read an archive and re-validate its invariants.

    Raises
    ------
    CorruptArchiveError
        Truncated, modified or non-archive file.
    VersionMismatchError
        Archive written in another format version.
    InvariantError
        Sections disagree (``field`` names the offending one), or the cached
        training latents do not match the stored flow.
    """
    header, payload = _read(path)
    try:
        arr = _arrays(header, payload, path)
        dims = header["dims"]
        K, D, P = int(dims["K"]), int(dims["D"]), int(dims["P"])
        fl = header["flow"]
        pca = PcaBasis(arr["pca.mean"], arr["pca.basis"], arr["pca.explained_variance"],
                       float(header["pca"]["total_variance_fraction"]))
        if pca.n_components != K:
            raise InvariantError("pca.basis", f"{pca.n_components} columns but header K={K}")
        if pca.n_features != P:
            raise InvariantError("pca.basis", f"{pca.n_features} rows but header P={P}")
        if int(fl["dim"]) != K:
            raise InvariantError("flow.dim", f"{fl['dim']} but header K={K}")
        layers = []
        for i, (mask, s_max) in enumerate(zip(fl["masks"], fl["s_max"])):
            nets = {
                net: {name: arr[f"flow.{i}.{net}.{name}"] for name in NET_PARAM_NAMES}
                for net in ("scale", "translate")
            }
            layers.append(CouplingLayer(np.array(mask, dtype=bool), nets["scale"], nets["translate"], float(s_max)))
        if len(layers) != int(fl["n_layers"]):
            raise InvariantError("flow.n_layers", f"{fl['n_layers']} declared, {len(layers)} masks stored")
        flow = FlowParams(int(fl["dim"]), layers)

        table = arr["gps"]
        if table.shape != (K, D + 2):
            raise InvariantError("gps", f"table shape {table.shape} != ({K}, {D + 2})")
        gps = [GpHyperparams(row[0], row[1:-1], row[-1]) for row in table]
        model = SnfgpModel(pca, flow, gps, arr["train_X"], arr["train_W"], arr["train_Z"], header.get("metadata", {}))
    except KeyError as exc:
        raise CorruptArchiveError(f"{path}: missing section {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ArchiveError):
            raise
        raise CorruptArchiveError(f"{path}: malformed section ({exc})") from exc

    problems = model.check_consistency()
    if problems:
        raise InvariantError(*problems[0])
    try:
        Z, _ = flow_forward(model.train_W, model.flow)
    except NumericalError as exc:
        raise InvariantError("train_Z", f"flow cannot be evaluated on train_W: {exc}") from exc
    err = float(np.max(np.abs(Z - model.train_Z))) if Z.size else 0.0
    if not err <= TRAIN_Z_TOLERANCE * max(1.0, float(np.max(np.abs(Z), initial=0.0))):
        raise InvariantError("train_Z", f"cached latents differ from flow(train_W) by {err:.3g}")
    return model
