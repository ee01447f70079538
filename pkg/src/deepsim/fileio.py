"""Image, model and config I/O.

Formats: binary PGM (8/16-bit, P5), grayscale PFM, a flat binary model
container, and INI-style key-value configs. All parse failures raise
ParseError carrying the byte offset of the offending data.
"""

from __future__ import annotations

import configparser
import io
import json
import struct

import numpy as np

from .backbone import MlpConfig, MsAffConfig, MsAffModel

MODEL_MAGIC = b"DSIMNET1"


class ParseError(ValueError):
    """Malformed file content; offset is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


# -- PGM ------------------------------------------------------------------------


def _read_token(fh):
    """Next whitespace-delimited header token, skipping '#' comments."""
    tok = b""
    while True:
        c = fh.read(1)
        if not c:
            raise ParseError("unexpected end of header", fh.tell())
        if c == b"#":
            fh.readline()
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_pgm(path):
    """Load a binary (P5) PGM as floats in [0,1]; 16-bit data divides by 65535.

    Returns (image, header_comments) where comments is the list of '#' lines
    found before the pixel data.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    fh = io.BytesIO(raw)
    magic = fh.read(2)
    if magic != b"P5":
        raise ParseError(f"bad PGM magic {magic!r}", 0)
    comments = []
    # re-scan for comments (tokens skip them silently)
    for line in raw.split(b"\n"):
        if line.startswith(b"#"):
            comments.append(line[1:].strip().decode("utf-8", "replace"))
    try:
        w = int(_read_token(fh))
        h = int(_read_token(fh))
        maxval = int(_read_token(fh))
    except ValueError:
        raise ParseError("non-numeric PGM header field", fh.tell()) from None
    if maxval not in (255, 65535):
        raise ParseError(f"unsupported maxval {maxval}", fh.tell())
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    need = w * h * dtype.itemsize
    data = fh.read(need)
    if len(data) < need:
        raise ParseError(f"truncated pixel data, need {need} bytes", fh.tell())
    img = np.frombuffer(data, dtype=dtype).reshape(h, w).astype(np.float64)
    return img / maxval, comments


def write_pgm(path, img, bits: int = 8, comments=()):
    """Store an image with values in [0,1] as binary PGM."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    img = np.asarray(img, dtype=np.float64)
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    q = q.astype("u1" if bits == 8 else ">u2")
    with open(path, "wb") as fh:
        fh.write(b"P5\n")
        for c in comments:
            fh.write(b"# " + c.encode("utf-8") + b"\n")
        fh.write(f"{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode())
        fh.write(q.tobytes())


def write_disparity_pgm(path, disp):
    """16-bit PGM of a disparity map with its affine mapping in the header.

    Values are stored as raw = (d - offset) / scale * 65535 with offset/scale
    chosen from the data range; read_disparity_pgm inverts the mapping.
    """
    disp = np.asarray(disp, dtype=np.float64)
    offset = float(disp.min())
    span = float(disp.max() - disp.min())
    scale = span if span > 0 else 1.0
    write_pgm(path, (disp - offset) / scale, bits=16,
              comments=[f"disparity offset={offset!r} scale={scale!r}"])


def read_disparity_pgm(path):
    img, comments = read_pgm(path)
    for c in comments:
        if c.startswith("disparity "):
            fields = dict(kv.split("=") for kv in c.split()[1:])
            return img * float(fields["scale"]) + float(fields["offset"])
    raise ParseError("missing disparity offset/scale comment", 0)


# -- PFM ------------------------------------------------------------------------


def read_pfm(path):
    """Load a grayscale PFM; rows are stored bottom-up per convention."""
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip()
        if magic != b"Pf":
            raise ParseError(f"bad PFM magic {magic!r}", 0)
        dims = fh.readline().split()
        if len(dims) != 2:
            raise ParseError("bad PFM dimension line", fh.tell())
        try:
            w, h = int(dims[0]), int(dims[1])
            scale = float(fh.readline())
        except ValueError:
            raise ParseError("non-numeric PFM header field", fh.tell()) from None
        endian = "<" if scale < 0 else ">"
        data = fh.read(4 * w * h)
        if len(data) < 4 * w * h:
            raise ParseError("truncated PFM pixel data", fh.tell())
        img = np.frombuffer(data, dtype=endian + "f4").reshape(h, w)
        return np.ascontiguousarray(img[::-1]).astype(np.float64)


def write_pfm(path, img):
    """Store a 2-D map as little-endian grayscale PFM (scale -1.0)."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 2:
        raise ValueError("PFM export expects a 2-D map")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{img.shape[1]} {img.shape[0]}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(img[::-1].astype("<f4").tobytes())


# -- model container --------------------------------------------------------------


def save_model(path, model: MsAffModel):
    """Binary model dump: magic, JSON manifest, raw little-endian payloads."""
    entries = []
    payloads = []
    for name, group, t in model.named_parameters():
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        entries.append({"name": name, "group": group,
                        "shape": list(arr.shape), "dtype": "<f8"})
        payloads.append(arr.tobytes())
    manifest = {
        "model": {
            "features": model.config.features,
            "cam_ratio": model.config.cam_ratio,
            "mlp_hidden": list(model.mlp_config.hidden),
        },
        "tensors": entries,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in payloads:
            fh.write(p)


def load_model(path) -> MsAffModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ParseError(f"bad model magic {magic!r}", 0)
        hdr = fh.read(4)
        if len(hdr) < 4:
            raise ParseError("truncated manifest length", fh.tell())
        (mlen,) = struct.unpack("<I", hdr)
        blob = fh.read(mlen)
        if len(blob) < mlen:
            raise ParseError("truncated manifest", fh.tell())
        try:
            manifest = json.loads(blob)
        except json.JSONDecodeError as e:
            raise ParseError(f"manifest is not valid JSON: {e.msg}",
                             len(MODEL_MAGIC) + 4 + e.pos) from None
        mc = manifest["model"]
        model = MsAffModel(MsAffConfig(features=mc["features"], cam_ratio=mc["cam_ratio"]),
                           MlpConfig(hidden=tuple(mc["mlp_hidden"])), seed=0)
        params = dict((name, t) for name, _, t in model.named_parameters())
        for e in manifest["tensors"]:
            if e["name"] not in params:
                raise ParseError(f"unknown tensor {e['name']!r} in manifest", fh.tell())
            n = int(np.prod(e["shape"])) if e["shape"] else 1
            raw = fh.read(8 * n)
            if len(raw) < 8 * n:
                raise ParseError(f"truncated payload for {e['name']!r}", fh.tell())
            arr = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"])
            t = params[e["name"]]
            if t.data.shape != arr.shape:
                raise ParseError(f"shape mismatch for {e['name']!r}", fh.tell())
            t.data = arr.astype(np.float64).copy()
    return model


# -- config -----------------------------------------------------------------------


def read_config(path) -> dict:
    """INI-style sectioned key-value config as a dict of dicts (strings)."""
    cp = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        if isinstance(e, configparser.ParsingError) and e.errors:
            lineno = e.errors[0][0]
        else:
            lineno = getattr(e, "lineno", 1) or 1
        offset = sum(len(l.encode("utf-8")) + 1 for l in text.split("\n")[:lineno - 1])
        raise ParseError(f"bad config: {e.message.splitlines()[0]}", offset) from None
    return {s: dict(cp.items(s)) for s in cp.sections()}
