"""Label-mask volumes: NRRD subset I/O and isotropic nearest-neighbour resampling.

Volumes are held as ``(nx, ny, nz)`` arrays indexed ``[i, j, k]``; on disk the
payload is x-fastest, which is Fortran order for that array.
"""
from __future__ import annotations

import gzip
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateTarget, InvalidInput, IoError, SizeMismatch, UnsupportedHeaderField

BACKGROUND, BASE, SPICULATION, LOBULATION = 0, 1, 2, 3
DEFAULT_ALPHABET = frozenset({BACKGROUND, BASE, SPICULATION, LOBULATION})

_TYPES = {
    "uint8": np.uint8, "uchar": np.uint8, "unsigned char": np.uint8, "uint8_t": np.uint8,
    "int16": np.int16, "short": np.int16, "short int": np.int16, "signed short": np.int16,
    "signed short int": np.int16, "int16_t": np.int16,
    "uint16": np.uint16, "ushort": np.uint16, "unsigned short": np.uint16,
    "unsigned short int": np.uint16, "uint16_t": np.uint16,
}
_ALPHABET_KEY = "label_alphabet"


@dataclass(frozen=True, eq=False)
class MaskVolume:
    """3D class-label grid with physical geometry.

    ``origin`` is the physical position of the centre of voxel ``(0, 0, 0)``.
    """

    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    label_alphabet: frozenset[int] = field(default=DEFAULT_ALPHABET)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise InvalidInput(f"labels must be 3D, got shape {labels.shape}")
        if labels.dtype != np.uint8:
            if labels.size and (labels.min() < 0 or labels.max() > 255):
                raise InvalidInput("labels do not fit in uint8")
            labels = labels.astype(np.uint8)
        labels = np.array(labels, dtype=np.uint8, copy=True)
        labels.setflags(write=False)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or not all(math.isfinite(s) and s > 0 for s in spacing):
            raise InvalidInput(f"spacing must be three positive finite values, got {self.spacing}")
        if len(origin) != 3 or not all(math.isfinite(o) for o in origin):
            raise InvalidInput(f"origin must be three finite values, got {self.origin}")
        alphabet = frozenset(int(a) for a in self.label_alphabet)
        present = np.unique(labels)
        stray = set(present.tolist()) - alphabet
        if stray:
            raise InvalidInput(f"labels {sorted(stray)} not in alphabet {sorted(alphabet)}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "label_alphabet", alphabet)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.labels.shape)

    def flat_labels(self) -> np.ndarray:
        """Labels as a flat x-fastest array."""
        return self.labels.ravel(order="F")

    def foreground(self) -> np.ndarray:
        return self.labels != BACKGROUND

    def voxel_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing[axis] * np.arange(self.dims[axis])

    def with_labels(self, labels, label_alphabet=None) -> "MaskVolume":
        return MaskVolume(labels, self.spacing, self.origin,
                          self.label_alphabet if label_alphabet is None else label_alphabet)

    def __eq__(self, other):
        if not isinstance(other, MaskVolume):
            return NotImplemented
        return (self.dims == other.dims and np.array_equal(self.labels, other.labels)
                and self.spacing == other.spacing and self.origin == other.origin
                and self.label_alphabet == other.label_alphabet)

    __hash__ = None


def _parse_vector(text: str) -> list[float] | None:
    text = text.strip()
    if text == "none":
        return None
    m = re.fullmatch(r"\(([^)]*)\)", text)
    if not m:
        raise UnsupportedHeaderField(f"cannot parse vector {text!r}")
    return [float(t) for t in m.group(1).split(",")]


def _split_vectors(text: str) -> list[str]:
    return re.findall(r"\([^)]*\)|none", text)


def read_nrrd(path) -> MaskVolume:
    """Read a 3D label mask from an attached-payload NRRD file.

    Only raw or gzip payloads with axis-aligned space directions are accepted.
    Nonzero voxels become 1 unless the file carries a ``label_alphabet``
    key/value entry, in which case values are kept and checked against it.
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    if not re.match(rb"NRRD000[1-5]\n", blob[:9]):
        raise UnsupportedHeaderField("missing NRRD magic line")
    end = blob.find(b"\n\n")
    if end < 0:
        raise SizeMismatch("header is not terminated by a blank line")
    header_lines = blob[:end].decode("ascii", errors="replace").split("\n")[1:]
    payload = blob[end + 2:]

    fields: dict[str, str] = {}
    keyvals: dict[str, str] = {}
    for line in header_lines:
        if line.startswith("#") or not line.strip():
            continue
        if ":=" in line:
            k, v = line.split(":=", 1)
            keyvals[k.strip()] = v.strip()
        elif ": " in line:
            k, v = line.split(": ", 1)
            fields[k.strip().lower()] = v.strip()
        else:
            raise UnsupportedHeaderField(f"unparseable header line {line!r}")

    if int(fields.get("dimension", "0")) != 3:
        raise UnsupportedHeaderField(f"dimension must be 3, got {fields.get('dimension')}")
    if "data file" in fields or "datafile" in fields:
        raise UnsupportedHeaderField("detached payloads are not supported")
    for skip in ("line skip", "lineskip", "byte skip", "byteskip"):
        if int(fields.get(skip, "0")) != 0:
            raise UnsupportedHeaderField(f"{skip} is not supported")
    type_name = fields.get("type", "").lower()
    if type_name not in _TYPES:
        raise UnsupportedHeaderField(f"unsupported type {type_name!r}")
    dtype = np.dtype(_TYPES[type_name])
    if dtype.itemsize > 1 and fields.get("endian", "").lower() != "little":
        raise UnsupportedHeaderField("multi-byte payloads must declare 'endian: little'")
    encoding = fields.get("encoding", "").lower()
    if encoding not in ("raw", "gzip", "gz"):
        raise UnsupportedHeaderField(f"unsupported encoding {encoding!r}")

    try:
        sizes = tuple(int(s) for s in fields["sizes"].split())
    except KeyError:
        raise UnsupportedHeaderField("missing 'sizes' field") from None
    if len(sizes) != 3 or min(sizes) < 1:
        raise UnsupportedHeaderField(f"bad sizes {sizes}")

    if "space directions" in fields:
        vectors = [_parse_vector(v) for v in _split_vectors(fields["space directions"])]
        if len(vectors) != 3 or any(v is None or len(v) != 3 for v in vectors):
            raise UnsupportedHeaderField("space directions must be three 3-vectors")
        directions = np.array(vectors, dtype=float)
        off_diag = directions[~np.eye(3, dtype=bool)]
        if np.any(off_diag != 0.0):
            raise UnsupportedHeaderField("only diagonal space directions are supported")
        spacing = tuple(float(abs(directions[i, i])) for i in range(3))
    elif "spacings" in fields:
        spacing = tuple(abs(float(s)) for s in fields["spacings"].split())
    else:
        spacing = (1.0, 1.0, 1.0)
    if len(spacing) != 3 or not all(math.isfinite(s) and s > 0 for s in spacing):
        raise UnsupportedHeaderField(f"degenerate spacing {spacing}")

    origin = (0.0, 0.0, 0.0)
    if "space origin" in fields:
        vec = _parse_vector(fields["space origin"])
        if vec is None or len(vec) != 3:
            raise UnsupportedHeaderField("space origin must be a 3-vector")
        origin = tuple(vec)

    if encoding in ("gzip", "gz"):
        try:
            payload = gzip.decompress(payload)
        except (OSError, EOFError) as exc:
            raise SizeMismatch(f"corrupt gzip payload: {exc}") from exc
    n = sizes[0] * sizes[1] * sizes[2]
    if len(payload) != n * dtype.itemsize:
        raise SizeMismatch(f"payload has {len(payload)} bytes, expected {n * dtype.itemsize}")
    values = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).reshape(sizes, order="F")

    if _ALPHABET_KEY in keyvals:
        alphabet = frozenset(int(t) for t in keyvals[_ALPHABET_KEY].split())
        if values.size and (values.min() < 0 or values.max() > 255):
            raise InvalidInput("label values do not fit in uint8")
        labels = values.astype(np.uint8)
    else:
        alphabet = DEFAULT_ALPHABET
        labels = (values != 0).astype(np.uint8)
    return MaskVolume(labels, spacing, origin, alphabet)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_nrrd(vol: MaskVolume, path, encoding: str = "gzip", comments=()) -> None:
    """Write ``vol`` as NRRD0004 with an attached uint8 payload."""
    if encoding not in ("raw", "gzip"):
        raise InvalidInput(f"encoding must be 'raw' or 'gzip', got {encoding!r}")
    sx, sy, sz = vol.spacing
    lines = ["NRRD0004"]
    lines += [f"# {c}" for c in comments]
    lines += [
        "type: uint8",
        "dimension: 3",
        "space dimension: 3",
        "sizes: {} {} {}".format(*vol.dims),
        f"space directions: ({_fmt(sx)},0,0) (0,{_fmt(sy)},0) (0,0,{_fmt(sz)})",
        "kinds: domain domain domain",
        f"encoding: {encoding}",
        "space origin: ({},{},{})".format(*(_fmt(o) for o in vol.origin)),
        f"{_ALPHABET_KEY}:=" + " ".join(str(a) for a in sorted(vol.label_alphabet)),
    ]
    payload = vol.flat_labels().tobytes()
    if encoding == "gzip":
        # mtime pinned so identical volumes give identical bytes
        payload = gzip.compress(payload, compresslevel=6, mtime=0)
    try:
        with open(path, "wb") as fh:
            fh.write(("\n".join(lines) + "\n\n").encode("ascii"))
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def resample_isotropic(vol: MaskVolume, target: float | None = None) -> MaskVolume:
    """Nearest-neighbour resample onto a cubic grid of spacing ``target`` mm.

    ``target`` defaults to the finest input spacing. The physical extent of the
    volume is kept; output voxel centres are looked up in the input grid with
    ties going to the lower index.
    """
    if target is None:
        target = min(vol.spacing)
    target = float(target)
    if not math.isfinite(target) or target <= 0:
        raise DegenerateTarget(f"target spacing must be positive and finite, got {target}")

    index = []
    new_origin = []
    for axis in range(3):
        n, s, o = vol.dims[axis], vol.spacing[axis], vol.origin[axis]
        extent = n * s
        m = max(1, int(round(extent / target)))
        lo = o - 0.5 * s
        centers = lo + (np.arange(m) + 0.5) * target
        u = (centers - o) / s
        # ties go to the lower index, also when rounding nudges u past the midpoint
        idx = np.clip(np.ceil(u - 0.5 - 1e-9), 0, n - 1).astype(np.intp)
        index.append(idx)
        new_origin.append(lo + 0.5 * target)

    if all(len(ix) == n and np.array_equal(ix, np.arange(n)) for ix, n in zip(index, vol.dims)) \
            and all(s == target for s in vol.spacing):
        return MaskVolume(vol.labels, vol.spacing, vol.origin, vol.label_alphabet)
    labels = vol.labels[np.ix_(*index)]
    return MaskVolume(labels, (target,) * 3, tuple(new_origin), vol.label_alphabet)
