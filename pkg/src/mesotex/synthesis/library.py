"""Patch library: stacked flip-augmented patches, exact overlap search, and the NRTXLIB file format."""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree
from sklearn.decomposition import PCA

from .._validation import MesotexWarning
from ..geometry.bvh import build_bvh
from .patches import FLIP_H, FLIP_V, FeaturePatch, augment_flips, extract_patch
from .poisson import poisson_disk_sample
from .quilting import LAYOUTS, layout_mask

log = logging.getLogger(__name__)

K_CANDIDATES = 4
TAU = 0.2
PCA_DIMS = 32
RETRIEVE = 64
WORLD_SIZE_RADII = 8.0

LIB_MAGIC = b"NRTXLIB\x00"
LIB_VERSION = 1
FLAG_VALID = 4  # bit set when every texel ray hit the surface


class LibraryFormatError(ValueError):
    pass


class OverlapIndex:
    """Exact k-nearest search over flattened overlap regions.

    A kd-tree over a PCA projection proposes candidates; full distances re-rank them, and the
    retrieval widens until the k-th full distance is below the projected distance of every
    unretrieved entry (projection never increases distances, so the result is exact).
    """

    def __init__(self, vectors: np.ndarray, n_components: int = PCA_DIMS, retrieve: int = RETRIEVE):
        self.vectors = np.ascontiguousarray(vectors, dtype=np.float64)
        P, D = self.vectors.shape
        nc = min(n_components, P, D)
        spread = P > 1 and bool(np.any(self.vectors != self.vectors[0]))
        self.pca = PCA(n_components=nc, svd_solver="full").fit(self.vectors) if spread else None
        z = self.pca.transform(self.vectors) if self.pca is not None else self.vectors[:, :1] * 0
        self.tree = cKDTree(z)
        self.retrieve = retrieve
        self.last_evaluated = 0

    def __len__(self):
        return len(self.vectors)

    def query(self, q: np.ndarray, k: int):
        """Indices and squared distances of the k nearest entries, ordered by (distance, index)."""
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        P = len(self.vectors)
        k = min(k, P)
        if P <= self.retrieve or self.pca is None:
            d2 = np.sum((self.vectors - q) ** 2, axis=1)
            order = np.lexsort((np.arange(P), d2))[:k]
            self.last_evaluated = P
            return order, d2[order]
        z = self.pca.transform(q[None])
        m = max(self.retrieve, k)
        while True:
            dl, idx = self.tree.query(z, k=m)
            dl, idx = dl[0], idx[0]
            d2 = np.sum((self.vectors[idx] - q) ** 2, axis=1)
            order = np.lexsort((idx, d2))[:k]
            kth = d2[order[-1]]
            if m >= P or kth * (1 + 1e-9) + 1e-300 < dl[-1] ** 2:
                self.last_evaluated = m
                return idx[order], d2[order]
            m = min(2 * m, P)


class MatchResult(NamedTuple):
    chosen: int
    candidates: np.ndarray
    errors: np.ndarray  # mean per-texel squared error of each candidate
    probs: np.ndarray


def candidate_probabilities(errors, temperature: float = TAU, eps: float = 1e-12) -> np.ndarray:
    errors = np.asarray(errors, dtype=np.float64)
    logits = -errors / (temperature * errors.min() + eps)
    p = np.exp(logits - logits.max())
    return p / p.sum()


@dataclass
class PatchLibrary:
    features: np.ndarray       # (P, R, R, C) float32
    quat: np.ndarray           # (P, R, R, 4) float32
    T_s: np.ndarray            # (P, 3, 3)
    flags: np.ndarray          # (P,) uint32, bits FLIP_H, FLIP_V, FLAG_VALID
    valid: np.ndarray          # (P, R, R) bool
    mean_distance: np.ndarray  # (P,)
    dim_f: int
    overlap: int
    _index: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return len(self.features)

    @property
    def R(self) -> int:
        return self.features.shape[1]

    @property
    def handedness(self) -> np.ndarray:
        fl = self.flags.astype(np.int64)
        h = np.where(fl & FLIP_H, -1, 1) * np.where(fl & FLIP_V, -1, 1)
        return np.broadcast_to(h[:, None, None], self.valid.shape).astype(np.int8)

    @classmethod
    def from_patches(cls, patches: list[FeaturePatch], overlap: Optional[int] = None,
                     augment: bool = True) -> "PatchLibrary":
        if not patches:
            raise ValueError("no patches to build a library from")
        full = [q for p in patches for q in augment_flips(p)] if augment else list(patches)
        R = full[0].R
        overlap = default_overlap(R) if overlap is None else int(overlap)
        if not 1 <= overlap < R:
            raise ValueError(f"overlap must be in [1, {R}), got {overlap}")
        flags = np.array([p.flags | (FLAG_VALID if p.valid.all() else 0) for p in full], dtype=np.uint32)
        return cls(np.stack([p.features for p in full]).astype(np.float32),
                   np.stack([p.quat for p in full]).astype(np.float32),
                   np.stack([p.T_s for p in full]), flags, np.stack([p.valid for p in full]),
                   np.array([p.mean_distance for p in full]), full[0].dim_f, overlap)

    def overlap_vectors(self, layout: str) -> np.ndarray:
        m = layout_mask(layout, self.R, self.overlap)
        return self.features[:, m, :self.dim_f].reshape(self.size, -1).astype(np.float64)

    def index(self, layout: str) -> OverlapIndex:
        if layout not in LAYOUTS:
            raise ValueError(f"unknown overlap layout {layout!r}")
        if layout not in self._index:
            self._index[layout] = OverlapIndex(self.overlap_vectors(layout))
        return self._index[layout]

    def build_indices(self) -> None:
        for layout in LAYOUTS:
            self.index(layout)

    def patch(self, pid: int) -> FeaturePatch:
        fl = int(self.flags[pid])
        return FeaturePatch(self.features[pid].astype(np.float64), self.quat[pid].astype(np.float64),
                            self.T_s[pid].copy(), self.valid[pid].copy(), float(self.mean_distance[pid]),
                            self.dim_f, fl & (FLIP_H | FLIP_V), pid)


def default_overlap(R: int) -> int:
    return max(1, int(round(R / 6)))


def match_candidates(query_tile, library: PatchLibrary, layout: str, rng: np.random.Generator,
                     k: int = K_CANDIDATES, temperature: float = TAU) -> MatchResult:
    """Pick a patch for an R x R tile whose ``layout`` region is already synthesized.

    The k closest overlaps (f channels only) are candidates; one is drawn with probability
    proportional to exp(-e / (temperature * e_min)).
    """
    if library.size < k:
        warnings.warn(f"library has {library.size} patches, fewer than {k} candidates", MesotexWarning)
    m = layout_mask(layout, library.R, library.overlap)
    q = np.asarray(query_tile)[m][:, :library.dim_f]
    ids, d2 = library.index(layout).query(q, k)
    errors = d2 / m.sum()
    probs = candidate_probabilities(errors, temperature)
    chosen = int(ids[rng.choice(len(ids), p=probs)])
    return MatchResult(chosen, ids, errors, probs)


class ExtractionReport(NamedTuple):
    samples: int
    accepted: int
    rejected_misses: int
    rejected_distance: int
    radius: float
    world_size: float


def build_library(mesh, field, target_count: int, R: int = 128, world_size: Optional[float] = None,
                  overlap: Optional[int] = None, rng=None, max_distance_ratio: float = 0.5,
                  miss_tolerance: float = 0.1):
    """Sample centers, scan patches, and augment with flips; returns (library, report)."""
    samples = poisson_disk_sample(mesh, target_count, rng)
    world_size = WORLD_SIZE_RADII * samples.radius if world_size is None else world_size
    bvh = build_bvh(mesh)
    patches, counts = [], {"misses": 0, "distance": 0}
    for i, (c, fr) in enumerate(zip(samples.points, samples.frames)):
        p, why = extract_patch(mesh, bvh, field, c, fr, R, world_size, max_distance_ratio, miss_tolerance)
        if p is None:
            counts[why] += 1
            continue
        p.source = i
        patches.append(p)
    report = ExtractionReport(len(samples.points), len(patches), counts["misses"], counts["distance"],
                              samples.radius, world_size)
    log.info("extracted %d of %d patches (%d missed the surface, %d too curved)", report.accepted,
             report.samples, report.rejected_misses, report.rejected_distance)
    if not patches:
        raise ValueError("every patch was rejected; lower world_size or move the samples")
    return PatchLibrary.from_patches(patches, overlap), report


def write_library(path, lib: PatchLibrary) -> None:
    P, R, _, C = lib.features.shape
    with open(path, "wb") as fh:
        fh.write(LIB_MAGIC)
        fh.write(struct.pack("<IIIIII", LIB_VERSION, P, R, C, lib.dim_f, lib.overlap))
        for k in range(P):
            fh.write(struct.pack("<II", R, C))
            fh.write(np.ascontiguousarray(lib.features[k], "<f4").tobytes())
            fh.write(np.ascontiguousarray(lib.quat[k], "<f4").tobytes())
            fh.write(np.ascontiguousarray(lib.T_s[k], "<f4").tobytes())
            fh.write(struct.pack("<I", int(lib.flags[k])))
            fh.write(np.packbits(lib.valid[k]).tobytes())
            fh.write(struct.pack("<f", float(lib.mean_distance[k])))


def read_library(path) -> PatchLibrary:
    data = Path(path).read_bytes()
    if data[:8] != LIB_MAGIC:
        raise LibraryFormatError(f"{path}: bad magic")
    try:
        version, P, R, C, dim_f, overlap = struct.unpack_from("<IIIIII", data, 8)
    except struct.error as exc:
        raise LibraryFormatError(f"{path}: truncated header") from exc
    if version != LIB_VERSION:
        raise LibraryFormatError(f"{path}: unsupported version {version}")
    nbits = (R * R + 7) // 8
    rec = 8 + 4 * R * R * C + 16 * R * R + 36 + 4 + nbits + 4
    if len(data) < 32 + P * rec:
        raise LibraryFormatError(f"{path}: truncated data")
    feats = np.empty((P, R, R, C), np.float32)
    quat = np.empty((P, R, R, 4), np.float32)
    T_s = np.empty((P, 3, 3))
    flags = np.empty(P, np.uint32)
    valid = np.empty((P, R, R), bool)
    md = np.empty(P)
    off = 32
    for k in range(P):
        r, c = struct.unpack_from("<II", data, off)
        if (r, c) != (R, C):
            raise LibraryFormatError(f"{path}: patch {k} has shape {r}x{c}, expected {R}x{C}")
        off += 8
        feats[k] = np.frombuffer(data, "<f4", R * R * C, off).reshape(R, R, C)
        off += 4 * R * R * C
        quat[k] = np.frombuffer(data, "<f4", R * R * 4, off).reshape(R, R, 4)
        off += 16 * R * R
        T_s[k] = np.frombuffer(data, "<f4", 9, off).reshape(3, 3)
        off += 36
        flags[k] = struct.unpack_from("<I", data, off)[0]
        off += 4
        valid[k] = np.unpackbits(np.frombuffer(data, np.uint8, nbits, off))[:R * R].reshape(R, R).astype(bool)
        off += nbits
        md[k] = struct.unpack_from("<f", data, off)[0]
        off += 4
    return PatchLibrary(feats, quat, T_s, flags, valid, md, int(dim_f), int(overlap))
