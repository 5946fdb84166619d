"""Offline weight decomposition into low-rank factors plus a residual.

The factorization uses a cyclic one-sided Jacobi SVD (accurate and simple at
the matrix sizes this package targets, <= 4096 x 4096) and splits the singular
values symmetrically between the two projection factors by default, so both
the intermediate activations and the second factor carry amplified leading
channels. Also hosts the static selection of precision-sensitive channels
used by the mixed-width low-rank kernels.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import DataError, FileFormatError, ParameterError
from .tensor import as_tensor2d, matmul_ref, read_svt, write_svt

JACOBI_TOL = 1e-10
JACOBI_MAX_SWEEPS = 60

SIGMA_SPLIT_MODES = ("symmetric", "l2")

DEFAULT_L1_SENSITIVE = 128
DEFAULT_L2_SENSITIVE = 4


@dataclass(frozen=True)
class LowRankFactors:
    """Rank-k factor pair: l1 (d_in x k), l2 (k x d_out), singular values descending."""

    l1: np.ndarray
    l2: np.ndarray
    singular_values: np.ndarray
    rank: int


@dataclass(frozen=True)
class DecomposedWeight:
    """Low-rank factors plus the exact elementwise residual w - l1 @ l2."""

    factors: LowRankFactors
    residual: np.ndarray


@dataclass(frozen=True)
class SaliencyReport:
    """Sensitive-channel selection for the two projection stages.

    ``l1_sensitive`` ranks input channels by calibration max-abs (descending);
    ``l2_sensitive`` is always the leading singular directions.
    """

    l1_sensitive: np.ndarray
    l2_sensitive: np.ndarray
    channel_scores: np.ndarray


def jacobi_svd(w) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full SVD via one-sided Jacobi in float64.

    Returns (u, s, vt) with singular values sorted descending, so
    w ~= u @ diag(s) @ vt. Columns belonging to zero singular values are left
    as zero vectors in u.
    """
    a = np.asarray(w, dtype=np.float64)
    transposed = a.shape[0] < a.shape[1]
    if transposed:
        a = a.T
    mat = np.ascontiguousarray(a.copy())
    n = mat.shape[1]
    vmat = np.eye(n, dtype=np.float64)
    kernels().jacobi_orthogonalize(mat, vmat, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    norms = np.sqrt(np.add.reduce(mat * mat, axis=0))
    order = np.argsort(-norms, kind="stable")
    norms = norms[order]
    mat = mat[:, order]
    vmat = vmat[:, order]
    safe = np.where(norms > 0.0, norms, 1.0)
    u = mat / safe[None, :]
    if transposed:
        return vmat, norms, u.T
    return u, norms, vmat.T


def truncated_svd(w, k: int, sigma_split: str = "symmetric") -> LowRankFactors:
    """Best rank-k factorization of ``w``.

    ``sigma_split='symmetric'`` folds sqrt(sigma) into both factors;
    ``'l2'`` keeps the full sigma in the second factor (l1 orthonormal).
    """
    w = as_tensor2d(w, "w")
    max_rank = min(w.shape)
    if not 1 <= k <= max_rank:
        raise ParameterError(f"rank k={k} not in [1, {max_rank}] for shape {w.shape}")
    if sigma_split not in SIGMA_SPLIT_MODES:
        raise ParameterError(f"sigma_split must be one of {SIGMA_SPLIT_MODES}, got {sigma_split!r}")
    u, s, vt = jacobi_svd(w)
    sk = s[:k].copy()
    if sigma_split == "symmetric":
        root = np.sqrt(sk)
        l1 = (u[:, :k] * root[None, :]).astype(np.float32)
        l2 = (root[:, None] * vt[:k, :]).astype(np.float32)
    else:
        l1 = u[:, :k].astype(np.float32)
        l2 = (sk[:, None] * vt[:k, :]).astype(np.float32)
    return LowRankFactors(l1=l1, l2=l2, singular_values=sk, rank=k)


def decompose(w, k: int, sigma_split: str = "symmetric") -> DecomposedWeight:
    """Factor ``w`` and keep the elementwise residual.

    The residual is computed as w - matmul_ref(l1, l2) in float32, so
    l1 @ l2 + residual reconstructs w up to one 32-bit rounding of the
    product.
    """
    w = as_tensor2d(w, "w")
    factors = truncated_svd(w, k, sigma_split)
    approx = matmul_ref(factors.l1, factors.l2)
    residual = (w - approx).astype(np.float32)
    return DecomposedWeight(factors=factors, residual=residual)


def identify_l1_sensitive(calib_acts, n_sensitive: int) -> np.ndarray:
    """Rank input channels by max-abs over calibration rows, top n first.

    Ties break toward the lower channel index. The order of calibration rows
    does not matter.
    """
    calib = as_tensor2d(calib_acts, "calib_acts")
    if calib.shape[0] < 1:
        raise DataError("calibration set is empty")
    d_in = calib.shape[1]
    if not 0 <= n_sensitive <= d_in:
        raise ParameterError(f"n_sensitive={n_sensitive} not in [0, {d_in}]")
    scores = np.abs(calib.astype(np.float64)).max(axis=0)
    order = np.argsort(-scores, kind="stable")  # stable: equal scores keep index order
    return order[:n_sensitive].astype(np.int64)


def channel_scores(calib_acts) -> np.ndarray:
    """Per-channel max-abs over calibration rows (the saliency score)."""
    calib = as_tensor2d(calib_acts, "calib_acts")
    return np.abs(calib.astype(np.float64)).max(axis=0)


def l2_sensitive_indices(k: int, n_sensitive: int) -> np.ndarray:
    """Leading singular directions are statically the sensitive l2 channels."""
    if n_sensitive < 0:
        raise ParameterError(f"n_sensitive must be >= 0, got {n_sensitive}")
    return np.arange(min(k, n_sensitive), dtype=np.int64)


def build_saliency_report(
    calib_acts,
    k: int,
    n_l1: int = DEFAULT_L1_SENSITIVE,
    n_l2: int = DEFAULT_L2_SENSITIVE,
) -> SaliencyReport:
    """Select sensitive channels for both stages, clamped to the dimensions."""
    calib = as_tensor2d(calib_acts, "calib_acts")
    d_in = calib.shape[1]
    return SaliencyReport(
        l1_sensitive=identify_l1_sensitive(calib, min(n_l1, d_in)),
        l2_sensitive=l2_sensitive_indices(k, n_l2),
        channel_scores=channel_scores(calib),
    )


# ---------------------------------------------------------------------------
# Decomposition manifest
# ---------------------------------------------------------------------------
#
# A decomposition on disk is a directory of SVT1 tensors plus manifest.json
# naming them. Singular values travel as a 1 x k tensor; sensitive indices,
# when present, live in a JSON sidecar.

MANIFEST_NAME = "manifest.json"


def write_decomposition(out_dir, decomp: DecomposedWeight, saliency: SaliencyReport | None = None,
                        sigma_split: str = "symmetric") -> str:
    """Write factors, residual, singular values, and the manifest to a directory."""
    os.makedirs(out_dir, exist_ok=True)
    files = {
        "l1": "l1.svt",
        "l2": "l2.svt",
        "residual": "residual.svt",
        "singular_values": "singular_values.svt",
    }
    write_svt(os.path.join(out_dir, files["l1"]), decomp.factors.l1)
    write_svt(os.path.join(out_dir, files["l2"]), decomp.factors.l2)
    write_svt(os.path.join(out_dir, files["residual"]), decomp.residual)
    write_svt(
        os.path.join(out_dir, files["singular_values"]),
        decomp.factors.singular_values.reshape(1, -1).astype(np.float32),
    )
    sensitive_file = None
    if saliency is not None:
        sensitive_file = "sensitive.json"
        payload = {
            "l1_sensitive": [int(i) for i in saliency.l1_sensitive],
            "l2_sensitive": [int(i) for i in saliency.l2_sensitive],
            "channel_scores": [float(v) for v in saliency.channel_scores],
        }
        with open(os.path.join(out_dir, sensitive_file), "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    manifest = {
        "format": "svd-decomposition-v1",
        "rank": decomp.factors.rank,
        "sigma_split": sigma_split,
        "files": files,
        "sensitive": sensitive_file,
    }
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_decomposition(manifest_path) -> tuple[DecomposedWeight, SaliencyReport | None]:
    """Load a decomposition directory back from its manifest."""
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("format") != "svd-decomposition-v1":
        raise FileFormatError(f"{manifest_path}: unknown manifest format {manifest.get('format')!r}")
    base = os.path.dirname(os.path.abspath(manifest_path))
    files = manifest["files"]
    l1 = read_svt(os.path.join(base, files["l1"]))
    l2 = read_svt(os.path.join(base, files["l2"]))
    residual = read_svt(os.path.join(base, files["residual"]))
    sv = read_svt(os.path.join(base, files["singular_values"]))[0].astype(np.float64)
    rank = int(manifest["rank"])
    if l1.shape[1] != rank or l2.shape[0] != rank or sv.shape[0] != rank:
        raise FileFormatError(f"{manifest_path}: factor shapes disagree with rank {rank}")
    factors = LowRankFactors(l1=l1, l2=l2, singular_values=sv, rank=rank)
    saliency = None
    if manifest.get("sensitive"):
        with open(os.path.join(base, manifest["sensitive"])) as f:
            payload = json.load(f)
        saliency = SaliencyReport(
            l1_sensitive=np.asarray(payload["l1_sensitive"], dtype=np.int64),
            l2_sensitive=np.asarray(payload["l2_sensitive"], dtype=np.int64),
            channel_scores=np.asarray(payload["channel_scores"], dtype=np.float64),
        )
    return DecomposedWeight(factors=factors, residual=residual), saliency
