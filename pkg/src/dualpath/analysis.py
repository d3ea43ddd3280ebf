"""Dictionary analysis: atom angles, greedy biggest-angle pairing, montages, traces.

A dictionary is the output-layer weight of a network read column by column;
each column (atom) is a patch. Rectifier networks tend to learn atoms in
near-opposite pairs; these tools measure that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import ContractError
from .imaging import GrayImage
from .nn import Activation, NetworkParams, activation_eval

__all__ = [
    "Dictionary",
    "PairOrdering",
    "TRACE_COLUMNS",
    "angle_matrix",
    "greedy_pair_sort",
    "angle_histogram",
    "reversed_pair_fraction",
    "activation_trace",
    "atom_montage",
]


@dataclass
class Dictionary:
    """Atoms as the columns of a ``d x K`` matrix."""

    atoms: np.ndarray

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        if self.atoms.ndim != 2:
            raise ContractError(f"atoms must be a d x K matrix, got shape {self.atoms.shape}")
        norms = np.linalg.norm(self.atoms, axis=0)
        zero = np.flatnonzero(norms <= 1e-12)
        if zero.size:
            raise ContractError(f"zero-norm atoms at columns {zero.tolist()}")

    @classmethod
    def from_params(cls, params: NetworkParams) -> "Dictionary":
        """The output layer's atoms (``W2 = W1^T`` columns for tied autoencoders)."""
        return cls(params.weight(len(params.layers) - 1))

    @property
    def size(self) -> int:
        return self.atoms.shape[1]

    @property
    def dim(self) -> int:
        return self.atoms.shape[0]


def _atoms(D) -> np.ndarray:
    return D.atoms if isinstance(D, Dictionary) else Dictionary(D).atoms


def angle_matrix(D) -> np.ndarray:
    """Pairwise atom angles in degrees; symmetric with a zero diagonal."""
    A = _atoms(D)
    U = A / np.linalg.norm(A, axis=0)
    cos = np.clip(U.T @ U, -1.0, 1.0)
    ang = np.degrees(np.arccos(cos))
    ang = 0.5 * (ang + ang.T)
    np.fill_diagonal(ang, 0.0)
    return ang


@dataclass
class PairOrdering:
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)
    leftover: Optional[int] = None

    @property
    def angles(self) -> np.ndarray:
        return np.array([a for _, _, a in self.pairs])

    def order(self) -> list:
        """Atom indices pair by pair, leftover last."""
        out = [k for i, j, _ in self.pairs for k in (i, j)]
        if self.leftover is not None:
            out.append(self.leftover)
        return out

    def partner(self, unit: int) -> int:
        for i, j, _ in self.pairs:
            if unit == i:
                return j
            if unit == j:
                return i
        raise ContractError(f"atom {unit} is not in any pair")


def greedy_pair_sort(D) -> PairOrdering:
    """Repeatedly pull out the pair of remaining atoms with the largest angle.

    Ties go to the smallest first index, then the smallest second index.
    An odd number of atoms leaves one leftover.
    """
    ang = angle_matrix(D)
    K = ang.shape[0]
    if K < 2:
        raise ContractError("need at least two atoms to pair")
    work = np.where(np.triu(np.ones((K, K), dtype=bool), k=1), ang, -np.inf)
    alive = np.ones(K, dtype=bool)
    result = PairOrdering()
    for _ in range(K // 2):
        # argmax scans row-major, which realizes the (i, then j) tie-break
        i, j = divmod(int(np.argmax(work)), K)
        result.pairs.append((i, j, float(ang[i, j])))
        for k in (i, j):
            alive[k] = False
            work[k, :] = -np.inf
            work[:, k] = -np.inf
    if K % 2:
        result.leftover = int(np.flatnonzero(alive)[0])
    return result


def angle_histogram(D, bin_width: float = 5.0):
    """Counts of pairwise angles (all ``i < j``) in bins of ``bin_width`` over [0, 180].

    Returns ``(counts, edges)``; the last bin is closed at 180.
    """
    n_bins = 180.0 / bin_width if bin_width > 0 else 0.0
    if bin_width <= 0 or abs(n_bins - round(n_bins)) > 1e-9:
        raise ContractError(f"bin width {bin_width} does not divide 180")
    n_bins = int(round(n_bins))
    ang = angle_matrix(D)
    iu = np.triu_indices(ang.shape[0], k=1)
    edges = np.linspace(0.0, 180.0, n_bins + 1)
    counts, _ = np.histogram(ang[iu], bins=edges)
    return counts, edges


def reversed_pair_fraction(D, threshold: float = 160.0, ordering: PairOrdering = None) -> float:
    """Fraction of greedy pairs whose angle exceeds ``threshold`` degrees."""
    if not 90.0 < threshold <= 180.0:
        raise ContractError(f"threshold must lie in (90, 180], got {threshold}")
    ordering = ordering or greedy_pair_sort(D)
    angles = ordering.angles
    return float(np.mean(angles > threshold)) if angles.size else 0.0


TRACE_COLUMNS = ("unit_pre", "companion_pre", "equivalent_post")


def activation_trace(params: NetworkParams, patches, unit: int, companion: int = None,
                     layer: int = 0) -> np.ndarray:
    """Responses of one hidden unit and its companion over a set of patches.

    For a dual-pathway layer with affine output ``z`` and threshold ``t`` the
    columns are the two rectifier inputs ``z + t`` and ``t - z`` of the
    expanded pair and the combined output ``g(z; t)``. For a rectifier layer
    the companion unit (e.g. the greedy-pair partner) must be given; the
    columns are both pre-activations and ``max(0, z_u) - max(0, z_c)``.

    Rows are sorted by the first column in descending order.
    """
    spec = params.layers[layer]
    if not 0 <= unit < spec.out_dim:
        raise ContractError(f"unit {unit} out of range for layer of width {spec.out_dim}")
    X = np.asarray(patches, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.in_dim:
        raise ContractError(f"patches must have {spec.in_dim} columns")
    a = X
    for l in range(layer):
        a = activation_eval(params.layers[l].activation, a @ params.weight(l).T + params.biases[l])
    W, b = params.weight(layer), params.biases[layer]
    z = a @ W[unit] + b[unit]
    if spec.activation.variant is Activation.DUAL:
        t = spec.activation.t[unit]
        cols = np.column_stack([z + t, t - z, np.maximum(z + t, 0) - np.maximum(t - z, 0)])
    elif spec.activation.variant is Activation.RECTIFIER:
        if companion is None:
            raise ContractError("rectifier layers need an explicit companion unit")
        if not 0 <= companion < spec.out_dim or companion == unit:
            raise ContractError(f"invalid companion unit {companion}")
        zc = a @ W[companion] + b[companion]
        cols = np.column_stack([z, zc, np.maximum(z, 0) - np.maximum(zc, 0)])
    else:
        raise ContractError(f"no companion semantics for {spec.activation.variant.value} layers")
    order = np.argsort(-cols[:, 0], kind="stable")
    return cols[order]


def montage_shape(n_atoms: int, patch_side: int) -> Tuple[int, int, int, int]:
    """``(rows, cols, height, width)`` of the tile grid.

    ``cols`` is even so pairs sit side by side; tiles are separated by
    1-pixel gaps with no outer border.
    """
    side = math.ceil(math.sqrt(n_atoms))
    cols = max(2, 2 * math.ceil(side / 2))
    rows = math.ceil(n_atoms / cols)
    return rows, cols, rows * patch_side + rows - 1, cols * patch_side + cols - 1


def atom_montage(D, patch_side: int, ordering: PairOrdering = None) -> GrayImage:
    """Tile the atoms in greedy-pair order, each rescaled to [0, 1] on its own.

    A constant atom becomes a uniform 0.5 tile. Gaps and unused cells are 0.
    """
    A = _atoms(D)
    d, K = A.shape
    if patch_side < 1 or patch_side * patch_side != d:
        raise ContractError(f"atom length {d} is not {patch_side}^2")
    ordering = ordering or (greedy_pair_sort(A) if K >= 2 else PairOrdering(leftover=0))
    rows, cols, h, w = montage_shape(K, patch_side)
    canvas = np.zeros((h, w))
    for slot, k in enumerate(ordering.order()):
        atom = A[:, k]
        lo, hi = atom.min(), atom.max()
        tile = np.full(d, 0.5) if hi - lo <= 0 else (atom - lo) / (hi - lo)
        r, c = divmod(slot, cols)
        y, x = r * (patch_side + 1), c * (patch_side + 1)
        canvas[y:y + patch_side, x:x + patch_side] = tile.reshape(patch_side, patch_side)
    return GrayImage(canvas)
