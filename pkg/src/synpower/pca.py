"""PCA via a Jacobi symmetric eigensolver, with the Gram-matrix shortcut for
wide data (fewer rows than features)."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

FORMAT_VERSION = 1


class PCAError(ValueError):
    pass


def _round_robin(n: int):
    """n-1 rounds of disjoint index pairs covering every pair once (n even)."""
    players = list(range(n))
    for _ in range(n - 1):
        yield [(players[i], players[n - 1 - i]) for i in range(n // 2)]
        players = [players[0], players[-1]] + players[1:-1]


def jacobi_eigh(A, tol: float = 1e-12, max_sweeps: int = 100) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and column eigenvectors of a symmetric matrix.

    Cyclic Jacobi with a round-robin ordering, so each round rotates n/2
    disjoint (p, q) planes at once.  Stops when the off-diagonal Frobenius norm
    is below ``tol`` times the matrix norm.
    """
    A = np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise PCAError(f"expected a square matrix, got shape {A.shape}")
    if not np.allclose(A, A.T, rtol=0, atol=1e-10 * max(1.0, np.abs(A).max(initial=0.0))):
        raise PCAError("matrix is not symmetric")
    n0 = A.shape[0]
    A = 0.5 * (A + A.T)
    n = n0 + (n0 % 2)
    if n != n0:
        # pad with an isolated dummy row/column
        A = np.pad(A, ((0, 1), (0, 1)))
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if scale == 0:
        return np.zeros(n0), np.eye(n0)
    rounds = list(_round_robin(n)) if n > 1 else []
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale:
            break
        for pairs in rounds:
            P = np.array([min(p) for p in pairs])
            Q = np.array([max(p) for p in pairs])
            apq = A[P, Q]
            app = A[P, P]
            aqq = A[Q, Q]
            active = apq != 0
            c = np.ones(len(P))
            s = np.zeros(len(P))
            if active.any():
                # a denormal apq overflows tau; t then rounds to 0, which is harmless
                with np.errstate(over="ignore", divide="ignore"):
                    tau = (aqq[active] - app[active]) / (2.0 * apq[active])
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
                c[active] = 1.0 / np.sqrt(1.0 + t * t)
                s[active] = t * c[active]
            else:
                continue
            # columns: A <- A J
            Ap, Aq = A[:, P].copy(), A[:, Q].copy()
            A[:, P] = c * Ap - s * Aq
            A[:, Q] = s * Ap + c * Aq
            # rows: A <- J^T A
            Ap, Aq = A[P, :].copy(), A[Q, :].copy()
            A[P, :] = c[:, None] * Ap - s[:, None] * Aq
            A[Q, :] = s[:, None] * Ap + c[:, None] * Aq
            Vp, Vq = V[:, P].copy(), V[:, Q].copy()
            V[:, P] = c * Vp - s * Vq
            V[:, Q] = s * Vp + c * Vq
    else:
        raise PCAError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    vals = np.diag(A)[:n0]
    vecs = V[:n0, :n0]
    # stable sort keeps Jacobi output order among ties
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[:, order]


def _fix_signs(components: np.ndarray) -> np.ndarray:
    out = components.copy()
    for i, row in enumerate(out):
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            out[i] = -row
    return out


def _complete_basis(basis: np.ndarray, k: int, d: int) -> np.ndarray:
    """Extend orthonormal rows to k rows with Gram-Schmidt over the unit vectors."""
    rows = [r for r in basis]
    for j in range(d):
        if len(rows) >= k:
            break
        v = np.zeros(d)
        v[j] = 1.0
        for r in rows:
            v -= (r @ v) * r
        for r in rows:
            v -= (r @ v) * r
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            rows.append(v / norm)
    return np.array(rows).reshape(len(rows), d)


@dataclass(frozen=True, eq=False)
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # k x d, orthonormal rows
    eigenvalues: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]

    def __eq__(self, other):
        if not isinstance(other, PCAModel):
            return NotImplemented
        return (np.array_equal(self.mean, other.mean) and np.array_equal(self.components, other.components)
                and np.array_equal(self.eigenvalues, other.eigenvalues))


def fit(X, k: int, method: str = "auto", tol: float = 1e-12) -> PCAModel:
    """Top-k principal components of the rows of X (covariance with 1/(rows-1)).

    ``method`` is ``"gram"``, ``"covariance"`` or ``"auto"`` (Gram when rows < d).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise PCAError(f"PCA needs at least 2 rows, got shape {X.shape}")
    r, d = X.shape
    if not 1 <= k <= min(r - 1, d):
        raise PCAError(f"k={k} outside 1..{min(r - 1, d)} for a {r}x{d} matrix")
    if method == "auto":
        method = "gram" if r < d else "covariance"
    mean = X.mean(axis=0)
    Xc = X - mean
    if method == "covariance":
        vals, vecs = jacobi_eigh(Xc.T @ Xc / (r - 1), tol)
        comps = vecs[:, :k].T
        vals = vals[:k]
    elif method == "gram":
        vals, vecs = jacobi_eigh(Xc @ Xc.T / (r - 1), tol)
        vals = vals[:k]
        floor = 1e-10 * max(vals[0], 0.0) if len(vals) else 0.0
        good = vals > max(floor, 0.0)
        comps = (Xc.T @ vecs[:, :k][:, good]) / np.sqrt((r - 1) * vals[good])
        # zero-variance directions have no preimage; fill them deterministically
        comps = _complete_basis(comps.T, k, d)
    else:
        raise PCAError(f"unknown PCA method {method!r}")
    vals = np.clip(vals, 0.0, None)
    return PCAModel(mean, _fix_signs(comps), vals)


def transform(model: PCAModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.d:
        raise PCAError(f"data has {X.shape[1]} columns, model expects {model.d}")
    return (X - model.mean) @ model.components.T


def model_to_dict(model: PCAModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "d": model.d,
        "k": model.k,
        "mean": model.mean.tolist(),
        "components": model.components.tolist(),
        "eigenvalues": model.eigenvalues.tolist(),
    }


def model_from_dict(doc: dict) -> PCAModel:
    if doc.get("format_version") != FORMAT_VERSION:
        raise PCAError(f"unsupported PCA model version {doc.get('format_version')!r}; "
                       f"supported: {FORMAT_VERSION}")
    try:
        d, k = int(doc["d"]), int(doc["k"])
        mean = np.array(doc["mean"], dtype=np.float64)
        comps = np.array(doc["components"], dtype=np.float64)
        vals = np.array(doc["eigenvalues"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise PCAError(f"malformed PCA model: {exc}") from exc
    if mean.shape != (d,) or comps.shape != (k, d) or vals.shape != (k,):
        raise PCAError(f"PCA model shapes {mean.shape}, {comps.shape}, {vals.shape} "
                       f"disagree with d={d}, k={k}")
    return PCAModel(mean, comps, vals)


def save_model(model: PCAModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n", encoding="utf-8")


def load_model(path) -> PCAModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PCAError(f"cannot parse PCA model {path}: {exc}") from exc
    return model_from_dict(doc)
