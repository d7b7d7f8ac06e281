"""Independent reference computations used as test oracles.

Nothing here imports the package's numerical code: the references are plain
numpy, finite differences, scipy quadrature/distributions or nibabel.
"""
from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------- MLP finite differences

def mlp_forward(weights, biases, x, final="linear"):
    h = x
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if i < len(weights) - 1:
            h = np.maximum(h, 0.0)
    if final == "sigmoid":
        h = 1.0 / (1.0 + np.exp(-h))
    return h


def preactivations(weights, biases, x):
    out, h = [], x
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        out.append(z)
        h = np.maximum(z, 0.0) if i < len(weights) - 1 else z
    return out[:-1]


def central_difference(f, arrays, step=1e-4):
    """Central finite-difference gradient of scalar ``f()`` over each array (mutated in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + step
            hi = f()
            a[idx] = old - step
            lo = f()
            a[idx] = old
            g[idx] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


# ---------------------------------------------------------------- gradient penalty, by hand

def two_layer_input_gradient(W0, b0, W1, x):
    """Rows of d/dx [relu(x W0 + b0) W1] for a scalar-output two-layer critic."""
    mask = (x @ W0 + b0 > 0).astype(float)
    return (mask * W1[:, 0]) @ W0.T


def two_layer_penalty(W0, b0, W1, b1, x):
    g = two_layer_input_gradient(W0, b0, W1, x)
    return float(np.mean((np.linalg.norm(g, axis=1) - 1.0) ** 2))


# ---------------------------------------------------------------- distributions

def t_two_sided_quad(t: float, df: float) -> float:
    """Two-sided t tail by adaptive quadrature of the density."""
    from scipy.integrate import quad

    logc = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)

    def dens(u):
        return math.exp(logc - (df + 1) / 2 * math.log1p(u * u / df))

    tail, _ = quad(dens, abs(t), np.inf, epsabs=1e-14, epsrel=1e-13, limit=200)
    return 2 * tail


def beta_cdf_quad(a: float, b: float, x: float) -> float:
    from scipy.integrate import quad

    logB = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    val, _ = quad(lambda u: math.exp((a - 1) * math.log(u) + (b - 1) * math.log1p(-u) - logB), 0, x,
                  epsabs=1e-14, epsrel=1e-13)
    return val


def hotelling_power(n: int, d: int, delta2_per_n: float, alpha: float) -> float:
    """Exact Hotelling T^2 power for equal groups of size n via the noncentral F."""
    from scipy import stats

    d2 = 2 * n - d - 1
    crit = stats.f.ppf(1 - alpha, d, d2)
    return float(stats.ncf.sf(crit, d, d2, delta2_per_n * n))


def wilson(k: int, n: int, z: float = 1.959963984540054):
    p = k / n
    denom = 1 + z * z / n
    c = (p + z * z / (2 * n)) / denom
    h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return c - h, c + h


# ---------------------------------------------------------------- linear algebra

def principal_angle_max(A, B) -> float:
    """Largest principal angle between the row spaces of A and B."""
    qa, _ = np.linalg.qr(np.asarray(A).T)
    qb, _ = np.linalg.qr(np.asarray(B).T)
    # sine of the largest angle; arccos of the cosines loses precision near 0
    resid = qb - qa @ (qa.T @ qb)
    return float(np.arcsin(min(1.0, np.linalg.norm(resid, 2))))


def brute_force_pca(X, k):
    """Top-k eigenpairs of the sample covariance via numpy's LAPACK solver."""
    X = np.asarray(X, dtype=float)
    C = np.cov(X, rowvar=False, ddof=1)
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(vals)[::-1]
    return vals[order][:k], vecs[:, order][:, :k].T


# ---------------------------------------------------------------- NIfTI fixtures

def nibabel_bytes(arr, dtype, endian="<", slope=None, inter=None) -> bytes:
    """Serialize ``arr`` as a single-file NIfTI-1 image with nibabel."""
    import nibabel as nib

    data = np.asarray(arr).astype(dtype)
    hdr = nib.Nifti1Header(endianness=endian)
    img = nib.Nifti1Image(data, np.diag([2.0, 2.0, 2.0, 1.0]), header=hdr)
    img.header.set_data_dtype(dtype)
    if slope is not None:
        img.header.set_slope_inter(slope, inter)
    return img.to_bytes()
