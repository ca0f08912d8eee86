"""Plain-text matrix files for solutions, certificates and expansions.

Layout::

    key = value            (header, one per line)
    [name] rows cols kind  (kind is "real" or "complex")
    row values ...         (complex entries written as "re,im")

Blank lines and lines starting with ``#`` are ignored. Values round-trip
exactly (17 significant digits).
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import Dict, Mapping, Tuple, Union

import numpy as np

__all__ = [
    "write_matrices",
    "read_matrices",
    "solution_record",
    "expansion_record",
]

PathLike = Union[str, Path]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_matrices(target, header: Mapping[str, object], matrices: Mapping[str, np.ndarray]) -> str:
    """Serialize; ``target`` is a path, a text stream or ``None`` (return only)."""
    buf = io.StringIO()
    for k, v in header.items():
        if "=" in str(k) or "\n" in str(v):
            raise ValueError(f"header entry {k!r} cannot be serialized")
        buf.write(f"{k} = {v}\n")
    for name, M in matrices.items():
        M = np.asarray(M)
        if M.ndim == 1:
            M = M[:, None]
        kind = "complex" if np.iscomplexobj(M) else "real"
        buf.write(f"[{name}] {M.shape[0]} {M.shape[1]} {kind}\n")
        for row in M:
            if kind == "complex":
                buf.write(" ".join(f"{_fmt(z.real)},{_fmt(z.imag)}" for z in row))
            else:
                buf.write(" ".join(_fmt(z) for z in row))
            buf.write("\n")
    text = buf.getvalue()
    if isinstance(target, (str, Path)):
        Path(target).write_text(text)
    elif target is not None:
        target.write(text)
    return text


def read_matrices(source) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    """Parse text (or a path, or a stream) written by :func:`write_matrices`."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        text = Path(source).read_text()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        text = source
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    header: Dict[str, str] = {}
    mats: Dict[str, np.ndarray] = {}
    i = 0
    while i < len(lines):
        ln = lines[i]
        if ln.startswith("["):
            name, rest = ln[1:].split("]", 1)
            r, c, kind = rest.split()
            r, c = int(r), int(c)
            if kind not in ("real", "complex"):
                raise ValueError(f"unknown matrix kind {kind!r}")
            M = np.zeros((r, c), dtype=complex if kind == "complex" else float)
            for k in range(r):
                vals = lines[i + 1 + k].split() if c else []
                if len(vals) != c:
                    raise ValueError(f"matrix {name}: row {k} has {len(vals)} entries, expected {c}")
                if kind == "complex":
                    M[k] = [complex(float(a), float(b)) for a, b in (v.split(",") for v in vals)]
                else:
                    M[k] = [float(v) for v in vals]
            mats[name] = M
            i += 1 + r
        else:
            if "=" not in ln:
                raise ValueError(f"cannot parse line: {ln!r}")
            k, v = ln.split("=", 1)
            header[k.strip()] = v.strip()
            i += 1
    return header, mats


def solution_record(solution) -> Tuple[dict, dict]:
    """Header and matrices for a continuous LASSO solution and its certificate."""
    cert = solution.certificate
    header = {
        "kind": "class_solution",
        "lambda": _fmt(solution.lam),
        "order": solution.order,
        "coordinate": solution.representation.coordinate,
        "certified": str(cert.passed).lower(),
        "dual_peak": _fmt(cert.dual_peak),
        "dual_peak_theta": _fmt(cert.dual_peak_theta),
        "alignment_error": _fmt(cert.alignment_error),
        "stationarity_error": _fmt(cert.stationarity_error),
        "tol": _fmt(cert.tol),
        "non_unique": str(solution.non_unique).lower(),
    }
    mats = {"thetas": solution.thetas.astype(float), "amplitudes": solution.amplitudes.astype(complex), "residual": solution.residual}
    return header, mats


def expansion_record(exp) -> Tuple[dict, dict]:
    """Header and matrices of a first-order expansion (``Xi``, ``R``, ``beta``, ``gamma``)."""
    header = {"kind": "perturbation_expansion", "n": exp.n, "T": exp.T, "m": exp.manifold.m}
    mats = {
        "thetas": exp.thetas.astype(float),
        "gamma": exp.gamma.astype(float),
        "beta": exp.beta.astype(float),
        "R": exp.R.astype(float),
        "Xi": exp.Xi.astype(complex),
    }
    return header, mats
