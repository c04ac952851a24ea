"""Reader for sparse ``<label> <idx>:<val> ...`` text files and a weight writer."""

import gzip
import math

import numpy as np

from .exceptions import ParseError
from .problems import SvmDataset

LABELS = {"+1": 1.0, "1": 1.0, "-1": -1.0}


def _open(path):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def parse_libsvm(path, feature_dim=None):
    """
    Parse a LIBSVM-format classification file.

    Parameters
    ----------
    path : str or path-like
        Plain or gzip-compressed text.
    feature_dim : int, optional
        Overrides the feature count (default: largest index seen).

    Returns
    -------
    SvmDataset

    Raises
    ------
    ParseError
        With the offending line number, for malformed tokens, labels other
        than ``+1``, ``1`` and ``-1``, or indices that are not strictly
        increasing.
    """
    indptr, indices, values, labels = [0], [], [], []
    with _open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                labels.append(LABELS[tokens[0]])
            except KeyError:
                raise ParseError(f"label {tokens[0]!r} is not +1 or -1", lineno, path) from None
            last = 0
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                try:
                    if not sep:
                        raise ValueError
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise ParseError(f"malformed feature token {tok!r}", lineno, path) from None
                if idx < 1:
                    raise ParseError(f"feature index {idx} must be >= 1", lineno, path)
                if idx <= last:
                    raise ParseError(f"feature index {idx} not strictly increasing", lineno, path)
                if not math.isfinite(val):
                    raise ParseError(f"non-finite feature value {val_s!r}", lineno, path)
                last = idx
                indices.append(idx - 1)
                values.append(val)
            indptr.append(len(indices))
    seen = max(indices) + 1 if indices else 0
    if feature_dim is not None and feature_dim < seen:
        raise ParseError(f"feature index {seen} exceeds the declared dimension {feature_dim}",
                         path=path)
    return SvmDataset(np.array(indptr), np.array(indices, dtype=np.int64),
                      np.array(values), np.array(labels), feature_dim=feature_dim)


def write_model(path, w):
    """Write ``dim`` on the first line, then ``idx value`` (1-based) for nonzero weights."""
    w = np.asarray(w, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{w.size}\n")
        for idx in np.flatnonzero(w):
            fh.write(f"{idx + 1} {w[idx]:.17g}\n")


def read_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        dim = int(fh.readline())
        w = np.zeros(dim)
        for line in fh:
            idx, val = line.split()
            w[int(idx) - 1] = float(val)
    return w
