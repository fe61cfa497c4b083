"""Input checks shared by the estimator front end."""

import numbers

import numpy as np

from .chem import MolGraph, parse_smiles


def check_molecules(X):
    """
    Return a list of :class:`MolGraph` from SMILES strings or graphs.

    Accepts any 1-d iterable (list, tuple, numpy array, pandas Series) or a
    single-column 2-d array.
    """
    if isinstance(X, (str, bytes, MolGraph)):
        raise TypeError("expected a sequence of molecules, got a single item")
    arr = np.asarray(X, dtype=object)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d sequence of molecules, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("found an empty sequence of molecules")
    out = []
    for item in arr:
        if isinstance(item, MolGraph):
            out.append(item)
        elif isinstance(item, str):
            out.append(parse_smiles(item))
        else:
            raise TypeError(f"molecule must be a SMILES string or MolGraph, got {type(item)!r}")
    return out


def check_targets(y, n_samples, allow_nan=True):
    """Targets as a float (n_samples, n_tasks) array; NaN marks a missing label."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2:
        raise ValueError(f"targets must be 1-d or 2-d, got shape {y.shape}")
    if y.shape[0] != n_samples:
        raise ValueError(f"found {n_samples} molecules but {y.shape[0]} targets")
    if np.isinf(y).any() or (not allow_nan and np.isnan(y).any()):
        raise ValueError("targets contain non-finite values")
    return y


def check_positive_int(value, name):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_random_state_int(value):
    """Seeds must be plain integers so runs are reproducible and serializable."""
    if value is None:
        return 0
    if not isinstance(value, numbers.Integral) or value < 0:
        raise ValueError(f"random_state must be a non-negative integer, got {value!r}")
    return int(value)
