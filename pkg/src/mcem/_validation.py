"""Input validation shared by the estimators and the command line."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array, check_X_y

from .glmm import PanelDataset
from .lmm import GroupedDataset


def check_rng(random_state):
    """Turn ``None``, an int, a SeedSequence or a Generator into a Generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if random_state is None or isinstance(random_state, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(random_state)
    raise ValueError(f"{random_state!r} cannot be used to seed a numpy Generator")


def _group_column(X, n_columns):
    X = np.asarray(X)
    if X.ndim == 1 and n_columns == 1:
        X = X.reshape(-1, 1)
    return X


def check_grouped(X, y):
    """Validate ``(group,)`` rows and real responses into a :class:`GroupedDataset`."""
    X, y = check_X_y(_group_column(X, 1), y, dtype=None, y_numeric=True)
    if X.shape[1] != 1:
        raise ValueError(f"X must have a single group column, got {X.shape[1]} columns")
    labels, inverse = np.unique(X[:, 0], return_inverse=True)
    y = np.asarray(y, dtype=float)
    groups = [y[inverse == k] for k in range(labels.size)]
    return GroupedDataset(groups, labels.tolist())


def check_panel(X, y):
    """Validate ``(group, x)`` rows and binary responses into a :class:`PanelDataset`."""
    X, y = check_X_y(X, y, dtype=None)
    if X.shape[1] != 2:
        raise ValueError(f"X must have columns (group, x), got {X.shape[1]} columns")
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("y must be binary (0/1)")
    x = np.asarray(X[:, 1], dtype=float)
    labels, inverse = np.unique(X[:, 0], return_inverse=True)
    xs = [x[inverse == k] for k in range(labels.size)]
    ys = [y[inverse == k] for k in range(labels.size)]
    return PanelDataset(xs, ys, labels.tolist())


def check_query(X, n_columns):
    X = check_array(_group_column(X, n_columns), dtype=None)
    if X.shape[1] != n_columns:
        raise ValueError(f"expected {n_columns} columns, got {X.shape[1]}")
    return X
