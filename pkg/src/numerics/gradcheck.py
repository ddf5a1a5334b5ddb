from typing import Callable, Mapping

import numpy as np

from src.errors import ArgumentError, OracleError


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """
    Central-difference gradient of a scalar function.

    Each coordinate is perturbed in place on a private float64 copy of ``x``,
    so ``f`` sees a full tensor every call: (f(x + h e_i) - f(x - h e_i)) / 2h.
    """
    if h <= 0:
        raise ArgumentError(f"step h must be positive, got {h}")
    work = np.array(x, dtype=np.float64, copy=True)
    grad = np.empty_like(work)
    flat = work.reshape(-1)
    gflat = grad.reshape(-1)

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(work))
        flat[i] = orig - h
        f_minus = float(f(work))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise OracleError(f"non-finite evaluation at coordinate {i}: {f_plus}, {f_minus}")
        gflat[i] = (f_plus - f_minus) / (2.0 * h)

    return grad


def relative_error(actual: np.ndarray, expected: np.ndarray, floor: float = 1e-12) -> float:
    """Max absolute difference scaled by the larger of the two max magnitudes (at least floor)."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    scale = max(np.abs(actual).max(initial=0.0), np.abs(expected).max(initial=0.0), floor)
    return float(np.abs(actual - expected).max(initial=0.0) / scale)


def check_gradients(f: Callable[[Mapping[str, np.ndarray]], float], tensors: Mapping[str, np.ndarray],
                    analytic: Mapping[str, np.ndarray], h: float = 1e-5,
                    floor: float = 1e-12) -> dict[str, float]:
    """
    Finite-difference every entry of every named tensor and compare with the
    analytic gradient. f takes the full mapping; one tensor is swapped for a
    perturbed copy at a time. Returns relative_error per name; a tensor whose
    gradients all stay below floor (key biases under softmax) is judged on
    absolute error against floor.
    """
    missing = set(tensors) ^ set(analytic)
    if missing:
        raise ArgumentError(f"tensors and gradients name different entries: {sorted(missing)}")
    errors = {}
    for name, x in tensors.items():
        numeric = finite_diff_grad(lambda t, name=name: f({**tensors, name: t}), x, h)
        errors[name] = relative_error(analytic[name], numeric, floor)
    return errors
