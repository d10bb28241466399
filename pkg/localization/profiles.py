import numpy as np

PLATEAU_END = 0.25
RAMP_END = 0.5


def smoothstep(tau: np.ndarray) -> np.ndarray:
    """C2 quintic step: 0 below 0, 1 above 1"""
    tau = np.clip(tau, 0.0, 1.0)
    return tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau ** 2)


def smoothstep_prime(tau: np.ndarray) -> np.ndarray:
    inside = (tau > 0.0) & (tau < 1.0)
    tau = np.clip(tau, 0.0, 1.0)
    return np.where(inside, 30.0 * tau ** 2 * (1.0 - tau) ** 2, 0.0)


def smoothstep_second(tau: np.ndarray) -> np.ndarray:
    inside = (tau > 0.0) & (tau < 1.0)
    tau = np.clip(tau, 0.0, 1.0)
    return np.where(inside, 60.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau), 0.0)


_WIDTH = RAMP_END - PLATEAU_END


def inner_profile(z: np.ndarray) -> np.ndarray:
    """f: 1 for z <= 1/4, 0 for z >= 1/2, non-increasing"""
    return 1.0 - smoothstep((np.asarray(z, dtype=float) - PLATEAU_END) / _WIDTH)


def inner_profile_prime(z: np.ndarray) -> np.ndarray:
    return -smoothstep_prime((np.asarray(z, dtype=float) - PLATEAU_END) / _WIDTH) / _WIDTH


def inner_profile_second(z: np.ndarray) -> np.ndarray:
    return -smoothstep_second((np.asarray(z, dtype=float) - PLATEAU_END) / _WIDTH) / _WIDTH ** 2


def outer_profile(z: np.ndarray) -> np.ndarray:
    """F: 0 for z <= 0, (z^3 + z^5)/2 above; convex, non-decreasing, F(1) = 1"""
    z = np.asarray(z, dtype=float)
    positive = np.maximum(z, 0.0)
    return 0.5 * (positive ** 3 + positive ** 5)


def outer_profile_prime(z: np.ndarray) -> np.ndarray:
    positive = np.maximum(np.asarray(z, dtype=float), 0.0)
    return 0.5 * (3.0 * positive ** 2 + 5.0 * positive ** 4)


def outer_profile_second(z: np.ndarray) -> np.ndarray:
    positive = np.maximum(np.asarray(z, dtype=float), 0.0)
    return 0.5 * (6.0 * positive + 20.0 * positive ** 3)


def profile_bound() -> float:
    """C0 bounding |f'|, |f''|, |F'|, |F''| on the range where phi lives (F on [0, 1])"""
    # smoothstep peaks: |S'| = 15/8 at 1/2, |S''| = 10/sqrt(3) at (3 -+ sqrt 3)/6
    f1 = 15.0 / 8.0 / _WIDTH
    f2 = 10.0 / np.sqrt(3.0) / _WIDTH ** 2
    return float(max(f1, f2, 4.0, 13.0))
