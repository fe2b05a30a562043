import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_unitary(dim, rng):
    """Haar-ish unitary from QR of a complex Gaussian matrix."""
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def four_state_matrix(p_z=0.5):
    """Passive 4-state polarization analyzer (rows H, V, D, A)."""
    p_x = 1.0 - p_z
    return np.array(
        [
            [np.sqrt(p_z), 0],
            [0, np.sqrt(p_z)],
            [np.sqrt(p_x / 2), np.sqrt(p_x / 2)],
            [np.sqrt(p_x / 2), -np.sqrt(p_x / 2)],
        ],
        dtype=complex,
    )


def six_state_matrix(p_hv=1 / 3, p_ad=1 / 3, p_rl=1 / 3):
    """Passive six-state analyzer (rows H, V, D, A, R, L)."""
    return np.array(
        [
            [np.sqrt(p_hv), 0],
            [0, np.sqrt(p_hv)],
            [np.sqrt(p_ad / 2), np.sqrt(p_ad / 2)],
            [np.sqrt(p_ad / 2), -np.sqrt(p_ad / 2)],
            [np.sqrt(p_rl / 2), 1j * np.sqrt(p_rl / 2)],
            [np.sqrt(p_rl / 2), -1j * np.sqrt(p_rl / 2)],
        ],
        dtype=complex,
    )
