"""Linear system container shared by the controllers and the simulator."""

from dataclasses import dataclass

import numpy as np

from . import linalg


@dataclass
class LinearSystem:
    """x+ = A x + B u + D w with conformable dense matrices."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        self.B = np.asarray(self.B, dtype=float).reshape(n, -1)
        self.D = np.asarray(self.D, dtype=float).reshape(n, -1)
        for M in (self.A, self.B, self.D):
            if not np.all(np.isfinite(M)):
                raise ValueError("non-finite system matrix")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def n_w(self):
        return self.D.shape[1]

    def stabilizable(self, Q, R):
        try:
            linalg.solve_dare(self.A, self.B, Q, R)
        except RuntimeError:
            return False
        return True

    def to_json(self):
        return {"A": self.A.tolist(), "B": self.B.tolist(), "D": self.D.tolist()}

    @staticmethod
    def from_json(obj):
        return LinearSystem(np.asarray(obj["A"], dtype=float),
                            np.asarray(obj["B"], dtype=float),
                            np.asarray(obj["D"], dtype=float))


@dataclass
class LinearFeedback:
    """Pure terminal law u = Kx; always feasible."""

    K: np.ndarray

    def __post_init__(self):
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))

    def control(self, x):
        return self.K @ np.asarray(x, dtype=float).ravel()
