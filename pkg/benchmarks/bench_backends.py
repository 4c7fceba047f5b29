"""Timing comparison of the compiled interior-point kernel and the NumPy
fallback on the problem families the toolkit actually generates.

Run:  python benchmarks/bench_backends.py
"""

import time

import numpy as np

from smpckit import _ipm_py

try:
    from smpckit import _ipm
except ImportError:
    _ipm = None


def time_solve(kernel, args, repeat):
    kernel.solve(*args)  # warm up / check
    t0 = time.perf_counter()
    for _ in range(repeat):
        kernel.solve(*args)
    return (time.perf_counter() - t0) / repeat


def problem_support_lp(rng):
    G = np.vstack([np.eye(2), -np.eye(2), rng.standard_normal((4, 2))])
    h = np.concatenate([np.ones(4), np.abs(rng.standard_normal(4)) + 0.5])
    return (np.zeros((2, 2)), rng.standard_normal(2),
            np.ascontiguousarray(G), h, np.zeros((0, 2)), np.zeros(0),
            1e-10, 200)


def problem_membership_lp(rng, s=8, n_w=2):
    d = s * n_w
    G = np.vstack([np.eye(d), -np.eye(d)])
    h = 0.1 * np.ones(2 * d)
    terms = np.hstack([np.linalg.matrix_power(0.6 * np.eye(2) + 0.1, k)
                       for k in range(s)])
    b = terms @ (0.05 * rng.uniform(-1, 1, d))
    return (np.zeros((d, d)), np.zeros(d), np.ascontiguousarray(G), h,
            np.ascontiguousarray(terms), b, 1e-8, 200)


def problem_striped_qp(rng, d=6, rows=130):
    M = rng.standard_normal((d, d))
    H = M @ M.T + 2.0 * np.eye(d)
    G = rng.standard_normal((rows, d))
    h = np.abs(rng.standard_normal(rows)) + 0.3
    return (H, np.zeros(d), np.ascontiguousarray(G), h,
            np.zeros((0, d)), np.zeros(0), 1e-8, 200)


def problem_da_qp(rng, d=152, rows=340):
    H = np.zeros((d, d))
    H[:16, :16] = np.eye(16) * 2.0
    G = np.zeros((rows, d))
    for i in range(rows):
        idx = rng.choice(d, size=5, replace=False)
        G[i, idx] = rng.standard_normal(5)
    h = np.abs(rng.standard_normal(rows)) + 0.5
    return (H, 0.1 * rng.standard_normal(d), np.ascontiguousarray(G), h,
            np.zeros((0, d)), np.zeros(0), 1e-8, 200)


def main():
    rng = np.random.default_rng(0)
    families = [
        ("support LP (d=2, m=8)", problem_support_lp(rng), 500),
        ("membership LP (d=16)", problem_membership_lp(rng), 200),
        ("striped QP (d=6, m=130)", problem_striped_qp(rng), 200),
        ("affine-policy QP (d=152)", problem_da_qp(rng), 30),
    ]
    print(f"{'problem family':28s} {'python':>12s} {'compiled':>12s} {'speedup':>9s}")
    for name, args, repeat in families:
        t_py = time_solve(_ipm_py, args, repeat)
        if _ipm is None:
            print(f"{name:28s} {t_py*1e3:10.3f} ms {'n/a':>12s}")
            continue
        t_c = time_solve(_ipm, args, repeat)
        print(f"{name:28s} {t_py*1e3:10.3f} ms {t_c*1e3:10.3f} ms "
              f"{t_py/t_c:8.1f}x")
        x_py = _ipm_py.solve(*args)[0]
        x_c = _ipm.solve(*args)[0]
        assert np.allclose(x_py, x_c, atol=1e-6), name


if __name__ == "__main__":
    main()
