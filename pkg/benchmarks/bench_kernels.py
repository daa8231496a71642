"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 2000]

Both paths are imported directly, so the MTCRA_DISABLE_NUMBA flag does not
matter here. Also times one full training episode under whichever backend
the flag selects.
"""

import argparse
import timeit

import numpy as np

from mtcra import backend, dqn, kernels, nn
from mtcra.env import EnvConfig


def _time(fn, repeat):
    fn()  # compile / warm up
    best = min(timeit.repeat(fn, number=repeat, repeat=3))
    return best / repeat * 1e6


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    net = nn.Mlp.init((11, 150, 100, 2), rng)
    p = net.params
    grad = np.empty(net.n_params)
    g_views = net.views(grad)
    x8 = rng.integers(0, 2, (8, 11)).astype(float)
    x3 = x8[:3].copy()
    x100 = rng.integers(0, 2, (100, 11)).astype(float)
    a8 = rng.integers(0, 2, 8)
    y8 = rng.normal(size=8)
    m1 = np.zeros(net.n_params)
    m2 = np.zeros(net.n_params)

    cases = [
        ("forward m=3", lambda: kernels._nb_forward(x3, *p), lambda: kernels._np_forward(x3, *p)),
        ("forward m=100", lambda: kernels._nb_forward(x100, *p), lambda: kernels._np_forward(x100, *p)),
        ("grad m=8", lambda: kernels._nb_grad(x8, a8, y8, *p, *g_views),
         lambda: kernels._np_grad(x8, a8, y8, *p, *g_views)),
        # lr = 0 keeps theta fixed across repeats
        ("adam", lambda: kernels._nb_adam(net.theta, grad, m1, m2, 0.0, 0.9, 0.999, 1e-8, 5.0),
         lambda: kernels._np_adam(net.theta, grad, m1, m2, 0.0, 0.9, 0.999, 1e-8, 5.0)),
    ]
    print(f"{'kernel':<16}{'numba us':>10}{'numpy us':>10}{'speedup':>9}")
    for name, f_nb, f_np in cases:
        t_nb = _time(f_nb, args.repeat)
        t_np = _time(f_np, args.repeat)
        print(f"{name:<16}{t_nb:>10.1f}{t_np:>10.1f}{t_np / t_nb:>9.2f}")

    cfg = EnvConfig(50)
    hyper = dqn.DqnConfig(episodes=20)
    dqn.train(cfg, dqn.DqnConfig(episodes=1))
    t = min(timeit.repeat(lambda: dqn.train(cfg, hyper), number=1, repeat=3))
    print(f"train N=50, 20 episodes ({backend()} backend): {t * 1e3:.0f} ms")


if __name__ == "__main__":
    main()
