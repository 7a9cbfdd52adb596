"""Compare the compiled kernel extension against the numpy reference.

Times each kernel on engine-typical shapes, then a full learn/unlearn
request pair end to end under both backends. Run from the repo root:

    python3 benchmarks/bench_kernels.py [--repeats 200]

The compiled rows are skipped when the extension was not built.
"""

import argparse
import time

import numpy as np

from lethe import backend, engine, model, streams
from lethe.engine import HyperParams, request_for

BATCH = 96        # forget batch + replay batch during unlearning
HIDDEN = 32
CLASSES = 10


def _kernel_cases(rng):
    a = rng.standard_normal((BATCH, HIDDEN))
    b = rng.standard_normal((HIDDEN, HIDDEN))
    g = rng.standard_normal((BATCH, HIDDEN))
    logits = rng.standard_normal((BATCH, CLASSES))
    emb = rng.standard_normal((BATCH, 16))
    return [
        ("gemm", lambda k: k.gemm(a, b)),
        ("gemm_nt", lambda k: k.gemm_nt(a, b)),
        ("gemm_tn", lambda k: k.gemm_tn(a, g)),
        ("add_bias", lambda k: k.add_bias(a, b[0])),
        ("sum_rows", lambda k: k.sum_rows(g)),
        ("relu_fwd", lambda k: k.relu_fwd(a)),
        ("relu_bwd", lambda k: k.relu_bwd(a, g)),
        ("log_softmax_fwd", lambda k: k.log_softmax_fwd(logits)),
        ("log_softmax_bwd", lambda k: k.log_softmax_bwd(
            k.log_softmax_fwd(logits), logits)),
        ("l2norm_fwd", lambda k: k.l2norm_fwd(emb)),
        ("l2norm_bwd", lambda k: k.l2norm_bwd(*k.l2norm_fwd(emb), emb)),
    ]


def time_call(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels(repeats):
    from lethe import kernels_py

    rng = np.random.default_rng(0)
    cases = _kernel_cases(rng)
    compiled = backend._compiled_module()
    print(f"{'kernel':<18} {'python us':>10} {'compiled us':>12} {'speedup':>8}")
    for name, call in cases:
        t_py = time_call(lambda: call(kernels_py), repeats) * 1e6
        if compiled is None:
            print(f"{name:<18} {t_py:>10.2f} {'-':>12} {'-':>8}")
            continue
        t_c = time_call(lambda: call(compiled), repeats) * 1e6
        print(f"{name:<18} {t_py:>10.2f} {t_c:>12.2f} {t_py / t_c:>7.2f}x")


def bench_end_to_end(seed=0):
    skel = streams.task_distribution(10, 2)
    data_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([1, seed])))
    tasks = streams.make_gaussian_tasks(skel, 200, 100, 0.06, data_rng)
    by_id = {t.task_id: t for t in tasks}
    hyper = HyperParams(epochs_per_task=8)  # short run; ratio is what matters

    names = ["python"]
    if backend.compiled_available():
        names.append("compiled")
    print(f"\n{'backend':<10} {'learn+unlearn s':>16}")
    times = {}
    for name in names:
        backend.use_backend(name)
        state = engine.init_state(model.NetConfig(input_dim=2), hyper, 200, seed)
        t0 = time.perf_counter()
        engine.process_request(state, request_for(by_id["T1"], 1))
        engine.process_request(state, request_for(by_id["T1"], 0))
        times[name] = time.perf_counter() - t0
        print(f"{name:<10} {times[name]:>16.3f}")
    if len(times) == 2:
        print(f"speedup {times['python'] / times['compiled']:.2f}x")
    backend.use_backend("auto")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()
    if not backend.compiled_available():
        print("note: compiled extension not built, timing the reference only")
    bench_kernels(args.repeats)
    bench_end_to_end()


if __name__ == "__main__":
    main()
