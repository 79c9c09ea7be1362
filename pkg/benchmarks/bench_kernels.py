"""Time the compiled kernels against the numpy fallback on the workloads the package runs.

Usage: ``python3 benchmarks/bench_kernels.py [--repeat 5]``
"""
import argparse
import timeit

import numpy as np

from holoidet import kernels
from holoidet.geometry import SurfaceLayout
from holoidet.harness import protocol
from holoidet.harness.scenario import Scenario
from holoidet.rhs import em_response
from holoidet.sensing import SensingLayout

WAVELENGTH = 0.01


def workloads():
    rng = np.random.default_rng(0)
    k = 2 * np.pi / WAVELENGTH
    uv = rng.uniform(-0.7, 0.7, (8281, 2))  # a 91 x 91 direction grid worth of samples

    layout = SurfaceLayout(16, 16, WAVELENGTH / 2, np.array([[0.0375, 0.0375, 0.0]]))
    em = em_response(layout)
    gain_args = (np.ascontiguousarray(layout.local_coords()[:, :2]), np.ascontiguousarray(em.phase),
                 np.ones(1), uv, k, 1.0)

    sensing = SensingLayout(32, 32, WAVELENGTH / 2)
    n = sensing.count
    image = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    corr_args = (np.ascontiguousarray(image.real), np.ascontiguousarray(image.imag),
                 np.ascontiguousarray(sensing.border_coords()[:, :2]), uv, k)
    return {"holo_gain_map 16x16, 8281 dirs": ("holo_gain_map", gain_args),
            "border_correlation 32x32, 8281 dirs": ("border_correlation", corr_args)}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if "cython" not in kernels.BACKENDS:
        print("compiled backend unavailable; only the numpy fallback is timed")
    print(f"{'workload':40s} " + " ".join(f"{b:>12s}" for b in kernels.BACKENDS) + "   speedup")
    for label, (name, call_args) in workloads().items():
        best = {}
        outputs = {}
        for backend, module in kernels.BACKENDS.items():
            fn = getattr(module, name)
            outputs[backend] = fn(*call_args)
            best[backend] = min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat))
        ref = outputs["numpy"]
        for backend, out in outputs.items():
            np.testing.assert_allclose(out, ref, rtol=1e-9, atol=1e-12)
        speed = f"{best['numpy'] / best['cython']:8.1f}x" if "cython" in best else "       -"
        print(f"{label:40s} " + " ".join(f"{best[b] * 1e3:10.2f}ms" for b in kernels.BACKENDS) + "  " + speed)

    # end-to-end: one default-scale protocol trial on the active backend
    sc = Scenario()
    protocol.hardware(sc)
    elapsed = min(timeit.repeat(lambda: protocol.run_protocol(sc, 1), number=1, repeat=args.repeat))
    print(f"one default protocol trial on the {kernels.BACKEND} backend: {elapsed * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
