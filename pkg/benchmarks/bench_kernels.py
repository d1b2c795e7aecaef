"""Timing of the RK4 moment-scan kernel against the numpy fallback.

The backend is fixed at import time, so the script re-invokes itself in a
fresh interpreter with SPINSQUEEZE_NO_NUMBA=1 to time the fallback, then
reports the speedup. The scan is the optimizer's inner loop; one call
integrates the coupled covariance and population ODEs over the full probe
window.
"""

import os
import subprocess
import sys
import time

from spinsqueeze.protocols import ProtocolParams
from spinsqueeze.qnd_ode import _fast_scan, build_coefficients
from spinsqueeze.spin_algebra import embedded_basis_for

CASES = ((1.0, "scs"), (4.0, "mx0"))
T_MAX = 2.5
DT = 4e-3
REPEATS = 5


def scan_ms(f, prep):
    params = ProtocolParams(f=f, od=300.0, n_a=1e6, sigma0_over_a=3e-4)
    basis = embedded_basis_for(prep, f)
    coeffs = build_coefficients(basis, params)
    _fast_scan(basis, coeffs, params.n_a, T_MAX, DT)  # warm-up, JIT compile
    best = float("inf")
    for _ in range(REPEATS):
        t0 = time.perf_counter()
        rec = _fast_scan(basis, coeffs, params.n_a, T_MAX, DT)
        best = min(best, time.perf_counter() - t0)
    return 1e3 * best, float(rec[-1, 0])


def main():
    fallback = os.environ.get("SPINSQUEEZE_NO_NUMBA", "0") == "1"
    label = "numpy fallback" if fallback else "numba"
    times = {}
    for f, prep in CASES:
        ms, tail = scan_ms(f, prep)
        times[(f, prep)] = ms
        print(f"{label:>14}  f={f:g} {prep:<4}: {ms:8.2f} ms per scan "
              f"(var check {tail:.6e})")
    if fallback:
        return
    env = dict(os.environ, SPINSQUEEZE_NO_NUMBA="1")
    out = subprocess.run([sys.executable, __file__], env=env, check=True,
                         capture_output=True, text=True).stdout
    print(out, end="")
    for line, (key, ms) in zip(out.strip().splitlines(), times.items()):
        ref = float(line.split(":")[1].split("ms")[0])
        print(f"speedup f={key[0]:g} {key[1]}: {ref / ms:.1f}x")


if __name__ == "__main__":
    main()
