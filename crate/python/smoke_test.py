"""Smoke test for the `tlsloss` extension module.

Build and install first:  maturin develop -m crates/py/Cargo.toml --release
"""

import math
import os
import sys
import tempfile

import tlsloss


def check(cond, msg):
    if not cond:
        print(f"FAIL: {msg}")
        sys.exit(1)
    print(f"ok: {msg}")


def main():
    freqs, s21 = tlsloss.synthesize_notch(5e9, 5e5, 2e5, phi=0.1, tau=2e-9, noise=1e-4, seed=3)
    check(len(freqs) == len(s21) == 401, "synthesized trace length")
    fit = tlsloss.fit_resonator(freqs, s21)
    check(abs(fit.qi / 5e5 - 1) < 0.05, f"Qi recovered ({fit.qi:.4g})")
    check(abs(fit.fr - 5e9) < 5e3, "fr recovered")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "trace.csv")
        with open(path, "w") as fh:
            fh.write("frequency_hz,re_s21,im_s21\n")
            for f, z in zip(freqs, s21):
                fh.write(f"{f!r},{z.real!r},{z.imag!r}\n")
        f2, z2 = tlsloss.read_trace(path)
        check(f2 == list(freqs) and z2 == list(s21), "CSV trace round trip")

    truth = tlsloss.TlsFit(2e-6, 1.0, 0.3, 1e-7, temperature=0.01)
    n = [10 ** (k / 4) for k in range(-8, 33)]
    qi = [1 / truth.loss(x, 5e9) for x in n]
    tfit = tlsloss.fit_tls(n, qi, 5e9, temperature=0.01)
    check(abs(tfit.f_delta_tls / 2e-6 - 1) < 0.02, f"F*delta_TLS recovered ({tfit.f_delta_tls:.4g})")

    t = [k * 2e-6 for k in range(60)]
    pop = [0.9 * math.exp(-x / 30e-6) + 0.05 for x in t]
    t1 = tlsloss.fit_t1(t, pop)
    check(abs(t1.t1 / 30e-6 - 1) < 1e-3, f"T1 recovered ({t1.t1:.4g})")

    report = tlsloss.qubit_report()
    check(report["records"] == 38, "bundled qubit table")
    check(sorted(report["excluded"]) == ["Q22", "Q38"], "screening exclusions")

    p = tlsloss.solve_cross_section()
    check(0.91 <= p.p["Si"] <= 0.92, f"substrate participation ({p.p['Si']:.4f})")
    check(abs(sum(p.p.values()) - 1) < 1e-6, "participations sum to one")

    try:
        tlsloss.solve_cross_section(geometry={"no_such_key": 1.0})
    except tlsloss.TlsLossError as e:
        check("no_such_key" in str(e), "unknown geometry key rejected")
    else:
        check(False, "unknown geometry key rejected")

    s = tlsloss.sweep("sm", [0.5, 1.0])
    check(len(s["points"]) == 2, "SM sweep")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
