#!/usr/bin/env python3
"""Smoke test for the optscope Python extension.

Builds nothing itself: expects `cargo build --release -p optscope-py` to have
produced target/release/liboptscope.so, which is copied next to this script as
optscope.so before importing.
"""

import json
import math
import random
import shutil
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
BUILT = HERE.parent / "target" / "release" / "liboptscope.so"
MODULE = HERE / "optscope.so"


def refresh_module() -> None:
    if not BUILT.is_file():
        sys.exit(f"missing {BUILT}; run `cargo build --release -p optscope-py` first")
    if not MODULE.is_file() or BUILT.stat().st_mtime > MODULE.stat().st_mtime:
        shutil.copy2(BUILT, MODULE)


refresh_module()
sys.path.insert(0, str(HERE))
import optscope  # noqa: E402


def check(cond: bool, what: str) -> None:
    if not cond:
        sys.exit(f"FAIL: {what}")
    print(f"  ok: {what}")


def expect_raises(exc, fn, what: str) -> None:
    try:
        fn()
    except exc:
        print(f"  ok: {what}")
        return
    except Exception as e:  # noqa: BLE001
        sys.exit(f"FAIL: {what} raised {type(e).__name__} instead of {exc.__name__}")
    sys.exit(f"FAIL: {what} did not raise")


def main() -> None:
    print(f"optscope {optscope.__version__}")

    # --- module-level helpers -------------------------------------------
    names = optscope.rules()
    check(len(names) == 11 and "adam" in names and "madgrad" in names,
          "rules() lists all 11 update rules")

    check(optscope.round_pow10(3.2e-4) == 1e-3, "round_pow10 rounds to the nearest decade")
    expect_raises(ValueError, lambda: optscope.round_pow10(-1.0),
                  "round_pow10 rejects non-positive input")

    check(abs(optscope.suggest_beta2(668) - (1.0 - 1.0 / 668)) < 1e-15,
          "suggest_beta2 covers one epoch window")

    rng = random.Random(20)
    for _ in range(50):
        n = rng.randint(1, 400)
        values = [0.0 if rng.random() < 0.1 else rng.uniform(1e-6, 10.0) for _ in range(n)]
        if not any(v > 0.0 for v in values):
            values[0] = 1.0
        p = rng.uniform(0.1, 99.9)
        pos = sorted(v for v in values if v > 0.0)
        rank = min(max(math.ceil(p * len(pos) / 100.0), 1), len(pos))
        want = pos[rank - 1]
        got = optscope.percentile(values, p)
        if got != want:
            sys.exit(f"FAIL: percentile({p:.4f}) on {n} values: {got!r} != {want!r}")
    print("  ok: percentile matches nearest-rank oracle on 50 random arrays")

    check(optscope.fraction_above([0.0, 1e-9, 1e-3, 1.0], 1e-8) == 0.5,
          "fraction_above is strict and keeps zeros in the denominator")

    hist = optscope.histogram([1e-3] * 5 + [0.0] * 2)
    check(hist["zeros"] == 2 and hist["total"] == 7 and sum(hist["counts"]) == 5
          and len(hist["bin_edges"]) == len(hist["counts"]) + 1,
          "histogram bins, zeros, and totals are consistent")

    # --- Optimizer class -------------------------------------------------
    opt = optscope.Optimizer("adam", [[2, 2], [2]], alpha=1e-2, eps=1e-8)
    check(opt.rule == "adam" and opt.t == 0 and opt.variable_names == ["var0", "var1"],
          "Optimizer reports rule, step count, and default names")

    params = [[0.0, 0.0, 0.0, 0.0], [0.0, 0.0]]
    grads = [[1.0, -2.0, 0.5, -0.25], [3.0, -1.0]]
    stepped = opt.step(params, grads)
    check(opt.t == 1, "step advances the step counter")
    # First Adam step: m_hat = g, v_hat = g^2, so the move is
    # -alpha * g / (|g| + eps) = -alpha * sign(g) for g != 0.
    for flat_p, flat_g in zip(stepped, grads):
        for p_new, g in zip(flat_p, flat_g):
            want = -1e-2 * g / (abs(g) + 1e-8)
            if abs(p_new - want) > 1e-12:
                sys.exit(f"FAIL: first adam step gave {p_new!r}, expected {want!r}")
    print("  ok: first adam step matches the closed form")

    mags = opt.magnitudes()
    check(set(mags) == {"var0", "var1"} and len(mags["var0"]) == 4,
          "magnitudes maps each variable to its flat proxy values")
    lrs = opt.effective_lr()
    check(len(lrs) == 2 and all(lr > 0 for flat in lrs for lr in flat),
          "effective_lr is positive per coordinate")

    sgd = optscope.Optimizer("sgd", [[2]], alpha=0.1)
    sgd.step([[1.0, 1.0]], [[0.5, -0.5]])
    expect_raises(ValueError, sgd.magnitudes,
                  "magnitudes rejects rules without an adaptive denominator")
    expect_raises(ValueError, lambda: optscope.Optimizer("nadam", [[2]]),
                  "unknown rule name is rejected")
    expect_raises(ValueError, lambda: opt.step([[0.0]], [[1.0]]),
                  "step rejects a wrong variable count")

    # --- JSON run drivers -------------------------------------------------
    config = json.dumps({
        "dataset": {"kind": "blobs", "n": 120, "classes": 3, "dim": 6,
                    "spread": 0.5, "seed": 3, "test_n": 30},
        "widths": [6, 10, 3],
        "optimizer": {"rule": "adam", "alpha": 1e-3, "eps": 1e-8},
        "epochs": 2,
        "batch_size": 12,
        "seed": 9,
        "capture_every": 5,
    })

    record_a = optscope.train(config)
    record_b = optscope.train(config)
    check(record_a == record_b, "train is deterministic for a fixed config")
    record = json.loads(record_a)
    check(record["rule"] == "adam" and len(record["epochs"]) == 2,
          "train reports the rule and one entry per epoch")
    check(record["epochs"][-1]["test_accuracy"] is not None,
          "held-out split produces test metrics")
    check(len(record["captures"]) > 0 and record["final_params_digest"],
          "captures and final digest are present")

    report = json.loads(optscope.estimate_eps(config))
    lo = report["range"]["eps_lower"]
    hi = report["range"]["eps_upper"]
    check(lo <= hi and optscope.round_pow10(lo) == lo and optscope.round_pow10(hi) == hi,
          "estimate_eps yields an ordered power-of-ten range")
    check(report["probe_points"] and report["beta2_advice"]["suggested_beta2"] > 0.0,
          "estimate_eps recommends probe points and a beta2 floor")

    expect_raises(ValueError, lambda: optscope.train("{ not json"),
                  "malformed config JSON is a ValueError")

    print("smoke test ok")


if __name__ == "__main__":
    main()
