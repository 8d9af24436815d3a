"""Smoke test of the robhedge_py extension module.

Build the module first:

    cargo build --release -p robhedge-py --features extension-module

then run `python3 python/smoke_test.py`. If `robhedge_py` is not installed,
the shared library is loaded from target/release or target/debug.
"""

import importlib.machinery
import importlib.util
import math
import pathlib
import sys


def load_module():
    try:
        import robhedge_py

        return robhedge_py
    except ImportError:
        pass
    root = pathlib.Path(__file__).resolve().parent.parent
    for profile in ("release", "debug"):
        for name in ("librobhedge_py.so", "librobhedge_py.dylib", "robhedge_py.dll"):
            lib = root / "target" / profile / name
            if lib.exists():
                loader = importlib.machinery.ExtensionFileLoader("robhedge_py", str(lib))
                spec = importlib.util.spec_from_file_location("robhedge_py", str(lib), loader=loader)
                module = importlib.util.module_from_spec(spec)
                loader.exec_module(module)
                return module
    sys.exit("robhedge_py not found; build it with --features extension-module")


def main():
    rh = load_module()

    sig = rh.signature([0.0, 0.0, 1.0, 2.0], 2, 2)
    assert sig == [1.0, 1.0, 2.0, 0.5, 1.0, 1.0, 2.0], sig

    bs = rh.Generator.bs(0.2, 1.0)
    assert bs.variant == "bs"
    paths = bs.sample(7, 64, 5.0 / 255.0, 18)
    assert len(paths) == 64 and len(paths[0]) == 19
    assert all(v > 0.0 for p in paths for v in p)
    assert paths == bs.sample(7, 64, 5.0 / 255.0, 18)

    heston = rh.Generator.heston(1.0, 0.04, 0.5, -0.7, 1.0)
    assert heston.channels == ["asset", "variance", "volswap"], heston.channels
    assert rh.Generator.from_json(heston.to_json()).to_json() == heston.to_json()

    mmd = rh.sig_mmd(paths, bs.sample(8, 64, 5.0 / 255.0, 18), 1, 2, ["time", "lead-lag"])
    assert 0.0 <= mmd < 1e-2, mmd

    assert abs(rh.entropic_risk([0.25] * 8, 130.0) + 0.25) < 1e-12
    price, delta = rh.bs_call(1.0, 1.0, 0.2, 18 * 5.0 / 255.0)
    assert 0.04 < price < 0.06 and 0.5 < delta < 0.6

    hedge = rh.train_deep_hedge(bs, scale=0.004, seed=1, hidden=[8, 8])
    assert math.isfinite(hedge.objective)
    assert hedge.features == ["time", "s1"]
    pos = hedge.position(0.5, [1.0])
    assert len(pos) == 1 and math.isfinite(pos[0])

    losses = rh.oosp(hedge, [rh.Generator.bs(0.15, 1.0), rh.Generator.bs(0.25, 1.0)], eval_paths=1000, seed=3)
    assert len(losses) == 2 and losses[0] < losses[1], losses

    try:
        rh.Generator.bs(-1.0, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative volatility accepted")

    print("robhedge_py smoke test passed")


if __name__ == "__main__":
    main()
