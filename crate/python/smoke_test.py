"""Smoke test for the orthofield_py extension.

Build first with `cargo build --release -p orthofield-py --features extension-module`,
then run `python3 python/smoke_test.py` from the repository root.
"""

import importlib.machinery
import importlib.util
import math
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_extension():
    for profile in ("release", "debug"):
        path = ROOT / "target" / profile / "liborthofield_py.so"
        if path.exists():
            loader = importlib.machinery.ExtensionFileLoader("orthofield_py", str(path))
            spec = importlib.util.spec_from_loader("orthofield_py", loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("liborthofield_py.so not found; build the orthofield-py crate first")


def main():
    of = load_extension()

    iid = of.FieldModel.iid(2)
    assert iid.dim == 2 and iid.bound == 1.0 and iid.is_structural_omd()
    values = iid.sample([4, 4], seed=7, replicate=0, frozen_past=0)
    assert len(values) == 16 and all(v in (-1.0, 1.0) for v in values)
    assert values == iid.sample([4, 4], seed=7, replicate=0, frozen_past=0)

    roundtrip = of.FieldModel.from_toml(iid.to_toml())
    assert roundtrip.to_toml() == iid.to_toml()

    report = of.verify_ortho_model(iid)
    assert report["pass"] and report["max_deviation"] == 0.0, report

    sigma2, method, _ = of.estimate_sigma2(iid)
    assert sigma2 == 1.0 and method == "exact"

    linear = of.FieldModel.linear([([0, 0], 1.0), ([1, 0], 0.5)])
    assert not linear.is_structural_omd()
    assert abs(of.long_run_variance(linear) - 2.25) < 1e-12

    assert abs(of.normal_cdf(0.0, 1.0) - 0.5) < 1e-15
    assert abs(of.normal_cdf(1.0, 4.0) - 0.5 * math.erfc(-0.5 / math.sqrt(2.0))) < 1e-12

    clt = of.run_clt(iid, [[16, 16]], 2000, frozen_pasts=[0], seed=1)
    assert clt["verdict"] == "pass", clt

    series = of.level_moment_series(10**6, "x2", [10**3, 10**6])
    assert series[1] > series[0] > 0.0

    print("orthofield_py smoke test passed")


if __name__ == "__main__":
    main()
