import math

import numpy as np
import pytest

import crittuner as ct


def test_critical_profile():
    spec = ct.mlp(5, 200, math.sqrt(2.0))
    r = ct.apjn_profile(spec, batch=8, seed=1)
    assert len(r["J"]) == 5
    assert all(abs(j - 1.0) < 0.15 for j in r["J"])
    assert len(r["kernels"]) == 6


def test_estimated_profile_has_stderr():
    spec = ct.mlp(2, 32, 1.0)
    r = ct.apjn_profile(spec, estimated=True, n_v=20)
    assert all(s > 0 for s in r["stderr"])


def test_forward_with_numpy_batch():
    spec = ct.mlp(2, 16, 1.0, 0.1)
    x = np.random.default_rng(0).standard_normal((3, 16))
    y = ct.forward(spec, x)
    assert y.shape == (3, 16)


def test_tune_moves_towards_criticality():
    spec = ct.mlp(3, 64, 2.0)
    r = ct.tune(spec, eta=0.05, steps=40, grad_mode="analytic-relu", batch=4)
    first = max(abs(math.log(j)) for j in r["J"][0])
    last = max(abs(math.log(j)) for j in r["J"][-1])
    assert last < first
    assert isinstance(r["spec"], ct.NetworkSpec)


def test_closed_forms():
    assert ct.eta_bound([2.0], 2.0, ct.Loss.jll) == pytest.approx(0.4226, abs=1e-4)
    assert ct.eta_one_step(2.0, 2.0, ct.Loss.jsl) == pytest.approx(0.0732, abs=1e-4)
    assert ct.relu_dynamics([2.0], 2.0, 0.1, 1)[1][0] == pytest.approx(1.48392, abs=1e-5)
    assert ct.relu_kernel_map(1.0, 1.0, 1.0, 200)[-1] == pytest.approx(2.0, abs=1e-6)
    assert ct.bn_apjn_limit(0.0, 1.0, 0.5, 30) == pytest.approx(math.pi / (math.pi - 1.0))
    assert ct.resmlp_apjn(1.0, 1.0, 0.0, 1.0, 0.1, ct.Activation.relu) == pytest.approx(1.01505)
    assert ct.jll([math.e]) == pytest.approx(0.5)
    assert ct.jkl([1.0], [1.0, 4.0], 0.5) == pytest.approx(0.4805, abs=1e-4)


def test_network_text_round_trip():
    spec = ct.resmlp_toy()
    assert ct.network_from_text(spec.to_text()) == spec


def test_errors_map_to_python():
    with pytest.raises(ct.CritError):
        ct.mlp(0, 4, 1.0)
    with pytest.raises(ct.CritError):
        ct.load_cifar10("/no/such/file.bin", 1)
    assert issubclass(ct.ConfigError, ct.CritError)
    assert issubclass(ct.DivergenceError, ct.CritError)


def test_quick_suite_and_command(tmp_path):
    assert "estimator" in ct.suite_names()
    assert ct.run_suite("kernel-fixed-point")["passed"]
    cfg = tmp_path / "m.cfg"
    cfg.write_text("network.depth = 2\nnetwork.width = 8\ndata.batch = 2\n")
    out = tmp_path / "m.csv"
    rc, err = ct.run_command("measure", str(cfg), out=str(out))
    assert rc == 0, err
    assert out.read_text().splitlines()[0].startswith("l0,l,J")
