import json
import math

import numpy as np
import pytest

import moment_stab as ms

IID = {"type": "iid", "n": 2,
       "modes": [[[0.6, 0.3], [-0.2, 0.5]], [[0.1, -0.7], [0.4, 0.2]]],
       "probs": [0.3, 0.7]}
MARTINGALE = {"type": "polytopic_martingale", "n": 2,
              "vertices": [[[0.4, 0.1], [0, 0.3]], [[0.3, 0], [0.2, 0.4]]],
              "gamma": 0.3}


def kron_lift(model):
    return sum(p * np.kron(np.array(a), np.array(a)) for a, p in zip(model["modes"], model["probs"]))


def test_parse_round_trip():
    m = ms.parse(IID)
    assert m.type == "iid" and m.n == 2 and m.modes == 2
    assert ms.parse(m.to_json()) == m


def test_bad_model_raises():
    with pytest.raises(ValueError):
        ms.parse({"type": "iid", "n": 1, "modes": [[[1.0]], [[2.0]]], "probs": [0.6, 0.5]})


def test_radius_matches_numpy():
    m = ms.parse(IID)
    rho = max(abs(np.linalg.eigvals(kron_lift(IID))))
    assert ms.second_moment_radius(m) == pytest.approx(rho, rel=1e-10)
    assert np.allclose(ms.moment_operator(m), kron_lift(IID), atol=1e-14)


def test_rate_and_stein_certificate():
    m = ms.parse(IID)
    b = ms.lambda_min(m, 1e-6)
    rate = math.sqrt(max(abs(np.linalg.eigvals(kron_lift(IID)))))
    assert b["exponentially_stable"]
    assert b["lo"] <= rate + 1e-7 and b["hi"] >= rate - 1e-7
    lam = min(0.999, rate + 0.05)
    cert = ms.solve_stein(m, lam)
    assert cert is not None and cert["recheck"]["eps"] > 0
    p = np.array(cert["blocks"]["P"])
    resid = lam**2 * p - sum(q * np.array(a).T @ p @ np.array(a) for a, q in zip(IID["modes"], IID["probs"]))
    assert min(np.linalg.eigvalsh((resid + resid.T) / 2)) > 0
    assert ms.solve_stein(m, max(0.01, rate - 0.05)) is None


def test_martingale_certificate_and_simulation():
    m = ms.parse(MARTINGALE)
    assert ms.gform_certificate(m, 0.8)["status"] == "feasible"
    a = ms.estimate_second_moment(m, 500, 15, 3, threads=1)
    b = ms.estimate_second_moment(m, 500, 15, 3, threads=4)
    assert a == b and len(a["values"]) == 16 and a["values"][0] == 2.0


def test_coupled_rejects_periodic():
    m = ms.parse({"type": "periodic_iid", "n": 1, "steps": [{"modes": [[[0.5]]], "probs": [1.0]}]})
    with pytest.raises(ValueError):
        ms.solve_coupled(m, 0.9)


def test_martingale_step_preserves_simplex():
    xi = ms.simplex_martingale_step([0.2, 0.5, 0.3], 0.4, 0.37)
    assert sum(xi) == pytest.approx(1.0) and min(xi) >= 0


def test_decay_fit_geometric():
    vals = [0.25**k for k in range(31)]
    f = ms.estimate_decay_rate(vals, [0.0] * 31)
    assert f["lambda_hat"] == pytest.approx(0.5, abs=1e-12)


def test_cli_json(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"type": "iid", "n": 1, "modes": [[[0.5]]], "probs": [1.0]}))
    code, out, err = ms.run_cli(["--format", "json", "analyze", str(path)])
    assert code == 0, err
    report = json.loads(out)
    assert report["verdict"] == "stable" and report["rho"] == pytest.approx(0.25)
    code, _, err = ms.run_cli(["analyze", str(tmp_path / "missing.json")])
    assert code == 3 and err
