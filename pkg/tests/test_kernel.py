import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stopgo.cfm import DEFAULT_IDM, CfmInput, idm_accel
from stopgo.controllers import FollowerStopper, IdmRelaxation, controller_accel
from stopgo.sim import RingGeometry, ScenarioConfig, StretchGeometry, fail_safe, kernel, run
from stopgo.sim import _pykernel
from stopgo.sim.engine import ballistic
from stopgo.sim.params import KIND_FS, KIND_HUMAN, KIND_IDMR, pack

try:
    from stopgo.sim import _ckernel
except ImportError:  # pragma: no cover - extension not built
    _ckernel = None

needs_c = pytest.mark.skipif(_ckernel is None, reason="compiled kernel not built")


def call(mod, gap, v, vl, lim, kind, noise, prm):
    n = v.size
    outs = [np.empty(n) for _ in range(4)]
    em = mod.advance(gap, v, vl, lim, kind, noise, prm, *outs)
    return (em, *outs)


def random_state(rng, n):
    gap = rng.uniform(0.2, 80.0, n)
    gap[rng.random(n) < 0.1] = np.inf
    v = rng.uniform(0.0, 30.0, n)
    v[rng.random(n) < 0.1] = 0.0
    vl = rng.uniform(0.0, 30.0, n)
    lim = np.where(rng.random(n) < 0.3, rng.uniform(5, 30, n), np.inf)
    noise = rng.normal(0, 0.3, n)
    return gap, v, vl, lim, noise


@needs_c
@pytest.mark.parametrize("ctrl", [None, IdmRelaxation(6.0, 0.5), FollowerStopper(4.0)])
def test_backends_agree(ctrl):
    rng = np.random.default_rng(1)
    cav_kind = KIND_FS if isinstance(ctrl, FollowerStopper) else KIND_IDMR
    prm = pack(DEFAULT_IDM, "interaction", 0.4, (-4.5, 3.0), True, 4.5, 0.5, ctrl)
    for _ in range(20):
        gap, v, vl, lim, noise = random_state(rng, 500)
        kind = np.where(rng.random(500) < (0.0 if ctrl is None else 0.3), cav_kind, KIND_HUMAN).astype(np.int8)
        a = call(_pykernel, gap, v, vl, lim, kind, noise, prm)
        b = call(_ckernel, gap, v, vl, lim, kind, noise, prm)
        assert a[0] == b[0]
        for x, y in zip(a[1:], b[1:]):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)


@needs_c
def test_full_runs_agree(tmp_path):
    cfg = ScenarioConfig(StretchGeometry(), warmup=60.0, horizon=60.0, penetration=0.1,
                         controller=IdmRelaxation(5.0, 1.0), seed=4)
    env = dict(os.environ, STOPGO_PURE_PYTHON="1")
    code = ("import sys, numpy as np; from stopgo.sim import kernel, run, ScenarioConfig, StretchGeometry;"
            "from stopgo.controllers import IdmRelaxation;"
            "cfg = ScenarioConfig(StretchGeometry(), warmup=60.0, horizon=60.0, penetration=0.1,"
            " controller=IdmRelaxation(5.0, 1.0), seed=4);"
            "log = run(cfg).log; assert kernel.BACKEND == 'python';"
            "np.save(sys.argv[1], np.vstack([log.pos, log.speed]))")
    path = tmp_path / "pure.npy"
    subprocess.run([sys.executable, "-c", code, str(path)], env=env, check=True)
    pure = np.load(path)
    log = run(cfg).log
    assert kernel.BACKEND == "cython"
    np.testing.assert_allclose(np.vstack([log.pos, log.speed]), pure, rtol=1e-9, atol=1e-9)


def test_env_forces_fallback():
    env = dict(os.environ, STOPGO_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from stopgo.sim import kernel; print(kernel.BACKEND)"],
                         env=env, check=True, capture_output=True, text=True)
    assert out.stdout.strip() == "python"


@settings(max_examples=200)
@given(gap=st.floats(0.3, 200), v=st.floats(0, 30), vl=st.floats(0, 30))
def test_human_path_matches_scalar_reference(gap, v, vl):
    """Noise-free human step equals IDM -> fail-safe -> ballistic evaluated with the scalar helpers."""
    prm = pack(DEFAULT_IDM, "interaction", 0.4, (-4.5, 3.0), True, 4.5, 0.5)
    arr = lambda x: np.array([x], float)  # noqa: E731
    em, cmd, real, dx, vn = call(_pykernel, arr(gap), arr(v), arr(vl), arr(np.inf),
                                 np.array([KIND_HUMAN], np.int8), arr(0.0), prm)
    a = fail_safe(idm_accel(CfmInput(gap, v, vl - v), DEFAULT_IDM), v, gap, vl, 0.4)
    assert cmd[0] == pytest.approx(a, rel=1e-12, abs=1e-12)
    assert real[0] == cmd[0]
    ref_dx, ref_v = ballistic(v, a, 0.4)
    assert (dx[0], vn[0]) == pytest.approx((ref_dx, ref_v), rel=1e-12, abs=1e-12)


@settings(max_examples=100)
@given(gap=st.floats(0.3, 200), v=st.floats(0, 30), vl=st.floats(0, 30))
def test_controller_paths_match_library(gap, v, vl):
    for ctrl, kind in ((IdmRelaxation(6.0, 0.5), KIND_IDMR), (FollowerStopper(4.0), KIND_FS)):
        prm = pack(DEFAULT_IDM, "interaction", 0.4, (-4.5, 3.0), False, 4.5, 0.5, ctrl)
        arr = lambda x: np.array([x], float)  # noqa: E731
        _, cmd, *_ = call(_pykernel, arr(gap), arr(v), arr(vl), arr(np.inf), np.array([kind], np.int8),
                          arr(0.0), prm)
        assert cmd[0] == pytest.approx(controller_accel(CfmInput(gap, v, vl - v), ctrl, 0.4), rel=1e-12, abs=1e-12)


def test_backend_reported_in_metadata():
    r = run(ScenarioConfig(RingGeometry(300.0, 5), warmup=0.0, horizon=4.0))
    assert r.metadata["backend"] == kernel.BACKEND
