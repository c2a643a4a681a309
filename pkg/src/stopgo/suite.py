"""Benchmark suites: a baseline run plus a Cartesian controller sweep on a shared seed."""

from __future__ import annotations

import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .controllers import FollowerStopper, IdmRelaxation
from .energy import VehiclePortfolio, default_portfolio
from .kpi import compute_kpis
from .sim.config import ConfigError, ScenarioConfig, config_from_dict
from .sim.engine import run

CONTROLLER_KINDS = ("idm_relaxation", "follower_stopper")
#: ``v_desired`` entry that stands for the baseline's mean network speed
BASELINE_SPEED = "baseline"


@dataclass(frozen=True)
class BenchmarkSuite:
    template: ScenarioConfig  # baseline scenario: no controller, zero penetration
    controllers: tuple[str, ...]
    v_desired: tuple  # floats, or BASELINE_SPEED
    gamma: tuple[float, ...]
    penetration: tuple[float, ...]

    def __post_init__(self):
        for name in ("controllers", "v_desired", "gamma", "penetration"):
            if not getattr(self, name):
                raise ConfigError(f"sweep.{name}", "must be a non-empty list")
        for c in self.controllers:
            if c not in CONTROLLER_KINDS:
                raise ConfigError("sweep.controllers", f"unknown controller {c!r}")
        for v in self.v_desired:
            if v != BASELINE_SPEED and not (isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0):
                raise ConfigError("sweep.v_desired", f"entries must be > 0 or {BASELINE_SPEED!r}, got {v!r}")
        for g in self.gamma:
            if not (isinstance(g, (int, float)) and g > 0):
                raise ConfigError("sweep.gamma", f"entries must be > 0, got {g!r}")
        for p in self.penetration:
            if not (isinstance(p, (int, float)) and 0 < p <= 1):
                raise ConfigError("sweep.penetration", f"entries must lie in (0, 1], got {p!r}")
        if self.template.controller is not None or self.template.penetration != 0:
            raise ConfigError("scenario", "the baseline template must have no controller and penetration 0")

    def runs(self, baseline_speed: float) -> list[tuple[str, ScenarioConfig]]:
        out = []
        for kind, v, pen in product(self.controllers, self.v_desired, self.penetration):
            vd = baseline_speed if v == BASELINE_SPEED else float(v)
            vtag = "vbase" if v == BASELINE_SPEED else f"v{v:g}"
            if kind == "follower_stopper":
                out.append((f"fs_{vtag}_p{pen:g}", replace(self.template, controller=FollowerStopper(vd),
                                                           penetration=float(pen))))
            else:
                for g in self.gamma:
                    ctrl = IdmRelaxation(vd, float(g), self.template.idm)
                    out.append((f"idmr_{vtag}_g{g:g}_p{pen:g}",
                                replace(self.template, controller=ctrl, penetration=float(pen))))
        return out


def suite_from_dict(d: dict, seed_override: int | None = None) -> BenchmarkSuite:
    if "seed" not in d and seed_override is None:
        raise ConfigError("seed", "suite files must set a seed")
    scen = dict(d.get("scenario") or {})
    if "seed" in scen:
        raise ConfigError("scenario.seed", "set the seed at the top level of the suite")
    scen["seed"] = seed_override if seed_override is not None else d["seed"]
    template = config_from_dict(scen)
    sw = d.get("sweep") or {}
    unknown = set(sw) - {"controllers", "v_desired", "gamma", "penetration"}
    if unknown:
        raise ConfigError(f"sweep.{sorted(unknown)[0]}", "unknown key")
    extra = set(d) - {"seed", "scenario", "sweep"}
    if extra:
        raise ConfigError(sorted(extra)[0], "unknown key")
    return BenchmarkSuite(
        template=template,
        controllers=tuple(sw.get("controllers", CONTROLLER_KINDS)),
        v_desired=tuple(sw.get("v_desired", (3, 4, 5, 6, 7))),
        gamma=tuple(sw.get("gamma", (0.5, 1.0))),
        penetration=tuple(sw.get("penetration", (0.05, 0.10))),
    )


def load_suite(path, seed_override: int | None = None) -> BenchmarkSuite:
    path = Path(path)
    raw = path.read_bytes()
    try:
        d = json.loads(raw) if path.suffix.lower() == ".json" else tomllib.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError("<file>", f"cannot parse {path.name}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("<root>", "suite must be a table/object")
    suite = suite_from_dict(d, seed_override)
    if suite.template.portfolio and not Path(suite.template.portfolio).is_absolute():
        suite = replace(suite, template=replace(suite.template,
                                                portfolio=str(path.parent / suite.template.portfolio)))
    return suite


def scenario_portfolio(cfg: ScenarioConfig) -> VehiclePortfolio:
    return VehiclePortfolio.load(cfg.portfolio) if cfg.portfolio else default_portfolio()


def _evaluate(args):
    label, cfg, baseline = args
    try:
        res = run(cfg)
        rep = compute_kpis(res.log, scenario_portfolio(cfg), baseline)
        return label, rep, None
    except Exception as exc:  # recorded in the table, the sweep carries on
        return label, None, f"{type(exc).__name__}: {exc}"


def run_suite(suite: BenchmarkSuite, jobs: int = 1):
    """Returns ``(baseline_report, [(label, report)], {label: error})``.

    The baseline failing is fatal; individual sweep points are not.
    """
    base = run(suite.template)
    baseline = compute_kpis(base.log, scenario_portfolio(suite.template))
    tasks = [(label, cfg, baseline) for label, cfg in suite.runs(baseline.mean_network_speed)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_evaluate, tasks))
    else:
        results = [_evaluate(t) for t in tasks]
    reports = [(label, rep) for label, rep, err in results if rep is not None]
    errors = {label: err for label, rep, err in results if rep is None}
    return baseline, reports, errors

