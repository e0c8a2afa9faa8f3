"""Scenario files, policy serialization and report assembly (JSON).

Scenario layout::

    {
      "problem": "mvs" | "cs",
      "system": {
        "horizon": T,
        "a_seq": [A(0), ..., A(T-1)]   or  "a": A   (time invariant),
        "b_seq": [B(0), ..., B(T-1)]   or  "b": B,
        "noise_cov": W                 or  "noise_shaping": {"d": D, "v": V},
        "init_mean": mu0,
        "init_cov": Sigma0
      },
      "mu_f": [...],
      "rho": r                         (mvs only)
      "sigma_f": [[...]]               (cs only)
      "eta": k | "full" | null,
      "tolerances": {"tol_eq": ..., ...},
      "simulation": {"samples": N, "seed": s, "mode": ..., "tol_sigma": 4.0}
    }

Matrices are nested row-major lists; a bare number is accepted for a 1x1
matrix or a length-1 vector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ScenarioError
from .linalg import min_eig
from .policy import DisturbancePolicy
from .report import SolveReport, ToleranceSet
from .simulate import SimConfig, SimMode
from .systemmodel import EPS_PSD, LinearSystem, shaped_noise_cov

PROBLEMS = ("mvs", "cs")


@dataclass(frozen=True, eq=False)
class SimulationSettings:
    samples: int = 100_000
    seed: int = 0
    mode: SimMode = SimMode.DIRECT
    tol_sigma: float = 4.0

    def config(self) -> SimConfig:
        return SimConfig(self.samples, self.seed, self.mode)


@dataclass(frozen=True, eq=False)
class Scenario:
    system: LinearSystem
    problem: str
    mu_f: np.ndarray
    rho: float | None = None
    sigma_f: np.ndarray | None = None
    eta: int | None = None
    tolerances: ToleranceSet = field(default_factory=ToleranceSet)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)

    def problem_spec(self):
        from .cs import CsSpec
        from .mvs import MvsSpec

        if self.problem == "mvs":
            return MvsSpec(self.system, self.mu_f, self.rho, self.eta)
        return CsSpec(self.system, self.mu_f, self.sigma_f, self.eta)

    def with_eta(self, eta):
        return replace(self, eta=eta)


# -- parsing helpers ---------------------------------------------------------

def _require(data, key, path):
    if not isinstance(data, dict) or key not in data:
        raise ScenarioError("missing required field", f"{path}.{key}" if path else key)
    return data[key]


def _array(value, path, ndim):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"not numeric ({exc})", path) from None
    if arr.ndim == 0:
        arr = arr.reshape((1,) * ndim)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != ndim:
        raise ScenarioError(f"expected a {ndim}-dimensional array, got {arr.ndim} dimensions", path)
    if not np.all(np.isfinite(arr)):
        raise ScenarioError("contains non-finite values", path)
    return arr


def _square(value, path, n):
    arr = _array(value, path, 2)
    if arr.shape != (n, n):
        raise ScenarioError(f"expected shape ({n}, {n}), got {arr.shape}", path)
    return arr


def _symmetric(arr, path, strict):
    scale = max(1.0, float(np.abs(arr).max()))
    if not np.allclose(arr, arr.T, rtol=0, atol=1e-12 * scale):
        raise ScenarioError("matrix is not symmetric", path)
    low = min_eig(arr)
    if strict and not low > 0:
        raise ScenarioError(f"matrix is not positive definite (min eigenvalue {low:.3g})", path)
    if low < -EPS_PSD:
        raise ScenarioError(f"matrix is not positive semidefinite (min eigenvalue {low:.3g})", path)
    return arr


def _sequence(sys_data, seq_key, single_key, horizon, path):
    if seq_key in sys_data and single_key in sys_data:
        raise ScenarioError(f"give either {seq_key} or {single_key}, not both", f"{path}.{seq_key}")
    if single_key in sys_data:
        mat = _array(sys_data[single_key], f"{path}.{single_key}", 2)
        return np.repeat(mat[None], horizon, axis=0)
    raw = _require(sys_data, seq_key, path)
    if not isinstance(raw, list) or len(raw) != horizon:
        raise ScenarioError(f"expected a list of {horizon} matrices", f"{path}.{seq_key}")
    mats = [_array(item, f"{path}.{seq_key}[{i}]", 2) for i, item in enumerate(raw)]
    shapes = {mat.shape for mat in mats}
    if len(shapes) != 1:
        raise ScenarioError(f"matrices have differing shapes {sorted(shapes)}", f"{path}.{seq_key}")
    return np.stack(mats)


def _parse_eta(value, horizon, path="eta"):
    if value is None or value == "full":
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError("must be a positive integer, \"full\" or null", path)
    if value < 1:
        raise ScenarioError("must be >= 1", path)
    return None if value >= horizon - 1 else value


def parse_system(data, path="system") -> LinearSystem:
    horizon = _require(data, "horizon", path)
    if isinstance(horizon, bool) or not isinstance(horizon, int) or horizon < 1:
        raise ScenarioError("must be a positive integer", f"{path}.horizon")
    a_seq = _sequence(data, "a_seq", "a", horizon, path)
    n = a_seq.shape[1]
    if a_seq.shape[2] != n:
        raise ScenarioError(f"A matrices must be square, got {a_seq.shape[1:]}", f"{path}.a_seq")
    b_seq = _sequence(data, "b_seq", "b", horizon, path)
    if b_seq.shape[1] != n:
        raise ScenarioError(f"B matrices must have {n} rows, got {b_seq.shape[1]}", f"{path}.b_seq")
    if "noise_cov" in data and "noise_shaping" in data:
        raise ScenarioError("give either noise_cov or noise_shaping, not both", f"{path}.noise_cov")
    if "noise_shaping" in data:
        shaping = data["noise_shaping"]
        d = _array(_require(shaping, "d", f"{path}.noise_shaping"), f"{path}.noise_shaping.d", 2)
        if d.shape[0] != n:
            raise ScenarioError(f"D must have {n} rows", f"{path}.noise_shaping.d")
        v = _square(_require(shaping, "v", f"{path}.noise_shaping"), f"{path}.noise_shaping.v", d.shape[1])
        _symmetric(v, f"{path}.noise_shaping.v", strict=True)
        noise = shaped_noise_cov(d, v)
    else:
        noise = _square(_require(data, "noise_cov", path), f"{path}.noise_cov", n)
    _symmetric(noise, f"{path}.noise_cov", strict=False)
    mu0 = _array(_require(data, "init_mean", path), f"{path}.init_mean", 1)
    if mu0.shape != (n,):
        raise ScenarioError(f"expected length {n}, got {mu0.size}", f"{path}.init_mean")
    s0 = _square(_require(data, "init_cov", path), f"{path}.init_cov", n)
    _symmetric(s0, f"{path}.init_cov", strict=False)
    return LinearSystem(a_seq, b_seq, noise, mu0, s0)


def parse_scenario(data) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    problem = _require(data, "problem", "")
    if problem not in PROBLEMS:
        raise ScenarioError(f"must be one of {PROBLEMS}, got {problem!r}", "problem")
    system = parse_system(_require(data, "system", ""))
    n = system.n
    mu_f = _array(_require(data, "mu_f", ""), "mu_f", 1)
    if mu_f.shape != (n,):
        raise ScenarioError(f"expected length {n}, got {mu_f.size}", "mu_f")

    rho = sigma_f = None
    if "rho" in data and "sigma_f" in data:
        raise ScenarioError("give exactly one of rho (mvs) or sigma_f (cs)", "rho")
    if problem == "mvs":
        if "sigma_f" in data:
            raise ScenarioError("not used by the mvs problem", "sigma_f")
        rho = _require(data, "rho", "")
        if isinstance(rho, bool) or not isinstance(rho, (int, float)) or not rho > 0 or not math.isfinite(rho):
            raise ScenarioError("must be a positive number", "rho")
        rho = float(rho)
    else:
        if "rho" in data:
            raise ScenarioError("not used by the cs problem", "rho")
        sigma_f = _symmetric(_square(_require(data, "sigma_f", ""), "sigma_f", n), "sigma_f", strict=True)

    eta = _parse_eta(data.get("eta"), system.horizon)

    try:
        tolerances = ToleranceSet.from_dict(data.get("tolerances") or {})
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(str(exc), "tolerances") from None

    sim = data.get("simulation") or {}
    if not isinstance(sim, dict):
        raise ScenarioError("must be an object", "simulation")
    unknown = set(sim) - {"samples", "seed", "mode", "tol_sigma"}
    if unknown:
        raise ScenarioError(f"unknown key(s) {sorted(unknown)}", "simulation")
    defaults = SimulationSettings()
    samples = sim.get("samples", defaults.samples)
    if isinstance(samples, bool) or not isinstance(samples, int) or samples < 1:
        raise ScenarioError("must be a positive integer", "simulation.samples")
    seed = sim.get("seed", defaults.seed)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ScenarioError("must be an integer in [0, 2**64)", "simulation.seed")
    try:
        mode = SimMode(sim.get("mode", defaults.mode.value))
    except ValueError:
        raise ScenarioError(f"must be one of {[m.value for m in SimMode]}", "simulation.mode") from None
    tol_sigma = sim.get("tol_sigma", defaults.tol_sigma)
    if isinstance(tol_sigma, bool) or not isinstance(tol_sigma, (int, float)) or not tol_sigma > 0:
        raise ScenarioError("must be a positive number", "simulation.tol_sigma")

    return Scenario(
        system=system,
        problem=problem,
        mu_f=mu_f,
        rho=rho,
        sigma_f=sigma_f,
        eta=eta,
        tolerances=tolerances,
        simulation=SimulationSettings(samples, seed, mode, float(tol_sigma)),
    )


def _load_json(path):
    try:
        with open(path) as handle:
            text = handle.read()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def load_scenario(path) -> Scenario:
    """Read, dimension-check and PSD-check a scenario file."""
    return parse_scenario(_load_json(path))


# -- serialization -------------------------------------------------------------

def _clean(value):
    """JSON-ready copy: arrays to lists, non-finite floats to null."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if hasattr(value, "value") and isinstance(value.value, str):
        return value.value
    return value


def dumps(obj) -> str:
    """Deterministic JSON text (sorted keys, shortest round-trip floats)."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def system_to_dict(system: LinearSystem):
    return {
        "horizon": system.horizon,
        "a_seq": system.a_seq,
        "b_seq": system.b_seq,
        "noise_cov": system.noise_cov,
        "init_mean": system.init_mean,
        "init_cov": system.init_cov,
    }


def scenario_to_dict(scenario: Scenario):
    """Canonical, fully expanded form with all defaults filled."""
    out = {
        "problem": scenario.problem,
        "system": system_to_dict(scenario.system),
        "mu_f": scenario.mu_f,
        "eta": "full" if scenario.eta is None else scenario.eta,
        "tolerances": scenario.tolerances.to_dict(),
        "simulation": {
            "samples": scenario.simulation.samples,
            "seed": scenario.simulation.seed,
            "mode": scenario.simulation.mode.value,
            "tol_sigma": scenario.simulation.tol_sigma,
        },
    }
    if scenario.problem == "mvs":
        out["rho"] = scenario.rho
    else:
        out["sigma_f"] = scenario.sigma_f
    return _clean(out)


def policy_to_dict(policy: DisturbancePolicy):
    """Gains are listed as ``{t, tau, matrix}`` with ``t`` the gain's first
    index: gain ``(t, tau)`` feeds ``w(tau)`` into ``u(t+1)``."""
    return _clean({
        "horizon": policy.horizon,
        "m": policy.m,
        "n": policy.n,
        "eta": "full" if policy.eta is None else policy.eta,
        "u_bar": policy.u_bar.reshape(policy.horizon, policy.m),
        "gains": [{"t": s, "tau": tau, "matrix": mat} for (s, tau), mat in policy.gains.items()],
    })


def policy_from_dict(data, path="policy") -> DisturbancePolicy:
    try:
        horizon, m, n = int(data["horizon"]), int(data["m"]), int(data["n"])
        eta = data.get("eta")
        eta = None if eta in (None, "full") else int(eta)
        u_bar = np.array(data["u_bar"], dtype=float).reshape(-1)
        gains = {(int(g["t"]), int(g["tau"])): np.array(g["matrix"], dtype=float) for g in data["gains"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed policy ({exc})", path) from None
    try:
        return DisturbancePolicy(u_bar, gains, eta, horizon, m, n)
    except ValueError as exc:
        raise ScenarioError(str(exc), path) from None


def load_policy(path) -> DisturbancePolicy:
    """Read a policy from a solve report or a bare policy file."""
    data = _load_json(path)
    if isinstance(data, dict) and "policy" in data:
        if data["policy"] is None:
            raise ScenarioError("report contains no policy (solve was not successful)", "policy")
        return policy_from_dict(data["policy"])
    return policy_from_dict(data)


def solve_report_to_dict(scenario: Scenario, result: SolveReport, tolerances: ToleranceSet, prediction=None):
    """Report body; ``prediction`` is a list of ``(mean, cov)`` per stage."""
    stages = None
    if prediction is not None:
        stages = [{"t": t, "mean": mean, "cov": cov} for t, (mean, cov) in enumerate(prediction)]
    return _clean({
        "scenario": scenario_to_dict(replace(scenario, tolerances=tolerances)),
        "tolerances": tolerances.to_dict(),
        "result": {
            "status": result.status.value,
            "objective": result.objective,
            "effort_used": result.effort_used,
            "mean_residual_norm": result.mean_residual_norm,
            "multiplier": result.multiplier,
            "iterations": result.iterations,
            "diagnostics": result.diagnostics,
        },
        "policy": policy_to_dict(result.policy) if result.policy is not None else None,
        "predicted_moments": stages,
    })
