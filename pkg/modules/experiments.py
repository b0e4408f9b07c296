"""
Experiment runner: validates a configuration, dispatches it to the owning
module and writes the report (CSV table plus summaries).

A configuration is a JSON or TOML document with a `kind` and the keys its
runner reads; see config/experiments/ for one example per kind.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .cache import ResultCache, effective_matrix_key
from .covering import covering_test
from .ensemble import EnvironmentEnsemble, cell_moment_estimate, intensity_estimate, palm_expectation
from .envelopes import create_envelope
from .environment import Environment
from .errors import ConfigError, ConvergenceError, InvariantViolation
from .ergodic import (c_psi, check_conditions, conditional_limit_check, create_weight, lp_deviation,
                      maximal_tail_estimate, weighted_averages)
from .fields import create_field
from .functions import DecayFunction, test_function
from .generator import build_generator, laplace_semigroup, resolvent, semigroup
from .homogenizer import EffectiveMatrix, duality_check, effective_matrix, ensemble_effective_matrix
from .laws import Law
from .measure import from_environment, integrate, rescale, tail_mass
from .models import ZdNN, create_model, generate_environment
from .paths import JumpTable, msd_estimate, occupancy_estimate, simulate_ensemble
from .reference import check_scale_separation, convergence_table
from .exclusion import TORUS_FUNCTIONS, hydro_check, torus_profile
from .report_logger import ReportLogger
from .storage import load_environment, save_environment
from .utils import (config_hash, file_sha256, mean_stderr, parallel_map, read_structured, replica_seed,
                    replica_seeds)

KINDS = ('gen-env', 'ergodic-avg', 'maximal', 'covering-test', 'measure-limit', 'resolvent',
         'semigroup', 'paths', 'operator-identities', 'effective-matrix', 'msd-crosscheck',
         'homog-convergence', 'sep-hydro', 'accept')

DEFAULT_TOLERANCES = {
    'truncation': 1e-8,
    'solver': 1e-8,
    'corrector': 1e-10,
    'semigroup': 1e-12,
    'quadrature': 1e-8,
}

# kinds whose tables are indexed by an eps grid
EPS_KINDS = ('measure-limit', 'homog-convergence')


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    d: int = 1
    L: int = 64
    kappa: float = 2.0
    model: Optional[Dict[str, Any]] = None
    weight: Optional[Dict[str, Any]] = None
    field_spec: Optional[Dict[str, Any]] = None
    test_function: Any = None
    moment_alpha: Optional[float] = None
    eps_grid: Tuple[float, ...] = ()
    n_grid: Tuple[int, ...] = ()
    master_seed: int = 0
    replicas: int = 1
    tolerances: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    params: Dict[str, Any] = field(default_factory=dict)
    criteria: Dict[str, Any] = field(default_factory=dict)
    raw: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        """
        Validate a configuration dictionary.

        Raises:
            ConfigError: naming the first offending key
        """
        if not isinstance(data, dict):
            raise ConfigError('<root>', "configuration must be a mapping")
        kind = data.get('kind')
        if kind not in KINDS:
            raise ConfigError('kind', f"unknown experiment kind '{kind}', expected one of {KINDS}")

        d = _int(data, 'd', 1)
        if not 1 <= d <= 3:
            raise ConfigError('d', "dimension must be 1, 2 or 3")
        L = _int(data, 'L', 64)
        if L < 2:
            raise ConfigError('L', "torus side must be at least 2")
        kappa = float(data.get('kappa', 2.0))
        if not kappa >= 1:
            raise ConfigError('kappa', "norm index must be at least 1")

        eps_grid = tuple(float(e) for e in data.get('eps_grid', ()))
        if kind in EPS_KINDS and not eps_grid:
            raise ConfigError('eps_grid', "eps grid must not be empty")
        if any(not 0 < e <= 1 for e in eps_grid):
            raise ConfigError('eps_grid', "every eps must lie in (0, 1]")
        if kind in EPS_KINDS and 'env_file' not in data.get('params', {}):
            try:
                check_scale_separation(eps_grid, L)
            except ValueError as e:
                raise ConfigError('eps_grid', str(e)) from e
        n_grid = tuple(int(n) for n in data.get('n_grid', ()))
        if kind == 'ergodic-avg' and not n_grid:
            raise ConfigError('n_grid', "n grid must not be empty")
        if any(n < 1 for n in n_grid):
            raise ConfigError('n_grid', "every n must be at least 1")

        seeds = data.get('seeds', {})
        master_seed = int(seeds.get('master', 0))
        replicas = int(seeds.get('replicas', 1))
        if replicas < 1:
            raise ConfigError('seeds.replicas', "replica count must be at least 1")
        if master_seed < 0:
            raise ConfigError('seeds.master', "master seed must be non-negative")

        tolerances = dict(DEFAULT_TOLERANCES)
        for key, value in data.get('tolerances', {}).items():
            if key not in DEFAULT_TOLERANCES:
                raise ConfigError(f"tolerances.{key}", f"unknown tolerance, expected one of {tuple(DEFAULT_TOLERANCES)}")
            if not float(value) > 0:
                raise ConfigError(f"tolerances.{key}", "tolerance must be positive")
            tolerances[key] = float(value)

        moment_alpha = data.get('moment_alpha')
        if moment_alpha is not None and not float(moment_alpha) > 1:
            raise ConfigError('moment_alpha', "the moment condition needs alpha > 1")

        config = cls(kind=kind, d=d, L=L, kappa=kappa, model=data.get('model'), weight=data.get('weight'),
                     field_spec=data.get('field'), test_function=data.get('test_function'),
                     moment_alpha=None if moment_alpha is None else float(moment_alpha),
                     eps_grid=eps_grid, n_grid=n_grid, master_seed=master_seed, replicas=replicas,
                     tolerances=tolerances, params=dict(data.get('params', {})),
                     criteria=dict(data.get('criteria', {})), raw=data)
        config._validate_kind()
        return config

    @classmethod
    def from_file(cls, path: Path) -> 'ExperimentConfig':
        try:
            data = read_structured(Path(path))
        except (OSError, ValueError) as e:
            raise ConfigError('<file>', f"cannot read {path}: {e}") from e
        return cls.from_dict(data)

    def _validate_kind(self):
        if self.model is not None:
            try:
                create_model(self.model)
            except (KeyError, ValueError, TypeError) as e:
                raise ConfigError('model', str(e)) from e
        needs_model = ('gen-env', 'measure-limit', 'effective-matrix', 'msd-crosscheck',
                       'homog-convergence', 'sep-hydro')
        if self.kind in needs_model and self.model is None and 'cases' not in self.params:
            raise ConfigError('model', f"'{self.kind}' needs a model")
        if self.kind in ('ergodic-avg', 'maximal'):
            if self.weight is None:
                raise ConfigError('weight', f"'{self.kind}' needs a weight")
            w = create_weight(self.weight, self.d)
            try:
                w.check()
            except InvariantViolation as e:
                raise ConfigError('weight.beta', str(e)) from e
        if self.kind == 'measure-limit':
            self.require_class(self.function(), 2 * self.d + 2, self.d)
        if self.kind == 'homog-convergence':
            # L^1 errors need G(2d+2), or G(d) under the moment condition
            self.require_class(self.function(), 2 * self.d + 2, self.d)

    def function(self) -> DecayFunction:
        if self.test_function is None:
            raise ConfigError('test_function', f"'{self.kind}' needs a test function")
        return test_function(self.test_function)

    def require_class(self, fn: DecayFunction, plain: float, with_moment: float):
        needed = with_moment if self.moment_alpha is not None else plain
        if not fn.in_class(needed):
            rule = f"beta > d = {with_moment} (moment condition declared)" if self.moment_alpha is not None \
                else f"beta > 2d + 2 = {plain}"
            raise ConfigError('test_function', f"{fn.name} has decay exponent beta = {fn.beta}; "
                                               f"this run requires {rule}")

    @property
    def seeds(self) -> List[int]:
        return replica_seeds(self.master_seed, self.replicas)

    def with_overrides(self, seed: Optional[int] = None) -> 'ExperimentConfig':
        if seed is None:
            return self
        raw = dict(self.raw)
        raw['seeds'] = {**raw.get('seeds', {}), 'master': int(seed)}
        return replace(self, master_seed=int(seed), raw=raw)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


@dataclass
class ExperimentReport:
    kind: str
    config_hash: str
    rows: List[Dict[str, Any]]
    criteria: Dict[str, bool]
    details: Dict[str, Any]
    wall_clock: float = 0.0
    csv_path: Optional[Path] = None

    @property
    def passed(self) -> bool:
        return all(self.criteria.values())


@dataclass
class RunContext:
    out_dir: Path
    threads: int = 1
    include_timings: bool = False
    cache: Optional[ResultCache] = None
    settings: Dict[str, Any] = field(default_factory=dict)


Outcome = Tuple[List[Dict[str, Any]], Dict[str, bool], Dict[str, Any]]


def _int(data: Dict[str, Any], key: str, default: int) -> int:
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) and not (
            isinstance(value, float) and value.is_integer()):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    return int(value)


def _param(config: ExperimentConfig, key: str, default=None, required: bool = False):
    if key in config.params:
        return config.params[key]
    if required:
        raise ConfigError(f"params.{key}", f"'{config.kind}' needs params.{key}")
    return default


def _environment(config: ExperimentConfig, seed: int) -> Environment:
    env_file = config.params.get('env_file')
    if env_file:
        return load_environment(Path(env_file))
    return generate_environment(config.model, config.d, config.L, seed, kappa=config.kappa)


def _cached_effective_matrix(ctx: RunContext, config: ExperimentConfig, env: Environment) -> EffectiveMatrix:
    tol = config.tolerances['corrector']
    key = None
    if ctx.cache is not None and config.model is not None and 'env_file' not in config.params:
        key = effective_matrix_key(create_model(config.model).to_dict(), env.d, env.L, env.seed, tol, env.kappa)
        cached = ctx.cache.get(key)
        if cached is not None:
            return EffectiveMatrix.from_dict(cached)
    result = effective_matrix(env, tol, ctx.threads)
    if key is not None:
        ctx.cache.put(key, result.to_dict())
    return result


# ---------------------------------------------------------------------------
# Environment and ergodic experiments
# ---------------------------------------------------------------------------

def run_gen_env(config: ExperimentConfig, ctx: RunContext) -> Outcome:
    ensemble = EnvironmentEnsemble(config.model, config.d, config.L, config.master_seed,
                                   config.replicas, config.kappa, ctx.threads)
    rows = []
    save = bool(_param(config, 'save', True))
    for env in ensemble.environments():
        stats = env.describe()
        row = {'seed': env.seed, **stats, 'connected': env.is_connected()}
        if save:
            path = save_environment(env, ctx.out_dir / 'environments' / f"{env.model_tag}_{env.seed}.env")
            row['file'] = path.name
        rows.append(row)
    details: Dict[str, Any] = {}
    criteria = {'invariants': True}
    if config.replicas >= 2:
        intensity = intensity_estimate(ensemble)
        details['intensity'] = intensity.value
        details['intensity_stderr'] = intensity.stderr
        expected = ensemble.model.intensity(config.d)
        if expected is not None:
            details['intensity_expected'] = expected
            criteria['intensity'] = intensity.within(expected)
        if ensemble.environments()[0].lattice.is_identity:
            for name in ('lambda0', 'lambda2'):
                estimate = palm_expectation(ensemble, name)
                details[f"palm_{name}"] = estimate.value
                details[f"palm_{name}_stderr"] = estimate.stderr
    return rows, criteria, details


def run_ergodic_avg(config: ExperimentConfig, ctx: RunContext) -> Outcome:
    w = create_weight(config.weight, config.d)
    field_spec = config.field_spec or {'kind': 'hash', 'law': {'kind': 'bernoulli', 'p': 0.5}}
    tol = config.tolerances['truncation']
    if field_spec.get('kind') == 'mixture':
        return _run_conditional_limit(config, ctx, w, field_spec)

    def one_seed(seed: int) -> List[Dict[str, Any]]:
        field_ = create_field(field_spec, seed, config.d)
        out = []
        for n in config.n_grid:
            result = weighted_averages([field_], w, n, tol=tol)[0]
            out.append((seed, n, result, field_.mean()))
        return out

    per_seed = parallel_map(one_seed, config.seeds, ctx.threads)
    c_values = {n: c_psi(w, n, min(tol, 1e-10)).value for n in config.n_grid}
    rows = []
    for entries in per_seed:
        for seed, n, result, mean in entries:
            target = c_values[n] * mean
            rows.append({'seed': seed, 'n': n, 'value': result.value, 'truncation_bound': result.truncation_bound,
                         'target': target, 'abs_error': abs(result.value - target),
                         'rel_error': abs(result.value - target) / abs(c_values[n]) if c_values[n] else math.nan,
                         'heuristic': result.heuristic})
    medians = {n: float(np.median([r['rel_error'] for r in rows if r['n'] == n])) for n in config.n_grid}
    details: Dict[str, Any] = {f"median_rel_error_n{n}": v for n, v in medians.items()}
    details.update({f"c_psi_n{n}": v for n, v in c_values.items()})
    criteria: Dict[str, bool] = {}
    n_max, n_min = max(config.n_grid), min(config.n_grid)
    if 'median_rel_error_max' in config.criteria:
        criteria['median_rel_error'] = medians[n_max] <= float(config.criteria['median_rel_error_max'])
    if config.criteria.get('decreasing') and n_max != n_min:
        criteria['decreasing'] = medians[n_max] < medians[n_min]
    if _param(config, 'lp_deviation', False):
        for p in (1, 2):
            details[f"lp{p}_deviation_n{n_max}"] = lp_deviation(field_spec, w, n_max, p, config.seeds, tol, ctx.threads)
    if _param(config, 'check_conditions', False):
        check = check_conditions(w, sorted(config.n_grid))
        details['conditions_constant_converges'] = check.constant_converges
        details['conditions_defect_vanishes'] = check.defect_vanishes
    return rows, criteria, details


def _run_conditional_limit(config: ExperimentConfig, ctx: RunContext, w, field_spec: Dict[str, Any]) -> Outcome:
    laws = [Law.from_dict(spec) for spec in field_spec['laws']]
    if len(laws) != 2:
        raise ConfigError('field.laws', "the mixture field needs two component laws")
    n = max(config.n_grid)
    report = conditional_limit_check(laws, w, n, config.seeds, float(config.criteria.get('rel_tol', 0.1)),
                                     config.tolerances['truncation'], ctx.threads,
                                     float(field_spec.get('mix_prob', 0.5)))
    criteria = {}
    if 'fraction_within_min' in config.criteria:
        criteria['fraction_within'] = report.fraction_within >= float(config.criteria['fraction_within_min'])
    if 'wrong_cluster_max' in config.criteria:
        criteria['wrong_cluster'] = report.wrong_cluster <= int(config.criteria['wrong_cluster_max'])
    details = {'c_psi': report.c_psi, 'targets': report.targets, 'fraction_within': report.fraction_within,
               'wrong_cluster': report.wrong_cluster}
    return report.rows, criteria, details


def run_maximal(config: ExperimentConfig, ctx: RunContext) -> Outcome:
    w = create_weight(config.weight, config.d)
    law = Law.from_dict(_param(config, 'law', {'kind': 'exponential', 'rate': 1.0}))
    N = int(_param(config, 'N', 64))
    alphas = [float(a) for a in _param(config, 'alphas', [1, 2, 4, 8, 16])]
    table = maximal_tail_estimate(law, w, N, alphas, config.seeds, config.tolerances['truncation'], ctx.threads)
    criteria = {}
    if 'tail_ratio_max' in config.criteria:
        first = table.rows[0]['alpha_p']
        worst = max(row['alpha_p'] for row in table.rows)
        criteria['tail_bounded'] = worst <= float(config.criteria['tail_ratio_max']) * first if first > 0 \
            else worst == 0
    return table.rows, criteria, {'c_hat': table.c_hat, 'l1_norm': table.l1_norm, 'N': N}


def run_covering(config: ExperimentConfig, ctx: RunContext) -> Outcome:
    instances = int(_param(config, 'instances', 1000))
    rows = covering_test(instances, config.master_seed, config.d, int(_param(config, 'max_points', 50)),
                         int(_param(config, 'max_levels', 4)))
    ok = [r['disjoint'] and r['covered'] and r['cardinality'] for r in rows]
    return rows, {'all_instances': all(ok)}, {'instances': instances, 'passed': sum(ok)}


def run_measure_limit(config: ExperimentConfig, ctx: RunContext) -> Outcome:
    phi = config.function()
    model = create_model(config.model)
    ensemble = EnvironmentEnsemble(model, config.d, config.L, config.master_seed, config.replicas,
                                   config.kappa, ctx.threads)
    envs = ensemble.environments()
    m = model.intensity(config.d)
    if m is None:
        m = intensity_estimate(ensemble).value
    target = m * phi.integral(config.d)
    theta = create_envelope(_param(config, 'tail_envelope', {'family': 'power', 'C': 1.0, 'beta': 2 * config.d + 2}))
    ell_grid = [float(x) for x in _param(config, 'ell_grid', [1.0, 2.0, 4.0])]
    base = [from_environment(env) for env in envs]

    rows = []
    tails: Dict[Tuple[float, float], float] = {}
    for eps in config.eps_grid:
        measures = [rescale(mu, eps) for mu in base]
        values = [integrate(mu, phi) for mu in measures]
        mean, stderr = mean_stderr(values)
        rows.append({'row_type': 'integral', 'eps': eps, 'ell': '', 'estimate': mean, 'stderr': stderr,
                     'target': target, 'abs_error': abs(mean - target), 'seed_count': len(values)})
        for ell in ell_grid:
            tail_mean, tail_err = mean_stderr([tail_mass(mu, theta, ell) for mu in measures])
            tails[(eps, ell)] = tail_mean
            rows.append({'row_type': 'tail', 'eps': eps, 'ell': ell, 'estimate': tail_mean, 'stderr': tail_err,
                         'target': '', 'abs_error': '', 'seed_count': len(measures)})
    finest = min(config.eps_grid)
    final = next(r for r in rows if r['row_type'] == 'integral' and r['eps'] == finest)
    criteria = {}
    if 'n_sigma' in config.criteria:
        criteria['integral'] = final['abs_error'] <= float(config.criteria['n_sigma']) * final['stderr']
    if 'tail_ratio_max' in config.criteria:
        low, high = min(ell_grid), max(ell_grid)
        criteria['tail_trend'] = tails[(finest, high)] <= float(config.criteria['tail_ratio_max']) * tails[(finest, low)]
    details = {'intensity': m, 'target': target}
    if config.moment_alpha is not None:
        moment = cell_moment_estimate(ensemble, config.moment_alpha)
        details['cell_moment'] = moment.value
        details['cell_moment_stderr'] = moment.stderr
    return rows, criteria, details


# ---------------------------------------------------------------------------
# Operator experiments
# ---------------------------------------------------------------------------

def _vector_rows(positions: np.ndarray, values: np.ndarray) -> List[Dict[str, Any]]:
    rows = []
    for i, (x, v) in enumerate(zip(positions, values)):
        row = {'atom_id': i}
        row.update({f"x{k + 1}": float(c) for k, c in enumerate(x)})
        row['value'] = float(v)
        rows.append(row)
    return rows


def run_resolvent(config: ExperimentConfig, ctx: RunContext) -> Outcome:
    env = _environment(config, config.seeds[0])
    gen = build_generator(env, float(_param(config, 'eps', 1.0)))
    f = test_function(_param(config, 'f', 'gaussian:1'))
    lam = float(_param(config, 'lambda', 1.0))
    result = resolvent(gen, lam, f(gen.positions), config.tolerances['solver'])
    criteria = {'residual': result.relative_residual <= config.tolerances['solver']}
    details = {'iterations': result.iterations, 'relative_residual': result.relative_residual, 'seed': env.seed}
    return _vector_rows(gen.positions, result.x), criteria, details


def run_semigroup(config: ExperimentConfig, ctx: RunContext) -> Outcome:
    env = _environment(config, config.seeds[0])
    gen = build_generator(env, float(_param(config, 'eps', 1.0)))
    f = test_function(_param(config, 'f', 'gaussian:1'))
    values = f(gen.positions)
    u = semigroup(gen, float(_param(config, 't', 1.0)), values, config.tolerances['semigroup'])
    bounded = bool(np.all(u >= values.min() - 1e-12) and np.all(u <= values.max() + 1e-12))
    return _vector_rows(gen.positions, u), {'maximum_principle': bounded}, {'seed': env.seed}


def run_paths(config: ExperimentConfig, ctx: RunContext) -> Outcome:
    env = _environment(config, config.seeds[0])
    eps = float(_param(config, 'eps', 1.0))
    T = float(_param(config, 'T', 1.0))
    n_paths = int(_param(config, 'n', 1000))
    rng = np.random.default_rng(replica_seed(env.seed, 1))
    table = JumpTable(env, eps)
    start = env.atom_index(_param(config, 'start', 0))
    result = simulate_ensemble(table, np.full(n_paths, start), T, rng)
    rows = []
    for k in range(n_paths):
        row = {'path': k, 'start': start, 'end_atom': int(result.atoms[k, -1]), 'n_jumps': int(result.n_jumps[k])}
        row.update({f"dx{i + 1}": float(v) for i, v in enumerate(result.displacements[k, -1])})
        rows.append(row)
    jumps_mean, jumps_err = mean_stderr(result.n_jumps)
    details = {'mean_jumps': jumps_mean, 'mean_jumps_stderr': jumps_err,
               'expected_jumps': float(table.hold_rate[start]) * T if env.n_atoms else 0.0}
    return rows, {}, details


def _two_state_error(gen, t: float, f: np.ndarray, tol: float) -> float:
    a, b = gen.matrix[0, 1], gen.matrix[1, 0]
    pi = np.array([b, a]) / (a + b)
    mean = float(pi @ f)
    exact = mean + math.exp(-(a + b) * t) * (f - mean)
    return float(np.max(np.abs(semigroup(gen, t, f, tol) - exact)))


def _identity_instance(k: int, master_seed: int, tol: float, semigroup_tol: float) -> Dict[str, Any]:
    seed = replica_seed(master_seed, k)
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 3))
    L = int(rng.integers(2, 65)) if d == 1 else int(rng.integers(2, 9))
    multiplicity = Law.choice((1.0, 2.0)) if rng.random() < 0.5 else Law.constant(1.0)
    env = generate_environment(ZdNN(Law.uniform(0.5, 2.0), multiplicity), d, L, seed)
    eps = float(rng.choice([1.0, 0.5, 0.25]))
    gen = build_generator(env, eps)
    f = rng.normal(size=gen.n_states)
    g = rng.normal(size=gen.n_states)
    lam, nu = rng.uniform(0.5, 4.0, size=2)
    t, s = rng.uniform(0.05, 1.0, size=2)
    f_norm = gen.norm(f)

    try:
        r_lam = resolvent(gen, lam, f, tol)
        r_nu = resolvent(gen, nu, f, tol)
        r_lam_nu = resolvent(gen, lam, r_nu.x, tol)
        residual = max(r_lam.relative_residual, r_nu.relative_residual)
        identity = gen.norm((r_lam.x - r_nu.x) - (nu - lam) * r_lam_nu.x) / f_norm
    except ConvergenceError as e:
        logging.error(f"Instance {k}: {e}")
        residual, identity = math.inf, math.inf
        r_lam = None
    laplace = laplace_semigroup(gen, lam, f)
    laplace_defect = float(np.max(np.abs(laplace.value - lam * r_lam.x))) / float(np.max(np.abs(f))) \
        if r_lam is not None else math.inf
    p_ts = semigroup(gen, t + s, f, semigroup_tol)
    p_t_p_s = semigroup(gen, t, semigroup(gen, s, f, semigroup_tol), semigroup_tol)
    adjoint = abs(gen.inner(semigroup(gen, t, f, semigroup_tol), g) - gen.inner(f, semigroup(gen, t, g, semigroup_tol)))
    positive = np.abs(f)
    return {
        'instance': k, 'seed': seed, 'd': d, 'L': L, 'n_states': gen.n_states, 'eps': eps,
        'lambda': float(lam), 'nu': float(nu), 't': float(t), 's': float(s),
        'resolvent_residual': residual, 'resolvent_identity_defect': identity,
        'laplace_defect': laplace_defect, 'laplace_order': laplace.order,
        'semigroup_property_defect': gen.norm(p_ts - p_t_p_s) / f_norm,
        'self_adjoint_defect': adjoint / (f_norm * gen.norm(g)),
        'contraction': gen.norm(p_ts) <= f_norm * (1 + 1e-12),
        'positivity': bool(np.all(semigroup(gen, t, positive, semigroup_tol) >= -1e-14)
                           and (r_lam is None or np.all(resolvent(gen, lam, positive, tol).x >= -1e-12))),
    }


def run_operator_identities(config: ExperimentConfig, ctx: RunContext) -> Outcome:
    instances = int(_param(config, 'instances', 100))
    tol = config.tolerances['solver']
    semigroup_tol = config.tolerances['semigroup']
    rows = parallel_map(lambda k: _identity_instance(k, config.master_seed, tol, semigroup_tol),
                        range(instances), ctx.threads)

    # two-state instance: closed form and Gillespie occupancy
    seed = replica_seed(config.master_seed, instances)
    two_env = generate_environment(ZdNN(Law.uniform(0.5, 2.0), Law.choice((1.0, 2.0))), 1, 2, seed)
    two = build_generator(two_env, 1.0)
    t = float(_param(config, 't', 0.3))
    closed_form = max(_two_state_error(two, t, np.array([1.0, 0.0]), semigroup_tol),
                      _two_state_error(two, t, np.array([0.0, 1.0]), semigroup_tol))
    n_paths = int(_param(config, 'paths', 100_000))
    occupancy = occupancy_estimate(JumpTable(two_env, 1.0), 0, t, [1], n_paths,
                                   np.random.default_rng(replica_seed(seed, 1)))
    exact = float(semigroup(two, t, np.array([0.0, 1.0]), semigroup_tol)[0])
    details = {'two_state_error': closed_form, 'occupancy': occupancy.value,
               'occupancy_stderr': occupancy.stderr, 'occupancy_exact': exact}
    criteria = {
        'resolvent_residual': max(r['resolvent_residual'] for r in rows) <= float(config.criteria.get('residual_max', 1e-8)),
        'resolvent_identity': max(r['resolvent_identity_defect'] for r in rows) <= float(config.criteria.get('identity_max', 1e-6)),
        'laplace_consistency': max(r['laplace_defect'] for r in rows) <= float(config.criteria.get('laplace_max', 1e-6)),
        'two_state_closed_form': closed_form <= float(config.criteria.get('two_state_max', 1e-10)),
        'occupancy': occupancy.within(exact, 3.0),
    }
    return rows, criteria, details


# ---------------------------------------------------------------------------
# Homogenization experiments
# ---------------------------------------------------------------------------

def _matrix_row(seed: int, L: int, result: EffectiveMatrix) -> Dict[str, Any]:
    d = result.D.shape[0]
    row: Dict[str, Any] = {'seed': seed, 'L': L}
    for i in range(d):
        for j in range(d):
            row[f"D{i + 1}{j + 1}"] = float(result.D[i, j])
    row['residual_max'] = result.residual_max
    row['upper_bound_gap'] = result.upper_bound_gap
    return row


def _effective_case(case: Dict[str, Any], config: ExperimentConfig, ctx: RunContext) -> Outcome:
    name = case.get('name', case.get('oracle', 'case'))
    d = int(case.get('d', config.d))
    L = int(case.get('L', config.L))
    replicas = int(case.get('replicas', config.replicas))
    model_spec = case.get('model', config.model)
    if model_spec is None:
        raise ConfigError(f"params.cases.{name}.model", "case needs a model")
    model = create_model(model_spec)
    tol = config.tolerances['corrector']
    oracle = case.get('oracle')
    criteria: Dict[str, bool] = {}
    details: Dict[str, Any] = {}
    rows: List[Dict[str, Any]] = []

    if oracle == 'duality':
        law = model.law
        report = duality_check(law, L, replicas, config.master_seed, tol, ctx.threads, ctx.cache)
        rows.append({'case': name, 'seed': config.master_seed, 'L': L, 'D_law': report.d_law,
                     'D_swapped': report.d_swapped, 'product': report.product, 'target': report.target,
                     'relative_gap': report.relative_gap})
        criteria[f"{name}"] = report.relative_gap <= float(case.get('rel_tol', 0.02))
        return rows, criteria, details

    seeds = replica_seeds(config.master_seed, replicas)
    samples = []
    for seed in seeds:
        env = generate_environment(model, d, L, seed, kappa=config.kappa)
        key = effective_matrix_key(model.to_dict(), d, L, seed, tol, config.kappa)
        cached = ctx.cache.get(key) if ctx.cache is not None else None
        result = EffectiveMatrix.from_dict(cached) if cached is not None else effective_matrix(env, tol, ctx.threads)
        if ctx.cache is not None and cached is None:
            ctx.cache.put(key, result.to_dict())
        row = {'case': name, **_matrix_row(seed, L, result)}
        if oracle == 'harmonic':
            realized = env.n_edges / math.fsum((1.0 / env.conductance).tolist())
            row['oracle'] = realized
            row['oracle_error'] = abs(result.D[0, 0] - realized)
        elif oracle == 'identity':
            scale = float(case['scale'])
            row['oracle'] = scale
            row['oracle_error'] = float(np.max(np.abs(result.D - scale * np.eye(d))))
        elif oracle == 'null_direction':
            axis = int(case.get('axis', d)) - 1
            row['oracle'] = 0.0
            row['oracle_error'] = abs(float(result.D[axis, axis]))
        rows.append(row)
        samples.append(result.D)

    if oracle in ('harmonic', 'identity', 'null_direction'):
        criteria[f"{name}_per_sample"] = max(r['oracle_error'] for r in rows) <= float(case.get('abs_tol', 1e-8))
    if 'ensemble_target' in case and len(samples) >= 2:
        mean, stderr = mean_stderr([D[0, 0] for D in samples])
        details[f"{name}_ensemble_mean"] = mean
        details[f"{name}_ensemble_stderr"] = stderr
        target = float(case['ensemble_target'])
        criteria[f"{name}_ensemble"] = abs(mean - target) <= 3.0 * stderr if stderr > 0 else abs(mean - target) <= 1e-12
    return rows, criteria, details


def run_effective_matrix(config: ExperimentConfig, ctx: RunContext) -> Outcome:
    cases = _param(config, 'cases') or [{'name': 'main'}]
    rows, criteria, details = [], {}, {}
    for case in cases:
        case_rows, case_criteria, case_details = _effective_case(case, config, ctx)
        rows.extend(case_rows)
        criteria.update(case_criteria)
        details.update(case_details)
    if config.model is not None and _param(config, 'L_grid'):
        # spread of D across L shows the self-averaging
        for L in _param(config, 'L_grid'):
            ensemble = ensemble_effective_matrix(config.model, config.d, int(L), max(config.replicas, 2),
                                                 config.tolerances['corrector'], config.master_seed,
                                                 config.kappa, ctx.threads, ctx.cache)
            details[f"L{L}_trace_mean"] = float(np.trace(ensemble.mean))
            details[f"L{L}_D11_stderr"] = float(ensemble.stderr[0, 0])
    return rows, criteria, details


def run_msd_crosscheck(config: ExperimentConfig, ctx: RunContext) -> Outcome:
    T = float(_param(config, 'T', 200.0))
    n_paths = int(_param(config, 'n_paths', 10_000))
    rows = []
    for seed in config.seeds:
        env = generate_environment(config.model, config.d, config.L, seed, kappa=config.kappa)
        D = _cached_effective_matrix(ctx, config, env).D
        msd = msd_estimate(env, 1.0, T, n_paths, np.random.default_rng(replica_seed(seed, 1)))
        two_trace = 2.0 * float(np.trace(D))
        rows.append({'seed': seed, 'L': config.L, 'two_trace_D': two_trace, 'msd_slope': msd.value,
                     'msd_stderr': msd.stderr, 'relative_gap': abs(msd.value - two_trace) / two_trace})
    limit = float(config.criteria.get('relative_gap_max', 0.1))
    return rows, {'msd_matches_trace': all(r['relative_gap'] <= limit for r in rows)}, {'T': T, 'n_paths': n_paths}


def run_homog_convergence(config: ExperimentConfig, ctx: RunContext) -> Outcome:
    f = config.function()
    weak_name = _param(config, 'weak_test')
    weak_fn = test_function(weak_name) if weak_name else None
    ops = _param(config, 'ops', [{'op': 'resolvent', 'param': 1.0}, {'op': 'semigroup', 'param': 0.5}])
    rows, criteria, details = [], {}, {}
    for seed in config.seeds:
        env = _environment(config, seed)
        D = _cached_effective_matrix(ctx, config, env).D
        m_hat = env.total_mass / env.volume
        details[f"seed{seed}_D"] = D.tolist()
        for entry in ops:
            op, param = entry['op'], float(entry['param'])
            table = convergence_table(env, D, f, op, param, sorted(config.eps_grid, reverse=True), m_hat,
                                      config.tolerances['quadrature'], weak_test=weak_fn,
                                      threads=ctx.threads, include_timings=ctx.include_timings)
            for row in table:
                rows.append({'op': op, 'param': param, **row})
            err2 = [row['err2'] for row in table]
            err1 = [row['err1'] for row in table]
            label = f"{op}_seed{seed}"
            if config.criteria.get('decreasing', True):
                criteria[f"{label}_err2_decreasing"] = all(b < a for a, b in zip(err2, err2[1:]))
                criteria[f"{label}_err1_decreasing"] = all(b < a for a, b in zip(err1, err1[1:]))
            ratio = err2[-1] / table[-1]['ref_norm2'] if table[-1]['ref_norm2'] > 0 else 0.0
            details[f"{label}_final_ratio"] = ratio
            if op in config.criteria.get('final_ratio_ops', ['resolvent']) and 'final_ratio_max' in config.criteria:
                criteria[f"{label}_final_ratio"] = ratio <= float(config.criteria['final_ratio_max'])
    return rows, criteria, details


def run_sep_hydro(config: ExperimentConfig, ctx: RunContext) -> Outcome:
    eps = 1.0 / config.L
    t_grid = [float(t) for t in _param(config, 't_grid', [0.02, 0.05])]
    names = _param(config, 'phis', ['one', 'sin', 'cos'])
    unknown = [name for name in names if name not in TORUS_FUNCTIONS]
    if unknown:
        raise ConfigError('params.phis', f"unknown torus functions {unknown}, expected {tuple(TORUS_FUNCTIONS)}")
    phis = {name: TORUS_FUNCTIONS[name] for name in names}
    env = generate_environment(config.model, config.d, config.L, config.seeds[0], kappa=config.kappa)
    D = _cached_effective_matrix(ctx, config, env).D
    rho0 = torus_profile(_param(config, 'rho0', {'kind': 'sine', 'mean': 0.5, 'amplitude': 0.25}))

    main = hydro_check(config.model, config.d, config.L, rho0, t_grid, phis, eps, config.replicas, D,
                       config.master_seed, threads=ctx.threads)
    rows = [{'profile': 'main', **row} for row in main.rows]
    criteria = {}
    if 'gap_max' in config.criteria:
        criteria['hydrodynamic_gap'] = main.max_gap() <= float(config.criteria['gap_max'])
    details = {'D_hat': D.tolist(), 'm_hat': main.m_hat, 'max_gap': main.max_gap()}
    control_p = _param(config, 'control_p')
    if control_p is not None:
        control = hydro_check(config.model, config.d, config.L, torus_profile({'kind': 'constant', 'p': control_p}),
                              t_grid, phis, eps, config.replicas, D, config.master_seed + 1, threads=ctx.threads)
        rows.extend({'profile': 'control', **row} for row in control.rows)
        criteria['control_flat'] = control.within_stderr(3.0)
    return rows, criteria, details


# ---------------------------------------------------------------------------
# Acceptance suite
# ---------------------------------------------------------------------------

def run_accept(config: ExperimentConfig, ctx: RunContext) -> Outcome:
    directory = Path(_param(config, 'dir', ctx.settings.get('acceptance_dir', './config/acceptance')))
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in ('.json', '.toml'))
    if not files:
        raise ConfigError('params.dir', f"no acceptance configs in {directory}")
    rerun = set(_param(config, 'determinism', [files[0].stem]))
    rows, criteria = [], {}
    for path in files:
        sub = ExperimentConfig.from_file(path)
        if sub.kind == 'accept':
            continue
        sub_ctx = RunContext(ctx.out_dir / path.stem, ctx.threads, False, ctx.cache, ctx.settings)
        print(f"Running {path.name} ({sub.kind})...")
        report = run(sub, sub_ctx)
        digest = file_sha256(report.csv_path)
        row = {'config': path.name, 'kind': sub.kind, 'passed': report.passed, 'csv_sha256': digest,
               'failed': ' '.join(k for k, ok in report.criteria.items() if not ok)}
        criteria[path.stem] = report.passed
        if path.name in rerun or path.stem in rerun:
            again = run(sub, RunContext(ctx.out_dir / f"{path.stem}_rerun", ctx.threads, False, None, ctx.settings))
            same = file_sha256(again.csv_path) == digest
            row['rerun_identical'] = same
            criteria[f"{path.stem}_determinism"] = same
        rows.append(row)
    return rows, criteria, {'configs': len(rows)}


RUNNERS: Dict[str, Callable[[ExperimentConfig, RunContext], Outcome]] = {
    'gen-env': run_gen_env,
    'ergodic-avg': run_ergodic_avg,
    'maximal': run_maximal,
    'covering-test': run_covering,
    'measure-limit': run_measure_limit,
    'resolvent': run_resolvent,
    'semigroup': run_semigroup,
    'paths': run_paths,
    'operator-identities': run_operator_identities,
    'effective-matrix': run_effective_matrix,
    'msd-crosscheck': run_msd_crosscheck,
    'homog-convergence': run_homog_convergence,
    'sep-hydro': run_sep_hydro,
    'accept': run_accept,
}


def run(config: ExperimentConfig, ctx: Optional[RunContext] = None) -> ExperimentReport:
    """
    Run one experiment and write <kind>_<hash>.csv with its summaries.
    The CSV is a pure function of the configuration.
    """
    ctx = ctx or RunContext(Path('./results'))
    if config.raw.get('report', {}).get('include_timings', False) and not ctx.include_timings:
        ctx = replace(ctx, include_timings=True)
    start = time.time()
    logging.info(f"Running {config.kind} (config {config.hash[:12]})")
    rows, criteria, details = RUNNERS[config.kind](config, ctx)
    wall_clock = time.time() - start
    logger = ReportLogger(ctx.out_dir, config.kind, config.hash, ctx.include_timings)
    logger.log_results(rows)
    csv_path = logger.finalize(criteria, details, wall_clock)
    report = ExperimentReport(config.kind, config.hash, rows, criteria, details, wall_clock, csv_path)
    for name, ok in criteria.items():
        (logging.info if ok else logging.warning)(f"Criterion {name}: {'PASS' if ok else 'FAIL'}")
    return report
