"""Command-line experiment runner.

Every subcommand reads defaults, then an optional JSON config file, then
command-line flags (flags win). Results are written as CSV rows or as a
JSON envelope. Exit codes: 0 on completion, 1 on a configuration error,
2 when a computed quantity exceeds its guarantee.
"""

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import definetti, measurements, shadows
from .linalg import CapacityError, DimensionError, ValidationError, ket, projector, random_density_matrix
from .noniid import algorithms, appendix_a, errors, predicates, protocols
from .parallel import stream
from .states import basis_mixture, ghz_pure, haar_mixture, iid_state

SUBCOMMANDS = (
    "definetti-thm2",
    "definetti-gf",
    "appendix-b",
    "appendix-a",
    "shadows-bench",
    "verify",
    "verify-expectation",
    "fidelity",
    "tomography",
    "mixedness",
    "coupon",
    "distortion",
)
STATES = ("iid", "basis-mixture", "haar-mixture", "ghz")
FAMILIES = ("computational", "pauli3", "clifford1", "cliffordN")
FORMATS = ("csv", "json")

DEFAULTS = {
    "seed": 0,
    "trials": 10_000,
    "N": 16,
    "d": 2,
    "k": 1,
    "kA": 4,
    "epsilon": 0.1,
    "delta": 0.1,
    "state": "iid",
    "family": "computational",
    "out": None,
    "format": "csv",
    "l": 4,
    "w": 0,
    "branches": 10_000,
    "timestamps": False,
}

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every violation found."""

    def __init__(self, problems):
        self.problems = list(problems) if isinstance(problems, (list, tuple)) else [problems]
        super().__init__("; ".join(self.problems))


@dataclass
class ExperimentConfig:
    subcommand: str
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def echo(self):
        out = {"subcommand": self.subcommand}
        out.update({k: self.values[k] for k in sorted(self.values) if k not in ("out", "timestamps")})
        return out


@dataclass
class ResultEnvelope:
    config: dict
    config_hash: str
    metrics: dict
    bounds: dict
    flags: dict
    rows: list = field(default_factory=list)
    columns: list = field(default_factory=list)
    timestamps: dict = None

    @property
    def violated(self):
        return bool(self.flags.get("bound_violated", False))

    def to_dict(self):
        out = {
            "config": self.config,
            "config_hash": self.config_hash,
            "metrics": self.metrics,
            "bounds": self.bounds,
            "flags": self.flags,
            "columns": self.columns,
            "rows": self.rows,
        }
        if self.timestamps is not None:
            out["timestamps"] = self.timestamps
        return out


def config_hash(config_echo):
    """Git-style blob hash of the canonical JSON of the config."""
    body = json.dumps(config_echo, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def load_config(path):
    """Parse a JSON config file into a dict (empty file means defaults)."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        return {}
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = sorted(set(doc) - set(DEFAULTS))
    if unknown:
        raise ConfigError([f"{path}: unknown key {k!r}" for k in unknown])
    return doc


def _needs_k_range(sub):
    return sub in ("definetti-thm2", "definetti-gf")


def validate(sub, values):
    """List every range violation for ``sub``; raise ``ConfigError`` if any."""
    v = values
    probs = []

    def integer(name, lo=None):
        x = v[name]
        if isinstance(x, bool) or not isinstance(x, (int, np.integer)):
            probs.append(f"{name} must be an integer, got {x!r}")
            return False
        if lo is not None and x < lo:
            probs.append(f"{name} must be >= {lo}, got {x}")
            return False
        return True

    def prob(name, closed_low=False):
        x = v[name]
        if not isinstance(x, (int, float)) or isinstance(x, bool) or not (0 < x < 1 or (closed_low and x == 0)):
            probs.append(f"{name} must lie in (0, 1), got {x!r}")

    if sub not in SUBCOMMANDS:
        probs.append(f"unknown subcommand {sub!r}")
    if integer("seed", 0) and v["seed"] >= 2**64:
        probs.append("seed must be an unsigned 64-bit integer")
    integer("trials", 1)
    n_ok = integer("N", 2)
    integer("d", 2)
    k_ok = integer("k", 1)
    integer("kA", 1)
    integer("branches", 1)
    integer("l", 1)
    integer("w", 0)
    prob("epsilon")
    prob("delta")
    if v["state"] not in STATES:
        probs.append(f"state must be one of {', '.join(STATES)}, got {v['state']!r}")
    if v["family"] not in FAMILIES:
        probs.append(f"family must be one of {', '.join(FAMILIES)}, got {v['family']!r}")
    if v["format"] not in FORMATS:
        probs.append(f"format must be csv or json, got {v['format']!r}")
    if _needs_k_range(sub) and n_ok and k_ok and not 2 * v["k"] < v["N"]:
        probs.append(
            f"k={v['k']} is out of range for N={v['N']}: the randomized de Finetti bound "
            "requires 1 <= k < N/2"
        )
    if sub == "appendix-b" and isinstance(v["w"], int) and isinstance(v["l"], int) and v["w"] > v["l"]:
        probs.append(f"w must satisfy 0 <= w <= l, got w={v['w']}, l={v['l']}")
    if sub == "appendix-a" and isinstance(v["N"], int) and (v["N"] % 2 or v["N"] > appendix_a.MAX_N):
        probs.append(f"appendix-a needs an even N <= {appendix_a.MAX_N}, got {v['N']}")
    if v["state"] == "ghz" and v["d"] != 2:
        probs.append("the ghz state needs d=2")
    if probs:
        raise ConfigError(probs)


def build_config(sub, file_values=None, flag_values=None):
    values = dict(DEFAULTS)
    values.update(file_values or {})
    values.update({k: x for k, x in (flag_values or {}).items() if x is not None})
    validate(sub, values)
    return ExperimentConfig(sub, values)


def build_state(cfg, rng, n_sites=None):
    N = cfg["N"] if n_sites is None else int(n_sites)
    d = cfg["d"]
    name = cfg["state"]
    if name == "iid":
        return iid_state(random_density_matrix(d, rng), N)
    if name == "basis-mixture":
        return basis_mixture(d, N)
    if name == "haar-mixture":
        return haar_mixture(N, rng, cfg["branches"], d)
    return ghz_pure(N)


def _state_rng(cfg):
    return stream(cfg["seed"], cfg.subcommand + "/state", 0)


def _envelope(cfg, metrics, bounds, flags, rows, columns):
    echo = cfg.echo()
    stamp = None
    if cfg["timestamps"]:
        stamp = {"finished_utc": datetime.now(timezone.utc).isoformat()}
    return ResultEnvelope(echo, config_hash(echo), metrics, bounds, flags, rows, columns, stamp)


def _definetti(cfg, general):
    st = build_state(cfg, _state_rng(cfg))
    if general:
        if cfg["d"] != 2:
            raise ConfigError("definetti-gf uses the qubit Pauli-6 measurement and needs d=2")
        est = definetti.gf_lhs(st, measurements.pauli6_povm(), cfg["k"], cfg["trials"], rng=cfg["seed"])
        est_family = "pauli6"
    else:
        fam = measurements.measurement_family(cfg["family"], cfg["d"])
        est = definetti.randomized_definetti_lhs(st, fam, cfg["k"], cfg["trials"], rng=cfg["seed"])
        est_family = cfg["family"]
    bound = definetti.gf_bound(cfg["N"], cfg["k"], cfg["d"]) if general else definetti.randomized_definetti_bound(
        cfg["N"], cfg["k"], cfg["d"]
    )
    row = {
        "state": cfg["state"],
        "family": est_family,
        "N": cfg["N"],
        "k": cfg["k"],
        "d": cfg["d"],
        "trials": cfg["trials"],
        "seed": cfg["seed"],
        "lhs_mean": est.lhs_mean,
        "lhs_stderr": est.std_error,
        "rhs_bound": bound,
        "holds": est.lhs_mean + 3 * est.std_error <= bound,
    }
    flags = {"bound_violated": not row["holds"]}
    return _envelope(cfg, {"lhs_mean": est.lhs_mean, "lhs_stderr": est.std_error}, {"rhs": bound}, flags, [row], list(row))


def cmd_definetti_thm2(cfg):
    return _definetti(cfg, general=False)


def cmd_definetti_gf(cfg):
    return _definetti(cfg, general=True)


def cmd_appendix_b(cfg):
    rec = definetti.appendix_b_numeric(cfg["l"], cfg["w"], cfg["k"])
    err = float(np.max(np.abs(rec.numeric_reduced - rec.analytic_reduced)))
    row = {
        "l": rec.l,
        "w": rec.w_weight,
        "k": rec.k,
        "p_star": rec.p_star,
        "reduced_error": err,
        "lhs_numeric": rec.lhs_numeric,
        "bound": rec.analytic_bound,
        "holds": rec.lhs_numeric <= rec.analytic_bound,
    }
    flags = {"bound_violated": not row["holds"], "reduced_match": err <= 1e-8}
    return _envelope(cfg, {"p_star": rec.p_star, "lhs_numeric": rec.lhs_numeric}, {"bound": rec.analytic_bound}, flags, [row], list(row))


def cmd_appendix_a(cfg):
    res = appendix_a.appendix_a_experiment(cfg["N"], cfg["epsilon"])
    row = {
        "N": res.N,
        "epsilon": res.epsilon,
        "distributions_equal": res.distributions_equal,
        "delta_prime_first": str(res.delta_prime_first),
        "delta_prime_second": str(res.delta_prime_second),
        "delta_prime_lower": float(res.delta_prime_lower),
        "pass": res.passed,
    }
    return _envelope(cfg, {"delta_prime_lower": float(res.delta_prime_lower)}, {"lower_limit": 0.25}, {"pass": res.passed, "bound_violated": not res.passed}, [row], list(row))


def cmd_shadows_bench(cfg):
    d = cfg["d"]
    n = int(round(math.log2(d)))
    if 2**n != d or n > 2:
        raise ConfigError("shadows-bench supports d in {2, 4}")
    rng = _state_rng(cfg)
    bases = {"clifford": measurements.clifford_group(n)}
    if n == 1:
        bases["pauli6"] = np.stack(measurements.pauli_basis_unitaries())
    rows = []
    n_states = 20
    for name, table in bases.items():
        worst = 0.0
        for _ in range(n_states):
            rho = random_density_matrix(d, rng)
            worst = max(worst, float(np.max(np.abs(shadows.shadow_mean_exact(rho, table) - rho))))
        rows.append({"method": name, "mode": "exact", "samples": n_states, "max_abs_error": worst})
    rho = random_density_matrix(d, rng)
    obs = projector(ket(0, d))
    us, outs = shadows.sample_global_snapshots(rho, cfg["trials"], stream(cfg["seed"], "shadows-bench", 1), n)
    vals = shadows.snapshot_values(us, outs, obs)
    groups = min(cfg["kA"], vals.size)
    est = shadows.median_of_means(vals, groups)
    err = abs(est - float(np.real(np.trace(obs @ rho))))
    rows.append({"method": "clifford", "mode": "sampled", "samples": cfg["trials"], "max_abs_error": err})
    exact_ok = all(r["max_abs_error"] <= 1e-12 for r in rows if r["mode"] == "exact")
    cols = ["method", "mode", "samples", "max_abs_error"]
    return _envelope(cfg, {"sampled_error": err}, {"exact_tolerance": 1e-12}, {"bound_violated": not exact_ok}, rows, cols)


def _wrapper_bound_rows(cfg, alg, predicate, st, records, eps):
    est = errors.ErrorEstimate.from_counts(
        sum(not predicate.evaluate(r.p, r.conditional_test_state) for r in records), len(records)
    )
    sup_a, examined = errors.sup_branch_delta_a(
        records, alg, predicate.with_epsilon(eps / 2.0), trials_per_state=500, rng=stream(cfg["seed"], "sup", 0), max_states=5
    )
    k_a = len(alg.draw(np.random.default_rng(0)))
    bound = errors.wrapper_error_bound(st.n_sites, k_a, alg.delta_a, st.site_dim, eps / 2.0, sup_a.delta_hat)
    return est, sup_a, examined, bound


def _wrapped_experiment(cfg, alg, predicate, st, summarize):
    wrapper = protocols.wrapper_for(alg, st)
    est, records = errors.error_probability_with_calibration(st, wrapper, predicate, cfg["trials"], rng=cfg["seed"], return_records=True)
    _, sup_a, examined, bound = _wrapper_bound_rows(cfg, alg, predicate, st, records, predicate.epsilon)
    rows = []
    for i, rec in enumerate(records):
        row = {
            "trial": i,
            "l": rec.l,
            "coverage_ok": rec.coverage_ok,
            "prediction": rec.p.summary(),
            "success": predicate.evaluate(rec.p, rec.conditional_test_state),
        }
        row.update(summarize(rec))
        rows.append(row)
    metrics = {"delta_hat": est.delta_hat, "ci_halfwidth": est.ci_halfwidth, "sup_delta_a_observed": sup_a.delta_hat, "states_examined": examined}
    flags = {"bound_violated": est.delta_hat - 3 * est.ci_halfwidth > bound, "sup_is_lower_bound": True}
    return _envelope(cfg, metrics, {"wrapper_bound": bound}, flags, rows, list(rows[0]) if rows else [])


def _wrapper_state(cfg, k_a, delta_a):
    K = algorithms.coverage_block(k_a, delta_a)
    N = max(cfg["N"], 2 * (K + 1) + 2)
    return build_state(cfg, _state_rng(cfg), N)


def _fidelity_cols(targets):
    def summarize(rec):
        f = max(float(np.real(np.vdot(t, rec.conditional_test_state @ t))) for t in targets)
        return {"test_fidelity": f}

    return summarize


def cmd_verify(cfg):
    d, eps = cfg["d"], cfg["epsilon"]
    targets = [ket(0, d), ket(d - 1, d)]
    alg = protocols.verify_spec(targets, eps, cfg["kA"], cfg["delta"])
    st = _wrapper_state(cfg, cfg["kA"], cfg["delta"])
    return _wrapped_experiment(cfg, alg, predicates.VerifyPure(targets, eps), st, _fidelity_cols(targets))


def cmd_verify_expectation(cfg):
    d, eps = cfg["d"], cfg["epsilon"]
    psi = ket(0, d)
    k = cfg["kA"]
    N = max(cfg["N"], 2 * k + 2)
    st = build_state(cfg, _state_rng(cfg), N)
    res = protocols.verification_expectation(st, psi, eps, k, N=N, trials=cfg["trials"], rng=stream(cfg["seed"], "verify-expectation", 0))
    row = res.to_dict()
    limit = eps + 1.96 * (res.soundness_stderr if np.isfinite(res.soundness_stderr) else 0.0)
    flags = {"bound_violated": res.soundness > limit}
    return _envelope(cfg, row, {"soundness_limit": eps}, flags, [row], list(row))


def cmd_fidelity(cfg):
    eps = cfg["epsilon"]
    psi = ket(0, cfg["d"])
    alg = protocols.fidelity_spec(psi, eps)
    k_a = len(alg.draw(np.random.default_rng(0)))
    st = _wrapper_state(cfg, k_a, alg.delta_a)
    pred = predicates.FidelityEst(psi, 2 * eps)
    return _wrapped_experiment(cfg, alg, pred, st, _fidelity_cols([psi]))


def cmd_tomography(cfg):
    if cfg["d"] != 2:
        raise ConfigError("tomography needs d=2")
    alg = protocols.tomography_spec(cfg["kA"], cfg["delta"])
    st = _wrapper_state(cfg, cfg["kA"], cfg["delta"])
    return _wrapped_experiment(cfg, alg, predicates.Tomography(cfg["epsilon"]), st, lambda rec: {})


def cmd_mixedness(cfg):
    if cfg["d"] != 2:
        raise ConfigError("mixedness needs d=2")
    alg = protocols.mixedness_spec(cfg["epsilon"], cfg["kA"], cfg["delta"])
    st = _wrapper_state(cfg, cfg["kA"], cfg["delta"])
    return _wrapped_experiment(cfg, alg, predicates.Mixedness(cfg["epsilon"]), st, lambda rec: {})


def cmd_coupon(cfg):
    k_a, delta_a = cfg["kA"], cfg["delta"]
    K = algorithms.coverage_block(k_a, delta_a)
    rng = stream(cfg["seed"], "coupon", 0)
    draws = rng.integers(k_a, size=(cfg["trials"], K))
    covered = np.zeros(cfg["trials"], dtype=int)
    for t in range(k_a):
        covered += np.any(draws == t, axis=1)
    rate = float(np.mean(covered < k_a))
    bound = algorithms.coverage_failure_bound(k_a, K)
    exact = algorithms.coverage_failure_probability(k_a, K)
    sigma = math.sqrt(max(bound * (1 - bound), 0.0) / cfg["trials"]) if bound < 1 else 0.0
    row = {"kA": k_a, "delta_A": delta_a, "K": K, "trials": cfg["trials"], "failure_rate": rate, "exact": exact, "bound": bound}
    flags = {"bound_violated": rate > bound + 3 * sigma}
    return _envelope(cfg, {"failure_rate": rate}, {"bound": bound, "exact": exact}, flags, [row], list(row))


def cmd_distortion(cfg):
    if cfg["d"] != 2:
        raise ConfigError("distortion uses the qubit Pauli-6 measurement and needs d=2")
    val = measurements.distortion_lower_bound(measurements.pauli6_povm(), cfg["trials"], stream(cfg["seed"], "distortion", 0))
    row = {"povm": "pauli6", "trials": cfg["trials"], "distortion_lower_bound": val, "limit": 2 * cfg["d"]}
    return _envelope(cfg, {"distortion_lower_bound": val}, {"limit": 2 * cfg["d"]}, {"bound_violated": val > 2 * cfg["d"]}, [row], list(row))


COMMANDS = {
    "definetti-thm2": cmd_definetti_thm2,
    "definetti-gf": cmd_definetti_gf,
    "appendix-b": cmd_appendix_b,
    "appendix-a": cmd_appendix_a,
    "shadows-bench": cmd_shadows_bench,
    "verify": cmd_verify,
    "verify-expectation": cmd_verify_expectation,
    "fidelity": cmd_fidelity,
    "tomography": cmd_tomography,
    "mixedness": cmd_mixedness,
    "coupon": cmd_coupon,
    "distortion": cmd_distortion,
}


def run(subcommand, config):
    """Execute ``subcommand`` with an ``ExperimentConfig`` or a plain dict of overrides."""
    if not isinstance(config, ExperimentConfig):
        config = build_config(subcommand, flag_values=config)
    return COMMANDS[subcommand](config)


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def render(env, fmt):
    if fmt == "json":
        return json.dumps(_jsonable(env.to_dict()), indent=2, sort_keys=False) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(env.columns)
    for row in env.rows:
        writer.writerow([_cell(row[c]) for c in env.columns])
    return buf.getvalue()


def _parser():
    p = argparse.ArgumentParser(prog="noniid-qlearn", description="Non-i.i.d. quantum learning experiments.")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON file with parameter values")
        s.add_argument("--seed", type=int)
        s.add_argument("--trials", type=int)
        s.add_argument("--N", type=int, dest="N")
        s.add_argument("--d", type=int)
        s.add_argument("--k", type=int)
        s.add_argument("--kA", type=int, dest="kA")
        s.add_argument("--epsilon", type=float)
        s.add_argument("--delta", type=float)
        s.add_argument("--state", choices=STATES)
        s.add_argument("--family", choices=FAMILIES)
        s.add_argument("--branches", type=int)
        s.add_argument("--out")
        s.add_argument("--format", choices=FORMATS)
        s.add_argument("--timestamps", action="store_true", default=None, help="add wall-clock times to JSON output")
        if name == "appendix-b":
            s.add_argument("--l", type=int)
            s.add_argument("--w", type=int)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("subcommand", "config")}
    try:
        file_values = load_config(args.config) if args.config else {}
        cfg = build_config(args.subcommand, file_values, flags)
        env = run(args.subcommand, cfg)
    except ConfigError as exc:
        for msg in exc.problems:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, DimensionError, CapacityError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = render(env, cfg["format"])
    if cfg["out"]:
        with open(cfg["out"], "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_VIOLATION if env.violated else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
