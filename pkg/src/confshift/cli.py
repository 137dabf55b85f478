"""Command-line entry point: ``confshift {simulate,ingest,fit,sweep,verify,report}``.

Every command reads an optional YAML config (``--config``), writes into an
output directory (``--out``) and accepts a ``--seed`` override.  All JSON
outputs carry the hash of the validated config.

Exit codes: 0 on success (including a fit that ran out of iterations),
1 when a verified bound or identity fails, 2 on invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import SWEEP_COLUMNS, sweep
from .config import ConfigError, RunConfig, load_config
from .io import atomic_write_text
from .moments import (
    IngestError,
    append_constant,
    dataset_recipe,
    estimate_moments,
    ingest_csv,
    read_moments,
    standardize,
    write_moments,
)
from .objective import MomentPair, RegParams
from .optimizer import minimize
from .scm import CovariateMoments, EnvironmentMoments, ParameterError, population_moments, risk, sample
from .stiefel import ManifoldError
from .verification import run_suite

log = logging.getLogger("confshift")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_BAD_INPUT = 0, 1, 2

SOURCE_FILE = "source.moments.json"
TARGET_FILE = "target.moments.json"
EVAL_FILE = "target_eval.moments.json"


def _dump(path: Path, payload: dict, cfg: RunConfig, command: str) -> Path:
    payload = {"command": command, "config_hash": cfg.hash(), "version": __version__, **payload}
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# --------------------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    """Population or sampled moment caches for a synthetic instance."""
    params = cfg.model.build(cfg.seed)
    moments = {}
    for i, env in enumerate(("source", "target")):
        if cfg.simulate.mode == "population":
            moments[env] = population_moments(params, env)
        else:
            moments[env] = estimate_moments(sample(params, env, cfg.simulate.n, cfg.seed * 2 + i))
    write_moments(out / SOURCE_FILE, moments["source"])
    write_moments(out / TARGET_FILE, moments["target"], covariates_only=True)
    write_moments(out / EVAL_FILE, moments["target"])
    _dump(out / "simulate.json", {"mode": cfg.simulate.mode, "n": cfg.simulate.n, "seed": cfg.seed, "params": params.to_dict()}, cfg, "simulate")
    log.info("wrote moment caches to %s", out)
    return EXIT_OK


def cmd_ingest(cfg: RunConfig, out: Path) -> int:
    """Moment caches and a provenance record for a real-data recipe."""
    dc = cfg.data
    if dc.recipe is None:
        raise ConfigError("data.recipe is required for ingest")
    schemas = list(dataset_recipe(dc.recipe))
    if dc.features is not None:
        schemas = [s.replace_features(dc.features) for s in schemas]
    if dc.response_transform is not None:
        schemas = [replace(s, response_transform=dc.response_transform) for s in schemas]
    data, provenance = {}, {}
    for schema in schemas:
        path = Path(dc.data_dir) / schema.file
        ds, rep = ingest_csv(path, schema, with_report=True)
        data[schema.environment] = ds
        provenance[schema.environment] = rep._asdict()
    src, tgt, scaling = standardize(
        data["source"], data["target"], dc.standardize, response=dc.standardize_response, columns=schemas[0].features
    )
    if dc.append_constant:
        src, tgt = append_constant(src), append_constant(tgt)
    m_src, m_tgt = estimate_moments(src), estimate_moments(tgt)
    write_moments(out / SOURCE_FILE, m_src)
    write_moments(out / TARGET_FILE, m_tgt, covariates_only=True)
    write_moments(out / EVAL_FILE, m_tgt)
    _dump(
        out / "provenance.json",
        {
            "recipe": dc.recipe,
            "features": list(schemas[0].features) + (["constant"] if dc.append_constant else []),
            "response": schemas[0].response,
            "response_transform": schemas[0].response_transform,
            "d": m_src.d,
            "files": provenance,
            "scaling": scaling.to_dict(),
        },
        cfg,
        "ingest",
    )
    log.info("%s: d=%d, %d source rows, %d target rows", dc.recipe, m_src.d, src.n, tgt.n)
    return EXIT_OK


def _load_pair(cfg: RunConfig, out: Path) -> tuple[MomentPair, EnvironmentMoments | None]:
    mc = cfg.moments
    src = read_moments(mc.source or out / SOURCE_FILE)
    if not isinstance(src, EnvironmentMoments):
        raise IngestError("source moment cache has no response statistics")
    tgt = read_moments(mc.target or out / TARGET_FILE)
    eval_path = Path(mc.eval_target) if mc.eval_target else out / EVAL_FILE
    evaluation = None
    if mc.eval_target or eval_path.exists():
        evaluation = read_moments(eval_path)
        if not isinstance(evaluation, EnvironmentMoments):
            raise IngestError("evaluation moment cache has no response statistics")
    # the learner only ever sees target covariates
    target = tgt.covariates() if isinstance(tgt, EnvironmentMoments) else tgt
    assert isinstance(target, CovariateMoments)
    return MomentPair(src, target), evaluation


def cmd_fit(cfg: RunConfig, out: Path) -> int:
    m, evaluation = _load_pair(cfg, out)
    ell = cfg.fit.ell or m.d
    if ell > m.d:
        raise ConfigError(f"fit.ell={ell} exceeds d={m.d}")
    opts = cfg.optimizer.with_(seed=cfg.seed)
    init = np.eye(m.d)[:, :ell] if cfg.fit.init == "identity" else None
    fit = minimize(m, RegParams(cfg.fit.upsilon, cfg.fit.eta), ell, init=init, opts=opts)
    payload = {"ell": ell, "upsilon": cfg.fit.upsilon, "eta": cfg.fit.eta, "fit": fit.to_dict()}
    if evaluation is not None:
        payload["risk_source"] = risk(m.source, fit.beta)
        payload["risk_target_eval"] = risk(evaluation, fit.beta)
    _dump(out / "fit.json", payload, cfg, "fit")
    if not fit.converged:
        log.warning("fit did not converge (grad norm %.3g after %d iterations)", fit.grad_norm, fit.iterations)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    m, evaluation = _load_pair(cfg, out)
    ell = cfg.sweep.ell or m.d
    if ell > m.d:
        raise ConfigError(f"sweep.ell={ell} exceeds d={m.d}")
    res = sweep(
        m,
        ell,
        cfg.sweep.upsilon_grid,
        cfg.sweep.eta_grid,
        cfg.optimizer.with_(seed=cfg.seed),
        eval_target=evaluation,
        workers=cfg.sweep.workers,
    )
    atomic_write_text(out / "sweep.csv", res.to_csv())
    atomic_write_text(out / "baselines.csv", res.baselines_csv())
    _dump(out / "sweep.json", {"columns": list(SWEEP_COLUMNS), "standardize": cfg.data.standardize, **res.to_dict()}, cfg, "sweep")
    n_bad = sum(c.error is not None for row in res.cells for c in row)
    if n_bad:
        log.warning("%d sweep cell(s) failed; see sweep.json", n_bad)
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    vc = cfg.verify
    results = run_suite(
        seed=cfg.seed,
        n_instances=vc.n_instances,
        n_betas=vc.n_betas,
        upsilon=vc.upsilon,
        eta_grid=vc.eta_grid,
        epsilons=vc.epsilons,
        delta_floor=vc.delta_floor,
        opts=cfg.optimizer.with_(seed=cfg.seed, n_starts=vc.n_starts),
        perturb_scale=vc.perturb_scale,
    )
    failed = [r.name for r in results if r.failed]
    _dump(
        out / "verify.json",
        {"seed": cfg.seed, "passed": not failed, "failed": failed, "checks": [r.to_dict() for r in results]},
        cfg,
        "verify",
    )
    for r in results:
        status = "FAIL" if r.failed else ("WARN" if r.flagged else "ok")
        print(f"{status:4s} {r.name} ({r.cases} cases, {r.violations} violations, {r.flagged} flagged)")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_report(cfg: RunConfig, out: Path) -> int:
    """Plain-text summary of the JSON outputs found in ``--out`` and ``report.inputs``."""
    dirs = [out] + [Path(p) for p in cfg.report.inputs]
    lines = []
    for d in dirs:
        for name in ("simulate.json", "provenance.json", "fit.json", "sweep.json", "verify.json"):
            path = d / name
            if not path.exists():
                continue
            data = json.loads(path.read_text(encoding="utf-8"))
            lines.append(f"## {path}")
            lines += _summarize(name, data)
            lines.append("")
    if not lines:
        raise IngestError(f"no outputs to report in {', '.join(map(str, dirs))}")
    atomic_write_text(out / "report.md", "\n".join(lines))
    print("\n".join(lines))
    return EXIT_OK


def _summarize(name: str, data: dict) -> list[str]:
    out = [f"config hash: {data.get('config_hash')}"]
    if name == "simulate.json":
        out.append(f"mode: {data['mode']}, d = {len(data['params']['beta_star'])}")
    elif name == "provenance.json":
        out.append(f"recipe: {data['recipe']}, d = {data['d']}, standardization: {data['scaling']['mode']}")
        for env, rep in data["files"].items():
            out.append(f"{env}: {rep['rows_kept']} rows kept, {rep['rows_dropped']} dropped ({rep['path']})")
    elif name == "fit.json":
        fit = data["fit"]
        out.append(
            f"ell = {data['ell']}, upsilon = {data['upsilon']:g}, eta = {data['eta']:g}: "
            f"objective {fit['objective']:.6g}, grad norm {fit['grad_norm']:.3g}, converged {fit['converged']}"
        )
    elif name == "sweep.json":
        cells = [c for row in data["cells"] for c in row]
        conv = sum(bool(c["converged"]) for c in cells)
        out.append(f"{len(data['upsilon_grid'])} x {len(data['eta_grid'])} grid, {conv}/{len(cells)} converged")
        base = data["baselines"].get("source_minimizer")
        if base and base.get("risk_target") is not None:
            better = sum(c["risk_target"] is not None and c["risk_target"] < base["risk_target"] for c in cells)
            out.append(f"target risk of source minimizer: {base['risk_target']:.6g}; cells below it: {better}/{len(cells)}")
    elif name == "verify.json":
        out.append(f"passed: {data['passed']}")
        for c in data["checks"]:
            out.append(f"- {c['name']}: {c['cases']} cases, {c['violations']} violations, {c['flagged']} flagged")
    return out


COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="confshift", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        p.add_argument("--config", type=Path, default=None, help="YAML run config")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out)
    except (ConfigError, IngestError, ParameterError, ManifoldError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
