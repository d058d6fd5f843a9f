# funnel_sim/main.py
import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ValidationError

from funnel_sim.errors import AuditFailure, FunnelSimError, PassivityFailure
from funnel_sim.funnel import compensated_initial_error, feedforward_compensator, initial_error
from funnel_sim.models import (
    ScenarioConfig,
    build_initial_state,
    build_system,
    config_error_from_validation,
    load_scenario,
)
from funnel_sim.monotone_solver import CoerciveOperator
from funnel_sim.passive_lti import PassiveLTI, PassivityReport, check_passivity, check_strict_passivity, kyp_block, kyp_scale
from funnel_sim.scenarios import BUNDLED, get_scenario, list_scenarios
from funnel_sim.settings import Settings, get_settings
from funnel_sim.signals import Sum
from funnel_sim.simulator import (
    ClosedLoopProblem,
    IntegratorOptions,
    Trajectory,
    energy_balance_report,
    integrate,
    verify_funnel,
)

logger = logging.getLogger(__name__)

LOSSLESS_TOL = 1e-8


class ScenarioResult(BaseModel):
    name: str
    exit_code: int
    status: str
    detail: str = ""
    csv_path: Optional[Path] = None
    summary_path: Optional[Path] = None
    summary: Dict[str, str] = {}


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def trajectory_columns(traj: Trajectory) -> Dict[str, np.ndarray]:
    """CSV column name -> series: t, y_*, y_ref_*, e_*, inv_phi, u_*, u_fun_*, u_ext_*, energy."""
    columns: Dict[str, np.ndarray] = {"t": traj.times}
    for prefix, data in (("y", traj.outputs), ("y_ref", traj.references), ("e", traj.errors)):
        for i in range(data.shape[1]):
            columns[f"{prefix}_{i}"] = data[:, i]
    columns["inv_phi"] = traj.inv_phi
    for prefix, data in (("u", traj.inputs), ("u_fun", traj.u_fun), ("u_ext", traj.u_ext)):
        for i in range(data.shape[1]):
            columns[f"{prefix}_{i}"] = data[:, i]
    columns["energy"] = traj.energies
    return columns


def write_trajectory_csv(path: Path, traj: Trajectory) -> Path:
    columns = trajectory_columns(traj)
    data = np.column_stack(list(columns.values()))
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(columns), comments="")
    logger.info("Wrote %d samples to %s", data.shape[0], path)
    return path


def read_trajectory_csv(path) -> Dict[str, np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: {len(header)} header columns but {data.shape[1]} data columns")
    return {name: data[:, i] for i, name in enumerate(header)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_audit_summary(path: Path, summary: Dict[str, object]) -> Path:
    path.write_text("".join(f"{key}={_format(value)}\n" for key, value in summary.items()))
    return path


def read_audit_summary(path) -> Dict[str, str]:
    entries = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            entries[key] = value
    return entries


# ---------------------------------------------------------------------------
# Scenario pipeline
# ---------------------------------------------------------------------------

def is_lossless(system: PassiveLTI, tol: float = LOSSLESS_TOL) -> bool:
    """KYP block vanishes: the supplied energy is stored exactly."""
    return bool(np.abs(kyp_block(system)).max() <= tol * kyp_scale(system))


def audit_assumptions(cfg: ScenarioConfig, system: PassiveLTI) -> Dict[str, object]:
    """Passivity (KYP), coercivity at the probe, optional strict passivity and a solvable output loop."""
    report: PassivityReport = check_passivity(system, probe_lambda=cfg.probe_lambda, alpha=cfg.alpha or 0.0)
    summary: Dict[str, object] = {
        "n": system.n,
        "m": system.m,
        "max_kyp_eig": report.max_kyp_eig,
        "kyp_block_norm": report.block_norm,
        "kyp_scale": report.kyp_scale,
        "passive": report.passive,
        "coercivity_c": report.coercivity_c,
        "probe_lambda": report.probe_lambda,
    }
    if not report.passive:
        raise PassivityFailure(f"KYP block has max eigenvalue {report.max_kyp_eig:.3e} (scale {report.kyp_scale:.3e})")
    if report.coercivity_c <= 0.0:
        raise PassivityFailure(f"P(lambda) + P(lambda)* is not positive definite at lambda={report.probe_lambda:g}")

    if cfg.alpha is not None:
        strict = check_strict_passivity(system, cfg.alpha)
        summary.update({"strict_alpha": cfg.alpha, "strict_alpha_eig": strict.max_eig, "strictly_passive": strict.holds})
        if not strict.holds:
            raise PassivityFailure(f"dissipation inequality fails for alpha={cfg.alpha:g} (max eig {strict.max_eig:.3e})")

    if system.has_feedthrough:
        summary["feedthrough_c"] = CoerciveOperator.from_matrix(system.D).c
    summary["lossless"] = is_lossless(system)
    return summary


def build_problem(cfg: ScenarioConfig, system: PassiveLTI) -> ClosedLoopProblem:
    x0 = build_initial_state(cfg, system.n)
    u_ext = cfg.u_ext
    if cfg.compensate_initial_mismatch:
        phi0 = cfg.funnel.phi(0.0)
        y_ref0 = np.broadcast_to(cfg.y_ref(0.0), (system.m,))
        u_ext0 = np.broadcast_to(cfg.u_ext(0.0), (system.m,))
        e0 = compensated_initial_error(system, x0, phi0, y_ref0)
        u_ext = Sum(terms=[cfg.u_ext, feedforward_compensator(e0, phi0, u_ext0)])
    try:
        return ClosedLoopProblem(sys=system, funnel=cfg.funnel, y_ref=cfg.y_ref, u_ext=u_ext, x0=x0, horizon=cfg.horizon)
    except ValidationError as exc:
        raise config_error_from_validation(exc) from exc


def check_scenario(cfg: ScenarioConfig) -> Dict[str, object]:
    """Assumption audit only: passivity, coercivity and a feasible initial error; no integration."""
    system, _ = build_system(cfg)
    summary: Dict[str, object] = {"scenario": cfg.name}
    summary.update(audit_assumptions(cfg, system))
    problem = build_problem(cfg, system)
    e0 = initial_error(system, problem.x0, problem.external_input(0.0), problem.funnel.phi(0.0), problem.reference(0.0))
    summary["initial_phi_e"] = float(problem.funnel.phi(0.0) * np.linalg.norm(e0))
    return summary


def run_scenario(cfg: ScenarioConfig, out_dir) -> ScenarioResult:
    """Build, audit, integrate and write `<name>.csv` plus `<name>.summary.txt`; exit code 0 iff all audits pass."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_path = out_dir / f"{cfg.name}.summary.txt"
    summary: Dict[str, object] = {"scenario": cfg.name}
    csv_path = None
    logger.info("Running scenario %r (horizon %g, rtol %g, atol %g)", cfg.name, cfg.horizon, cfg.rtol, cfg.atol)

    try:
        system, _ = build_system(cfg)
        summary.update(audit_assumptions(cfg, system))
        problem = build_problem(cfg, system)
        opts = IntegratorOptions(rtol=cfg.rtol, atol=cfg.atol, method=cfg.method, sample_interval=cfg.sample_interval)
        traj = integrate(problem, opts)

        csv_path = write_trajectory_csv(out_dir / f"{cfg.name}.csv", traj)
        funnel_audit = verify_funnel(traj)
        balance = energy_balance_report(problem, traj)
        summary.update({
            "samples": traj.times.size,
            "accepted_steps": traj.stats.accepted,
            "rejected_steps": traj.stats.rejected,
            "funnel_rejections": traj.stats.funnel_rejections,
            "min_step": traj.stats.min_step,
            "max_phi_e": funnel_audit.max_phi_e,
            "max_phi_e_all_steps": traj.stats.max_phi_e,
            "argmax_t": funnel_audit.argmax_t,
            "funnel_violated": funnel_audit.violated,
            "energy_lhs": balance.lhs,
            "energy_rhs": balance.rhs,
            "energy_slack": balance.slack,
            "quad_err": balance.quad_err,
            "energy_passes": balance.passes,
            "energy_lossless": balance.lossless,
            "csv": csv_path.name,
        })
        failures = []
        if funnel_audit.violated:
            failures.append(f"funnel invariant violated at t={funnel_audit.argmax_t:g}")
        if not balance.passes:
            failures.append(f"energy slack {balance.slack:.3e} below -quad_err {-balance.quad_err:.3e}")
        if failures:
            raise AuditFailure("; ".join(failures))
    except FunnelSimError as exc:
        logger.error("Scenario %r failed (exit %d): %s", cfg.name, exc.exit_code, exc.detail)
        summary.update({"status": "failed", "exit_code": exc.exit_code, "error": f"{type(exc).__name__}: {exc.detail}"})
        write_audit_summary(summary_path, summary)
        return ScenarioResult(
            name=cfg.name, exit_code=exc.exit_code, status="failed", detail=exc.detail,
            csv_path=csv_path, summary_path=summary_path, summary={k: _format(v) for k, v in summary.items()},
        )

    summary.update({"status": "passed", "exit_code": 0})
    write_audit_summary(summary_path, summary)
    logger.info("Scenario %r passed: max phi*|e| = %.6f, energy slack %.3e (quad_err %.3e)",
                cfg.name, summary["max_phi_e"], summary["energy_slack"], summary["quad_err"])
    return ScenarioResult(
        name=cfg.name, exit_code=0, status="passed",
        csv_path=csv_path, summary_path=summary_path, summary={k: _format(v) for k, v in summary.items()},
    )


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0.0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def resolve_scenario(target: str) -> ScenarioConfig:
    """Bundled scenario name or path to a JSON scenario document."""
    path = Path(target)
    if target.endswith(".json") or path.is_file():
        return load_scenario(path)
    return get_scenario(target)


class FunnelSimApp:
    """
    Command-line application: `run`, `list` and `check`.
    Use FunnelSimApp().run(argv) to get the process exit status.
    """

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or get_settings()

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog="funnel_sim", description="Funnel control of impedance-passive systems")
        parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        commands = parser.add_subparsers(dest="command", required=True)

        run = commands.add_parser("run", help="integrate scenarios and write CSV + audit summary")
        run.add_argument("scenarios", nargs="+", help="bundled scenario name or scenario JSON file")
        run.add_argument("--out", type=Path, default=None, help="output directory (default: FUNNEL_SIM_OUTPUT_DIR)")
        run.add_argument("--horizon", type=_positive_float, default=None)
        run.add_argument("--rtol", type=_positive_float, default=None)
        run.add_argument("--atol", type=_positive_float, default=None)

        commands.add_parser("list", help="list bundled scenarios")

        check = commands.add_parser("check", help="audit the standing assumptions without integrating")
        check.add_argument("scenario", help="bundled scenario name or scenario JSON file")
        return parser

    def configure_logging(self, verbose: bool) -> None:
        level = logging.DEBUG if verbose else getattr(logging, self.settings.log_level.upper(), logging.INFO)
        logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        args = self.build_parser().parse_args(argv)
        self.configure_logging(args.verbose)
        if args.command == "list":
            return self.list_command()
        if args.command == "check":
            return self.check_command(args.scenario)
        return self.run_command(args)

    def list_command(self) -> int:
        for name in list_scenarios():
            print(f"{name}\t{BUNDLED[name].get('description', '')}")
        return 0

    def check_command(self, target: str) -> int:
        try:
            summary = check_scenario(resolve_scenario(target))
        except FunnelSimError as exc:
            logger.error("Check failed (exit %d): %s", exc.exit_code, exc.detail)
            print(f"status=failed\nexit_code={exc.exit_code}\nerror={type(exc).__name__}: {exc.detail}")
            return exc.exit_code
        summary["status"] = "passed"
        print("".join(f"{key}={_format(value)}\n" for key, value in summary.items()), end="")
        return 0

    def _run_one(self, target: str, out_dir: Path, overrides: Dict[str, float]) -> ScenarioResult:
        try:
            cfg = resolve_scenario(target)
        except FunnelSimError as exc:
            logger.error("Cannot load %r (exit %d): %s", target, exc.exit_code, exc.detail)
            return ScenarioResult(name=target, exit_code=exc.exit_code, status="failed", detail=exc.detail)
        if overrides:
            cfg = cfg.model_copy(update=overrides)
        return run_scenario(cfg, out_dir)

    def run_command(self, args: argparse.Namespace) -> int:
        out_dir = args.out if args.out is not None else self.settings.output_dir
        overrides = {key: getattr(args, key) for key in ("horizon", "rtol", "atol") if getattr(args, key) is not None}
        workers = min(self.settings.threads, len(args.scenarios))

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results: List[ScenarioResult] = list(
                pool.map(lambda target: self._run_one(target, out_dir, overrides), args.scenarios)
            )

        for result in results:
            print(f"{result.name}: {result.status} (exit {result.exit_code}){' - ' + result.detail if result.detail else ''}")
        return max(result.exit_code for result in results)


def main() -> None:
    sys.exit(FunnelSimApp().run())


if __name__ == "__main__":
    main()
