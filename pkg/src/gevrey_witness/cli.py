"""Command line: ``gevrey-witness {spectrum,witness,analyze,all}``."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

from . import assembly as asm
from . import model_core as mc
from .ode_inverse import TailError, compact_rhs, ek_relative_residual
from .pipeline import prepare
from .spectrum import DiscretizationGrid, SpectrumError, dump_eigenfunctions, solve_eigenpairs, write_spectrum_csv
from .transport import (TransportError, measure_decay, resonance_defect, run_transport, total_residual,
                        write_decay_json, write_field_csv)

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_CONFIG, EXIT_TOLERANCE = 0, 2, 3


class ConfigError(ValueError):
    pass


class ToleranceError(RuntimeError):
    pass


@dataclass
class Grid:
    L: float | None = None
    N: int | None = None
    rho_max: float = 160.0
    h_rho: float | None = None


@dataclass
class Tolerances:
    eigen_residual: float = 1e-9
    ode_residual: float = 1e-6
    transport_residual: float = 1e-4
    fourier_crosscheck: float = 0.05


@dataclass
class RunConfig:
    q: int = 2
    a: int = 1
    K_modes: int = 32
    J_transport: int = 6
    grid: Grid = field(default_factory=Grid)
    R0: float = 2.0
    delta: float | None = None
    kappa: float | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    output_dir: str = "out"
    threads: int = 1
    skip_numeric_ft: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        g = d.pop("grid", None) or {}
        t = d.pop("tolerances", None) or {}
        try:
            return cls(grid=Grid(**g), tolerances=Tolerances(**t), **d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @property
    def s0(self) -> Fraction:
        return mc.compute_s0(self.q, self.a)

    @property
    def h_rho(self) -> float:
        # 8 nodes per R0 at least, so the j=0 cutoff ramp is resolved
        return self.grid.h_rho if self.grid.h_rho is not None else min(0.02, self.R0 / 8)

    def resolved(self) -> dict:
        d = dataclasses.asdict(self)
        d["grid"]["h_rho"] = self.h_rho
        if self.grid.L is None or self.grid.N is None:
            g = DiscretizationGrid.default(self.q, self.K_modes)
            d["grid"]["L"] = self.grid.L if self.grid.L is not None else g.L
            d["grid"]["N"] = self.grid.N if self.grid.N is not None else g.N
        d.pop("output_dir")
        d.pop("threads")
        return d

    def validate(self, stage: str = "all") -> None:
        """Every precondition the stages will check, checked up front."""
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        need(isinstance(self.q, int) and not isinstance(self.q, bool) and self.q >= 2, f"q ≥ 2 (integer) required, got {self.q!r}")
        need(isinstance(self.a, int) and not isinstance(self.a, bool) and self.a >= 1, f"a ≥ 1 (integer) required, got {self.a!r}")
        need(isinstance(self.K_modes, int) and self.K_modes >= 1, f"K_modes ≥ 1 required, got {self.K_modes!r}")
        need(isinstance(self.threads, int) and self.threads >= 1, f"threads ≥ 1 required, got {self.threads!r}")
        g = self.grid
        if g.N is not None:
            need(isinstance(g.N, int) and g.N >= 9 and g.N % 2 == 1, f"grid.N must be an odd integer ≥ 9, got {g.N!r}")
            need(self.K_modes < g.N // 4, f"K_modes must be well below grid.N/4 (K={self.K_modes}, N={g.N})")
        if g.L is not None:
            need(g.L > 0, f"grid.L > 0 required, got {g.L!r}")
        for name in ("eigen_residual", "ode_residual", "transport_residual", "fourier_crosscheck"):
            v = getattr(self.tolerances, name)
            need(isinstance(v, (int, float)) and v > 0, f"tolerances.{name} > 0 required, got {v!r}")
        if stage == "spectrum":
            return
        s0 = float(self.s0)
        need(isinstance(self.J_transport, int) and self.J_transport >= 0, f"J_transport ≥ 0 required, got {self.J_transport!r}")
        need(self.K_modes >= 2, "K_modes ≥ 2 required for transport")
        need(self.R0 > 0, f"R0 > 0 required, got {self.R0!r}")
        if self.delta is not None:
            need(0 < self.delta < 1, f"delta in (0, 1) required, got {self.delta!r}")
        if self.kappa is not None:
            need(1 / s0 < self.kappa < 1, f"kappa in (1/s0, 1) = ({1 / s0:.6g}, 1) required, got {self.kappa!r}")
        d = 0.9 if self.delta is None else self.delta
        k = max(0.62, 0.5 * (1 + 1 / s0)) if self.kappa is None else self.kappa
        need(k * d > 0.5, f"kappa*delta > 1/2 required, got {k * d:.4g}")
        need(self.h_rho > 0, f"grid.h_rho > 0 required, got {self.h_rho!r}")
        need(self.R0 / self.h_rho >= 8, f"grid.h_rho ≤ R0/8 required (cutoff resolution), got h_rho={self.h_rho}")
        need(g.rho_max >= 6 * self.R0 * (self.J_transport + 1) + 10,
             f"grid.rho_max ≥ 6 R0 (J+1) + 10 = {6 * self.R0 * (self.J_transport + 1) + 10:g} required "
             f"(all cutoffs must reach 1 inside the grid), got {g.rho_max}")
        if stage in ("analyze", "all"):
            lo, hi = (7.2 * self.R0) ** s0, (0.9 * g.rho_max) ** s0
            need(np.log10(hi / lo) >= 1.5, f"eta window must span ≥ 1.5 decades: raise grid.rho_max or lower R0 "
                                           f"(currently {np.log10(hi / lo):.2f})")


def load_config(args: argparse.Namespace) -> RunConfig:
    d = {}
    if args.config:
        try:
            d = yaml.safe_load(Path(args.config).read_text()) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"malformed config: {e}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
    cfg = RunConfig.from_dict(d)
    if "output_dir" not in d and args.out is None:
        cfg.output_dir = f"out/{args.command}"
    for flag, attr in (("q", "q"), ("a", "a"), ("k", "K_modes"), ("j", "J_transport"), ("r0", "R0"),
                       ("out", "output_dir"), ("threads", "threads")):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg, attr, v)
    if getattr(args, "skip_numeric_ft", False):
        cfg.skip_numeric_ft = True
    return cfg


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, Fraction):
        return str(x)
    return x


class Run:
    """One pipeline execution; stages fill ``manifest`` and write into ``out``."""

    def __init__(self, cfg: RunConfig, stage: str):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {"schema_version": SCHEMA_VERSION, "command": stage, "config": cfg.resolved()}
        self.timings = {}
        self.warnings = []

    def _timed(self, name, fn, *a, **kw):
        t = time.perf_counter()
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            out = fn(*a, **kw)
        self.warnings += [str(w.message) for w in rec]
        self.timings[name] = time.perf_counter() - t
        return out

    def spectrum(self):
        c = self.cfg
        grid = DiscretizationGrid.default(c.q, c.K_modes)
        if c.grid.L is not None or c.grid.N is not None:
            grid = DiscretizationGrid(c.grid.L or grid.L, c.grid.N or grid.N)
        spectrum = self._timed("spectrum", solve_eigenpairs, c.q, c.K_modes, grid, tol=c.tolerances.eigen_residual)
        write_spectrum_csv(spectrum, self.out / "spectrum.csv")
        dump_eigenfunctions(spectrum, self.out / "eigenfunctions")
        self.manifest["spectrum"] = {"K": spectrum.K, "L": grid.L, "N": grid.N,
                                     "max_residual": float(spectrum.residual.max()),
                                     "max_richardson_shift": float(np.abs(spectrum.richardson_shift).max())}

    def witness(self, write: bool = True):
        c = self.cfg
        P = self._timed("prepare", prepare, c.q, c.a, K=c.K_modes, R0=c.R0, rho_max=c.grid.rho_max,
                        h_rho=c.h_rho, L=c.grid.L, N=c.grid.N, delta=c.delta, kappa=c.kappa,
                        eigen_tol=c.tolerances.eigen_residual, threads=c.threads)
        self.problem = P
        ek = self._timed("ode_check", self._ode_check, P)
        if not ek < c.tolerances.ode_residual:
            raise ToleranceError(f"E_k residual {ek:.3e} exceeds tolerances.ode_residual={c.tolerances.ode_residual:g}")
        defect = resonance_defect(P.ctx)
        fields, infos = self._timed("transport", run_transport, P.ctx, c.J_transport, c.tolerances.transport_residual)
        self.fields = fields
        decay = [measure_decay(u, P.params) for u in fields]
        tot = [total_residual(P.ctx, fields, J, 6 * c.R0 * (c.J_transport + 1)) for J in range(c.J_transport + 1)]
        self.manifest["params"] = P.params.to_json()
        self.manifest["mu_star"] = [P.mu_star.real, P.mu_star.imag]
        self.manifest["roots"] = [rs.to_json() for rs in P.systems]
        self.manifest["residuals"] = {"ode_Ek": ek, "resonance_defect": defect, "transport": infos,
                                      "total_residual_by_J": tot}
        self.manifest["decay"] = [d.to_json() for d in decay]
        if write:
            for u, info in zip(fields, infos):
                write_field_csv(u, info, self.out / f"u_{u.j}.csv")
            write_decay_json(decay, self.out / "decay.json")
            (self.out / "residuals.json").write_text(json.dumps(_jsonable(self.manifest["residuals"]), indent=2))

    @staticmethod
    def _ode_check(P) -> float:
        # one smooth compactly supported source per mode family; rho in [0, 24], step 2.5e-4
        rho = np.arange(96001) * 2.5e-4
        f = compact_rhs(rho, 9.0, 3.0, 1.5)
        return max(ek_relative_residual(rs, P.params.a, P.params.s0, f, rho, 1.0, shift=P.params.mu0_tilde)
                   for rs in P.systems)

    def analyze(self):
        c = self.cfg
        P = self.problem
        params, spectrum = P.params, P.spectrum
        J = c.J_transport
        cut = asm.build_cutoffs(params, J, P.ctx.rho)
        w = asm.assemble_v(cut, self.fields, c.R0)
        beta = asm.choose_beta(spectrum)
        eta = asm.default_eta_samples(params, c.grid.rho_max)
        prof = asm.closed_form_fourier(w, spectrum, params, beta, eta)
        fit = asm.gevrey_index_fit(prof, params.s0f)
        cert = prof.certificate
        summary = {"beta": beta, "dominance_ratio": w.dominance_ratio,
                   "certificate_ratio": float(cert.max() / cert.min()), "lower_bound_C2": prof.lower_bound_C2,
                   "target_slope": float(1 / params.s0), "target_rate": abs(params.mu0_tilde)}
        if not c.skip_numeric_ft:
            es = asm.crosscheck_samples(w, spectrum, params, beta, rho_max=c.grid.rho_max)
            cc = self._timed("fourier_numeric", asm.numeric_fourier_crosscheck, w, spectrum, params, beta, es)
            prof.numeric, prof.numeric_eta, prof.rel_error = cc.numeric, cc.eta, cc.rel_error
            summary.update(crosscheck_max_rel=float(cc.rel_error.max()),
                           crosscheck_window_change=float(cc.window_change.max()),
                           crosscheck_n=int(cc.eta.size))
        st = self._timed("s_terms", asm.compute_S_terms, P.ctx, cut, self.fields)
        summary["s_terms"] = {"c": st.c, "b": st.b, "d": st.d, "leak": st.s2_leak, "s1_sup": st.s1_sup,
                              "f10": st.f10_norm}
        asm.write_fourier_csv(prof, self.out / "fourier_profile.csv")
        asm.write_gevrey_json(fit, self.out / "gevrey_fit.json",
                              {"target_slope": summary["target_slope"], "target_rate": summary["target_rate"],
                               "s0": str(params.s0)})
        asm.write_s_terms_csv(st, self.out / "s_terms.csv")
        self.manifest["gevrey_fit"] = fit.to_json()
        self.manifest["analysis"] = summary
        (self.out / "report.txt").write_text(self._report(fit, summary))
        if not c.skip_numeric_ft and not summary["crosscheck_max_rel"] < c.tolerances.fourier_crosscheck:
            raise ToleranceError(f"numeric Fourier transform deviates {summary['crosscheck_max_rel']:.3g} from "
                                 f"the closed form (tolerance {c.tolerances.fourier_crosscheck:g})")

    def _report(self, fit, s) -> str:
        p = self.problem.params
        lines = [f"(q, a) = ({p.q}, {p.a}),  s0 = {p.s0},  r = {p.extras['r_exact']},  mu0_tilde = {p.mu0_tilde:.10g}",
                 f"fitted slope   {fit.slope:.4f} ± {fit.slope_ci:.4f}   target 1/s0 = {float(1 / p.s0):.4f}",
                 f"fitted rate    {fit.rate:.4f} ± {fit.rate_ci:.4f}   (at slope 1/s0: {fit.rate_at_index:.4f})"
                 f"   target |mu0_tilde| = {abs(p.mu0_tilde):.4f}",
                 f"eta window     {fit.decades:.2f} decades, {fit.n_samples} samples, lambda' = {fit.lam_prime:.4f}",
                 f"certificate    max/min = {s['certificate_ratio']:.4f}   C2 = {s['lower_bound_C2']:.4g}",
                 f"dominance      {s['dominance_ratio']:.4g}",
                 f"S2 band fit    c = {s['s_terms']['c']:.4g} (super-exponential decay needs c > 0)"]
        if "crosscheck_max_rel" in s:
            lines.append(f"numeric FT     max rel. deviation {s['crosscheck_max_rel']:.3g} at {s['crosscheck_n']} samples")
        else:
            lines.append("numeric FT     skipped (closed form only)")
        return "\n".join(lines) + "\n"

    def finish(self):
        self.manifest["warnings"] = self.warnings
        files = sorted(p for p in self.out.iterdir()
                       if p.is_file() and p.name not in ("manifest.json", "timings.json"))
        self.manifest["artifacts"] = {p.name: _sha256(p) for p in files}
        (self.out / "manifest.json").write_text(json.dumps(_jsonable(self.manifest), indent=2, sort_keys=True))
        (self.out / "timings.json").write_text(json.dumps(self.timings, indent=2, sort_keys=True))


def run(cfg: RunConfig, command: str) -> Run:
    cfg.validate(command)
    r = Run(cfg, command)
    if command == "spectrum":
        r.spectrum()
    elif command == "witness":
        r.witness()
    elif command == "analyze":
        r.witness(write=False)
        r.analyze()
    elif command == "all":
        r.spectrum()
        r.witness()
        r.analyze()
    else:
        raise ConfigError(f"unknown command {command!r}")
    r.finish()
    return r


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--q", type=int, help="oscillator power, q >= 2")
    common.add_argument("--a", type=int, help="degeneracy exponent, a >= 1")
    common.add_argument("--k", type=int, help="number of oscillator modes K")
    common.add_argument("--j", type=int, help="transport depth J")
    common.add_argument("--r0", type=float, help="cutoff scale R0")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, metavar="N", help="worker cap for the transport solves")
    common.add_argument("--skip-numeric-ft", action="store_true", help="closed-form Fourier profile only")
    p = argparse.ArgumentParser(prog="gevrey-witness",
                                description="Singular-solution witness and Gevrey-index diagnostics.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("spectrum", parents=[common], help="oscillator eigenpairs only")
    sub.add_parser("witness", parents=[common], help="spectrum, ODE kernels and transport")
    sub.add_parser("analyze", parents=[common], help="Fourier profile, Gevrey fit and report")
    sub.add_parser("all", parents=[common], help="every stage and every artifact")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        r = run(cfg, args.command)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ToleranceError, TransportError, SpectrumError, TailError, asm.AssemblyError, ValueError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_TOLERANCE
    if "analysis" in r.manifest:
        sys.stdout.write((r.out / "report.txt").read_text())
    elif args.command == "spectrum":
        sys.stdout.write((r.out / "spectrum.csv").read_text())
    else:
        print(f"wrote {r.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
