"""Command-line entry point: ``kgds <command> ...``."""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, ConvergenceError, DomainError, InvalidInputError, KGError, NumericalFailure

EXIT_OK, EXIT_DOMAIN, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 64


def fmt(x) -> str:
    return f"{float(x):.17g}"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- samplers

def parse_sampler(spec: str):
    """``zero``, ``const:C``, ``bump:R[:A]`` (A times the unit bump of radius R),
    ``negquad:C:A`` (``-C - A x^2``)."""
    from .wave_oracle import FieldSampler, bump, constant
    parts = spec.split(":")
    try:
        kind, args = parts[0], [float(p) for p in parts[1:]]
    except ValueError:
        raise ConfigError(f"sampler {spec!r}: parse error") from None
    if kind == "zero" and not args:
        return FieldSampler(lambda x: np.zeros(np.shape(x)), support_radius=0.0, name="zero",
                            deriv=lambda x: np.zeros(np.shape(x)))
    if kind == "const" and len(args) == 1:
        return constant(args[0])
    if kind == "bump" and len(args) in (1, 2):
        return bump(args[0], args[1] if len(args) == 2 else 1.0)
    if kind == "negquad" and len(args) == 2:
        c, a = args
        return FieldSampler(lambda x: -c - a * np.asarray(x) ** 2, name=spec,
                            deriv=lambda x: -2 * a * np.asarray(x))
    raise ConfigError(f"sampler {spec!r}: unknown form")


def load_config(path) -> "SimConfig":
    from .sim3d import SimConfig
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return SimConfig.from_json(text)


# ---------------------------------------------------------------- manifest

def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, argv, config, started: float, outputs) -> Path:
    entries = []
    for p in sorted(set(Path(o) for o in outputs)):
        if p.exists():
            entries.append({"path": str(p), "bytes": p.stat().st_size, "sha256": file_digest(p)})
    manifest = {"command": list(argv), "config": config, "version": __version__,
                "start": started, "end": time.time(), "outputs": entries}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


# ---------------------------------------------------------------- commands

def cmd_kernel_eval(a, ctx):
    from .kernels import kernel_E, kernel_K0, kernel_K1
    if a.which == "E":
        v = kernel_E(a.z, a.t, a.b, a.M)
    elif a.which == "K1":
        v = kernel_K1(a.z, a.t, a.M)
    else:
        v = kernel_K0(a.z, a.t, a.M, method=a.method)
    print(fmt(v))


def cmd_kernel_scan(a, ctx):
    from .kernels import positivity_scan
    rep = positivity_scan(a.M, a.t_max, a.nz, a.nt, which=a.which, t_min=a.t_min)
    out = ctx.out_dir()
    csv_path, json_path = out / f"scan_{a.which}.csv", out / f"scan_{a.which}.json"
    rep.write_csv(csv_path)
    rep.write_json(json_path)
    ctx.outputs += [csv_path, json_path]
    print(f"min {fmt(rep.min_value)} max {fmt(rep.max_value)} sign_change {rep.sign_change}")


def cmd_verify(a, ctx):
    from .kernels import verify_kernel_identities
    res = verify_kernel_identities(a.t, a.b, a.M, quad_tol=min(a.tol, 1e-10))
    for name, r in zip(("E", "K1", "K0"), res):
        print(f"{name} {fmt(r)}")
    if max(res) >= a.tol:
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_transform_cauchy(a, ctx):
    from .transform import CauchyData, desitter_cauchy_solution
    data = CauchyData(parse_sampler(a.u0), parse_sampler(a.u1), a.dim)
    print(fmt(desitter_cauchy_solution(data, a.M, a.x, a.t, a.quad_tol)))


def cmd_transform_source(a, ctx):
    from .transform import SourceTerm, desitter_source_solution
    g = parse_sampler(a.f)
    src = SourceTerm(lambda x, b: g(x))
    print(fmt(desitter_source_solution(src, a.M, a.x, a.t, a.dim, a.quad_tol)))


def cmd_maxprinciple(a, ctx):
    from .transform import CauchyData, SourceTerm, check_max_principle_desitter, check_max_principle_minkowski
    data = CauchyData(parse_sampler(a.u0), parse_sampler(a.u1), a.dim)
    src = None
    if a.f != "zero":
        g = parse_sampler(a.f)
        src = SourceTerm(lambda x, b: g(x), "nonpositive")
    lo = 0.0 if a.dim == "radial3" else -a.x_max
    xs = np.linspace(lo, a.x_max, a.nx)
    ts = np.linspace(a.t_max / a.nt, a.t_max, a.nt)
    pts = [(x, t) for x in xs for t in ts]
    check = check_max_principle_minkowski if a.space == "minkowski" else check_max_principle_desitter
    rep = check(data, src, a.M, pts)
    out = ctx.out_dir()
    rep.write_csv(out / "maxprinciple.csv")
    rep.write_json(out / "maxprinciple.json")
    ctx.outputs += [out / "maxprinciple.csv", out / "maxprinciple.json"]
    print(f"passed {rep.passed} worst_violation {fmt(rep.worst_violation)} t_threshold {fmt(rep.t_threshold)}")
    return EXIT_OK if rep.passed else EXIT_DOMAIN


def cmd_picard(a, ctx):
    from .semilinear import PicardConfig, picard_weak_solution
    from .transform import CauchyData
    data = CauchyData(parse_sampler(a.u0), parse_sampler(a.u1), a.dim)
    cfg = PicardConfig.from_mu(a.mu2, a.lam, a.t_max, n_iter=a.n_iter,
                               x_grid=tuple(np.linspace(0.0, a.x_max, a.nx)),
                               t_grid=tuple(np.linspace(0.0, a.t_max, a.nt)))
    u, rep = picard_weak_solution(data, cfg)
    out = ctx.out_dir()
    (out / "picard.json").write_text(rep.to_json())
    np.savetxt(out / "picard_u.csv", u, delimiter=",", fmt="%.17g")
    ctx.outputs += [out / "picard.json", out / "picard_u.csv"]
    print(f"iterations {rep.iterations} last_difference {fmt(rep.differences[-1])} diverged {rep.diverged}")
    return EXIT_NUMERIC if rep.diverged else EXIT_OK


def cmd_duffing(a, ctx):
    from .semilinear import duffing_ode
    tr = duffing_ode(a.psi0, a.psi1, a.mu2, a.lam, a.t_end, a.dt)
    out = ctx.out_dir()
    tr.write_csv(out / "duffing.csv")
    ctx.outputs.append(out / "duffing.csv")
    print(f"psi(t_end) {fmt(tr.psi[-1])} dpsi(t_end) {fmt(tr.dpsi[-1])}")


_SNAPSHOT_RE = re.compile(r"^(?!.*_abort_)(.+)_(\d+)\.raw$")


def _snapshot_paths(directory):
    found = []
    for p in Path(directory).glob("*.raw"):
        m = _SNAPSHOT_RE.match(p.name)
        if m:
            found.append((int(m.group(2)), p))
    if not found:
        raise InvalidInputError(f"no snapshots in {directory}")
    return [p for _, p in sorted(found)]


def cmd_functional(a, ctx):
    from .semilinear import f_functional
    from .sim3d import Field3D
    snaps = [Field3D.read(p) for p in _snapshot_paths(a.snapshots)]
    snaps.sort(key=lambda s: s.time)
    series = f_functional(snaps, snaps[0].dx, a.M, damping=a.damping)
    out = ctx.out_dir()
    series.write_csv(out / "functional.csv")
    ctx.outputs.append(out / "functional.csv")
    print(f"snapshots {len(snaps)} sigma {series.sigma}")


def cmd_signcond(a, ctx):
    from .semilinear import sign_change_condition
    if a.config:
        from .sim3d import make_initial_data
        cfg = load_config(a.config)
        ctx.config = cfg.to_dict()
        p0, p1 = make_initial_data(cfg)
        res = sign_change_condition(p0, p1, a.mu if a.mu is not None else math.sqrt(cfg.mu2), a.form)
    else:
        if a.mu is None:
            raise ConfigError("--mu is required without --config")
        res = sign_change_condition(parse_sampler(a.psi0), parse_sampler(a.psi1), a.mu, a.form)
    print(f"coefficient {fmt(res.coefficient)} lhs_plus {fmt(res.lhs_plus)} "
          f"lhs_minus {fmt(res.lhs_minus)} satisfied_sigma {res.satisfied_sigma}")


def cmd_wall(a, ctx):
    from .semilinear import static_wall_residual
    res = static_wall_residual(a.mu, a.lam, h=a.h, velocity=a.v, kappa=a.kappa)
    print(f"max_residual {fmt(res.max_residual)} kappa {fmt(res.kappa)} h {fmt(res.h)} v {fmt(res.velocity)}")


def cmd_simulate(a, ctx):
    from .sim3d import SimConfig, run_simulation
    cfg = load_config(a.config) if a.config else SimConfig()
    ctx.config = cfg.to_dict()
    out = ctx.out_dir()
    (out / "config.json").write_text(cfg.to_json())
    res = run_simulation(cfg, out_dir=out, stem=a.stem, threads=a.threads)
    ctx.outputs.append(out / "config.json")
    ctx.outputs.append(out / f"{a.stem}_manifest.json")
    for r in res.snapshots:
        ctx.outputs += [Path(r.path), Path(r.path[: -len(".raw")] + ".meta.json")]
    print(f"snapshots {len(res.snapshots)} wall_clock_s {fmt(res.manifest['wall_clock_s'])}")


def cmd_bubbles(a, ctx):
    from .bubbles import BubbleTracker, analyse_field, default_epsilon, reference_sign_of
    from .sim3d import Field3D
    paths = _snapshot_paths(a.snapshots)
    snaps = sorted(((Field3D.read(p)) for p in paths), key=lambda s: s.time)
    psi0 = snaps[0].values
    eps = a.eps if a.eps is not None else default_epsilon(psi0)
    ref = reference_sign_of(psi0)
    tracker = BubbleTracker()
    for s in snaps:
        grid, stats = analyse_field(s, eps, ref, s.dx)
        tracker.update(s.time, grid, stats)
    out_path = Path(a.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tracker.timeline.write_jsonl(out_path)
    ctx.outputs.append(out_path)
    ctx.manifest_dir = out_path.parent
    counts = {}
    for e in tracker.timeline.events:
        counts[e.kind] = counts.get(e.kind, 0) + 1
    print(" ".join(f"{k} {v}" for k, v in sorted(counts.items())) or "no events")


def cmd_tail(a, ctx):
    from .transform import tail_functional
    if a.v == "sample":
        v = lambda s: -np.exp(-np.asarray(s) ** 2 / (1.2 - np.asarray(s) ** 3))
    else:
        v = parse_sampler(a.v)
    print(fmt(tail_functional(v, a.s)))


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kgds", description="Klein-Gordon kernels, transforms and bubble simulations.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def out_arg(sp):
        sp.add_argument("--out", default=None, help="output directory")

    k = sub.add_parser("kernel").add_subparsers(dest="action", required=True, parser_class=_Parser)
    ke = k.add_parser("eval")
    ke.add_argument("--which", choices=["E", "K0", "K1"], default="E")
    ke.add_argument("--M", type=float, required=True)
    ke.add_argument("--t", type=float, required=True)
    ke.add_argument("--b", type=float, default=0.0)
    ke.add_argument("--z", type=float, required=True)
    ke.add_argument("--method", default="closed",
                    choices=["closed", "literal", "derivative", "half_integer", "half_integer_intermediate"])
    out_arg(ke)
    ke.set_defaults(func=cmd_kernel_eval)
    ks = k.add_parser("scan")
    ks.add_argument("--which", choices=["E", "K0", "K1"], default="K0")
    ks.add_argument("--M", type=float, required=True)
    ks.add_argument("--t-max", type=float, required=True)
    ks.add_argument("--t-min", type=float, default=0.0)
    ks.add_argument("--nz", type=int, default=64)
    ks.add_argument("--nt", type=int, default=64)
    out_arg(ks)
    ks.set_defaults(func=cmd_kernel_scan)

    v = sub.add_parser("verify").add_subparsers(dest="action", required=True, parser_class=_Parser)
    vi = v.add_parser("identities")
    vi.add_argument("--M", type=float, required=True)
    vi.add_argument("--t", type=float, required=True)
    vi.add_argument("--b", type=float, default=0.0)
    vi.add_argument("--tol", type=float, default=1e-8)
    out_arg(vi)
    vi.set_defaults(func=cmd_verify)

    tr = sub.add_parser("transform").add_subparsers(dest="action", required=True, parser_class=_Parser)
    tc = tr.add_parser("cauchy")
    ts = tr.add_parser("source")
    for sp in (tc, ts):
        sp.add_argument("--M", type=float, required=True)
        sp.add_argument("--t", type=float, required=True)
        sp.add_argument("--x", type=float, default=0.0)
        sp.add_argument("--dim", choices=["line", "radial3"], default="radial3")
        sp.add_argument("--quad-tol", type=float, default=1e-10)
        out_arg(sp)
    tc.add_argument("--u0", default="zero")
    tc.add_argument("--u1", default="zero")
    tc.set_defaults(func=cmd_transform_cauchy)
    ts.add_argument("--f", required=True)
    ts.set_defaults(func=cmd_transform_source)

    mp = sub.add_parser("maxprinciple")
    mp.add_argument("--space", choices=["minkowski", "desitter"], required=True)
    mp.add_argument("--M", type=float, required=True)
    mp.add_argument("--u0", default="zero")
    mp.add_argument("--u1", default="zero")
    mp.add_argument("--f", default="zero")
    mp.add_argument("--dim", choices=["line", "radial3"], default="line")
    mp.add_argument("--nx", type=int, default=10)
    mp.add_argument("--nt", type=int, default=10)
    mp.add_argument("--x-max", type=float, default=1.0)
    mp.add_argument("--t-max", type=float, default=2.0)
    out_arg(mp)
    mp.set_defaults(func=cmd_maxprinciple)

    pc = sub.add_parser("picard")
    pc.add_argument("--mu2", type=float, default=0.1)
    pc.add_argument("--lambda", dest="lam", type=float, default=0.1)
    pc.add_argument("--t-max", type=float, default=1.0)
    pc.add_argument("--u0", default="bump:0.4:0.01")
    pc.add_argument("--u1", default="zero")
    pc.add_argument("--dim", choices=["line", "radial3"], default="radial3")
    pc.add_argument("--nx", type=int, default=31)
    pc.add_argument("--x-max", type=float, default=1.5)
    pc.add_argument("--nt", type=int, default=11)
    pc.add_argument("--n-iter", type=int, default=20)
    out_arg(pc)
    pc.set_defaults(func=cmd_picard)

    du = sub.add_parser("duffing")
    du.add_argument("--psi0", type=float, required=True)
    du.add_argument("--psi1", type=float, default=0.0)
    du.add_argument("--mu2", type=float, default=0.1)
    du.add_argument("--lambda", dest="lam", type=float, default=0.1)
    du.add_argument("--t-end", type=float, default=20.0)
    du.add_argument("--dt", type=float, default=1e-3)
    out_arg(du)
    du.set_defaults(func=cmd_duffing)

    fu = sub.add_parser("functional")
    fu.add_argument("--snapshots", required=True)
    fu.add_argument("--M", type=float, required=True)
    fu.add_argument("--damping", type=float, default=0.0)
    out_arg(fu)
    fu.set_defaults(func=cmd_functional)

    sc = sub.add_parser("signcond")
    sc.add_argument("--mu", type=float, default=None)
    sc.add_argument("--psi0", default="bump:0.2")
    sc.add_argument("--psi1", default="zero")
    sc.add_argument("--config", default=None)
    sc.add_argument("--form", choices=["higgs", "kg"], default="higgs")
    out_arg(sc)
    sc.set_defaults(func=cmd_signcond)

    wr = sub.add_parser("wall-residual")
    wr.add_argument("--mu", type=float, default=1.0)
    wr.add_argument("--lambda", dest="lam", type=float, default=1.0)
    wr.add_argument("--h", type=float, default=1e-3)
    wr.add_argument("--v", type=float, default=0.0)
    wr.add_argument("--kappa", type=float, default=None)
    out_arg(wr)
    wr.set_defaults(func=cmd_wall)

    si = sub.add_parser("simulate")
    si.add_argument("--config", default=None)
    si.add_argument("--stem", default="psi")
    si.add_argument("--threads", type=int, default=None)
    si.add_argument("--out", default="out")
    si.set_defaults(func=cmd_simulate)

    bu = sub.add_parser("bubbles")
    bu.add_argument("--snapshots", required=True)
    bu.add_argument("--out", required=True, help="timeline JSONL path")
    bu.add_argument("--eps", type=float, default=None)
    bu.set_defaults(func=cmd_bubbles)

    ta = sub.add_parser("tail")
    ta.add_argument("--s", type=float, required=True)
    ta.add_argument("--v", default="sample")
    out_arg(ta)
    ta.set_defaults(func=cmd_tail)
    return p


class _Context:
    def __init__(self, args):
        self.args = args
        self.outputs: list[Path] = []
        self.config = None
        self.manifest_dir: Path | None = None

    def out_dir(self) -> Path:
        d = Path(self.args.out or ".")
        d.mkdir(parents=True, exist_ok=True)
        self.manifest_dir = d
        return d


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    ctx = _Context(args)
    started = time.time()
    try:
        code = args.func(args, ctx) or EXIT_OK
    except (ConvergenceError, NumericalFailure, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DomainError, InvalidInputError, ConfigError, KGError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    if ctx.manifest_dir is not None or getattr(args, "out", None):
        d = ctx.manifest_dir or ctx.out_dir()
        write_manifest(d, ["kgds"] + argv, ctx.config, started, ctx.outputs)
    return code


def main() -> None:
    sys.exit(dispatch())
