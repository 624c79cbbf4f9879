"""Command-line driver.

Subcommands: validate, frank, psi, bulk, minimize, sweep, estat.  Every
command reads one config file, writes deterministic artifacts into the
output directory, and exits 0 on success, 2 on configuration/validation
failure, 3 on numerical failure.  Threads are pinned before the numeric
stack is imported so --threads is honored by the BLAS layer.
"""

import argparse
import csv
import json
import math
import os
import sys


def _build_parser():
    p = argparse.ArgumentParser(
        prog="qfrank",
        description="Mean-field tensor energies and their elastic limits")
    p.add_argument("command",
                   choices=["validate", "frank", "psi", "bulk", "minimize",
                            "sweep", "estat"])
    p.add_argument("--config", required=True, help="path to the run config")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    return p


def _pin_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _fmt(x):
    return f"{x:.17g}"


def _write_json(path, obj):
    def default(o):
        if hasattr(o, "to_json_dict"):
            return o.to_json_dict()
        if hasattr(o, "tolist"):
            return o.tolist()
        raise TypeError(f"not serializable: {type(o)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=default)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)   # excel dialect: RFC-4180 line endings
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) if isinstance(x, float) else x for x in row])


class _Run:
    """Everything a command needs, built lazily from the config."""

    def __init__(self, cfg, args):
        self.cfg = cfg
        self.args = args
        import numpy as np
        from . import energy, fields, kernel, maxent, minimize
        self.np = np
        self.kernel = kernel
        self.maxent = maxent
        self.fields = fields
        self.energy = energy
        self.minimize = minimize

    # -- kernel ------------------------------------------------------------
    def profile(self, name):
        k = self.kernel
        get = lambda key, default=None: self.cfg.get("kernel", f"{name}.{key}",
                                                     default)
        form = get("form", "zero")
        if form == "zero":
            return k.RadialProfile.zero()
        if form == "table":
            knots = get("knots")
            if knots is None:
                raise self._cfg_err(f"[kernel] {name}.knots required for table")
            return k.RadialProfile.table(*knots)
        return k.RadialProfile.inverse_power(
            coefficient=get("coefficient", 1.0), exponent=get("exponent", 6.0),
            cutoff=get("cutoff", 0.1), rmax=get("rmax", math.inf))

    def _cfg_err(self, msg):
        from .errors import ConfigurationError
        return ConfigurationError(msg)

    def spec(self):
        k = self.kernel
        return k.KernelSpec(self.profile("g1"), self.profile("g2"),
                            self.profile("g3"),
                            M_bound=self.cfg.get("kernel", "M_bound", 10.0))

    def quad(self):
        return self.kernel.QuadratureSpec(
            radial_nodes=self.cfg.get("quadrature", "radial_nodes", 16),
            angular_order=self.cfg.get("quadrature", "angular_order", 16),
            tail_mode=self.cfg.get("quadrature", "tail", "analytic"))

    def bulk(self):
        k0_cfg = self.cfg.get("bulk", "k0", "auto")
        if k0_cfg == "auto":
            k0_cfg = self.kernel.moments(self.spec(), self.quad()).k0
        return self.maxent.ground_state(float(k0_cfg))

    def grid(self):
        return self.fields.TorusGrid(self.cfg.require("grid", "N"))

    def geometry(self):
        f = self.fields
        kind = self.cfg.require("domain", "geometry")
        if kind == "ball":
            return f.BallGeometry(tuple(self.cfg.require("domain", "center")),
                                  self.cfg.require("domain", "radius"))
        return f.BoxGeometry(tuple(self.cfg.require("domain", "lo")),
                             tuple(self.cfg.require("domain", "hi")))

    def director(self):
        np = self.np
        kind = self.cfg.get("boundary", "director", "constant")
        axis = self.cfg.get("boundary", "axis", (0.0, 0.0, 1.0))
        if kind == "constant":
            a = np.asarray(axis, dtype=float)
            a = a / np.linalg.norm(a)
            return lambda x, y, z: np.broadcast_to(
                a, x.shape + (3,)).copy()
        if kind == "twist":
            return lambda x, y, z: np.stack(
                [np.cos(z), np.sin(z), np.zeros_like(z)], axis=-1)
        return lambda x, y, z: np.stack(
            [np.sin(z), np.zeros_like(z), np.cos(z)], axis=-1)

    def s_star(self, bulk=None):
        cfg_val = self.cfg.get("boundary", "s_star", "auto")
        if cfg_val != "auto":
            return float(cfg_val)
        return (bulk or self.bulk()).s_star

    def opts(self):
        m = self.minimize
        mx = self.maxent
        quad = mx.SphereQuad(self.cfg.get("minimize", "sphere_theta", 64),
                             self.cfg.get("minimize", "sphere_phi", 128))
        return m.MinimizeOptions(
            step0=self.cfg.get("minimize", "step0", 1e-2),
            backtrack=self.cfg.get("minimize", "backtrack", 0.5),
            grad_tol=self.cfg.get("minimize", "grad_tol", 1e-5),
            max_iters=self.cfg.get("minimize", "max_iters", 500),
            projection_margin=self.cfg.get("minimize", "margin", 1e-6),
            seed=self.args.seed, quad=quad)

    def estat_cfg(self):
        if not self.cfg.has("electrostatics"):
            return None
        np = self.np
        name = self.cfg.get("electrostatics", "phi0", "zero")
        phi0 = ((lambda x, y, z: np.zeros_like(x)) if name == "zero"
                else (lambda x, y, z: x))
        return self.energy.ElectrostaticConfig(
            A_iso=self.cfg.require("electrostatics", "A_iso"),
            A_aniso=self.cfg.get("electrostatics", "A_aniso", 0.0),
            phi0=phi0,
            cg_tol=self.cfg.get("electrostatics", "cg_tol", 1e-10),
            cg_maxiter=self.cfg.get("electrostatics", "cg_maxiter", 20000))


# ---------------------------------------------------------------------------
# commands


def cmd_validate(run, out):
    alpha = run.cfg.get("domain", "alpha")
    report = run.kernel.validate_assumptions(run.spec(), run.quad(),
                                             alpha=alpha, seed=run.args.seed)
    _write_json(os.path.join(out, "validate.json"), report.to_json_dict())
    return 0 if report.passed else 2


def cmd_frank(run, out):
    from . import published
    spec = run.spec()
    quad = run.quad()
    tab = run.kernel.moments(spec, quad)
    bulk = run.bulk()
    s_star = run.s_star(bulk)
    co = run.kernel.elastic_tensor(spec, quad, s_star=s_star)
    _write_json(os.path.join(out, "moments.json"), tab.to_json_dict())
    _write_json(os.path.join(out, "frank.json"), co.to_json_dict())

    coeffs = [getattr(spec, f"g{i}").coefficient
              if getattr(spec, f"g{i}").form == "inverse-power" else None
              for i in (1, 2, 3)]
    owner = {"G1_100": 0, "G2_110": 1, "G2_200": 1,
             "G3_111": 2, "G3_210": 2, "G3_300": 2}
    lines = ["moment table vs published reference (dispersion kernel)",
             f"{'name':>8} {'computed':>14} {'reference':>12} {'deviation':>10}"]
    for name, ref_unit in published.G_REFERENCE.items():
        c = coeffs[owner[name]]
        val = getattr(tab, name)
        if c is None or c == 0.0:
            lines.append(f"{name:>8} {val:14.6g} {'n/a':>12} {'n/a':>10}")
            continue
        ref = ref_unit * c
        dev = (val - ref) / ref
        flag = "MATCH" if abs(dev) <= published.G_TOLERANCE else "OFF"
        lines.append(f"{name:>8} {val:14.6g} {ref:12.6g} {dev:+9.2%} {flag}")

    ratio = abs(co.K1 - co.K2) / co.K1 if co.K1 else float("nan")
    lines.append("")
    lines.append(f"K1 = {co.K1:.6g}  K2 = {co.K2:.6g}  K3 = {co.K3:.6g}  "
                 f"(s* = {s_star:.6g})")
    lines.append(f"ratio |K1-K2|/K1 = {ratio:.4f}")
    cs = [c if c is not None else 0.0 for c in coeffs]
    if cs[0] > 0 and abs(cs[1] - cs[0]) < 1e-12 and abs(cs[2] - cs[0]) < 1e-12:
        flag = ("MATCH" if abs(ratio - published.RATIO_EQUAL_COEFFS)
                <= published.RATIO_TOLERANCE else "OFF")
        lines.append(f"equal coefficients: reference ratio "
                     f"{published.RATIO_EQUAL_COEFFS} -> {flag}")
    elif cs[0] > 0 and 0 <= cs[1] <= cs[0] and 0 <= cs[2] <= cs[0]:
        flag = ("WITHIN-BOUND" if ratio <= published.RATIO_C1_DOMINANT_BOUND
                else "EXCEEDS-BOUND")
        lines.append(f"c1-dominant: reference bound "
                     f"{published.RATIO_C1_DOMINANT_BOUND} -> {flag}")
    if co.one_constant:
        lines.append("one-constant case: g2 = g3 = 0 forces K1 = K2 = K3")
    lines.append("")
    lines.append("k0 components (int g1, int g2 z1^2, (2/3) int g3 z1^4):")
    lines.append(f"  computed: {tab.k0_g1:.6g} {tab.k0_g2:.6g} {tab.k0_g3:.6g}"
                 f"  (raw fourth moment: {tab.k0_g3_raw:.6g})")
    refs = published.K0_REFERENCE
    lines.append(f"  published (per unit coefficient): {refs[0]} {refs[1]} "
                 f"{refs[2]}")
    lines.append("  note: the published third component matches the raw")
    lines.append("  fourth-moment integral without the 2/3 factor; both")
    lines.append("  conventions are reported and neither is asserted.")
    with open(os.path.join(out, "frank_table.txt"), "w",
              encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def cmd_psi(run, out):
    np = run.np
    bulk = run.bulk()
    lo = run.cfg.get("psi", "s_lo", -0.45)
    hi = run.cfg.get("psi", "s_hi", 0.98)
    n = run.cfg.get("psi", "samples", 60)
    s = np.linspace(lo, hi, n)
    lam, psi_s = run.maxent.uniaxial_dual(s)
    psi = psi_s - bulk.k0 * s ** 2 / 3.0 - bulk.c5
    # |Lambda| = |lam| * |n x n - I/3| on the coaxial ray
    lam_norm = np.abs(lam) * math.sqrt(2.0 / 3.0)
    _write_csv(os.path.join(out, "psi.csv"),
               ["s", "psi_s", "psi", "lambda_norm"],
               [[float(a), float(b), float(c), float(d)]
                for a, b, c, d in zip(s, psi_s, psi, lam_norm)])
    _write_json(os.path.join(out, "bulk.json"), bulk.to_json_dict())
    return 0


def cmd_bulk(run, out):
    _write_json(os.path.join(out, "bulk.json"), run.bulk().to_json_dict())
    return 0


def cmd_minimize(run, out):
    f = run.fields
    bulk = run.bulk()
    spec = run.spec()
    grid = run.grid()
    opts = run.opts()
    eps = run.cfg.require("minimize", "epsilon")
    mode = run.cfg.get("minimize", "mode", "periodic")
    kgrid = f.build_periodized_kernel(spec, grid, eps)
    s_star = run.s_star(bulk)
    b0 = f.director_to_field(run.director(), s_star, grid)
    if mode == "periodic":
        res = run.minimize.minimize_Feps(b0, kgrid, bulk, eps, opts)
    else:
        geo = run.geometry()
        mask = f.build_mask(geo, eps, run.cfg.get("domain", "alpha", 0.25),
                            run.cfg.get("domain", "c6", 0.5), grid,
                            c7=run.cfg.get("domain", "c7"))
        res = run.minimize.minimize_Geps(b0, mask, kgrid, bulk, eps,
                                         cfg=run.estat_cfg(), opts=opts)
        f.write_mask(mask, os.path.join(out, "mask.bin"))
    f.write_field(res.field, os.path.join(out, "field.bin"))
    _write_csv(os.path.join(out, "trace.csv"),
               ["iter", "energy", "grad_norm", "step"], res.trace)
    _write_json(os.path.join(out, "energy.json"), {
        "energy": res.energy, "converged": res.converged,
        "iterations": res.iterations, "stop_reason": res.stop_reason,
        "breakdown": res.breakdown.to_json_dict()})
    return 0


def cmd_sweep(run, out):
    bulk = run.bulk()
    spec = run.spec()
    quad = run.quad()
    s_star = run.s_star(bulk)
    coeffs = run.kernel.elastic_tensor(spec, quad, s_star=s_star)
    report = run.kernel.validate_assumptions(spec, quad,
                                             alpha=run.cfg.get("domain", "alpha"))
    res = run.minimize.sweep_gamma(
        spec, bulk, coeffs, run.geometry(), run.director(),
        run.cfg.require("sweep", "epsilons"), run.grid(), opts=run.opts(),
        alpha=run.cfg.get("domain", "alpha", 0.25),
        c6=run.cfg.get("domain", "c6", 0.5),
        decay_p=(report.decay_exponent
                 if math.isfinite(report.decay_exponent) else None),
        cfg=run.estat_cfg())
    header = ["eps", "N", "energy", "limit_energy", "l2_dist_to_limit",
              "max_interior_dist_to_M", "iterations", "converged", "skipped"]
    rows = []
    for r in res.rows:
        rows.append([r.get(k, "") for k in header])
    _write_csv(os.path.join(out, "sweep.csv"), header, rows)
    _write_json(os.path.join(out, "sweep.json"), res.to_json_dict())
    return 0


def cmd_estat(run, out):
    f = run.fields
    grid = run.grid()
    geo = run.geometry()
    eps = run.cfg.get("minimize", "epsilon", 0.4)
    mask = f.build_mask(geo, eps, run.cfg.get("domain", "alpha", 0.25),
                        run.cfg.get("domain", "c6", 0.5), grid,
                        c7=run.cfg.get("domain", "c7"))
    cfg = run.estat_cfg()
    if cfg is None:
        raise run._cfg_err("estat command needs an [electrostatics] section")
    field = f.director_to_field(run.director(), run.s_star(), grid)
    res = run.energy.estat_solve(field, mask, cfg)
    f.write_scalar_grid(res.phi, os.path.join(out, "phi.bin"))
    _write_json(os.path.join(out, "estat.json"), {
        "E_value": res.E_value, "face_energy": res.face_energy,
        "residual": res.residual, "iterations": res.iterations})
    return 0


_COMMANDS = {
    "validate": cmd_validate, "frank": cmd_frank, "psi": cmd_psi,
    "bulk": cmd_bulk, "minimize": cmd_minimize, "sweep": cmd_sweep,
    "estat": cmd_estat,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    _pin_threads(args.threads)
    from .config import load_config
    from .errors import ConfigurationError, NumericalError, ValidationFailure
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        run = _Run(cfg, args)
        code = _COMMANDS[args.command](run, args.out)
        import time
        _write_json(os.path.join(args.out, "run_meta.json"), {
            "command": args.command, "config": os.path.abspath(args.config),
            "seed": args.seed, "threads": args.threads,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        })
        return code
    except (ConfigurationError, ValidationFailure) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
