"""Command-line entry point: ``narrownet <subcommand> [options]``.

Exit codes: 0 success, 1 domain error (e.g. incomplete certificate, failed
verification), 2 usage error.  Every artifact is written to a temporary file
next to its destination and renamed into place.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import net_core
from .errors import NarrowNetError

log = logging.getLogger("narrownet")


class UsageError(Exception):
    pass


# name -> argparse kwargs plus an optional "check" callable returning an error string
def _positive(v):
    return None if v > 0 else "must be positive"


def _at_least(n):
    return lambda v: None if v >= n else f"must be at least {n}"


def _nonneg(v):
    return None if v >= 0 else "must be non-negative"


def _all(check):
    def run(values):
        for v in values:
            msg = check(v)
            if msg:
                return msg
        return None
    return run


COMMON = {
    "seed": dict(type=int, default=0, help="seed for all randomness"),
    "threads": dict(type=int, default=None, check=_nonneg,
                    help="worker count, 0 = auto (fallback: NARROWNET_THREADS)"),
}

SUBCOMMANDS = {
    "example": ("write one of the hand-built example networks", {
        "id": dict(default="1", choices=["1", "2-literal", "2-corrected"], help="example id"),
        "out": dict(required=True, path="out", help="network fixture to write"),
        "report": dict(default=None, path="out",
                       help="also write the negative-region component report for both second-example variants"),
    }),
    "analyze": ("label decision-region components on a grid", {
        "net": dict(required=True, path="in"),
        "box": dict(type=float, nargs="+", default=[-1.0, 1.0], help="lo hi, or lo_1 hi_1 ... per axis"),
        "res": dict(type=int, default=256, check=_at_least(2)),
        "out": dict(default=None, path="out", help="component report (JSON)"),
        "figure": dict(default=None, path="out", help="matplotlib figure (2-D only)"),
    }),
    "escape": ("build an escape certificate from a seed point", {
        "net": dict(required=True, path="in"),
        "seed_point": dict(type=float, nargs="+", required=True),
        "rmax": dict(type=float, default=1e3, check=_positive),
        "max_segments": dict(type=int, default=32, check=_at_least(1)),
        "samples": dict(type=int, default=64, check=_at_least(2)),
        "out": dict(required=True, path="out"),
    }),
    "verify": ("re-check a certificate along its polyline and terminal ray", {
        "net": dict(required=True, path="in"),
        "cert": dict(required=True, path="in"),
        "rmax": dict(type=float, default=1e3, check=_positive),
        "samples": dict(type=int, default=64, check=_at_least(2)),
        "out": dict(default=None, path="out"),
    }),
    "invertibilize": ("pad and perturb hidden weights to invertible ones", {
        "net": dict(required=True, path="in"),
        "box": dict(type=float, nargs="+", default=[-1.0, 1.0]),
        "eps": dict(type=float, default=1e-3, check=_positive),
        "samples": dict(type=int, default=10_000, check=_at_least(1)),
        "out": dict(required=True, path="out"),
        "report": dict(default=None, path="out"),
    }),
    "render": ("render a 2-D decision map as PGM (and optionally SVG / PNG)", {
        "net": dict(required=True, path="in"),
        "box": dict(type=float, nargs="+", default=[-1.0, 1.0]),
        "res": dict(type=int, default=512, check=_at_least(2)),
        "out": dict(required=True, path="out", help="binary PGM"),
        "svg": dict(default=None, path="out"),
        "png": dict(default=None, path="out"),
    }),
    "sphere-gen": ("write a concentric-sphere dataset as CSV", {
        "dim": dict(type=int, default=2, check=_at_least(2)),
        "n_train": dict(type=int, default=10_000, check=_at_least(1)),
        "n_test": dict(type=int, default=2_000, check=_at_least(1)),
        "r_inner": dict(type=float, default=None, check=_positive),
        "r_outer": dict(type=float, default=None, check=_positive),
        "out": dict(required=True, path="out", help="training split CSV"),
        "test_out": dict(default=None, path="out"),
    }),
    "train": ("train one network on the sphere data", {
        "dim": dict(type=int, default=2, check=_at_least(2)),
        "depth": dict(type=int, default=1, check=_at_least(1)),
        "width": dict(type=int, default=3, check=_at_least(1)),
        "epochs": dict(type=int, default=30, check=_at_least(1)),
        "batch_size": dict(type=int, default=64, check=_at_least(1)),
        "lr": dict(type=float, default=1e-3, check=_positive),
        "n_train": dict(type=int, default=10_000, check=_at_least(1)),
        "n_test": dict(type=int, default=2_000, check=_at_least(1)),
        "out": dict(required=True, path="out", help="trained network fixture"),
        "record": dict(default=None, path="out", help="run record (JSON)"),
        "figure": dict(default=None, path="out", help="decision map with test points (2-D only)"),
    }),
    "sweep": ("width-vs-dimension sweep on sphere data", {
        "dims": dict(type=int, nargs="+", default=[2, 3], check=_all(_at_least(2))),
        "depths": dict(type=int, nargs="+", default=[1, 2], check=_all(_at_least(1))),
        "offsets": dict(type=int, nargs="+", default=[0, 1], check=_all(_nonneg)),
        "repeats": dict(type=int, default=10, check=_at_least(1)),
        "epochs": dict(type=int, default=30, check=_at_least(1)),
        "batch_size": dict(type=int, default=64, check=_at_least(1)),
        "lr": dict(type=float, default=1e-3, check=_positive),
        "n_train": dict(type=int, default=10_000, check=_at_least(1)),
        "n_test": dict(type=int, default=2_000, check=_at_least(1)),
        "out": dict(required=True, path="out", help="per-run CSV"),
        "table": dict(default=None, path="out", help="aggregate success-rate table (JSON)"),
        "figure": dict(default=None, path="out", help="success-rate figure"),
        "record_time": dict(action="store_true", default=False,
                            help="write measured wall time instead of 0 (breaks byte-identical reruns)"),
    }),
    "gradcheck": ("compare backprop with central differences", {
        "net": dict(default=None, path="in", help="network fixture; random if omitted"),
        "dims": dict(type=int, nargs="+", default=[2, 3, 2], check=_all(_at_least(1))),
        "activation": dict(default="tanh", choices=list(net_core.ACTIVATIONS)),
        "batch": dict(type=int, default=16, check=_at_least(1)),
        "h": dict(type=float, default=1e-6, check=_positive),
        "tol": dict(type=float, default=1e-5, check=_positive),
        "out": dict(default=None, path="out"),
    }),
}


@dataclass
class Command:
    subcommand: str
    params: dict = field(default_factory=dict)


def _spec(sub):
    return {**SUBCOMMANDS[sub][1], **COMMON}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="narrownet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for name, (helptext, _) in SUBCOMMANDS.items():
        p = subs.add_parser(name, help=helptext, description=helptext)
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        p.add_argument("--config", default=None, help="JSON file of option values; flags override it")
        for key, opts in _spec(name).items():
            kw = {k: v for k, v in opts.items() if k not in ("check", "path", "default", "required")}
            if "default" in opts and opts.get("action") != "store_true":
                kw["help"] = (kw.get("help", "") + f" (default: {opts['default']})").strip()
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=argparse.SUPPRESS, **kw)
    return parser


def parse(argv, config: dict | None = None) -> Command:
    """Parse ``argv`` into a validated Command; config values sit under explicit flags."""
    ns = vars(build_parser().parse_args(argv))
    sub = ns.pop("subcommand")
    ns.pop("verbose", None)
    spec = _spec(sub)
    cfg_path = ns.pop("config", None)
    if config is None and cfg_path:
        try:
            with open(cfg_path, encoding="utf-8") as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {cfg_path}: {exc}") from None
    config = dict(config or {})
    unknown = sorted(k for k in config if k.replace("-", "_") not in spec)
    if unknown:
        raise UsageError(f"unknown config key(s) for {sub}: {', '.join(unknown)}")
    params, missing = {}, []
    for key, opts in spec.items():
        if key in ns:
            params[key] = ns[key]
        elif key in config or key.replace("_", "-") in config:
            params[key] = config.get(key, config.get(key.replace("_", "-")))
        else:
            params[key] = opts.get("default")
            if opts.get("required"):
                missing.append("--" + key.replace("_", "-"))
    for key, opts in spec.items():
        value = params[key]
        if value is None:
            continue
        if "choices" in opts and value not in opts["choices"]:
            raise UsageError(f"--{key.replace('_', '-')}: {value!r} not in {opts['choices']}")
        check = opts.get("check")
        msg = check(value) if check else None
        if msg:
            raise UsageError(f"--{key.replace('_', '-')} {msg} (got {value})")
        if opts.get("path"):
            params[key] = os.path.abspath(value)
    if missing:
        raise UsageError(f"{sub}: missing required option(s) {', '.join(missing)}")
    if params.get("threads") is None:
        env = os.environ.get("NARROWNET_THREADS")
        try:
            params["threads"] = int(env) if env else 1
        except ValueError:
            raise UsageError(f"NARROWNET_THREADS must be an integer, got {env!r}") from None
    if params["threads"] == 0:
        params["threads"] = os.cpu_count() or 1
    return Command(sub, params)


# --- artifact helpers --------------------------------------------------------

def _umask_mode() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return 0o666 & ~mask


def write_atomic(path, data) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8"})) as fh:
            fh.write(data)
        os.chmod(tmp, _umask_mode())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, doc) -> None:
    write_atomic(path, json.dumps(doc, indent=1, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _save_figure(path, draw) -> None:
    directory = os.path.dirname(path) or "."
    ext = os.path.splitext(path)[1] or ".png"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=ext)
    os.close(fd)
    try:
        draw(tmp)
        os.chmod(tmp, _umask_mode())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _box(values, dim):
    from .invertible import Box

    if len(values) == 2:
        return Box.cube(values[0], values[1], dim)
    if len(values) == 2 * dim:
        return Box(values[0::2], values[1::2])
    raise UsageError(f"--box needs 2 or {2 * dim} numbers for a {dim}-d network")


# --- subcommand bodies ------------------------------------------------------

def _cmd_example(p):
    from .regions import build_example_net, example2_discrepancy

    write_atomic(p["out"], net_core.serialize(build_example_net(p["id"])) + "\n")
    if p["report"]:
        _write_json(p["report"], example2_discrepancy())
    return 0


def _cmd_analyze(p):
    from .regions import analyze

    net = net_core.load(p["net"])
    grid = analyze(net, _box(p["box"], net.d_in), p["res"], p["threads"])
    report = grid.report()
    if p["out"]:
        _write_json(p["out"], report)
    else:
        print(json.dumps(report, indent=1))
    if p["figure"]:
        from .render import plot_grid

        _save_figure(p["figure"], lambda path: plot_grid(grid, path))
    for label, count in grid.component_counts().items():
        log.info("class %s: %d component(s)", label, count)
    return 0


def _cmd_escape(p):
    from .escape import escape_certificate

    net = net_core.load(p["net"])
    cert = escape_certificate(net, np.array(p["seed_point"]), R_max=p["rmax"],
                              max_segments=p["max_segments"], samples_per_segment=p["samples"])
    write_atomic(p["out"], cert.serialize() + "\n")
    log.info("certificate: %d segment(s), analytic terminal %s", cert.segment_count, cert.analytic_terminal)
    return 0


def _cmd_verify(p):
    from .escape import EscapeCertificate, verify_certificate

    net = net_core.load(p["net"])
    with open(p["cert"], encoding="utf-8") as fh:
        cert = EscapeCertificate.deserialize(fh.read())
    report = verify_certificate(net, cert, p["samples"], p["rmax"]).to_dict()
    if p["out"]:
        _write_json(p["out"], report)
    print(json.dumps(report))
    return 0 if report["constant_class"] else 1


def _cmd_invertibilize(p):
    from .invertible import invertibilize_network

    net = net_core.load(p["net"])
    new, report = invertibilize_network(net, _box(p["box"], net.d_in), p["eps"], p["samples"])
    write_atomic(p["out"], net_core.serialize(new) + "\n")
    if p["report"]:
        _write_json(p["report"], report.to_dict())
    log.info("sup error %.3g (target %g)", report.measured_sup_error, report.target_eps)
    return 0


def _cmd_render(p):
    from .regions import analyze
    from .render import pgm_bytes, plot_grid, svg_text

    net = net_core.load(p["net"])
    grid = analyze(net, _box(p["box"], net.d_in), p["res"], p["threads"])
    write_atomic(p["out"], pgm_bytes(grid))
    if p["svg"]:
        write_atomic(p["svg"], svg_text(grid))
    if p["png"]:
        _save_figure(p["png"], lambda path: plot_grid(grid, path))
    return 0


def _dataset_cfg(p, dim):
    from .spheres import SphereDatasetConfig

    return SphereDatasetConfig(d_in=dim, r_inner=p.get("r_inner"), r_outer=p.get("r_outer"),
                               n_train_per_class=p["n_train"], n_test_per_class=p["n_test"],
                               seed=p["seed"])


def _cmd_sphere_gen(p):
    from .spheres import make_dataset

    data = make_dataset(_dataset_cfg(p, p["dim"]))
    write_atomic(p["out"], data.to_csv("train"))
    if p["test_out"]:
        write_atomic(p["test_out"], data.to_csv("test"))
    return 0


def _record_doc(rec, record_time=False):
    from dataclasses import asdict

    doc = asdict(rec)
    doc["train"]["activation"] = rec.train.activation.kind
    if not record_time:
        doc["wall_time_s"] = 0.0
    return doc


def _cmd_train(p):
    from .spheres import TrainConfig, init_mlp, make_dataset, train

    data = make_dataset(_dataset_cfg(p, p["dim"]))
    widths = [p["dim"]] + [p["width"]] * p["depth"] + [2]
    cfg = TrainConfig(widths, learning_rate=p["lr"], batch_size=p["batch_size"], epochs=p["epochs"],
                      seed=p["seed"])
    net, rec = train(init_mlp(widths, cfg.activation, p["seed"]), data, cfg)
    write_atomic(p["out"], net_core.serialize(net) + "\n")
    if p["record"]:
        _write_json(p["record"], _record_doc(rec))
    if p["figure"]:
        if p["dim"] != 2:
            raise UsageError("--figure needs --dim 2")
        from .regions import analyze
        from .render import plot_grid

        r = 1.1 * data.config.r_outer
        grid = analyze(net, (-r, r), 256)
        _save_figure(p["figure"], lambda path: plot_grid(
            grid, path, title=f"width {p['width']}, max test acc {rec.max_test_accuracy:.4f}",
            points=(data.x_test, data.y_test)))
    log.info("max test accuracy %.4f (reached 100%%: %s)", rec.max_test_accuracy, rec.reached_100)
    return 0


def _cmd_sweep(p):
    from .spheres import SphereDatasetConfig, TrainConfig, aggregate, records_csv, sweep

    data_cfg = SphereDatasetConfig(n_train_per_class=p["n_train"], n_test_per_class=p["n_test"],
                                   seed=p["seed"])
    train_cfg = TrainConfig([], learning_rate=p["lr"], batch_size=p["batch_size"], epochs=p["epochs"])
    records = sweep(p["dims"], p["depths"], p["offsets"], p["repeats"], p["seed"], data_cfg, train_cfg,
                    workers=p["threads"])
    write_atomic(p["out"], records_csv(records, p["record_time"]))
    table = aggregate(records)
    if p["table"]:
        _write_json(p["table"], table)
    if p["figure"]:
        from .render import plot_sweep

        _save_figure(p["figure"], lambda path: plot_sweep(table, path))
    for row in table:
        log.info("d_in=%d depth=%d width=%d: success rate %.2f", row["d_in"], row["depth"], row["width"],
                 row["success_rate"])
    return 0


def _cmd_gradcheck(p):
    from .net_core import ActivationKind, forward_trace, random_network
    from .spheres import grad_check

    rng = np.random.default_rng(p["seed"])
    if p["net"]:
        net = net_core.load(p["net"])
    else:
        act = ActivationKind(p["activation"], 0.1 if p["activation"] == "leaky_relu" else None)
        net = random_network(rng, p["dims"], act)
    if net.d_out != 2:
        raise UsageError("gradcheck needs a two-output network")
    x = rng.standard_normal((p["batch"], net.d_in))
    if net.activation.piecewise_linear:
        zs = forward_trace(net, x).preactivations[:-1]
        away = np.all([np.min(np.abs(z), axis=1) >= 10 * p["h"] for z in zs], axis=0) if zs else np.ones(len(x), bool)
        x = x[away]
    y = rng.integers(0, 2, len(x))
    err = grad_check(net, x, y, p["h"])
    doc = {"max_relative_error": float(err), "tol": p["tol"], "passed": bool(err < p["tol"]),
           "points": int(len(x))}
    if p["out"]:
        _write_json(p["out"], doc)
    print(json.dumps(doc))
    return 0 if doc["passed"] else 1


HANDLERS = {
    "example": _cmd_example, "analyze": _cmd_analyze, "escape": _cmd_escape, "verify": _cmd_verify,
    "invertibilize": _cmd_invertibilize, "render": _cmd_render, "sphere-gen": _cmd_sphere_gen,
    "train": _cmd_train, "sweep": _cmd_sweep, "gradcheck": _cmd_gradcheck,
}


def execute(cmd: Command) -> int:
    try:
        return HANDLERS[cmd.subcommand](cmd.params)
    except UsageError as exc:
        print(f"narrownet {cmd.subcommand}: usage error: {exc}", file=sys.stderr)
        return 2
    except (NarrowNetError, OSError) as exc:
        print(f"narrownet {cmd.subcommand}: error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cmd = parse(argv)
    except UsageError as exc:
        print(f"narrownet: usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse: --help exits 0, bad flags exit 2
        return int(exc.code or 0)
    return execute(cmd)


if __name__ == "__main__":
    sys.exit(main())
