"""Command-line entry point: ``lcphase <command> [flags]``.

Configuration comes from built-in defaults, then an optional flat
``key=value`` file (``--config``), then command-line flags. Results are
cached on disk under a content hash of the operation, the result-affecting
part of the configuration, the parameters and the package version.

Exit codes: 0 success, 1 bad flags or inputs, 2 solver failure,
3 verification failure, 130 interrupted.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from . import __version__
from .director import Rotation, RotationError
from .grid import FIELD_FORMAT_VERSION, MIN_NODES, Grid, GridError, save_field
from .minimize import MinimizeError, MinimizeOptions, Params, minimize_Fdir, minimize_G
from .phase import MU_STAR_CACHE, PhaseOptions, scan, write_scan_csv, write_scan_svg
from .spectra import (
    DIRICHLET,
    NEUMANN,
    ConvergenceError,
    MuStarResult,
    SearchOptions,
    helical_eigenvalue,
    theta0,
)
from .suites import SUITES, run_suite

log = logging.getLogger("lcphase")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2
EXIT_VERIFY = 3
EXIT_INTERRUPT = 130
QUAT_WARN = 1e-6
CACHE_ENV = "LCPHASE_CACHE_DIR"


class UsageError(Exception):
    pass


# -- configuration -----------------------------------------------------------------


def _default_cache_dir() -> str:
    return os.environ.get(CACHE_ENV) or str(Path.home() / ".cache" / "lcphase")


@dataclass(frozen=True)
class RunConfig:
    grid: int = 17
    L: float = 1.0
    tol: float = 1e-8
    grad_tol: float = 1e-6
    max_iter: int = 4000
    search_resolution: tuple = (4, 8, 4)
    refine_steps: int = 60
    seed: int = 0
    seeds: tuple = (0, 1, 2, 3)
    workers: int = max(os.cpu_count() or 1, 1)
    cache_dir: str = ""
    out: str = ""

    # fields that do not change any computed number stay out of the hash
    _NOT_HASHED = ("workers", "cache_dir", "out")

    def __post_init__(self):
        if self.grid < MIN_NODES:
            raise GridError(f"grid needs at least {MIN_NODES} nodes per axis, got {self.grid}")
        if not self.L > 0:
            raise UsageError(f"L must be positive, got {self.L}")
        for name in ("tol", "grad_tol"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")
        if self.workers < 1:
            raise UsageError("workers must be >= 1")
        if self.max_iter < 1 or self.refine_steps < 0:
            raise UsageError("max_iter must be >= 1 and refine_steps >= 0")
        if len(self.search_resolution) != 3 or min(self.search_resolution) < 1:
            raise UsageError("search_resolution needs three positive integers")
        if not self.seeds:
            raise UsageError("seeds must be non-empty")

    def hashed(self) -> dict:
        d = asdict(self)
        for k in self._NOT_HASHED:
            d.pop(k)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def canonical(self) -> str:
        return json.dumps(self.hashed(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @property
    def grid_obj(self) -> Grid:
        return Grid(self.grid, self.L)

    @property
    def search(self) -> SearchOptions:
        return SearchOptions(tuple(self.search_resolution), self.refine_steps, self.workers)

    @property
    def minimize(self) -> MinimizeOptions:
        return MinimizeOptions(max_iter=self.max_iter, grad_tol=self.grad_tol,
                               seeds=tuple(self.seeds), workers=self.workers)

    @property
    def phase(self) -> PhaseOptions:
        return PhaseOptions(search=self.search, minimize=self.minimize, tol=self.tol,
                            seed=self.seed, workers=self.workers)


_CONFIG_FIELDS = {f.name: f for f in fields(RunConfig) if not f.name.startswith("_")}


def _parse_list(text: str, cast) -> tuple:
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    if not items:
        raise UsageError(f"empty list {text!r}")
    try:
        return tuple(cast(t) for t in items)
    except ValueError as exc:
        raise UsageError(f"bad list {text!r}: {exc}") from exc


def _coerce(name: str, value):
    default = _CONFIG_FIELDS[name].default
    try:
        if isinstance(default, tuple):
            return value if isinstance(value, tuple) else _parse_list(value, int)
        if isinstance(default, bool):
            return str(value).lower() in ("1", "true", "yes")
        return type(default)(value)
    except ValueError as exc:
        raise UsageError(f"bad value for {name}: {value!r}") from exc


def read_config_file(path) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONFIG_FIELDS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def build_config(args) -> RunConfig:
    values = {"cache_dir": _default_cache_dir()}
    if args.config:
        values.update(read_config_file(args.config))
    for name in _CONFIG_FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = _coerce(name, flag)
    return RunConfig(**values)


# -- persistent cache ----------------------------------------------------------------


class ResultCache:
    """One JSON file per entry; writes are serialized and atomic."""

    def __init__(self, directory, enabled: bool = True):
        self.directory = Path(directory) if directory else None
        self.enabled = enabled and self.directory is not None
        self._lock = threading.Lock()

    @staticmethod
    def key(op: str, config: RunConfig, params: dict) -> str:
        blob = json.dumps(
            {"op": op, "config": config.hashed(), "params": params, "version": __version__},
            sort_keys=True, separators=(",", ":"),
        )
        return hashlib.sha256(blob.encode()).hexdigest()

    @staticmethod
    def _value_digest(value) -> str:
        return hashlib.sha256(json.dumps(value, sort_keys=True).encode()).hexdigest()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str):
        if not self.enabled:
            return None
        path = self._path(key)
        try:
            entry = json.loads(path.read_text())
        except (OSError, ValueError):
            return None
        if (entry.get("key") != key or entry.get("version") != __version__
                or entry.get("value_sha256") != self._value_digest(entry.get("value"))):
            log.warning("ignoring inconsistent cache entry %s", path)
            return None
        return entry["value"]

    def put(self, key: str, value) -> None:
        if not self.enabled:
            return
        entry = {
            "key": key,
            "version": __version__,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "value": value,
            "value_sha256": self._value_digest(value),
            "format_version": FIELD_FORMAT_VERSION,
        }
        with self._lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            existing = self.get(key)
            if existing is not None and existing != value:
                log.warning("cache key %s held a different value; replacing it", key[:12])
            tmp = self._path(key).with_suffix(f".tmp{os.getpid()}.{threading.get_ident()}")
            tmp.write_text(json.dumps(entry, sort_keys=True))
            os.replace(tmp, self._path(key))

    def fetch(self, op: str, config: RunConfig, params: dict, compute):
        key = self.key(op, config, params)
        hit = self.get(key)
        if hit is not None:
            log.info("cache hit %s %s", op, key[:12])
            return hit
        value = compute()
        self.put(key, value)
        return value


# -- helpers -------------------------------------------------------------------------


def parse_rotation(args) -> Rotation | None:
    if getattr(args, "quat", None):
        comps = _parse_list(args.quat, float)
        if len(comps) != 4:
            raise UsageError("--quat needs four comma-separated numbers w,x,y,z")
        norm = math.sqrt(sum(c * c for c in comps))
        if norm == 0 or not math.isfinite(norm):
            raise UsageError("--quat must be a finite non-zero quaternion")
        if abs(norm - 1.0) > QUAT_WARN:
            log.warning("quaternion norm %.9g is not 1; renormalizing", norm)
        return Rotation.normalized(*comps)
    if getattr(args, "axis", None) is not None:
        angles = _parse_list(args.axis, float)
        if len(angles) != 2:
            raise UsageError("--axis needs polar,azimuth")
        return Rotation.from_axis_phase(angles[0], angles[1], args.phase or 0.0)
    return None


def _mustar_json(res: MuStarResult) -> dict:
    return {"value": float(res.value), "argmin_rotation": res.argmin_rotation.to_json(),
            "evaluations": len(res.trace)}


def cached_mustar(cache: ResultCache, cfg: RunConfig, q: float, tau: float) -> dict:
    """``mu*`` through the disk cache; a hit also seeds the in-process cache."""
    grid = cfg.grid_obj
    params = {"q": float(q), "tau": float(tau)}

    def compute():
        return _mustar_json(MU_STAR_CACHE.get(grid, q, tau, cfg.search, cfg.tol, cfg.seed))

    value = cache.fetch("mustar", cfg, params, compute)
    rot = Rotation.from_json(value["argmin_rotation"])
    MU_STAR_CACHE.insert(grid, q, tau, MuStarResult(value["value"], rot, [(rot, value["value"])]),
                         cfg.search, cfg.tol, cfg.seed)
    return value


def emit(payload: dict, cfg: RunConfig, name: str) -> str:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(text)
    return text


def _envelope(command: str, cfg: RunConfig, params: dict, result) -> dict:
    return {
        "format_version": FIELD_FORMAT_VERSION,
        "version": __version__,
        "command": command,
        "config": cfg.hashed(),
        "params": params,
        "result": result,
    }


# -- commands ------------------------------------------------------------------------


def cmd_eig(args, cfg: RunConfig, cache: ResultCache) -> int:
    rot = parse_rotation(args) or Rotation.identity()
    params = {"q": args.q, "tau": args.tau, "bc": args.bc, "rotation": rot.to_json()}
    grid = cfg.grid_obj

    def compute():
        res = helical_eigenvalue(grid, args.q, args.tau, rot, cfg.tol, cfg.seed, args.bc)
        if cfg.out:
            Path(cfg.out).mkdir(parents=True, exist_ok=True)
            save_field(Path(cfg.out) / "eig_psi.bin", res.eigenvector, grid)
        return res.to_json()

    result = cache.fetch("eig", cfg, params, compute)
    sys.stdout.write(emit(_envelope("eig", cfg, params, result), cfg, "eig"))
    return EXIT_OK


def cmd_mustar(args, cfg: RunConfig, cache: ResultCache) -> int:
    params = {"q": args.q, "tau": args.tau}
    result = cached_mustar(cache, cfg, args.q, args.tau)
    sys.stdout.write(emit(_envelope("mustar", cfg, params, result), cfg, "mustar"))
    return EXIT_OK


def cmd_minimize(args, cfg: RunConfig, cache: ResultCache) -> int:
    K2 = args.K2 if args.K2 is not None else args.K1
    p = Params(args.q, args.tau, args.kappa, args.K1, K2)
    rot = parse_rotation(args)
    if rot is None:
        rot = Rotation.from_json(cached_mustar(cache, cfg, args.q, args.tau)["argmin_rotation"])
    params = {**p.to_json(), "mode": args.mode, "rotation": rot.to_json()}
    grid = cfg.grid_obj

    def compute():
        fn = minimize_G if args.mode == "G" else minimize_Fdir
        rep = fn(p, rot, grid, cfg.minimize)
        if cfg.out:
            Path(cfg.out).mkdir(parents=True, exist_ok=True)
            rep.save_fields(Path(cfg.out) / f"minimize_{args.mode}", grid)
        return rep.to_json()

    result = cache.fetch("minimize", cfg, params, compute)
    sys.stdout.write(emit(_envelope("minimize", cfg, params, result), cfg, "minimize"))
    return EXIT_OK if result["converged"] else EXIT_SOLVER


def cmd_scan(args, cfg: RunConfig, cache: ResultCache) -> int:
    qs = _parse_list(args.q, float)
    taus = _parse_list(args.tau, float)
    if (args.kappa is None) == (args.kappa_sq_ratios is None):
        raise UsageError("give exactly one of --kappa and --kappa-sq-ratios")
    relative = args.kappa_sq_ratios is not None
    kappas = _parse_list(args.kappa_sq_ratios if relative else args.kappa, float)
    if any(q < 0 for q in qs) or any(not t > 0 for t in taus) or any(k < 0 for k in kappas):
        raise UsageError("scan needs q >= 0, tau > 0 and non-negative kappa values")
    # mu* per (q, tau) through the disk cache on a bounded pool; completed entries survive Ctrl-C
    pairs = sorted({(q, t) for q in qs for t in taus})
    with ThreadPoolExecutor(max_workers=min(cfg.workers, len(pairs))) as pool:
        list(pool.map(lambda qt: cached_mustar(cache, cfg, *qt), pairs))
    opts = replace(cfg.phase, compute_g=args.compute_g, band=args.band)
    points = scan(qs, taus, kappas, cfg.grid_obj, opts, kappa_relative=relative)
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_scan_csv(out / "scan.csv", points)
    write_scan_svg(out / "scan.svg", points)
    params = {"q": list(qs), "tau": list(taus), "kappa": list(kappas), "kappa_relative": relative,
              "band": args.band, "compute_g": args.compute_g}
    sys.stdout.write(emit(_envelope("scan", cfg, params, [p.to_json() for p in points]), cfg, "scan"))
    return EXIT_OK


def cmd_verify(args, cfg: RunConfig, cache: ResultCache) -> int:
    names = list(SUITES) if args.suite in (None, "all") else list(_parse_list(args.suite, str))
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise UsageError(f"unknown suite(s) {', '.join(unknown)}; choose from {', '.join(SUITES)}")
    grid = cfg.grid_obj
    rows = []
    for name in names:
        rows += cache.fetch("verify", cfg, {"suite": name},
                            lambda name=name: run_suite(name, grid, cfg.phase))
    width = max(len(r["check"]) for r in rows)
    for r in rows:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status}  {r['suite']:<10}  {r['check']:<{width}}  "
              f"value={r['value']:.6g}  threshold={r['threshold']:.6g}")
    emit(_envelope("verify", cfg, {"suites": names}, rows), cfg, "verify")
    failed = sum(not r["passed"] for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_theta0(args, cfg: RunConfig, cache: ResultCache) -> int:
    params = {"resolution": args.resolution}
    value = cache.fetch("theta0", cfg, params, lambda: {"theta0": theta0(args.resolution)})
    sys.stdout.write(emit(_envelope("theta0", cfg, params, value), cfg, "theta0"))
    return EXIT_OK


# -- parser --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (flags override --config)")
    g.add_argument("--config", help="flat key=value file")
    g.add_argument("--grid", type=int, help="nodes per axis")
    g.add_argument("--L", type=float, help="cube side length")
    g.add_argument("--tol", type=float, help="eigensolver residual tolerance")
    g.add_argument("--grad-tol", dest="grad_tol", type=float, help="minimizer gradient tolerance")
    g.add_argument("--max-iter", dest="max_iter", type=int)
    g.add_argument("--search-resolution", dest="search_resolution", help="polar,azimuth,phase counts")
    g.add_argument("--refine-steps", dest="refine_steps", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--seeds", help="comma-separated minimizer seeds")
    g.add_argument("--workers", type=int)
    g.add_argument("--cache-dir", dest="cache_dir", help=f"cache directory (env {CACHE_ENV})")
    g.add_argument("--no-cache", action="store_true")
    g.add_argument("--out", help="directory for JSON/CSV/SVG/field artifacts")
    g.add_argument("-v", "--verbose", action="store_true")


def _rotation_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--quat", help="unit quaternion w,x,y,z")
    g.add_argument("--axis", help="helix axis as polar,azimuth angles")
    p.add_argument("--phase", type=float, help="rotation about the helix axis (with --axis)")


def _nonneg(text):
    v = float(text)
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a finite value >= 0, got {text}")
    return v


def _positive(text):
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a finite value > 0, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lcphase", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("eig", help="lowest eigenvalue of the helical magnetic operator")
    p.add_argument("--q", type=_nonneg, required=True)
    p.add_argument("--tau", type=_positive, required=True)
    p.add_argument("--bc", choices=(NEUMANN, DIRICHLET), default=NEUMANN)
    _rotation_flags(p)
    _common(p)
    p.set_defaults(func=cmd_eig)

    p = sub.add_parser("mustar", help="infimum over helical directors")
    p.add_argument("--q", type=_nonneg, required=True)
    p.add_argument("--tau", type=_positive, required=True)
    _common(p)
    p.set_defaults(func=cmd_mustar)

    p = sub.add_parser("minimize", help="minimize G (frozen director) or F^Dir")
    p.add_argument("--q", type=_nonneg, required=True)
    p.add_argument("--tau", type=_positive, required=True)
    p.add_argument("--kappa", type=_nonneg, required=True)
    p.add_argument("--K1", type=_positive, default=1.0)
    p.add_argument("--K2", type=_positive)
    p.add_argument("--mode", choices=("G", "Fdir"), default="G")
    _rotation_flags(p)
    _common(p)
    p.set_defaults(func=cmd_minimize)

    p = sub.add_parser("scan", help="classify a (q, tau, kappa) grid; writes scan.csv and scan.svg")
    p.add_argument("--q", required=True, help="comma-separated q values")
    p.add_argument("--tau", required=True, help="comma-separated tau values")
    p.add_argument("--kappa", help="comma-separated kappa values")
    p.add_argument("--kappa-sq-ratios", dest="kappa_sq_ratios", help="comma-separated kappa^2/mu* values")
    p.add_argument("--band", type=_nonneg, default=PhaseOptions.band)
    p.add_argument("--compute-g", dest="compute_g", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("verify", help="run named verification suites")
    p.add_argument("--suite", help=f"comma-separated subset of {', '.join(SUITES)} (default all)")
    _common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("theta0", help="half-line de Gennes ground energy")
    p.add_argument("--resolution", type=int, default=1000)
    _common(p)
    p.set_defaults(func=cmd_theta0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = build_config(args)
        cache = ResultCache(cfg.cache_dir, enabled=not args.no_cache)
        return args.func(args, cfg, cache)
    except (UsageError, GridError, RotationError, ValueError) as exc:
        print(f"lcphase: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, MinimizeError) as exc:
        print(f"lcphase: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except KeyboardInterrupt:
        # every finished cache entry was written atomically when it completed
        print("lcphase: interrupted", file=sys.stderr)
        return EXIT_INTERRUPT


if __name__ == "__main__":
    sys.exit(main())
