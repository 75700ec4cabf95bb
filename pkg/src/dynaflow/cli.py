"""Command-line front end: ``dynaflow {flow,pool,sweep,toyeval,render}``.

Settings come from a flat ``key = value`` file (``--config`` or the
``DYNAFLOW_CONFIG`` environment variable) and can be overridden per key by a
flag of the same name. Precedence: flag > file > default.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, DimensionError, DynaflowError, EmptyInputError, FormatError
from .flowcore import (FlowSequence, atomic_write_bytes, flo_bytes, load_gray_sequence, load_rgb_sequence, png_bytes,
                       read_flo)
from .pipeline import WindowSpec, manifest_text, run_clip, run_clip_rgb
from .rankpool import DynamicFlowImage, DynamicImage, SolverConfig, render
from .toyeval import CLASSES, ComparisonConfig, FeatureParams, easy_config, format_report, run_comparison
from .tvl1 import Tvl1Params, compute_flow

log = logging.getLogger("dynaflow")

CONFIG_ENV = "DYNAFLOW_CONFIG"
MANIFEST_NAME = "manifest.jsonl"
DEFAULT_SWEEP = (15, 25, 30)
EXIT_CRITERION = 1


def _default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover
        return max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class Key:
    name: str
    type: type
    default: object
    help: str
    aliases: tuple = ()


_TV = Tvl1Params()
_SOLVER = SolverConfig()

KEYS = (
    Key("window_size", int, 25, "frames per pooling window", ("--window",)),
    Key("stride", int, 5, "hop between window starts"),
    Key("clip_bound", float, 20.0, "flow magnitude bound for thresholding and quantization", ("--bound",)),
    Key("svm_c", float, 1.0, "ranking hinge weight C"),
    Key("solver_tolerance", float, _SOLVER.tolerance, "relative duality-gap tolerance"),
    Key("solver_max_epochs", int, _SOLVER.max_epochs, "epoch cap when solver_method=dcd"),
    Key("solver_seed", int, _SOLVER.seed, "seed of the coordinate order"),
    Key("solver_method", str, _SOLVER.method, "auto, dcd or ipm"),
    Key("solver_dcd_budget", int, _SOLVER.dcd_budget, "coordinate-descent epochs before the interior-point fallback"),
    Key("tvl1_tau", float, _TV.tau, "TV-L1 dual time step"),
    Key("tvl1_lambda", float, _TV.lambda_, "TV-L1 data-term weight"),
    Key("tvl1_theta", float, _TV.theta, "TV-L1 coupling"),
    Key("tvl1_pyramid_levels", int, _TV.pyramid_levels, "TV-L1 pyramid levels"),
    Key("tvl1_pyramid_scale", float, _TV.pyramid_scale, "TV-L1 downsampling factor"),
    Key("tvl1_warps", int, _TV.warps_per_level, "TV-L1 warps per level"),
    Key("tvl1_iterations", int, _TV.inner_iterations, "TV-L1 inner iteration cap"),
    Key("tvl1_epsilon", float, _TV.convergence_eps, "TV-L1 stopping threshold"),
    Key("workers", int, None, "worker threads (default: available CPUs)"),
)
KEY_INDEX = {k.name: k for k in KEYS}


def _parse_value(key: Key, raw, origin: str):
    if key.type is str:
        return str(raw).strip()
    try:
        if key.type is int:
            f = float(raw)
            if f != int(f):
                raise ValueError(raw)
            return int(f)
        return key.type(raw)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{origin}: {key.name} expects {key.type.__name__}, got {raw!r}") from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{n}: expected key = value")
        name, raw = (part.strip() for part in line.split("=", 1))
        key = KEY_INDEX.get(name.replace("-", "_"))
        if key is None:
            raise ConfigurationError(f"{path}:{n}: unknown key {name!r}")
        out[key.name] = _parse_value(key, raw, f"{path}:{n}")
    return out


@dataclass(frozen=True)
class Settings:
    values: dict

    def __getitem__(self, name):
        return self.values[name]

    @property
    def window_spec(self) -> WindowSpec:
        return WindowSpec(self["window_size"], self["stride"])

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(max_epochs=self["solver_max_epochs"], tolerance=self["solver_tolerance"],
                            seed=self["solver_seed"], method=self["solver_method"],
                            dcd_budget=self["solver_dcd_budget"])

    @property
    def tvl1(self) -> Tvl1Params:
        return Tvl1Params(tau=self["tvl1_tau"], lambda_=self["tvl1_lambda"], theta=self["tvl1_theta"],
                          pyramid_levels=self["tvl1_pyramid_levels"], pyramid_scale=self["tvl1_pyramid_scale"],
                          warps_per_level=self["tvl1_warps"], inner_iterations=self["tvl1_iterations"],
                          convergence_eps=self["tvl1_epsilon"])


def resolve_settings(flags: dict, config_path=None, environ=None) -> Settings:
    """Merge defaults, the config file and explicit flags, then validate."""
    environ = os.environ if environ is None else environ
    values = {k.name: k.default for k in KEYS}
    path = config_path or environ.get(CONFIG_ENV) or None
    if path:
        values.update(read_config_file(path))
    values.update({k: v for k, v in flags.items() if k in KEY_INDEX and v is not None})
    if values["workers"] is None:
        values["workers"] = _default_workers()
    if values["workers"] < 1:
        raise ConfigurationError(f"workers must be >= 1, got {values['workers']}")
    if not values["svm_c"] > 0:
        raise ConfigurationError(f"svm_c must be > 0, got {values['svm_c']}")
    if not values["clip_bound"] > 0:
        raise ConfigurationError(f"clip_bound must be > 0, got {values['clip_bound']}")
    s = Settings(values)
    # constructing these re-runs every module-level check
    s.window_spec, s.solver, s.tvl1
    return s


# -- output bookkeeping ------------------------------------------------------------

class OutputSet:
    """Tracks files written by one command so a failure can remove them."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.written: list[Path] = []

    def write(self, name, payload: bytes) -> Path:
        """``name`` is relative to the set's directory unless absolute."""
        path = self.directory / name
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(path, payload)
        self.written.append(path)
        return path

    def rollback(self):
        for p in self.written:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        self.written.clear()

    def __enter__(self):
        self.directory.mkdir(parents=True, exist_ok=True)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            self.rollback()
        return False


def npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(a, dtype=np.float64), allow_pickle=False)
    return buf.getvalue()


def _rendered_files(stem: str, img) -> list[tuple[str, bytes]]:
    out = [(f"{stem}.npy", npy_bytes(img.planes))]
    if isinstance(img, DynamicFlowImage):
        r = render(img)
        out += [(f"{stem}.u.png", png_bytes(r.u)), (f"{stem}.v.png", png_bytes(r.v)), (f"{stem}.png", png_bytes(r.color))]
    else:
        out.append((f"{stem}.png", png_bytes(render(img))))
    return out


# -- commands ----------------------------------------------------------------------

def flo_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise EmptyInputError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".flo")


def load_flow_dir(directory) -> FlowSequence:
    files = flo_files(directory)
    if not files:
        raise EmptyInputError(f"no .flo files in {directory}")
    fields = [read_flo(p) for p in files]
    shape = fields[0].shape
    for p, f in zip(files, fields):
        if f.shape != shape:
            raise DimensionError(f"{p.name} is {f.shape}, expected {shape}")
    return FlowSequence(tuple(fields))


def cmd_flow(args, s: Settings) -> int:
    frames = load_gray_sequence(args.frames_dir)
    if len(frames) < 2:
        raise EmptyInputError(f"need at least 2 frames, found {len(frames)}")
    params = s.tvl1
    pairs = list(zip(frames[:-1], frames[1:]))
    if s["workers"] > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=s["workers"]) as pool:
            fields = list(pool.map(lambda ab: compute_flow(ab[0], ab[1], params), pairs))
    else:
        fields = [compute_flow(a, b, params) for a, b in pairs]
    with OutputSet(args.out_dir) as outputs:
        for k, f in enumerate(fields):
            outputs.write(f"{k:05d}.flo", flo_bytes(f))
    print(f"wrote {len(fields)} flow files to {args.out_dir}")
    return 0


def _pool(input_dir, outputs: OutputSet, subdir: str, mode: str, s: Settings, clip_id: str | None, label: str,
          spec: WindowSpec | None = None):
    spec = spec or s.window_spec
    clip_id = clip_id or Path(input_dir).resolve().name
    if mode == "df":
        images, manifest = run_clip(load_flow_dir(input_dir), spec, s["clip_bound"], s["svm_c"], s.solver,
                                    clip_id=clip_id, label=label, workers=s["workers"])
    elif mode == "di":
        frames = load_rgb_sequence(input_dir)
        images, manifest = run_clip_rgb(frames, spec, s["svm_c"], s.solver, clip_id=clip_id, label=label,
                                        workers=s["workers"])
    else:
        raise ConfigurationError(f"mode must be df or di, got {mode!r}")
    for (_, _, path), img in zip(manifest.windows, images):
        for name, payload in _rendered_files(Path(path).stem, img):
            outputs.write(Path(subdir) / name, payload)
    outputs.write(Path(subdir) / MANIFEST_NAME, manifest_text([manifest]).encode())
    return images, manifest


def cmd_pool(args, s: Settings) -> int:
    with OutputSet(args.out_dir) as outputs:
        images, _ = _pool(args.input_dir, outputs, ".", args.mode, s, args.clip_id, args.label)
    print(f"wrote {len(images)} {args.mode} outputs and {MANIFEST_NAME} to {args.out_dir}")
    return 0


def _window_list(text: str | None):
    if text is None:
        return list(DEFAULT_SWEEP)
    try:
        sizes = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"--windows expects comma-separated integers, got {text!r}") from None
    if not sizes or any(w < 1 for w in sizes):
        raise ConfigurationError(f"--windows needs positive sizes, got {text!r}")
    return sizes


def cmd_sweep(args, s: Settings) -> int:
    sizes = _window_list(args.windows)
    out = Path(args.out_dir)
    rows = []
    with OutputSet(out) as outputs:
        for w in sizes:
            t0 = time.perf_counter()
            images, _ = _pool(args.flow_dir, outputs, f"w{w}", "df", s, args.clip_id, args.label,
                              WindowSpec(w, s["stride"]))
            elapsed = time.perf_counter() - t0
            rows.append((w, len(images), elapsed / max(len(images), 1)))
        # timings vary run to run, so they go to stdout only
        summary = "window\toutputs\n" + "".join(f"{w}\t{n}\n" for w, n, _ in rows)
        outputs.write("sweep.tsv", summary.encode())
    print(f"{'window':>6} {'outputs':>7} {'mean_s':>10}")
    for w, n, sec in rows:
        print(f"{w:>6} {n:>7} {sec:>10.4f}")
    return 0


def toyeval_config(args, s: Settings) -> ComparisonConfig:
    classes = tuple(c.strip() for c in args.classes.split(",") if c.strip()) if args.classes else CLASSES
    features = FeatureParams(bound=s["clip_bound"], C=s["svm_c"], solver=s.solver, tvl1=s.tvl1)
    base = easy_config() if args.easy else ComparisonConfig()
    overrides = dict(classes=classes, features=features, seed=args.seed, use_true_flow=args.true_flow,
                     svm_c=args.classifier_c, epochs=args.classifier_epochs)
    if args.clips_per_class is not None:
        overrides["n_clips_per_class"] = args.clips_per_class
    return replace(base, **overrides)


def toyeval_passed(report: dict, easy: bool) -> bool:
    df, di = report["accuracy_df"], report["accuracy_di"]
    if easy:
        return df >= 0.95 and di >= 0.95
    return df >= 0.90 and df - di >= 0.10


def cmd_toyeval(args, s: Settings) -> int:
    cfg = toyeval_config(args, s)
    report = run_comparison(cfg, workers=s["workers"])
    ok = toyeval_passed(report, args.easy)
    report["regime"] = "easy" if args.easy else "contaminated"
    report["passed"] = ok
    table = format_report(report)
    with OutputSet(args.out_dir) as outputs:
        outputs.write("toyeval.txt", (table + "\n").encode())
        outputs.write("toyeval.json", (json.dumps(report, indent=2, sort_keys=True) + "\n").encode())
    print(table)
    gap = 100.0 * (report["accuracy_df"] - report["accuracy_di"])
    print(f"DF - DI = {gap:+.1f} points; {'PASS' if ok else 'FAIL'}")
    return 0 if ok else EXIT_CRITERION


def cmd_render(args, s: Settings) -> int:
    out = Path(args.out_dir).resolve() if args.out_dir else None
    count = 0
    with OutputSet(out or Path.cwd()) as outputs:
        for src in args.inputs:
            src = Path(src)
            try:
                planes = np.load(src, allow_pickle=False)
            except (OSError, ValueError) as exc:
                raise FormatError(f"{src}: not a readable .npy array ({exc})") from exc
            if planes.ndim != 3 or planes.shape[0] not in (2, 3):
                raise DimensionError(f"{src}: expected (2|3, h, w) planes, got {planes.shape}")
            img = DynamicFlowImage(planes[0], planes[1]) if planes.shape[0] == 2 else DynamicImage(planes)
            for name, payload in _rendered_files(src.stem, img):
                if not name.endswith(".npy"):
                    outputs.write((out or src.parent.resolve()) / name, payload)
            count += 1
    print(f"rendered {count} file(s)")
    return 0


# -- argument parsing ----------------------------------------------------------------

def _config_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("config keys (flag > config file > default)")
    g.add_argument("--config", default=None, help=f"flat key = value file (default: ${CONFIG_ENV})")
    for k in KEYS:
        names = [f"--{k.name}"]
        dashed = f"--{k.name.replace('_', '-')}"
        if dashed != names[0]:
            names.append(dashed)
        names.extend(k.aliases)
        default = "available CPUs" if k.default is None else k.default
        g.add_argument(*names, dest=k.name, default=None, metavar=k.type.__name__.upper(),
                       help=f"{k.help} (default: {default})")
    return p


def build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    parser = argparse.ArgumentParser(prog="dynaflow", description="Dynamic flow images from video frames.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flow", parents=[parent], help="TV-L1 flow between consecutive frames")
    p.add_argument("frames_dir")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("pool", parents=[parent], help="pool every window of a clip")
    p.add_argument("input_dir", help=".flo directory (df) or frame directory (di)")
    p.add_argument("out_dir")
    p.add_argument("--mode", choices=("df", "di"), default="df")
    p.add_argument("--clip-id", default=None, help="manifest clip id (default: input directory name)")
    p.add_argument("--label", default="", help="manifest label")
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("sweep", parents=[parent], help="pool one flow clip at several window sizes")
    p.add_argument("flow_dir")
    p.add_argument("out_dir")
    p.add_argument("--windows", default=None,
                   help=f"comma-separated window sizes (default: {','.join(map(str, DEFAULT_SWEEP))})")
    p.add_argument("--clip-id", default=None)
    p.add_argument("--label", default="")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("toyeval", parents=[parent], help="synthetic DF-vs-DI contamination experiment")
    p.add_argument("--out-dir", default="toyeval_out", help="report directory (default: toyeval_out)")
    p.add_argument("--easy", action="store_true", help="no ramp, no noise")
    p.add_argument("--clips-per-class", type=int, default=None, help="default: 50")
    p.add_argument("--classes", default=None, help=f"comma-separated subset of {','.join(CLASSES)}")
    p.add_argument("--seed", type=int, default=0, help="default: 0")
    p.add_argument("--true-flow", action="store_true", help="pool ground-truth flow instead of TV-L1")
    p.add_argument("--classifier-c", type=float, default=10.0, help="linear classifier C (default: 10)")
    p.add_argument("--classifier-epochs", type=int, default=200, help="default: 200")
    p.set_defaults(func=cmd_toyeval)

    p = sub.add_parser("render", parents=[parent], help="render saved .npy planes to PNG")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out-dir", default=None, help="default: next to each input")
    p.set_defaults(func=cmd_render)
    return parser


def _flag_values(args) -> dict:
    out = {}
    for k in KEYS:
        raw = getattr(args, k.name, None)
        if raw is not None:
            out[k.name] = _parse_value(k, raw, f"--{k.name}")
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(_flag_values(args), args.config)
        return args.func(args, settings)
    except DynaflowError as exc:
        print(f"dynaflow: {exc.kind}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dynaflow: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
