"""Batch command-line interface.

Subcommands::

    nearfield simulate OUT       write a synthetic dataset with ground truth
    nearfield info DATASET       validate a dataset and report its geometry
    nearfield align DATASET      register positions, write an aligned dataset
    nearfield retrieve DATASET   phase retrieval per projection
    nearfield tomo RETRIEVED     filtered back-projection of retrieved maps

Every option can also come from a TOML file given with ``--config``. Keys
are option names with dashes replaced by underscores. Top-level keys apply
to every subcommand and a table named after the subcommand overrides them.
The command line wins over the file.

Exit status
-----------
0  success
1  unexpected internal error
2  configuration or usage error
3  data error (missing/corrupt files, bad manifest, registration failure)
4  numeric failure (divergence, singular retrieval)
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import shlex
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, runtime
from .dataset import (
    DatasetError,
    Position,
    ProjectionDataset,
    corrected_image,
    read_image,
    read_manifest,
    store_image,
    write_image,
    write_manifest,
)
from .geometry import fresnel_number, regime_classify, wavelength_m
from .metrics import nrmse
from .propagator import Grid, IntensityImage, IntensityStack
from .registration import RegistrationError, align_stack
from .retrieval import (
    RetrievalError,
    RetrievalParams,
    ctf,
    ctf_pure_phase,
    gradient_descent,
    hio_er_stack,
    parse_schedule,
    tie_hom,
    wtie,
)
from .simulator import (
    DEFAULT_DISTANCES,
    Material,
    acquire_stack,
    add_noise,
    random_spheres,
    siemens_star,
    sphere_projection,
    thickness_for_phase,
)
from .tomography import Sinogram, fbp

log = logging.getLogger("nearfield")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

METHODS = ("wtie", "tiehom", "ctf", "ctfpurephase", "gd", "hioer")
ITERATIVE = ("gd", "hioer")
RETRIEVAL_MANIFEST = "retrieval.toml"
TOMO_MANIFEST = "tomo.toml"


class ConfigError(Exception):
    """Invalid or incomplete configuration, detected before any compute."""


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- configuration ----------------------------------------------------------

DEFAULTS = {
    "simulate": {
        "projections": 4, "size": 256, "pixel": 1e-6, "energy": 17.0,
        "distances": list(DEFAULT_DISTANCES), "phantom": "star", "delta": 1e-6,
        "beta": 1e-8, "max_phase": 0.1, "spheres": 6, "flat": False, "noise": None,
        "jitter": 0, "encoding": "raw", "seed": 0, "workers": 1, "executor": "serial",
    },
    "align": {
        "out": None, "metric": "mutual_information", "radius": 20, "reference": "shortest",
        "from_": None, "to": None, "workers": 1, "executor": "serial", "plots": True,
    },
    "retrieve": {
        "out": None, "method": "ctf", "alpha": 1e-8, "alpha_high": None,
        "delta_beta": None, "beta": None, "pad": 0, "schedule": "45xHIO,5xER",
        "cycles": 5, "hio_beta": 0.9, "phase_max": math.pi, "max_iter": 20, "step": 0.05, "averaging": "sequential",
        "position": 0, "align": True, "metric": "mutual_information", "radius": 20,
        "from_": None, "to": None, "workers": 1, "executor": "serial", "seed": 0,
        "plots": True,
    },
    "tomo": {
        "out": None, "filter": "ram-lak", "quantity": "delta", "rows": None,
        "workers": 1, "executor": "serial", "plots": True,
    },
    "info": {"json": False},
}


def load_config(path, command):
    """Flatten a TOML config for ``command``: top-level keys, then its table."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    known = DEFAULTS[command]
    commands = set(DEFAULTS)
    out = {}
    for key, value in data.items():
        if key in commands:
            continue
        out[key] = value
    section = data.get(command, {})
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: [{command}] must be a table")
    out.update(section)
    resolved = {}
    for key, value in out.items():
        dest = "from_" if key == "from" else key.replace("-", "_")
        if dest in known:
            resolved[dest] = value
        elif not any(dest in DEFAULTS[c] for c in commands):
            raise ConfigError(f"{path}: unknown option {key!r}")
    return resolved


def resolve_options(args, command):
    """Merge built-in defaults, config file and command line (highest wins)."""
    opts = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        opts.update(load_config(args.config, command))
    for key in DEFAULTS[command]:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    if "executor" in opts and opts["executor"] not in runtime.EXECUTORS:
        raise ConfigError(f"executor must be one of {runtime.EXECUTORS}, got {opts['executor']!r}")
    if "workers" in opts:
        # command line > environment > config file > default
        try:
            if getattr(args, "workers", None) is not None:
                if args.workers < 1:
                    raise ValueError(f"workers must be >= 1, got {args.workers}")
            else:
                opts["workers"] = runtime.resolve_workers(int(opts["workers"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return opts


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _write_toml(path, data):
    """Atomic write so concurrent chunk jobs never leave a torn manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".toml")
    with os.fdopen(fd, "wb") as fh:
        tomli_w.dump(data, fh)
    os.replace(tmp, path)


def _projection_range(opts, n_projections):
    start = 0 if opts["from_"] is None else int(opts["from_"])
    end = n_projections if opts["to"] is None else int(opts["to"])
    if not 0 <= start < end <= n_projections:
        raise ConfigError(f"projection range [{start}, {end}) not within [0, {n_projections})")
    return start, end


def _job_list(argv, start, end, workers):
    """Rewrite this invocation as one serial command per chunk of ``[start, end)``."""
    words = []
    skip = False
    for word in argv:
        if skip:
            skip = False
            continue
        if word in ("--executor", "--from", "--to", "--workers"):
            skip = True
            continue
        if word.split("=", 1)[0] in ("--executor", "--from", "--to", "--workers"):
            continue
        words.append(word)
    template = shlex.join(["nearfield", *words]) + " --executor serial --from {start} --to {end}"
    base = runtime.chunk(end - start, workers)
    plan = runtime.ChunkPlan(base.total, tuple((a + start, b + start) for a, b in base),
                             base.workers)
    return runtime.emit_job_list(plan, template)


def _run(task, indices, opts):
    executor = opts["executor"]
    if executor == "joblist":
        executor = "serial"
    return runtime.map_projections(task, indices, workers=opts["workers"], executor=executor)


# -- simulate ---------------------------------------------------------------

def _flat_field(shape, seed, position):
    """Smooth detector gain around 1 with a weak dark offset."""
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng([seed, 1000 + position])
    gain = gaussian_filter(rng.standard_normal(shape), sigma=8, mode="wrap")
    gain = 1.0 + 0.1 * gain / (np.abs(gain).max() or 1.0)
    dark = 0.01 + 0.001 * rng.random(shape)
    return gain, dark


@dataclass
class SimulateTask:
    root: str
    manifest: dict
    size: int
    pixel: float
    energy: float
    distances: list
    material: Material
    phantom: str
    star_thickness: float
    spheres: list
    angles: list
    flat: bool
    noise: float | None
    jitter: int
    seed: int

    def thickness(self, index):
        grid = Grid(self.size, self.pixel)
        if self.phantom == "star":
            return siemens_star(grid, thickness=self.star_thickness)
        return sphere_projection(grid, self.spheres, self.angles[index])

    def __call__(self, index):
        ds = _dataset_from_dict(self.manifest, self.root)
        t = self.thickness(index)
        sim = acquire_stack(t, self.material, self.energy, [(math.inf, d) for d in self.distances])
        for pos, img in enumerate(sim.images):
            if self.jitter and pos > 0:
                rng = np.random.default_rng([self.seed, index, pos, 7])
                shift = rng.integers(-self.jitter, self.jitter + 1, size=2)
                img = img.with_values(np.roll(img.values, tuple(shift), axis=(0, 1)))
            if self.noise:
                noise_seed = np.random.SeedSequence([self.seed, index, pos]).generate_state(1)[0]
                img = add_noise(img, self.noise, int(noise_seed))
            values = img.values
            if self.flat:
                gain, dark = _flat_field(values.shape, self.seed, pos)
                values = gain * values + dark
            store_image(ds, pos, index, "raw", values)
        write_image(ds.truth_path("phase", index), sim.phi)
        write_image(ds.truth_path("absorption", index), sim.b)
        write_image(ds.truth_path("thickness", index), t.values)
        return index


def _dataset_from_dict(manifest, root):
    from .dataset import parse_manifest

    return parse_manifest(manifest, root)


def cmd_simulate(args, argv):
    o = resolve_options(args, "simulate")
    n = int(o["projections"])
    if n < 1:
        raise ConfigError(f"need at least one projection, got {n}")
    if o["phantom"] not in ("star", "spheres"):
        raise ConfigError(f"phantom must be 'star' or 'spheres', got {o['phantom']!r}")
    if o["encoding"] not in ("raw", "tiff"):
        raise ConfigError("encoding must be 'raw' or 'tiff'")
    if o["executor"] == "joblist":
        raise ConfigError("simulate runs locally; use executor serial, local or thread")
    distances = sorted(_floats(o["distances"]))
    if not distances or distances[0] <= 0 or len(set(distances)) != len(distances):
        raise ConfigError(f"distances must be distinct and positive, got {distances}")
    size, pixel, energy = int(o["size"]), float(o["pixel"]), float(o["energy"])
    if size < 8 or pixel <= 0 or energy <= 0:
        raise ConfigError("need size >= 8 and positive pixel and energy")
    try:
        material = Material(float(o["delta"]), float(o["beta"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    lam = wavelength_m(energy)
    seed = int(o["seed"])
    grid = Grid(size, pixel)
    angles = [float(a) for a in np.arange(n) * np.pi / n]
    spheres = []
    if o["phantom"] == "spheres":
        spheres = random_spheres(grid, int(o["spheres"]), seed)
        # scale the material so the thickest chord gives max_phase
        chord = 2 * max(r for _, r in spheres)
        delta = float(o["max_phase"]) * lam / (2 * np.pi * chord)
        ratio = material.beta / material.delta if material.delta > 0 else 0.0
        material = Material(delta, delta * ratio)
    star_t = thickness_for_phase(float(o["max_phase"]), material, lam)

    root = Path(args.out)
    ext = ".tif" if o["encoding"] == "tiff" else ".f32"
    positions = []
    for p, d in enumerate(distances):
        extra = {}
        if o["flat"]:
            extra = {"flat": f"flat/p{p}{ext}", "dark": f"dark/p{p}{ext}"}
        positions.append(Position(math.inf, d, f"raw/p{p}/{{index:05d}}{ext}", **extra))
    truth = {k: f"truth/{k}_{{index:05d}}{ext}" for k in ("phase", "absorption", "thickness")}
    extra = {"phantom": o["phantom"], "seed": seed, "delta": material.delta,
             "beta": material.beta, "noise": o["noise"] or 0, "jitter": int(o["jitter"])}
    if spheres:
        extra["spheres"] = [[*c, r] for c, r in spheres]
    ds = ProjectionDataset(root, energy, pixel, n, (size, size), positions, o["encoding"],
                           False, angles, truth, extra)
    try:
        write_manifest(ds)
        for p in range(len(distances)):
            if o["flat"]:
                gain, dark = _flat_field((size, size), seed, p)
                write_image(ds.path(p, 0, "flat"), gain + dark)
                write_image(ds.path(p, 0, "dark"), dark)
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {root}: {exc}") from exc

    from .dataset import manifest_dict

    task = SimulateTask(str(root), manifest_dict(ds), size, pixel, energy, distances, material,
                        o["phantom"], star_t, spheres, angles, bool(o["flat"]), o["noise"],
                        int(o["jitter"]), seed)
    _run(task, range(n), o)
    print(f"wrote {n} projection(s) x {len(distances)} position(s) to {root}")
    return EXIT_OK


# -- info -------------------------------------------------------------------

def dataset_summary(ds):
    lam = ds.wavelength
    rows = []
    for p, pos in enumerate(ds.positions):
        eff = ds.effective(p)
        f = fresnel_number(eff.effective_pixel, lam, eff.effective_distance) \
            if eff.effective_distance > 0 else math.inf
        rows.append({"position": p, "z1": pos.z1, "z2": pos.z2,
                     "magnification": eff.magnification, "distance": eff.effective_distance,
                     "pixel": eff.effective_pixel, "fresnel": f,
                     "regime": regime_classify(f).value})
    return {"root": str(ds.root), "energy": ds.energy, "wavelength": lam,
            "n_projections": ds.n_projections, "shape": list(ds.shape),
            "corrected": ds.corrected, "truth": sorted(ds.truth), "positions": rows}


def cmd_info(args, argv):
    o = resolve_options(args, "info")
    ds = read_manifest(args.dataset)
    s = dataset_summary(ds)
    if o["json"]:
        import json

        print(json.dumps(s, indent=2, default=str))
        return EXIT_OK
    print(f"dataset      {s['root']}")
    print(f"energy       {s['energy']:g} keV (wavelength {s['wavelength']:.4e} m)")
    print(f"projections  {s['n_projections']} of shape {tuple(s['shape'])}")
    print(f"corrected    {s['corrected']}")
    if s["truth"]:
        print(f"ground truth {', '.join(s['truth'])}")
    print(f"positions    {len(s['positions'])}")
    print("  pos        z1 (m)      z2 (m)     M      D (m)    pixel (m)   F(pixel)  regime")
    for r in s["positions"]:
        print(f"  {r['position']:>3} {r['z1']:>12.4g} {r['z2']:>11.4g} {r['magnification']:>6.3g}"
              f" {r['distance']:>10.4g} {r['pixel']:>12.4g} {r['fresnel']:>9.4g}  {r['regime']}")
    return EXIT_OK


# -- shared projection loading ---------------------------------------------

def load_stack(ds, projection):
    """Flat/dark-corrected images of one projection, sorted by effective distance."""
    images = [corrected_image(ds, p, projection) for p in range(ds.n_positions)]
    images.sort(key=lambda im: im.distance)
    return IntensityStack(images, ds.wavelength)


def _check_registration(opts):
    if opts["metric"] not in ("mutual_information", "mi", "phase_correlation", "pc"):
        raise ConfigError(f"unknown registration metric {opts['metric']!r}")
    if int(opts["radius"]) < 1:
        raise ConfigError("registration radius must be >= 1")


# -- align ------------------------------------------------------------------

@dataclass
class AlignTask:
    dataset: str
    out: str
    metric: str
    radius: int
    reference: str
    _ds: object = field(default=None, repr=False)

    def __getstate__(self):
        return {k: v for k, v in self.__dict__.items() if k != "_ds"}

    def __setstate__(self, state):
        self.__dict__.update(state, _ds=None)

    def __call__(self, index):
        if self._ds is None:
            self._ds = read_manifest(self.dataset, check_files=False)
        ds = self._ds
        stack = load_stack(ds, index)
        aligned, results = align_stack(stack, self.metric, self.radius, self.reference)
        out = Path(self.out)
        for p, im in enumerate(aligned):
            write_image(out / f"aligned/p{p}/{index:05d}.f32", im.values)
        # the stack is sorted by distance, so the reference is position 0
        rows = [{"projection": index, "position": p, "dy": r.shift[0], "dx": r.shift[1],
                 "scale": r.scale, "score": r.score, "metric": r.metric}
                for p, r in enumerate(results, start=1)]
        return rows, aligned.pixel, list(stack.distances)


def cmd_align(args, argv):
    from .plotting import shift_plot
    from .registration import shift_table

    o = resolve_options(args, "align")
    _check_registration(o)
    if o["reference"] != "shortest":
        raise ConfigError("only the shortest-distance reference is supported by the CLI")
    if not o["out"]:
        raise ConfigError("--out is required")
    ds = read_manifest(args.dataset)
    if ds.n_positions < 2:
        raise ConfigError("alignment needs at least two positions")
    start, end = _projection_range(o, ds.n_projections)
    out = Path(o["out"])
    if o["executor"] == "joblist":
        text = _job_list(argv, start, end, o["workers"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "jobs.txt").write_text(text)
        sys.stdout.write(text)
        return EXIT_OK
    task = AlignTask(str(ds.root), str(out), o["metric"], int(o["radius"]), o["reference"])
    results = _run(task, range(start, end), o)
    rows = [r for part, _, _ in results for r in part]
    pixel, distances = results[0][1], results[0][2]
    aligned = ProjectionDataset(
        out / "aligned", ds.energy, pixel, ds.n_projections, ds.shape,
        [Position(math.inf, d, f"p{p}/{{index:05d}}.f32") for p, d in enumerate(distances)],
        "raw", True, list(ds.projection_angles()),
        {k: str((ds.root / v).resolve()) for k, v in ds.truth.items()},
        dict(ds.extra, source=str(ds.root.resolve())))
    write_manifest(aligned)
    suffix = "" if (start, end) == (0, ds.n_projections) else f"_{start:05d}_{end:05d}"
    (out / f"shifts{suffix}.tsv").write_text(shift_table(rows))
    if o["plots"]:
        shift_plot(rows, out / f"shifts{suffix}.png")
    print(f"aligned projections [{start}, {end}) -> {out / 'aligned'}")
    return EXIT_OK


# -- retrieve ---------------------------------------------------------------

@dataclass
class PipelineConfig:
    dataset: str
    out: str
    method: str
    params: RetrievalParams
    position: int = 0
    align: bool = True
    metric: str = "mutual_information"
    radius: int = 20
    workers: int = 1
    executor: str = "serial"
    plots: bool = True

    def validate(self, ds):
        """Method/parameter completeness, checked before any compute."""
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; use one of {METHODS}")
        if self.method == "tiehom" and self.params.delta_beta is None:
            raise ConfigError("method tiehom requires delta_beta (--delta-beta)")
        if self.method in ("ctf",) and ds.n_positions < 2:
            raise ConfigError(f"method ctf needs at least 2 positions, dataset has {ds.n_positions}")
        if self.method in ("wtie", "tiehom") and not 0 <= self.position < ds.n_positions:
            raise ConfigError(f"position {self.position} out of range [0, {ds.n_positions})")
        if self.method == "wtie" and ds.effective(self.position).effective_distance == 0:
            raise ConfigError("wtie needs a position with non-zero propagation distance")


def build_params(o):
    try:
        schedule = parse_schedule(o["schedule"]) if isinstance(o["schedule"], str) else o["schedule"]
        pad = o["pad"] if o["pad"] == "auto" else int(o["pad"])
        return RetrievalParams(
            alpha=float(o["alpha"]),
            alpha_high=None if o["alpha_high"] is None else float(o["alpha_high"]),
            delta_beta=None if o["delta_beta"] is None else float(o["delta_beta"]),
            beta=None if o["beta"] is None else float(o["beta"]),
            pad=pad, schedule=schedule, cycles=int(o["cycles"]),
            hio_beta=float(o["hio_beta"]), phase_max=float(o["phase_max"]), max_iter=int(o["max_iter"]), step=float(o["step"]),
            averaging=o["averaging"], seed=int(o["seed"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid retrieval parameters: {exc}") from None


def retrieve_one(stack, method, params, position=0):
    """Run ``method`` on an aligned stack of one projection."""
    if method == "wtie":
        return wtie(IntensityStack([stack[position]], stack.wavelength), params)
    if method == "tiehom":
        return tie_hom(stack[position], params)
    if method == "ctf":
        return ctf(stack, params)
    if method == "ctfpurephase":
        return ctf_pure_phase(stack, params)
    if method == "gd":
        return gradient_descent(stack, ctf_pure_phase(stack, params), params)
    if method == "hioer":
        return hio_er_stack(stack, params)
    raise ConfigError(f"unknown method {method!r}")


@dataclass
class RetrieveTask:
    config: PipelineConfig
    _ds: object = field(default=None, repr=False)

    def __getstate__(self):
        return {k: v for k, v in self.__dict__.items() if k != "_ds"}

    def __setstate__(self, state):
        self.__dict__.update(state, _ds=None)

    def __call__(self, index):
        c = self.config
        if self._ds is None:
            self._ds = read_manifest(c.dataset, check_files=False)
        ds = self._ds
        stack = load_stack(ds, index)
        if c.align and len(stack) > 1:
            stack, _ = align_stack(stack, c.metric, c.radius)
        params = c.params
        if c.method == "hioer":
            # distinct but reproducible random starts per projection
            from dataclasses import replace

            params = replace(params, seed=params.seed + index)
        result = retrieve_one(stack, c.method, params, c.position)
        out = Path(c.out)
        write_image(out / f"phase/{index:05d}.f32", result.phi)
        if result.b is not None:
            write_image(out / f"absorption/{index:05d}.f32", result.b)
        if result.thickness is not None:
            write_image(out / f"thickness/{index:05d}.f32", result.thickness)
        if result.residual_history:
            hist = np.asarray(result.residual_history, dtype=float)
            (out / "residual").mkdir(parents=True, exist_ok=True)
            np.savetxt(out / f"residual/{index:05d}.txt", hist, fmt="%.17g")
        if c.plots:
            from .plotting import phase_preview, residual_plot

            phase_preview(result.phi, out / f"preview/{index:05d}.png",
                          title=f"{c.method} projection {index}", label="radians",
                          pixel=stack.pixel)
            if result.residual_history:
                residual_plot(result.residual_history, out / f"residual/{index:05d}.png",
                              kinds=result.info.get("kinds"))
        score = None
        if "phase" in ds.truth:
            truth = read_image(ds.truth_path("phase", index), ds.shape)
            if truth.shape == result.phi.shape and np.ptp(truth) > 0:
                score = nrmse(result.phi, truth, remove_mean=True)
        return {"index": index, "nrmse": score, "pixel": stack.pixel}


def cmd_retrieve(args, argv):
    o = resolve_options(args, "retrieve")
    if not o["out"]:
        raise ConfigError("--out is required")
    _check_registration(o)
    params = build_params(o)
    ds = read_manifest(args.dataset)
    config = PipelineConfig(str(ds.root), str(o["out"]), o["method"], params, int(o["position"]),
                            bool(o["align"]), o["metric"], int(o["radius"]), o["workers"],
                            o["executor"], bool(o["plots"]))
    config.validate(ds)
    start, end = _projection_range(o, ds.n_projections)
    out = Path(o["out"])
    if o["executor"] == "joblist":
        text = _job_list(argv, start, end, o["workers"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "jobs.txt").write_text(text)
        sys.stdout.write(text)
        return EXIT_OK

    results = _run(RetrieveTask(config), range(start, end), o)
    ref = int(np.argmin([ds.effective(p).effective_distance for p in range(ds.n_positions)]))
    pixel = ds.effective(config.position if o["method"] in ("wtie", "tiehom") else ref).effective_pixel
    manifest = {
        "format": "nearfield-retrieval", "version": 1, "dataset": str(ds.root.resolve()),
        "method": config.method, "n_projections": ds.n_projections, "shape": list(ds.shape),
        "pixel": float(pixel), "wavelength": float(ds.wavelength),
        "angles": [float(a) for a in ds.projection_angles()],
        "phase": "phase/{index:05d}.f32",
        "params": _params_record(params),
    }
    _write_toml(out / RETRIEVAL_MANIFEST, manifest)
    scores = [r["nrmse"] for r in results if r["nrmse"] is not None]
    msg = f"retrieved projections [{start}, {end}) with {config.method} -> {out}"
    if scores:
        msg += f"; mean NRMSE(phase) {np.mean(scores):.4g}"
    print(msg)
    return EXIT_OK


def _params_record(p):
    from .retrieval import format_schedule

    rec = {"alpha": p.alpha, "pad": p.pad, "cycles": p.cycles, "hio_beta": p.hio_beta,
           "phase_max": p.phase_max,
           "max_iter": p.max_iter, "step": p.step, "averaging": p.averaging, "seed": p.seed,
           "schedule": format_schedule(p.schedule)}
    for key in ("alpha_high", "delta_beta", "beta"):
        if getattr(p, key) is not None:
            rec[key] = getattr(p, key)
    return rec


# -- tomo -------------------------------------------------------------------

@dataclass
class TomoTask:
    root: str
    template: str
    n_projections: int
    shape: tuple
    angles: list
    filter: str
    scale: float
    _volume: object = field(default=None, repr=False)

    def __getstate__(self):
        return {k: v for k, v in self.__dict__.items() if k != "_volume"}

    def __setstate__(self, state):
        self.__dict__.update(state, _volume=None)

    def volume(self):
        if self._volume is None:
            root = Path(self.root)
            self._volume = np.stack([
                read_image(root / self.template.format(index=i), self.shape)
                for i in range(self.n_projections)
            ]).astype(float)
        return self._volume

    def __call__(self, row):
        sino = Sinogram(np.asarray(self.angles), self.volume()[:, row, :])
        return fbp(sino, self.filter) * self.scale


def _parse_rows(spec, n_rows):
    if spec is None:
        return 0, n_rows
    try:
        a, b = (int(v) if v else None for v in str(spec).split(":"))
    except ValueError:
        raise ConfigError(f"rows must look like 'start:end', got {spec!r}") from None
    a = 0 if a is None else a
    b = n_rows if b is None else b
    if not 0 <= a < b <= n_rows:
        raise ConfigError(f"rows [{a}, {b}) not within [0, {n_rows})")
    return a, b


def cmd_tomo(args, argv):
    o = resolve_options(args, "tomo")
    if not o["out"]:
        raise ConfigError("--out is required")
    if o["filter"] not in ("ram-lak", "shepp-logan", "none"):
        raise ConfigError(f"unknown filter {o['filter']!r}")
    if o["quantity"] not in ("phase", "delta"):
        raise ConfigError("quantity must be 'phase' or 'delta'")
    if o["executor"] == "joblist":
        raise ConfigError("tomo runs locally; use executor serial, local or thread")
    root = Path(args.retrieved)
    path = root / RETRIEVAL_MANIFEST
    if not path.exists():
        raise DatasetError(f"no {RETRIEVAL_MANIFEST} in {root}")
    try:
        with open(path, "rb") as fh:
            rec = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    n = int(rec["n_projections"])
    angles = rec["angles"]
    if n < 2 or len(angles) < 2:
        raise DatasetError(f"tomography needs at least 2 angles, got {len(angles)}")
    shape = tuple(rec["shape"])
    missing = [i for i in range(n) if not (root / rec["phase"].format(index=i)).exists()]
    if missing:
        raise DatasetError(f"phase maps missing for projections {missing[:10]}"
                           + (" ..." if len(missing) > 10 else ""))
    # line integrals of phi in pixel units -> delta = -phi * wavelength / (2 pi pixel)
    scale = 1.0
    if o["quantity"] == "delta":
        scale = -float(rec["wavelength"]) / (2 * np.pi * float(rec["pixel"]))
    a, b = _parse_rows(o["rows"], shape[0])
    task = TomoTask(str(root), rec["phase"], n, shape, angles, o["filter"], scale)
    slices = _run(task, range(a, b), o)
    out = Path(o["out"])
    for row, s in zip(range(a, b), slices):
        write_image(out / f"slices/{row:05d}.f32", s)
    _write_toml(out / TOMO_MANIFEST, {
        "format": "nearfield-tomo", "version": 1, "source": str(root.resolve()),
        "quantity": o["quantity"], "filter": o["filter"], "rows": [a, b],
        "size": int(shape[1]), "slice": "slices/{index:05d}.f32",
    })
    if o["plots"]:
        from .plotting import phase_preview

        mid = (a + b - 1) // 2
        label = "delta" if o["quantity"] == "delta" else "radians per pixel"
        phase_preview(slices[mid - a], out / "slice_preview.png", title=f"slice {mid}",
                      label=label, pixel=float(rec["pixel"]))
    print(f"reconstructed slices [{a}, {b}) from {n} angles -> {out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _add_runtime(p):
    p.add_argument("--workers", type=int, help=f"worker count (env {runtime.WORKERS_ENV} overrides)")
    p.add_argument("--executor", help="serial | local | thread | joblist")
    p.add_argument("--config", help="TOML config file; command-line flags win")


def _add_range(p):
    p.add_argument("--from", dest="from_", type=int, help="first projection (inclusive)")
    p.add_argument("--to", type=int, help="last projection (exclusive)")


def _add_registration(p):
    p.add_argument("--metric", help="mutual_information | phase_correlation")
    p.add_argument("--radius", type=int, help="integer search radius in pixels")


def build_parser():
    parser = _Parser(prog="nearfield", description="Near-field X-ray phase retrieval pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    bool_flag = argparse.BooleanOptionalAction

    p = sub.add_parser("simulate", help="write a synthetic dataset with ground truth")
    p.add_argument("out")
    p.add_argument("--projections", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--pixel", type=float, help="detector pixel (m)")
    p.add_argument("--energy", type=float, help="keV")
    p.add_argument("--distances", help="comma-separated sample-detector distances (m)")
    p.add_argument("--phantom", help="star | spheres")
    p.add_argument("--spheres", type=int, help="number of spheres for the spheres phantom")
    p.add_argument("--delta", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--max-phase", type=float, help="peak |phase| in radians")
    p.add_argument("--flat", action=bool_flag, default=None, help="write flat/dark fields")
    p.add_argument("--noise", type=float, help="photons per pixel (Poisson)")
    p.add_argument("--jitter", type=int, help="max random integer shift (px) of positions > 0")
    p.add_argument("--encoding", help="raw | tiff")
    p.add_argument("--seed", type=int)
    _add_runtime(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("info", help="validate a dataset and summarise its geometry")
    p.add_argument("dataset")
    p.add_argument("--json", action=bool_flag, default=None)
    p.add_argument("--config")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("align", help="register positions and write an aligned dataset")
    p.add_argument("dataset")
    p.add_argument("--out")
    p.add_argument("--reference")
    p.add_argument("--plots", action=bool_flag, default=None)
    _add_registration(p)
    _add_range(p)
    _add_runtime(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("retrieve", help="phase retrieval per projection")
    p.add_argument("dataset")
    p.add_argument("--out")
    p.add_argument("--method", help=" | ".join(METHODS))
    p.add_argument("--alpha", type=float)
    p.add_argument("--alpha-high", type=float)
    p.add_argument("--delta-beta", type=float)
    p.add_argument("--beta", type=float, help="absorption index, enables thickness output")
    p.add_argument("--pad", help="edge padding in pixels or 'auto'")
    p.add_argument("--schedule", help="e.g. '45xHIO,5xER'")
    p.add_argument("--cycles", type=int)
    p.add_argument("--hio-beta", type=float)
    p.add_argument("--phase-max", type=float, help="HIO/ER object phase bound (rad)")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--step", type=float)
    p.add_argument("--averaging", help="sequential | restarts")
    p.add_argument("--position", type=int, help="position used by single-distance methods")
    p.add_argument("--align", action=bool_flag, default=None)
    p.add_argument("--plots", action=bool_flag, default=None)
    p.add_argument("--seed", type=int)
    _add_registration(p)
    _add_range(p)
    _add_runtime(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("tomo", help="filtered back-projection of retrieved phase maps")
    p.add_argument("retrieved", help="output directory of 'retrieve'")
    p.add_argument("--out")
    p.add_argument("--filter")
    p.add_argument("--quantity", help="delta | phase")
    p.add_argument("--rows", help="slice rows 'start:end'")
    p.add_argument("--plots", action=bool_flag, default=None)
    _add_runtime(p)
    p.set_defaults(func=cmd_tomo)
    return parser


def _failure_code(exc):
    kinds = {k for names in exc.error_types.values() for k in names}
    if kinds & {"ConfigError"}:
        return EXIT_CONFIG
    if kinds & {"DatasetError", "RegistrationError", "OSError"}:
        return EXIT_DATA
    if kinds & {"RetrievalError", "FloatingPointError"}:
        return EXIT_NUMERIC
    return EXIT_INTERNAL


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"nearfield: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except ConfigError as exc:
        print(f"nearfield: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except runtime.ProjectionFailures as exc:
        print(f"nearfield: {exc}", file=sys.stderr)
        for i, msg in exc.failures.items():
            print(f"--- projection {i} ---\n{msg}", file=sys.stderr)
        return _failure_code(exc)
    except (DatasetError, RegistrationError, OSError) as exc:
        print(f"nearfield: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RetrievalError, FloatingPointError) as exc:
        print(f"nearfield: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
