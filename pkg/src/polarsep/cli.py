"""``polarsep`` command line: synth | project | separate | eval | histmatch.

Exit codes: 0 success, 2 usage/config, 3 I/O or unusable input, 4 numeric
(singular geometry).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .decompose import (
    CanonicalPair,
    ResidualFields,
    SingularityError,
    canonical_baseline_separate,
    canonical_solve,
    combine_residuals,
    fresnel_inverse_separate,
)
from .fileio import ImageIOError, atomic_write_bytes, read_image, to_rgb, write_pfm, write_png
from .geometry import AoiField, GeometryConfigError, SurfaceGeometry, aoi_field, uniform_aoi
from .imagecore import ImageError, MetricReport, histogram_match
from .optics import OpticalConfig
from .synth import (
    SCHEMA_VERSION,
    ConfigError,
    SynthConfig,
    json_bytes,
    load_record,
    parse_stages,
    record_files,
    synthesize_sample,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".pfm", ".webp"}

log = logging.getLogger("polarsep")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def load_synth_config(path) -> SynthConfig:
    if path is None:
        return SynthConfig()
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ImageIOError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return SynthConfig.from_dict(data)


def config_hash(cfg: SynthConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def sample_seeds(master_seed: int, index: int) -> tuple[int, int]:
    """(source-pick seed, pipeline seed) for one sample, from (master seed, index)."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    a, b = ss.generate_state(2, dtype=np.uint64)
    return int(a), int(b)


def list_sources(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageIOError(f"source directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

_SOURCE_CACHE: dict = {}


def _source(path: str) -> np.ndarray:
    img = _SOURCE_CACHE.get(path)
    if img is None:
        img = read_image(path)
        _SOURCE_CACHE[path] = img
    return img


def _synth_one(job) -> int:
    index, sources, cfg, master_seed, out = job
    pick_seed, seed = sample_seeds(master_seed, index)
    pick = np.random.default_rng(pick_seed).choice(len(sources), size=2, replace=False)
    src_r, src_t = sources[int(pick[0])], sources[int(pick[1])]
    record = synthesize_sample(_source(src_r), _source(src_t), cfg, seed)
    record.provenance["sample_index"] = index
    record.provenance["sources"] = {
        "reflection": Path(src_r).name,
        "transmission": Path(src_t).name,
    }
    final = Path(out) / f"{index:06d}"
    tmp = Path(out) / f".tmp-{index:06d}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    for name, data in record_files(record).items():
        (tmp / name).write_bytes(data)
    if final.exists():
        shutil.rmtree(final)
    os.rename(tmp, final)
    return index


def run_synth(source_dir, out, count: int, master_seed: int, cfg: SynthConfig, workers: int = 1):
    if count < 0:
        raise UsageError("--count must be >= 0")
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    sources = list_sources(source_dir)
    if len(sources) < 2:
        raise ImageIOError(f"{source_dir}: need at least two readable images, found {len(sources)}")
    for p in sources:
        img = _source(str(p))
        if img.shape[0] < cfg.patch_size or img.shape[1] < cfg.patch_size:
            raise ImageError(f"{p.name} is smaller than patch size {cfg.patch_size}")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ImageIOError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ImageIOError(f"output directory {out} is not writable")

    src = [str(p) for p in sources]
    jobs = [(i, src, cfg, master_seed, str(out)) for i in range(count)]
    if workers == 1 or count <= 1:
        done = [_synth_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_synth_one, jobs, chunksize=max(1, count // (4 * workers))))
    manifest = {
        "schema": SCHEMA_VERSION,
        "master_seed": int(master_seed),
        "config_hash": config_hash(cfg),
        "config": cfg.to_dict(),
        "count": count,
        "samples": [f"{i:06d}" for i in sorted(done)],
        "sources": [p.name for p in sources],
    }
    atomic_write_bytes(out / "manifest.json", json_bytes(manifest))
    log.info("wrote %d samples to %s", count, out)
    return manifest


def cmd_synth(args) -> int:
    cfg = load_synth_config(args.config)
    overrides = {
        "patch_size": args.patch_size,
        "beta_max": args.beta_max,
        "angle_noise_deg": args.angle_noise,
        "observation_bits": args.bits,
    }
    if args.stages is not None:
        overrides["stages"] = parse_stages(args.stages)
    try:
        cfg = cfg.with_overrides(**overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    run_synth(args.sources, args.out, args.count, args.seed, cfg, args.workers)
    return EXIT_OK


# ---------------------------------------------------------------------------
# project
# ---------------------------------------------------------------------------


def realized_angles(phi0: float, overrides, degrees: bool) -> list[float]:
    conv = math.radians if degrees else float
    if overrides:
        return [conv(a) for a in overrides]
    base = conv(phi0)
    return [base + i * 0.25 * math.pi for i in range(3)]


def read_stack(paths) -> list[np.ndarray]:
    imgs = [read_image(p) for p in paths]
    for p, im in zip(paths[1:], imgs[1:]):
        if im.shape != imgs[0].shape:
            raise ImageError(f"{p}: size {im.shape} differs from {paths[0]}: {imgs[0].shape}")
    return imgs


def write_canonical(out, canon: CanonicalPair) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(out / "i_perp.pfm", canon.i_perp)
    write_pfm(out / "i_par.pfm", canon.i_par)
    write_pfm(out / "phi_perp.pfm", canon.phi_perp)


def read_canonical(directory) -> CanonicalPair:
    d = Path(directory)
    return CanonicalPair(
        read_image(d / "i_perp.pfm"), read_image(d / "i_par.pfm"), read_image(d / "phi_perp.pfm")
    )


def cmd_project(args) -> int:
    imgs = read_stack(args.images)
    angles = realized_angles(args.phi0, args.angles, args.degrees)
    canon = canonical_solve(images=imgs, angles=angles)
    write_canonical(args.out, canon)
    n_undef = int(np.count_nonzero(canon.undefined))
    if n_undef:
        log.info("%d pixel(s) without polarization contrast; phi_perp set to 0", n_undef)
    return EXIT_OK


# ---------------------------------------------------------------------------
# separate
# ---------------------------------------------------------------------------


def aoi_from_json(path, width: int) -> AoiField:
    try:
        meta = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ImageIOError(f"cannot read AOI metadata {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if "theta" in meta:
        return AoiField(np.asarray(meta["theta"], dtype=np.float64))
    if meta.get("geometry"):
        return aoi_field(SurfaceGeometry.from_dict(meta["geometry"]), width)
    raise ConfigError(f"{path}: no 'theta' or 'geometry' entry")


def read_residuals(directory) -> ResidualFields:
    d = Path(directory)
    return ResidualFields(
        read_image(d / "r_tilde.pfm"),
        read_image(d / "t_tilde.pfm"),
        read_image(d / "xi_perp.pfm"),
        read_image(d / "xi_par.pfm"),
    )


def separate(canon, method, aoi=None, residual=None, optics=OpticalConfig(), allow_singular=False):
    if method == "fresnel-inverse":
        if aoi is None:
            raise UsageError("fresnel-inverse needs angle-of-incidence metadata (--aoi or --theta)")
        return fresnel_inverse_separate(canon, aoi, optics, allow_singular=allow_singular)
    if method == "canonical-baseline":
        return canonical_baseline_separate(canon)
    if method == "residual":
        if residual is None:
            raise UsageError("residual method needs --residual DIR")
        return combine_residuals(canon, residual)
    raise UsageError(f"unknown method {method}")


def write_separation(out, r_hat, t_hat) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / "R_hat.png", r_hat)
    write_png(out / "T_hat.png", t_hat)
    write_pfm(out / "R_hat.pfm", r_hat)
    write_pfm(out / "T_hat.pfm", t_hat)


def _separate_sample(sample_dir, out, args, optics) -> None:
    rec = load_record(sample_dir)
    canon = canonical_solve(rec.stack)
    r_hat, t_hat = separate(
        canon,
        args.method,
        aoi=rec.aoi,
        residual=read_residuals(args.residual) if args.residual else None,
        optics=optics,
        allow_singular=args.allow_singular,
    )
    if args.histmatch:
        ref = rec.stack.images[0]
        r_hat, t_hat = histogram_match(r_hat, ref), histogram_match(t_hat, ref)
    write_separation(out, r_hat, t_hat)


def cmd_separate(args) -> int:
    optics = OpticalConfig(n2=args.n2)
    sources = [x for x in (args.obs, args.canonical, args.sample, args.dataset) if x]
    if len(sources) != 1:
        raise UsageError("give exactly one of --obs, --canonical, --sample, --dataset")
    if args.dataset:
        ds = Path(args.dataset)
        samples = sorted(p for p in ds.iterdir() if p.is_dir() and p.name.isdigit())
        for s in samples:
            _separate_sample(s, Path(args.out) / s.name, args, optics)
        log.info("separated %d samples", len(samples))
        return EXIT_OK
    if args.sample:
        _separate_sample(args.sample, args.out, args, optics)
        return EXIT_OK

    reference = None
    if args.obs:
        imgs = read_stack(args.obs)
        canon = canonical_solve(images=imgs, angles=realized_angles(args.phi0, args.angles, args.degrees))
        reference = imgs[0]
    else:
        canon = read_canonical(args.canonical)
    if args.reference:
        reference = read_image(args.reference)

    width = canon.i_perp.shape[1]
    aoi = None
    if args.aoi:
        aoi = aoi_from_json(args.aoi, width)
    elif args.theta is not None:
        aoi = uniform_aoi(args.theta, width)
    residual = read_residuals(args.residual) if args.residual else None
    r_hat, t_hat = separate(canon, args.method, aoi, residual, optics, args.allow_singular)
    if args.histmatch:
        if reference is None:
            raise UsageError("--histmatch needs the observations or --reference")
        r_hat, t_hat = histogram_match(r_hat, reference), histogram_match(t_hat, reference)
    write_separation(args.out, r_hat, t_hat)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


class IndexMismatch(ImageIOError):
    def __init__(self, missing, extra):
        self.missing, self.extra = missing, extra
        super().__init__(
            f"sample index mismatch; missing predictions: {missing or 'none'}; "
            f"extra predictions: {extra or 'none'}"
        )


def _index_dirs(directory) -> dict:
    d = Path(directory)
    if not d.is_dir():
        raise ImageIOError(f"{d} is not a directory")
    return {p.name: p for p in d.iterdir() if p.is_dir() and p.name.isdigit()}


def evaluate(pred_dir, gt_dir) -> dict:
    pred = _index_dirs(pred_dir)
    gt = _index_dirs(gt_dir)
    missing = sorted(set(gt) - set(pred))
    extra = sorted(set(pred) - set(gt))
    if missing or extra:
        raise IndexMismatch(missing, extra)
    rep_r, rep_t = MetricReport(), MetricReport()
    for idx in sorted(gt):
        rep_r.add(idx, read_image(pred[idx] / "R_hat.pfm"), read_image(gt[idx] / "gt_R.pfm"))
        rep_t.add(idx, read_image(pred[idx] / "T_hat.pfm"), read_image(gt[idx] / "gt_T.pfm"))
    return {
        "schema": SCHEMA_VERSION,
        "aggregation": "per-image metrics, then arithmetic mean",
        "reflection": rep_r.to_dict(),
        "transmission": rep_t.to_dict(),
    }


def format_report(report: dict) -> str:
    r, t = report["reflection"], report["transmission"]
    lines = [f"{'sample':>8}  {'R rmse':>9}  {'R psnr':>8}  {'T rmse':>9}  {'T psnr':>8}"]
    for a, b in zip(r["per_image"], t["per_image"]):
        lines.append(
            f"{a['id']:>8}  {a['rmse']:9.5f}  {a['psnr']:8.2f}  {b['rmse']:9.5f}  {b['psnr']:8.2f}"
        )
    lines.append(f"{'mean':>8}  {r['rmse']:9.5f}  {r['psnr']:8.2f}  {t['rmse']:9.5f}  {t['psnr']:8.2f}")
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    report = evaluate(args.predictions, args.ground_truth)
    text = format_report(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(out / "report.json", json_bytes(report))
        atomic_write_bytes(out / "report.txt", text.encode())
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# histmatch
# ---------------------------------------------------------------------------


def cmd_histmatch(args) -> int:
    src = read_image(args.src)
    ref = read_image(args.ref)
    if src.shape[2] != ref.shape[2]:
        src, ref = to_rgb(src), to_rgb(ref)
    out = histogram_match(src, ref)
    dest = Path(args.out)
    if dest.suffix.lower() == ".pfm":
        write_pfm(dest, out)
    elif dest.suffix.lower() == ".png":
        write_png(dest, out)
    else:
        dest.mkdir(parents=True, exist_ok=True)
        write_pfm(dest / "matched.pfm", out)
        write_png(dest / "matched.png", out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polarsep", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"polarsep {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic polarization dataset")
    s.add_argument("sources", help="directory of source images")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0, help="master seed (u64)")
    s.add_argument("--config", help="synth config JSON")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--stages", help="comma list from dr,nrd,lcg (empty string: none)")
    s.add_argument("--patch-size", type=int)
    s.add_argument("--beta-max", type=float)
    s.add_argument("--angle-noise", type=float, help="polarizer angle noise bound, degrees")
    s.add_argument("--bits", type=int, choices=(0, 8, 16), help="observation bit depth (0: float)")
    s.set_defaults(func=cmd_synth)

    def angle_args(q):
        q.add_argument("--phi0", type=float, default=0.0, help="angle of the first observation")
        q.add_argument("--angles", type=float, nargs=3, metavar=("A0", "A1", "A2"),
                       help="realized polarizer angles, overriding phi0 + i*pi/4")
        q.add_argument("--degrees", action="store_true", help="angles are in degrees")

    pr = sub.add_parser("project", help="canonical projection of three observations")
    pr.add_argument("images", nargs=3, metavar="IMAGE")
    angle_args(pr)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_project)

    sp = sub.add_parser("separate", help="recover reflection and transmission layers")
    sp.add_argument("--obs", nargs=3, metavar="IMAGE")
    sp.add_argument("--canonical", metavar="DIR", help="directory with i_perp/i_par/phi_perp.pfm")
    sp.add_argument("--sample", metavar="DIR", help="one synth sample directory")
    sp.add_argument("--dataset", metavar="DIR", help="synth dataset; one output dir per sample")
    angle_args(sp)
    sp.add_argument("--method", choices=("fresnel-inverse", "canonical-baseline", "residual"),
                    default="fresnel-inverse")
    sp.add_argument("--aoi", metavar="JSON", help="meta.json or {'theta': [...]} file")
    sp.add_argument("--theta", type=float, help="uniform angle of incidence, radians")
    sp.add_argument("--residual", metavar="DIR", help="r_tilde/t_tilde/xi_perp/xi_par PFMs")
    sp.add_argument("--reference", metavar="IMAGE", help="histogram reference (defaults to obs 0)")
    sp.add_argument("--histmatch", action="store_true")
    sp.add_argument("--allow-singular", action="store_true",
                    help="zero ill-conditioned columns instead of failing")
    sp.add_argument("--n2", type=float, default=1.5, help="refractive index of the glass")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_separate)

    ev = sub.add_parser("eval", help="RMSE/PSNR of predictions against a synth dataset")
    ev.add_argument("predictions")
    ev.add_argument("ground_truth")
    ev.add_argument("--out", help="directory for report.json and report.txt")
    ev.set_defaults(func=cmd_eval)

    hm = sub.add_parser("histmatch", help="match an image's color histogram to a reference")
    hm.add_argument("src")
    hm.add_argument("ref")
    hm.add_argument("--out", required=True, help=".png/.pfm file or a directory")
    hm.set_defaults(func=cmd_histmatch)
    return p


def _setup_logging() -> None:
    level = os.environ.get("POLARSEP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SingularityError as exc:
        log.error("%s", exc)
        print(f"polarsep: singular geometry: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, GeometryConfigError) as exc:
        print(f"polarsep: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ImageError) as exc:
        print(f"polarsep: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
