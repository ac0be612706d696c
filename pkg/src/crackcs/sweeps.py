"""Experiment runners: CR/noise sweeps, restart and correlation studies,
blur and occlusion removal, timing aggregation, and CSV reports.

Every cell's randomness (measurement matrix, noise, restarts) is derived
up front from the experiment seed, so serial and parallel schedules would
emit identical row contents; rows are written per image group and flushed.
Wall-time columns are the one intentionally non-reproducible field.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import pngio
from .baselines import BaselineConfig, solve
from .corpus import load_corpus
from .modelfile import load_model
from .operators import CompressionOperator, BlurOperator, OcclusionOperator, NoiseModel, degrade
from .recovery import RecoveryConfig, recover
from .rng import Prng, derive_seed
from .segmentation import SegmenterParams, confusion, metrics, segment

log = logging.getLogger("crackcs")

RESULT_HEADER = (
    "image_id,method,operator_kind,cr,nl,k_or_lambda1,restarts,"
    "L_min,accuracy,precision,recall,f1,wall_time_seconds,seed"
)


def _fmt(value):
    if value is None or value == "":
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class CsvWriter:
    """Append-only CSV written in flushed row groups."""

    def __init__(self, path, header):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")
        self._fh.write(header + "\n")
        self._fh.flush()

    def write_rows(self, rows):
        block = "".join(",".join(_fmt(v) for v in row) + "\n" for row in rows)
        self._fh.write(block)
        self._fh.flush()

    def write_comment(self, text):
        self._fh.write(f"# {text}\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_rows(path):
    """Rows of a report CSV as string lists (comments and header skipped)."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line
                continue
            rows.append(line.split(","))
    return rows


def rows_equal_ignoring_walltime(path_a, path_b, header=RESULT_HEADER):
    """Byte equality of two result CSVs except the wall-time column."""
    wall_idx = header.split(",").index("wall_time_seconds")
    rows_a, rows_b = read_rows(path_a), read_rows(path_b)
    if len(rows_a) != len(rows_b):
        return False
    for a, b in zip(rows_a, rows_b):
        a = a[:wall_idx] + a[wall_idx + 1:]
        b = b[:wall_idx] + b[wall_idx + 1:]
        if a != b:
            return False
    return True


@dataclass
class RunContext:
    config: dict
    corpus: object
    generator: object
    seg_params: SegmenterParams
    out_dir: str
    train_seconds: float = 0.0


def make_context(config):
    corpus = load_corpus(config["corpus_dir"])
    generator = None
    train_seconds = 0.0
    if "gan" in config["methods"]:
        if not config["model_file"]:
            raise ValueError("methods include 'gan' but no model_file configured")
        bundle = load_model(config["model_file"])
        generator = bundle.generator
        generator.net.set_mode("infer")
        train_seconds = float(bundle.metadata.get("train_seconds", 0.0))
    if corpus.config.channels != 1:
        non_gan = [m for m in config["methods"] if m != "gan"]
        if non_gan:
            raise ValueError(f"baselines {non_gan} are grayscale only; corpus has 3 channels")
    seg = SegmenterParams(
        window=config["segmenter_window"],
        tau=config["segmenter_tau"],
        min_area=config["segmenter_min_area"],
        closing_radius=config["segmenter_closing"],
    )
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    handler_paths = {getattr(h, "baseFilename", None) for h in log.handlers}
    log_path = os.path.abspath(os.path.join(out_dir, "run.log"))
    if log_path not in handler_paths:
        handler = logging.FileHandler(log_path)
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
    return RunContext(
        config=config,
        corpus=corpus,
        generator=generator,
        seg_params=seg,
        out_dir=out_dir,
        train_seconds=train_seconds,
    )


def _validation_samples(ctx):
    samples = ctx.corpus.validation
    limit = ctx.config["max_images"]
    return samples[:limit] if limit else samples


def _recovery_config(ctx, restarts, seed, record_trace=False):
    return RecoveryConfig(
        lam=ctx.config["recovery_lambda"],
        iterations=ctx.config["recovery_iterations"],
        restarts=restarts,
        learning_rate=ctx.config["recovery_lr"],
        seed=seed,
        record_trace=record_trace,
    )


def _baseline_config(ctx, n, m):
    k = min(int(np.ceil(ctx.config["k_fraction"] * n)), max(1, m // 2))
    return BaselineConfig(
        sparsity=k, l1_weight=ctx.config["lambda1"], iterations=ctx.config["ista_iterations"]
    )


def _score_reconstruction(ctx, image, mask):
    report = metrics(confusion(segment(image, ctx.seg_params), mask))
    return report


def _compression_cell(ctx, image_idx, sample, cr, nl):
    """Shared measurement for every method at one (image, cr, nl) cell."""
    master = ctx.config["seed"]
    cr_code = int(round(cr * 1000))
    image_shape = sample.image.shape
    op = CompressionOperator(image_shape, cr=cr, seed=derive_seed(master, "A", image_idx, cr_code))
    noise_prng = Prng(derive_seed(master, "noise", image_idx, cr_code))
    y = degrade(op, sample.image, NoiseModel(level=nl), noise_prng)
    return op, y


def _run_methods_on_cell(ctx, image_idx, sample, cr, nl):
    """One ResultRow per configured method; shared y per cell."""
    op, y = _compression_cell(ctx, image_idx, sample, cr, nl)
    master = ctx.config["seed"]
    cr_code = int(round(cr * 1000))
    nl_code = int(round(nl * 10000))
    rows = []
    recons = {}
    for method in ctx.config["methods"]:
        started = time.perf_counter()
        if method == "gan":
            seed = derive_seed(master, "recover", image_idx, cr_code, nl_code)
            cfg = _recovery_config(ctx, ctx.config["restarts"], seed)
            result = recover(ctx.generator, op, y, cfg)
            recon = result.reconstruction
            loss_min = result.loss_min
            k_or_lambda1 = ""
            restarts = cfg.restarts
        else:
            seed = op.seed
            bcfg = _baseline_config(ctx, op.n, op.m)
            recon, _, loss_min = solve(method, op, y, bcfg)
            k_or_lambda1 = bcfg.l1_weight if method == "ista" else bcfg.effective_sparsity(op.n, op.m)
            restarts = ""
        wall = time.perf_counter() - started
        report = _score_reconstruction(ctx, recon, sample.mask)
        recons[method] = recon
        rows.append(
            (
                image_idx,
                method,
                "compression",
                float(cr),
                float(nl),
                k_or_lambda1,
                restarts,
                float(loss_min),
                report.accuracy,
                report.precision,
                report.recall,
                report.f1,
                wall,
                seed,
            )
        )
    return rows, recons


def _write_summary(path, rows, header_cols):
    """Box-plot five-number summaries of f1 and accuracy per method x cr/nl."""
    groups = {}
    hdr = RESULT_HEADER.split(",")
    for row in rows:
        key = tuple(row[hdr.index(c)] for c in header_cols)
        groups.setdefault(key, {"f1": [], "accuracy": []})
        groups[key]["f1"].append(row[hdr.index("f1")])
        groups[key]["accuracy"].append(row[hdr.index("accuracy")])
    writer = CsvWriter(
        path,
        ",".join(header_cols)
        + ",metric,min,q1,median,q3,max",
    )
    out_rows = []
    for key in sorted(groups, key=lambda k: tuple(str(v) for v in k)):
        for metric_name in ("f1", "accuracy"):
            values = np.asarray(groups[key][metric_name], dtype=np.float64)
            q = np.percentile(values, [0, 25, 50, 75, 100])
            out_rows.append(tuple(key) + (metric_name,) + tuple(float(v) for v in q))
    writer.write_rows(out_rows)
    writer.close()


def _cell_mosaic(ctx, path_base, per_image):
    """Mosaic with one row per image: original then each method's output."""
    if not per_image:
        return
    grid, labels = [], []
    for image_idx, sample, recons in per_image[: ctx.config["mosaic_images"]]:
        row = [sample.image] + [recons[m] for m in sorted(recons)]
        grid.append(row)
        labels.append([f"image {image_idx} original"] + [f"image {image_idx} {m}" for m in sorted(recons)])
    pngio.write_mosaic(path_base + ".png", grid, path_base + ".txt", labels)


def _sweep(ctx, nl_values, rows_name, summary_cols):
    writer = CsvWriter(os.path.join(ctx.out_dir, rows_name), RESULT_HEADER)
    all_rows, failures = [], []
    samples = _validation_samples(ctx)
    mosaics = {}
    for image_idx, sample in enumerate(samples):
        group = []
        for cr in ctx.config["cr_list"]:
            for nl in nl_values:
                try:
                    rows, recons = _run_methods_on_cell(ctx, image_idx, sample, cr, nl)
                except Exception as exc:  # noqa: BLE001 - per-image isolation
                    log.warning(
                        "sweep cell failed: image=%s cr=%s nl=%s: %r", image_idx, cr, nl, exc
                    )
                    failures.append((image_idx, cr, nl, repr(exc)))
                    continue
                group.extend(rows)
                if nl == nl_values[0]:
                    mosaics.setdefault(cr, []).append((image_idx, sample, recons))
        writer.write_rows(group)
        all_rows.extend(group)
    writer.close()
    _write_summary(
        os.path.join(ctx.out_dir, rows_name.replace(".csv", "_summary.csv")), all_rows, summary_cols
    )
    if ctx.config["write_mosaics"]:
        for cr, per_image in mosaics.items():
            base = os.path.join(ctx.out_dir, rows_name.replace(".csv", f"_mosaic_cr{cr:g}"))
            _cell_mosaic(ctx, base, per_image)
    return all_rows, failures


def run_cr_sweep(ctx):
    """Degrade/recover/segment/score across the configured CR grid (NL = 0)."""
    return _sweep(ctx, [0.0], "cr_sweep.csv", ["method", "cr"])


def run_noise_sweep(ctx):
    """CR grid crossed with the configured noise levels."""
    return _sweep(ctx, list(ctx.config["nl_list"]), "noise_sweep.csv", ["method", "cr", "nl"])


RESTART_HEADER = "image_id,cr,k,L_min,accuracy,f1,seed"


def run_restart_study(ctx):
    """Best-of-k metrics for k = 1..restarts on the first study images."""
    if ctx.generator is None:
        raise ValueError("restart study requires a trained generator")
    samples = ctx.corpus.validation[: ctx.config["restart_study_images"]]
    writer = CsvWriter(os.path.join(ctx.out_dir, "restart_study.csv"), RESTART_HEADER)
    master = ctx.config["seed"]
    all_rows, failures = [], []
    for image_idx, sample in enumerate(samples):
        group = []
        for cr in ctx.config["restart_study_crs"]:
            try:
                op, y = _compression_cell(ctx, image_idx, sample, cr, 0.0)
                seed = derive_seed(master, "restart-study", image_idx, int(round(cr * 1000)))
                cfg = _recovery_config(ctx, ctx.config["restarts"], seed)
                result = recover(ctx.generator, op, y, cfg)
                losses = np.asarray(result.per_restart_losses)
                f1s, accs = [], []
                for z in result.per_restart_z:
                    report = _score_reconstruction(ctx, ctx.generator.generate(z)[0], sample.mask)
                    f1s.append(report.f1)
                    accs.append(report.accuracy)
                for k in range(1, len(losses) + 1):
                    pick = int(np.argmin(losses[:k]))
                    group.append(
                        (image_idx, float(cr), k, float(losses[pick]), accs[pick], f1s[pick], seed)
                    )
            except Exception as exc:  # noqa: BLE001
                log.warning("restart study failed: image=%s cr=%s: %r", image_idx, cr, exc)
                failures.append((image_idx, cr, "", repr(exc)))
        writer.write_rows(group)
        all_rows.extend(group)
    writer.close()

    summary = CsvWriter(
        os.path.join(ctx.out_dir, "restart_study_summary.csv"),
        "cr,k,f1_mean,f1_std,accuracy_mean,accuracy_std",
    )
    by_cr_k = {}
    for row in all_rows:
        by_cr_k.setdefault((row[1], row[2]), []).append((row[5], row[4]))
    out = []
    for (cr, k), vals in sorted(by_cr_k.items()):
        f1s = np.asarray([v[0] for v in vals])
        accs = np.asarray([v[1] for v in vals])
        out.append((cr, k, f1s.mean(), f1s.std(), accs.mean(), accs.std()))
    summary.write_rows(out)
    summary.close()
    return all_rows, failures


CORRELATION_HEADER = "restart_index,L_min,accuracy,f1"


def _corr_or_undefined(x, y, func):
    if np.allclose(x, x[0]) or np.allclose(y, y[0]):
        return "undefined"
    value = func(x, y)[0]
    return "undefined" if not np.isfinite(value) else repr(float(value))


def run_loss_correlation(ctx):
    """Loss-vs-quality over many independent restarts of one image."""
    if ctx.generator is None:
        raise ValueError("correlation study requires a trained generator")
    image_idx = ctx.config["correlation_image"]
    sample = ctx.corpus.validation[image_idx]
    cr = ctx.config["correlation_cr"]
    trials = ctx.config["correlation_trials"]
    op, y = _compression_cell(ctx, image_idx, sample, cr, 0.0)
    seed = derive_seed(ctx.config["seed"], "correlation", image_idx, int(round(cr * 1000)))
    cfg = _recovery_config(ctx, trials, seed)
    result = recover(ctx.generator, op, y, cfg)
    writer = CsvWriter(os.path.join(ctx.out_dir, "correlation.csv"), CORRELATION_HEADER)
    rows = []
    for i, z in enumerate(result.per_restart_z):
        report = _score_reconstruction(ctx, ctx.generator.generate(z)[0], sample.mask)
        rows.append((i, result.per_restart_losses[i], report.accuracy, report.f1))
    writer.write_rows(rows)
    losses = np.asarray([r[1] for r in rows])
    accs = np.asarray([r[2] for r in rows])
    f1s = np.asarray([r[3] for r in rows])
    corr = {
        "spearman_loss_f1": _corr_or_undefined(losses, f1s, stats.spearmanr),
        "pearson_loss_f1": _corr_or_undefined(losses, f1s, stats.pearsonr),
        "spearman_loss_accuracy": _corr_or_undefined(losses, accs, stats.spearmanr),
        "pearson_loss_accuracy": _corr_or_undefined(losses, accs, stats.pearsonr),
    }
    for key, value in corr.items():
        writer.write_comment(f"{key} = {value}")
    writer.close()
    return rows, corr


REMOVAL_HEADER = (
    "image_id,operator_kind,parameter,restarts,L_min,"
    "f1_before,f1_after,accuracy_before,accuracy_after,wall_time_seconds,seed"
)


def _principal_axis_degrees(mask):
    """Orientation of the mask's principal axis, degrees from the x axis."""
    ys, xs = np.nonzero(mask)
    y = ys - ys.mean()
    x = xs - xs.mean()
    cov_xy = float(np.mean(x * y))
    var_x = float(np.mean(x * x))
    var_y = float(np.mean(y * y))
    return float(np.degrees(0.5 * np.arctan2(2.0 * cov_xy, var_x - var_y)))


def _removal_study(ctx, kind, build_operator, restarts, rows_name):
    if ctx.generator is None:
        raise ValueError(f"{kind} study requires a trained generator")
    writer = CsvWriter(os.path.join(ctx.out_dir, rows_name), REMOVAL_HEADER)
    samples = _validation_samples(ctx)
    master = ctx.config["seed"]
    all_rows, failures, mosaic_cells = [], [], []
    for image_idx, sample in enumerate(samples):
        try:
            op, parameter = build_operator(image_idx, sample)
            noise_prng = Prng(derive_seed(master, "noise", kind, image_idx))
            y = degrade(op, sample.image, NoiseModel(level=0.0), noise_prng)
            before = _score_reconstruction(ctx, y, sample.mask)
            seed = derive_seed(master, "recover", kind, image_idx)
            cfg = _recovery_config(ctx, restarts, seed)
            started = time.perf_counter()
            result = recover(ctx.generator, op, y, cfg)
            wall = time.perf_counter() - started
            after = _score_reconstruction(ctx, result.reconstruction, sample.mask)
            row = (
                image_idx,
                kind,
                parameter,
                restarts,
                result.loss_min,
                before.f1,
                after.f1,
                before.accuracy,
                after.accuracy,
                wall,
                seed,
            )
            writer.write_rows([row])
            all_rows.append(row)
            display = op.display(sample.image) if kind == "occlusion" else y
            mosaic_cells.append((image_idx, sample, {"degraded": display, "recovered": result.reconstruction}))
        except Exception as exc:  # noqa: BLE001
            log.warning("%s study failed: image=%s: %r", kind, image_idx, exc)
            failures.append((image_idx, "", "", repr(exc)))
    writer.close()

    f1_before = np.asarray([r[5] for r in all_rows])
    f1_after = np.asarray([r[6] for r in all_rows])
    growth = (
        (f1_after.mean() - f1_before.mean()) / f1_before.mean() if f1_before.mean() > 0 else np.inf
    )
    summary = CsvWriter(
        os.path.join(ctx.out_dir, rows_name.replace(".csv", "_summary.csv")),
        "f1_before_mean,f1_before_std,f1_after_mean,f1_after_std,growth_rate",
    )
    summary.write_rows(
        [(f1_before.mean(), f1_before.std(), f1_after.mean(), f1_after.std(), float(growth))]
    )
    summary.close()
    if ctx.config["write_mosaics"]:
        _cell_mosaic(ctx, os.path.join(ctx.out_dir, rows_name.replace(".csv", "_mosaic")), mosaic_cells)
    return all_rows, failures


def run_blur_study(ctx):
    """Motion blur orthogonal to each crack's principal axis, then recovery."""
    degree = ctx.config["blur_degree"]

    def build(image_idx, sample):
        angle = _principal_axis_degrees(sample.mask) + 90.0
        op = BlurOperator(sample.image.shape, direction_degrees=angle, degree=degree)
        return op, f"angle={angle:.1f};degree={degree}"

    return _removal_study(ctx, "blur", build, ctx.config["blur_restarts"], "blur_study.csv")


def run_occlusion_study(ctx):
    """Lens-shaped occlusion at the configured coverage, then recovery."""
    coverage = ctx.config["occlusion_coverage"]
    master = ctx.config["seed"]

    def build(image_idx, sample):
        op = OcclusionOperator(
            sample.image.shape,
            coverage=coverage,
            seed=derive_seed(master, "occlusion-mask", image_idx),
            fill_value=ctx.config["occlusion_fill"],
        )
        return op, f"coverage={coverage:g}"

    return _removal_study(
        ctx, "occlusion", build, ctx.config["occlusion_restarts"], "occlusion_study.csv"
    )


def timing_report(ctx, rows_csvs=None):
    """Mean wall time per method from result rows; training time separate."""
    hdr = RESULT_HEADER.split(",")
    rows_csvs = rows_csvs or [
        os.path.join(ctx.out_dir, name)
        for name in ("cr_sweep.csv", "noise_sweep.csv")
        if os.path.exists(os.path.join(ctx.out_dir, name))
    ]
    per_method = {}
    for path in rows_csvs:
        for row in read_rows(path):
            per_method.setdefault(row[hdr.index("method")], []).append(
                float(row[hdr.index("wall_time_seconds")])
            )
    writer = CsvWriter(
        os.path.join(ctx.out_dir, "timing.csv"), "method,images,mean_wall_time_seconds"
    )
    out = [(m, len(v), float(np.mean(v))) for m, v in sorted(per_method.items())]
    writer.write_rows(out)
    writer.write_comment(f"gan_training_seconds = {ctx.train_seconds!r}")
    writer.close()
    return out


def sort_report(path):
    """Canonicalize a report CSV: stable sort of rows by their string fields."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = lines[0]
    comments = [ln for ln in lines[1:] if ln.startswith("#")]
    rows = [ln for ln in lines[1:] if ln and not ln.startswith("#")]
    rows.sort(key=lambda ln: ln.split(","))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join([header] + rows + comments) + "\n")
