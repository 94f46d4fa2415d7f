"""Command-line entry points: synth, train, track, compare.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 numerical failure.
"""

import argparse
import logging
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from facecascade import __version__, kernels
from facecascade.cascade import CascadeModel, TrainReport, track_frame, train_cascade
from facecascade.dataset import read_manifest, read_sequence, read_training_set, sequence_dirs, write_dataset
from facecascade.errors import DimensionError, FaceCascadeError
from facecascade.fileio import staged_directory, write_csv, write_json
from facecascade.init_fit import FitConfig, fit_first_frame
from facecascade.metrics import normalized_landmark_error
from facecascade.modelio import load_model, save_model
from facecascade.runconfig import RunConfig, apply_pairs, load_config
from facecascade.shape_model import Camera, landmark_positions
from facecascade.synthscene import make_toy_model

log = logging.getLogger("facecascade")

TRAIN_METRICS_HEADER = ["stage", "train_rmse", "extract_seconds", "modular_seconds", "fusion_seconds",
                        "objective_before_fusion", "objective_after_fusion"]


# ------------------------------------------------------------------ helpers


def dataset_config(config: RunConfig, manifest: dict) -> RunConfig:
    """``config`` with the toy-model and render settings the dataset was made with."""
    pairs = []
    for key, value in manifest["config"].items():
        if key.startswith(("toy.", "render.")):
            pairs.append((key, " ".join(map(str, value)) if isinstance(value, list) else str(value)))
    return apply_pairs(config, pairs).validate()


def train_metrics_rows(report: TrainReport):
    rows = [[0, report.stage_rmse[0], "", "", "", "", ""]]
    fused = bool(report.objective_after_fusion)
    for t in range(len(report.stage_rmse) - 1):
        rows.append([
            t + 1, report.stage_rmse[t + 1], report.extract_seconds[t], report.modular_seconds[t],
            report.fusion_seconds[t],
            report.objective_before_fusion[t] if fused else "",
            report.objective_after_fusion[t] if fused else "",
        ])
    return rows


def train_on_dataset(config: RunConfig, dataset, mode: str = None):
    """Train a cascade on a dataset's training frames; returns ``(model, report)``."""
    images, truth, alphas, manifest = read_training_set(dataset)
    config = dataset_config(config, manifest)
    face = make_toy_model(config.toy)
    camera = Camera.for_image(images.shape[2], images.shape[1])
    return train_cascade(images, truth, alphas, face.model, camera, config.cascade_config(mode))


@dataclass
class TrackResult:
    motion: np.ndarray  # (T, dim)
    alpha: np.ndarray
    errors: np.ndarray  # (T,), NaN without ground truth
    fps: float
    fit_seconds: float
    energy_trace: list = field(default_factory=list)

    @property
    def mean_error(self) -> float:
        return float(np.nanmean(self.errors)) if np.isfinite(self.errors).any() else float("nan")


def track_sequence(cascade: CascadeModel, seq, fit_config: FitConfig = FitConfig(), sigma=None) -> TrackResult:
    """Fit frame 0 to its detected landmarks, then regress every later frame."""
    model = cascade.shape_model
    h, w = seq.frames.shape[1:]
    cam = cascade.camera
    if (cam.u0, cam.v0) != (w / 2.0, h / 2.0):
        raise DimensionError(f"model was trained on {int(2 * cam.u0)}x{int(2 * cam.v0)} frames, sequence is {w}x{h}")
    if seq.first_landmarks.shape != (model.n_landmarks, 2):
        raise DimensionError(f"sequence has {seq.first_landmarks.shape[0]} landmarks, model expects {model.n_landmarks}")
    t0 = time.perf_counter()
    fit = fit_first_frame(seq.first_landmarks, model, cam, fit_config, sigma=sigma)
    t1 = time.perf_counter()
    motion = np.empty((len(seq), cascade.motion_layout.dim))
    motion[0] = fit.motion_vector()
    for k in range(1, len(seq)):
        motion[k] = track_frame(seq.frames[k], motion[k - 1], fit.alpha, cascade)
    t2 = time.perf_counter()
    fps = (len(seq) - 1) / (t2 - t1) if len(seq) > 1 else float("nan")
    errors = np.full(len(seq), np.nan)
    if seq.truth is not None and seq.alpha is not None:
        if seq.truth.shape[1] != motion.shape[1]:
            raise DimensionError(f"ground truth has {seq.truth.shape[1]} columns, model motion has {motion.shape[1]}")
        for k in range(len(seq)):
            pred = landmark_positions(model, fit.alpha, cam, motion[k])
            gt = landmark_positions(model, seq.alpha, cam, seq.truth[k])
            errors[k] = float(normalized_landmark_error(pred, gt, model.interocular_pair))
    return TrackResult(motion, fit.alpha, errors, fps, t1 - t0, fit.energy_trace)


def _identity_sigma(config: RunConfig):
    return make_toy_model(config.toy).identity_sigma


# ----------------------------------------------------------------- commands


def cmd_synth(config: RunConfig, out) -> dict:
    manifest = write_dataset(config, out)
    log.info("wrote %d training frames and %d sequences to %s", manifest["train"]["frames"],
             len(manifest["sequences"]), out)
    return manifest


def cmd_train(config: RunConfig, dataset, out, mode: str = None):
    mode = mode or config.mode
    cascade, report = train_on_dataset(config, dataset, mode)
    with staged_directory(out) as tmp:
        save_model(cascade, tmp / "model.fcm")
        write_csv(tmp / "train_metrics.csv", TRAIN_METRICS_HEADER, train_metrics_rows(report))
        write_json(tmp / "manifest.json", {
            "command": "train",
            "dataset": str(dataset),
            "mode": mode,
            "seed": report.seed,
            "threads": report.threads,
            "samples": report.n_samples,
            "stages": len(cascade.stages),
            "final_train_rmse": report.stage_rmse[-1],
            "backend": kernels.BACKEND,
        })
    return cascade, report


def cmd_track(config: RunConfig, model_path, sequence, out) -> TrackResult:
    cascade = load_model(model_path)
    seq = read_sequence(sequence)
    sigma = _identity_sigma(config) if config.toy.m_id == cascade.shape_model.m_id else None
    result = track_sequence(cascade, seq, config.fit, sigma)
    dim = result.motion.shape[1]
    rows = [[k, "" if np.isnan(result.errors[k]) else result.errors[k], *result.motion[k]]
            for k in range(len(seq))]
    with staged_directory(out) as tmp:
        write_csv(tmp / "track.csv", ["frame", "error", *[f"p{i}" for i in range(dim)]], rows)
        write_json(tmp / "manifest.json", {
            "command": "track",
            "model": str(model_path),
            "sequence": str(sequence),
            "seed": config.seed,
            "frames": len(seq),
            "frames_per_second": result.fps,
            "first_frame_fit_seconds": result.fit_seconds,
            "mean_error": result.mean_error,
            "first_frame_energy": result.energy_trace,
        })
    return result


def _column_names(modes):
    names, seen = [], {}
    for m in modes:
        seen[m] = seen.get(m, 0) + 1
        names.append(m if seen[m] == 1 else f"{m}_{seen[m]}")
    return names


def compare_modes(config: RunConfig, dataset, modes=("gombf", "monolithic")) -> dict:
    """Train each mode with the same seed and budgets, then track every sequence."""
    manifest = read_manifest(dataset)
    if len(manifest["sequences"]) < 2:
        raise FaceCascadeError(f"{dataset}: comparison needs at least two sequences")
    seqs = [read_sequence(d) for d in sequence_dirs(dataset)]
    sigma = _identity_sigma(dataset_config(config, manifest))
    names = _column_names(modes)
    out = {"names": names, "modes": list(modes), "sequences": [s.name for s in seqs], "errors": {},
           "curves": {}, "timings": {}, "threads": config.threads, "seed": config.seed, "fps": {}}
    for name, mode in zip(names, modes):
        cascade, report = train_on_dataset(config, dataset, mode)
        results = [track_sequence(cascade, s, config.fit, sigma) for s in seqs]
        out["errors"][name] = [r.mean_error for r in results]
        out["fps"][name] = float(np.mean([r.fps for r in results]))
        out["curves"][name] = list(report.stage_rmse)
        out["timings"][name] = [(report.modular_seconds[t], report.fusion_seconds[t])
                                for t in range(len(report.modular_seconds))]
    return out


def cmd_compare(config: RunConfig, dataset, out, modes=("gombf", "monolithic")) -> dict:
    result = compare_modes(config, dataset, modes)
    names = result["names"]
    with staged_directory(out) as tmp:
        write_csv(tmp / "comparison.csv", ["sequence", *[f"error_{n}" for n in names]],
                  [[s, *[result["errors"][n][i] for n in names]] for i, s in enumerate(result["sequences"])])
        n_stages = len(result["curves"][names[0]])
        write_csv(tmp / "training_curves.csv", ["stage", *[f"rmse_{n}" for n in names]],
                  [[t, *[result["curves"][n][t] for n in names]] for t in range(n_stages)])
        rows = []
        for n, mode in zip(names, result["modes"]):
            for t, (mod, fus) in enumerate(result["timings"][n]):
                rows.append([n, mode, t + 1, result["threads"], mod, fus, mod + fus])
        write_csv(tmp / "timings.csv",
                  ["label", "mode", "stage", "threads", "modular_seconds", "fusion_seconds", "stage_seconds"], rows)
        summary = {"command": "compare", "dataset": str(dataset), "seed": result["seed"],
                   "threads": result["threads"], "modes": result["modes"], "labels": names,
                   "frames_per_second": result["fps"],
                   "mean_error": {n: float(np.mean(result["errors"][n])) for n in names}}
        if len(names) == 2:
            a, b = names
            summary[f"sequences_{a}_not_worse"] = int(sum(x <= y for x, y in zip(result["errors"][a],
                                                                                 result["errors"][b])))
        write_json(tmp / "manifest.json", summary)
    return result


# --------------------------------------------------------------------- main


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p, mode=True):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config file)")
    p.add_argument("--threads", type=int, help="worker threads for training")
    if mode:
        p.add_argument("--mode", help="gombf or monolithic")
    p.add_argument("--out", required=True, help="output directory")


def build_parser():
    parser = _Parser(prog="facecascade", description="Train and evaluate boosted-ferns face trackers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p, mode=False)
    p = sub.add_parser("train", help="train a cascade on a dataset")
    p.add_argument("dataset")
    _add_common(p)
    p = sub.add_parser("track", help="track a sequence with a trained model")
    p.add_argument("model")
    p.add_argument("sequence")
    _add_common(p, mode=False)
    p = sub.add_parser("compare", help="train both modes and compare them on every sequence")
    p.add_argument("dataset")
    _add_common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    overrides = {"seed": args.seed, "threads": args.threads}
    modes = None
    if args.verb in ("train", "compare") and args.mode:
        modes = [m.strip() for m in args.mode.split(",") if m.strip()]
        if args.verb == "train":
            if len(modes) != 1:
                print("facecascade: error: train takes a single --mode", file=sys.stderr)
                return 1
            overrides["mode"] = modes[0]
        else:
            for m in modes:
                if m not in ("gombf", "monolithic"):
                    print(f"facecascade: error: unknown mode {m!r}", file=sys.stderr)
                    return 1
    try:
        config = load_config(args.config, overrides)
        if args.verb == "synth":
            cmd_synth(config, args.out)
        elif args.verb == "train":
            cmd_train(config, args.dataset, args.out)
        elif args.verb == "track":
            result = cmd_track(config, args.model, args.sequence, args.out)
            print(f"tracked {len(result.errors)} frames at {result.fps:.1f} frames/s, "
                  f"mean error {result.mean_error:.5f}")
        else:
            result = cmd_compare(config, args.dataset, args.out, tuple(modes or ("gombf", "monolithic")))
            for n in result["names"]:
                print(f"{n}: mean error {np.mean(result['errors'][n]):.5f}")
    except FaceCascadeError as exc:
        print(f"facecascade: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"facecascade: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
