"""Command-line entry point: simulate, train, eval, track, report.

Every command takes ``--config`` (JSON run configuration, see
`trajsot.config`) plus flag overrides; flags win over file values. Output
locations default to ``--out``, then the ``TRAJSOT_OUT`` environment
variable, then the current directory. All outputs are tab-separated text
with a header row; identical inputs and seeds reproduce identical bytes.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_run_config, override
from .datasim import (
    ScenarioConfig,
    generate_scenario,
    load_dataset,
    mark_occlusions,
    mirror_sequence,
    save_dataset,
    windows,
)
from .imm import IMMModel
from .metrics import aggregate_reports
from .pipeline import TRACE_COLUMNS, track_sequence, write_trace
from .training import augment_short_histories, train, write_loss_log

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

SPEED_MULTS = (0.6, 0.8, 1.0, 1.2, 1.4)
TURN_MULTS = (1.0, -1.0, 0.5, -0.5, 1.5, -1.5)

GATE_HIST_BINS = 20


def _derived_seed(*key) -> int:
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def _scenario_mix(sim, group: int, group_name: str, count: int):
    """Deterministic list of scenario configs cycling kinds, speeds, and turns."""
    kinds = sim.kinds
    nk = len(kinds)
    duration = sim.duration if group == 0 else (sim.val_duration or sim.duration)
    out = []
    for i in range(count):
        kind = kinds[i % nk]
        speed = sim.speed * SPEED_MULTS[(i // nk) % len(SPEED_MULTS)]
        turn_rate = sim.turn_rate * TURN_MULTS[(i // (nk * len(SPEED_MULTS))) % len(TURN_MULTS)]
        cfg = ScenarioConfig(
            kind=kind,
            duration=duration,
            dt=sim.dt,
            speed=speed,
            turn_rate=turn_rate if kind == "turn" else sim.turn_rate,
            noise_sigma=sim.noise_sigma,
            seed=_derived_seed(sim.seed, group, i),
        )
        out.append((f"{group_name}-{i:05d}-{kind}", cfg))
    return out


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("TRAJSOT_OUT") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    updates = {}
    if getattr(args, "base_tracker", None) is not None:
        updates["tracker.variant"] = args.base_tracker
    if getattr(args, "lambda_gate", None) is not None:
        updates["refine.iou_threshold"] = args.lambda_gate
    if getattr(args, "k_samples", None) is not None:
        updates["k_samples"] = args.k_samples
    if getattr(args, "threads", None) is not None:
        updates["threads"] = args.threads
    if getattr(args, "seed", None) is not None:
        updates["train.seed"] = args.seed
        updates["sim.seed"] = args.seed
    return override(cfg, **updates)


def _eval_seed(args, run: RunConfig) -> int:
    return args.seed if args.seed is not None else run.train.seed


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    run = _load_config(args)
    out = _out_dir(args)
    train_recs = [generate_scenario(cfg, sid) for sid, cfg in _scenario_mix(run.sim, 0, "train", run.sim.n_train)]
    val_recs = [generate_scenario(cfg, sid) for sid, cfg in _scenario_mix(run.sim, 1, "val", run.sim.n_val)]
    save_dataset(train_recs, out / "train.jsonl")
    save_dataset(val_recs, out / "val.jsonl")
    print(f"wrote {len(train_recs)} train sequences to {out / 'train.jsonl'}")
    print(f"wrote {len(val_recs)} val sequences to {out / 'val.jsonl'}")
    return EXIT_OK


def build_training_pairs(records, run: RunConfig):
    """Windows (plus configured augmentation) from a list of sequences."""
    if run.mirror_augment:
        records = list(records) + [mirror_sequence(r) for r in records]
    pairs = []
    for seq in records:
        pairs.extend(windows(seq, run.model.history_len, run.model.future_len, run.window_stride))
    if run.short_history_fraction > 0:
        rng = np.random.default_rng(_derived_seed(run.train.seed, "short-history"))
        pairs = augment_short_histories(pairs, run.short_history_fraction, rng)
    return pairs


def cmd_train(args) -> int:
    run = _load_config(args)
    out = _out_dir(args)
    records = load_dataset(args.data)
    pairs = build_training_pairs(records, run)
    if not pairs:
        raise ConfigError(
            f"dataset {args.data} yields no training windows for "
            f"history_len={run.model.history_len}, future_len={run.model.future_len}"
        )
    model = IMMModel(run.model, seed=run.train.seed)
    log = train(pairs, model, run.train)
    model.save(out / "model.txt")
    write_loss_log(log, out / "loss_log.tsv")
    first, last = log[0], log[-1]
    print(f"trained on {len(pairs)} windows for {run.train.epochs} epochs")
    print(f"epoch 1 mean elbo {first[1]:.4f} -> epoch {last[0]} mean elbo {last[1]:.4f}")
    print(f"wrote {out / 'model.txt'} and {out / 'loss_log.tsv'}")
    return EXIT_OK


def _track_all(sequences, tracker, model, refine_cfg, master_seed, k_samples, threads):
    def one(item):
        idx, seq = item
        return track_sequence(
            seq, tracker, model, refine_cfg,
            seed=np.random.SeedSequence((master_seed, idx)), k_samples=k_samples,
        )

    items = list(enumerate(sequences))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, items))
    return [one(item) for item in items]


def _write_traces(path, sequences, results) -> None:
    with open(path, "w") as fh:
        first = True
        for seq, (report, outputs) in zip(sequences, results):
            write_trace(fh, seq.sequence_id, report, outputs, header=first)
            first = False
        if first:
            fh.write("\t".join(TRACE_COLUMNS) + "\n")


def cmd_eval(args) -> int:
    run = _load_config(args)
    out = _out_dir(args)
    sequences = load_dataset(args.data)
    if not sequences:
        raise ConfigError(f"dataset {args.data} holds no sequences")
    model = IMMModel.load(args.model) if args.model else None
    seed = _eval_seed(args, run)

    base = _track_all(sequences, run.tracker, None, run.refine, seed, run.k_samples, run.threads)
    _write_traces(out / "traces_baseline.tsv", sequences, base)
    refined = None
    if model is not None:
        refined = _track_all(sequences, run.tracker, model, run.refine, seed, run.k_samples, run.threads)
        _write_traces(out / "traces_refined.tsv", sequences, refined)

    with open(out / "comparison.tsv", "w") as fh:
        cols = ["sequence_id", "n_frames", "success_base", "precision_base"]
        if refined is not None:
            cols += ["success_refined", "precision_refined", "delta_success", "delta_precision"]
        fh.write("\t".join(cols) + "\n")

        def row(name, frames, sb, pb, sr=None, pr=None):
            cells = [name, str(frames), repr(sb), repr(pb)]
            if refined is not None:
                cells += [repr(sr), repr(pr), repr(sr - sb), repr(pr - pb)]
            fh.write("\t".join(cells) + "\n")

        for i, seq in enumerate(sequences):
            br = base[i][0]
            if refined is not None:
                rr = refined[i][0]
                row(seq.sequence_id, len(br.frames), br.success, br.precision, rr.success, rr.precision)
            else:
                row(seq.sequence_id, len(br.frames), br.success, br.precision)
        sb, pb = aggregate_reports([r for r, _ in base])
        total_frames = sum(len(r.frames) for r, _ in base)
        if refined is not None:
            sr, pr = aggregate_reports([r for r, _ in refined])
            row("MEAN", total_frames, sb, pb, sr, pr)
            print(f"baseline success/precision: {sb:.2f} / {pb:.2f}")
            print(f"refined  success/precision: {sr:.2f} / {pr:.2f}  (delta {sr - sb:+.2f} / {pr - pb:+.2f})")
        else:
            row("MEAN", total_frames, sb, pb)
            print(f"baseline success/precision: {sb:.2f} / {pb:.2f}")
    print(f"wrote {out / 'comparison.tsv'}")
    return EXIT_OK


def cmd_track(args) -> int:
    run = _load_config(args)
    out = _out_dir(args)
    sequences = load_dataset(args.data)
    if not sequences:
        raise ConfigError(f"dataset {args.data} holds no sequences")
    if args.sequence:
        match = [s for s in sequences if s.sequence_id == args.sequence]
        if not match:
            raise ConfigError(f"sequence {args.sequence!r} not found in {args.data}")
        seq = match[0]
    else:
        seq = sequences[0]
    model = IMMModel.load(args.model) if args.model else None
    report, outputs = track_sequence(
        seq, run.tracker, model, run.refine,
        seed=np.random.SeedSequence((_eval_seed(args, run), 0)), k_samples=run.k_samples,
    )
    trace_path = out / f"trace_{seq.sequence_id}.tsv"
    with open(trace_path, "w") as fh:
        write_trace(fh, seq.sequence_id, report, outputs, header=True)
    print(f"{seq.sequence_id}: success {report.success:.2f} precision {report.precision:.2f}")
    print(f"wrote {trace_path}")
    return EXIT_OK


def _read_gate_values(paths):
    values = []
    for path in paths:
        with open(path) as fh:
            header = fh.readline().rstrip("\n").split("\t")
            if "gate_iou" not in header:
                raise ConfigError(f"{path}: no gate_iou column in header")
            col = header.index("gate_iou")
            for line in fh:
                cells = line.rstrip("\n").split("\t")
                if len(cells) <= col:
                    raise ConfigError(f"{path}: malformed trace row")
                if cells[col] != "NA":
                    values.append(float(cells[col]))
    return values


def cmd_report(args) -> int:
    run = _load_config(args)
    out = _out_dir(args)

    gate_values = _read_gate_values(args.traces)
    with open(out / "gate_hist.tsv", "w") as fh:
        fh.write("bin_lo\tbin_hi\tcount\n")
        if gate_values:
            edges = np.linspace(0.0, 1.0, GATE_HIST_BINS + 1)
            idx = np.clip((np.array(gate_values) * GATE_HIST_BINS).astype(int), 0, GATE_HIST_BINS - 1)
            counts = np.bincount(idx, minlength=GATE_HIST_BINS)
            for b in range(GATE_HIST_BINS):
                fh.write(f"{edges[b]!r}\t{edges[b + 1]!r}\t{counts[b]}\n")

    with open(out / "occlusion_curve.tsv", "w") as fh:
        fh.write("occlusion_rate\tsuccess_base\tprecision_base\tsuccess_refined\tprecision_refined\n")
        if args.data:
            sequences = load_dataset(args.data)
            model = IMMModel.load(args.model) if args.model else None
            rates = [float(r) for r in args.rates.split(",")] if args.rates else [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
            seed = _eval_seed(args, run)
            for ri, rate in enumerate(rates):
                marked = [
                    mark_occlusions(seq, rate, args.burst_len, _derived_seed(seed, ri, i))
                    for i, seq in enumerate(sequences)
                ]
                base = _track_all(marked, run.tracker, None, run.refine, seed, run.k_samples, run.threads)
                sb, pb = aggregate_reports([r for r, _ in base])
                if model is not None:
                    ref = _track_all(marked, run.tracker, model, run.refine, seed, run.k_samples, run.threads)
                    sr, pr = aggregate_reports([r for r, _ in ref])
                    fh.write(f"{rate!r}\t{sb!r}\t{pb!r}\t{sr!r}\t{pr!r}\n")
                else:
                    fh.write(f"{rate!r}\t{sb!r}\t{pb!r}\tNA\tNA\n")

    print(f"wrote {out / 'gate_hist.tsv'} ({len(gate_values)} gated rows)")
    print(f"wrote {out / 'occlusion_curve.tsv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajsot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, model=False):
        p.add_argument("--config", help="JSON run configuration file")
        p.add_argument("--out", help="output directory (default: $TRAJSOT_OUT or .)")
        p.add_argument("--seed", type=int, help="master seed override")
        if data:
            p.add_argument("--data", required=True, help="dataset file (JSON lines)")
        if model:
            p.add_argument("--model", help="model checkpoint file")
        p.add_argument("--base-tracker", choices=("cv", "oracle"), help="base tracker override")
        p.add_argument("--lambda-gate", type=float, help="refinement IoU threshold override")
        p.add_argument("--k-samples", type=int, help="trajectory samples per prediction (1 = deterministic)")
        p.add_argument("--threads", type=int, help="parallel sequence evaluation threads")

    common(sub.add_parser("simulate", help="generate train/val datasets"))
    common(sub.add_parser("train", help="train the motion model"), data=True)
    common(sub.add_parser("eval", help="paired baseline/refined evaluation"), data=True, model=True)
    p_track = sub.add_parser("track", help="run one sequence and dump its trace")
    common(p_track, data=True, model=True)
    p_track.add_argument("--sequence", help="sequence id (default: first in the dataset)")
    p_report = sub.add_parser("report", help="gate histogram and occlusion-rate curves")
    common(p_report, model=True)
    p_report.add_argument("--traces", nargs="+", required=True, help="trace files from eval/track")
    p_report.add_argument("--data", help="validation dataset for the occlusion-rate sweep")
    p_report.add_argument("--rates", help="comma-separated occlusion rates (default 0..0.5)")
    p_report.add_argument("--burst-len", type=int, default=3, help="occlusion burst length in frames")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "track": cmd_track,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
