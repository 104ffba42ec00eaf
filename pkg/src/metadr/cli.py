"""Command-line entry point: ``metadr <subcommand> ...``.

Exit status is 0 on success, 2 on usage errors and 1 when a computation or
file operation fails.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import dataset as ds_mod
from . import insight, pipeline
from .dr_design import FullForwardModel, PseudoEncoder, forward_predict, sweep_design_dim, train_pseudo_encoder
from .dr_response import ResponseAutoencoder, sweep_bottleneck, train_response_autoencoder, write_sweep_csv
from .inverse import (
    ConstraintSet,
    DesignModels,
    InverseModel,
    SearchConfig,
    TargetSpec,
    design,
    train_inverse,
    verify_candidates,
)
from .materials import MaterialDb, load_material_db
from .surrogate import LC_NAMES, PARAM_NAMES, WAVELENGTHS_NM, DesignVector, supercell_reflectance

log = logging.getLogger("metadr")

CONFIG_ENV = "METADR_MATERIALS"


class CliError(Exception):
    pass


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _band(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"band must look like 1500:1700, got {text!r}") from None
    return a, b


def _design(text: str) -> DesignVector:
    try:
        return DesignVector.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _existing(text: str) -> Path:
    p = Path(text)
    if not p.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {text}")
    return p


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=1, help="initialization and shuffling seed")
    p.add_argument("--epochs", type=int, default=None, help="override the maximum epoch count")
    p.add_argument("--lr", type=float, default=None, help="override the learning rate")
    p.add_argument("--split-seed", type=int, default=pipeline.SPLIT_SEED)
    p.add_argument("--train-fraction", type=float, default=pipeline.TRAIN_FRACTION)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metadr", description=__doc__.splitlines()[0])
    parser.add_argument("--materials", type=_existing, default=None, help=f"material config file (default: ${CONFIG_ENV})")
    parser.add_argument("--threads", type=int, default=None, help="cap on BLAS threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-data", help="generate a random dataset with the surrogate solver")
    p.add_argument("--n", type=int, default=pipeline.N_INSTANCES)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("simulate", help="reflectance spectrum of one design")
    p.add_argument("--design", type=_design, required=True, help="h,lc1,lc2,lc3,p1,p2,p3,w1,w2,w3")
    p.add_argument("--out", type=Path, default=None, help="CSV path (default: stdout)")

    p = sub.add_parser("train-ae", help="train the response autoencoder")
    p.add_argument("--data", type=_existing, required=True)
    p.add_argument("--layers", type=_ints, default=list(pipeline.AE_LAYERS))
    p.add_argument("--out", type=Path, required=True)
    _add_training_flags(p)

    p = sub.add_parser("sweep-ae", help="validation MSE against autoencoder bottleneck size")
    p.add_argument("--data", type=_existing, required=True)
    p.add_argument("--dims", type=_ints, default=[1, 2, 5, 10, 15, 20])
    p.add_argument("--seeds", type=_ints, default=[1])
    p.add_argument("--layers", type=_ints, default=list(pipeline.AE_LAYERS), help="architecture template")
    p.add_argument("--out", type=Path, required=True)
    _add_training_flags(p)

    p = sub.add_parser("train-pe", help="train a pseudo-encoder against a frozen autoencoder")
    p.add_argument("--data", type=_existing, required=True)
    p.add_argument("--ae", type=_existing, required=True)
    p.add_argument("--layers", type=_ints, default=list(pipeline.PE_LAYERS))
    p.add_argument("--out", type=Path, required=True)
    _add_training_flags(p)

    p = sub.add_parser("sweep-pe", help="forward-model MSE over reduced design and response sizes")
    p.add_argument("--data", type=_existing, required=True)
    p.add_argument("--ae", type=lambda s: [_existing(v) for v in s.split(",")], required=True,
                   help="comma-separated autoencoder files, one per response size")
    p.add_argument("--k", type=_ints, default=[1, 3, 5, 7])
    p.add_argument("--out", type=Path, required=True)
    _add_training_flags(p)

    p = sub.add_parser("train-inverse", help="train the spectrum -> reduced design head")
    p.add_argument("--data", type=_existing, required=True)
    p.add_argument("--ae", type=_existing, required=True)
    p.add_argument("--pe", type=_existing, required=True)
    p.add_argument("--layers", type=_ints, default=list(pipeline.DEFAULT_HEAD))
    p.add_argument("--out", type=Path, required=True)
    _add_training_flags(p)

    p = sub.add_parser("forward", help="predict a spectrum with the cascaded forward model")
    p.add_argument("--pe", type=_existing, required=True)
    p.add_argument("--ae", type=_existing, required=True)
    p.add_argument("--design", type=_design, required=True)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("design", help="inverse design for a target spectrum")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--target", type=_existing, help="CSV of wavelength_nm,reflectance on the standard grid")
    target.add_argument("--target-flat", type=float, help="constant target reflectance")
    p.add_argument("--band", type=_band, default=None, help="scoring band in nm, e.g. 1500:1700")
    p.add_argument("--ae", type=_existing, required=True)
    p.add_argument("--pe", type=_existing, required=True)
    p.add_argument("--inv", type=_existing, required=True)
    p.add_argument("--k", type=int, default=4, help="number of designs to report")
    p.add_argument("--budget", type=int, default=1_000_000)
    p.add_argument("--strategy", choices=("beam", "random", "grid"), default="beam")
    p.add_argument("--resolution", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--constraint", action="append", default=[], help="e.g. h=190, w1>=150, lc1=lc2")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("verify", help="re-simulate designs and rank them against a target")
    p.add_argument("--report", type=_existing, required=True, help="report.json from 'design'")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--target", type=_existing)
    target.add_argument("--target-flat", type=float)
    p.add_argument("--band", type=_band, default=None)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("insight", help="weight-map analysis of a single-layer pseudo-encoder")
    isub = p.add_subparsers(dest="insight_command", metavar="analysis")
    q = isub.add_parser("weights", help="first-layer weights as CSV")
    q.add_argument("--pe", type=_existing, required=True)
    q.add_argument("--out", type=Path, required=True)
    q = isub.add_parser("invariance", help="equal weighted-sum experiment on the surrogate")
    q.add_argument("--pe", type=_existing, required=True)
    q.add_argument("--base", type=_design, required=True)
    q.add_argument("--sums", type=int, default=2, help="number of weighted-sum groups")
    q.add_argument("--sets", type=int, default=3, help="designs per group")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", type=Path, required=True)
    q = isub.add_parser("sweep", help="surrogate spectra while one parameter varies")
    q.add_argument("--param", choices=PARAM_NAMES, required=True)
    q.add_argument("--values", type=_floats, required=True)
    q.add_argument("--base", type=_design, required=True)
    q.add_argument("--out", type=Path, required=True)
    return parser


def config_hash(args: argparse.Namespace) -> str:
    doc = {k: str(v) for k, v in sorted(vars(args).items()) if k != "verbose"}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _materials(args) -> MaterialDb:
    path = args.materials or os.environ.get(CONFIG_ENV)
    if path:
        if not Path(path).is_file():
            raise CliError(f"material config {path} does not exist")
        return load_material_db(path)
    return MaterialDb()


def _split(args):
    data = ds_mod.load(args.data)
    return ds_mod.split(data, args.train_fraction, args.split_seed)


def _train_cfg(base, args):
    return pipeline.train_config(base, seed=args.seed, max_epochs=args.epochs, learning_rate=args.lr)


def _write_spectrum(spectrum: np.ndarray, out: Path | None) -> None:
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavelength_nm", "reflectance"])
        for lam, r in zip(WAVELENGTHS_NM, spectrum):
            w.writerow([repr(float(lam)), repr(float(r))])
    finally:
        if out:
            fh.close()


def read_target_csv(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0] and not rows[0][0].replace(".", "", 1).isdigit():
        rows = rows[1:]
    try:
        lam = np.array([float(r[0]) for r in rows])
        refl = np.array([float(r[1]) for r in rows])
    except (ValueError, IndexError):
        raise CliError(f"{path}: expected wavelength_nm,reflectance rows") from None
    if lam.shape != WAVELENGTHS_NM.shape or not np.allclose(lam, WAVELENGTHS_NM, atol=1e-6):
        raise CliError(f"{path}: wavelengths must be the 200-point 1250-1850 nm grid")
    return refl


def _target(args) -> TargetSpec:
    if args.target is not None:
        return TargetSpec(read_target_csv(args.target), args.band)
    return TargetSpec.flat(args.target_flat, args.band)


def _run(args, materials: MaterialDb) -> None:
    cmd = args.command
    if cmd == "gen-data":
        data = ds_mod.generate(args.n, args.seed, materials=materials, command=f"gen-data --n {args.n} --seed {args.seed}")
        ds_mod.save(data, args.out)
    elif cmd == "simulate":
        _write_spectrum(supercell_reflectance(args.design, materials), args.out)
    elif cmd == "train-ae":
        train, val = _split(args)
        ae, rep = train_response_autoencoder(train, val, args.layers, _train_cfg(pipeline.AE_CONFIG, args))
        ae.save(args.out)
        log.info("validation mse %.6g (best epoch %d)", rep.final_val_mse, rep.best_epoch)
    elif cmd == "sweep-ae":
        train, val = _split(args)
        rows = sweep_bottleneck(train, val, args.dims, args.layers, _train_cfg(pipeline.AE_CONFIG, args), args.seeds)
        write_sweep_csv(rows, args.out, ["m", "val_mse"])
    elif cmd == "train-pe":
        train, val = _split(args)
        ae = ResponseAutoencoder.load(args.ae)
        pe, rep = train_pseudo_encoder(train, val, ae, args.layers, _train_cfg(pipeline.PE_CONFIG, args))
        pe.save(args.out)
        log.info("validation mse (reduced response) %.6g", rep.final_val_mse)
    elif cmd == "sweep-pe":
        train, val = _split(args)
        aes = {ae.m: ae for ae in (ResponseAutoencoder.load(p) for p in args.ae)}
        rows = sweep_design_dim(train, val, aes, args.k, sorted(aes), _train_cfg(pipeline.PE_CONFIG, args))
        write_sweep_csv(rows, args.out, ["k", "m", "val_mse"])
    elif cmd == "train-inverse":
        train, val = _split(args)
        ae, pe = ResponseAutoencoder.load(args.ae), PseudoEncoder.load(args.pe)
        inv, rep = train_inverse(train, val, ae, pe, args.layers, _train_cfg(pipeline.INVERSE_CONFIG, args))
        inv.save(args.out)
        log.info("validation mse (reduced design) %.6g", rep.final_val_mse)
    elif cmd == "forward":
        model = FullForwardModel.from_parts(PseudoEncoder.load(args.pe), ResponseAutoencoder.load(args.ae))
        _write_spectrum(forward_predict(model, args.design), args.out)
    elif cmd == "design":
        models = DesignModels(
            ResponseAutoencoder.load(args.ae), PseudoEncoder.load(args.pe), InverseModel.load(args.inv)
        )
        cfg = SearchConfig(
            strategy=args.strategy, resolution=args.resolution, budget=args.budget, top_k=args.k, seed=args.seed
        )
        report = design(_target(args), models, cfg, ConstraintSet.parse(args.constraint), materials)
        report["config_hash"] = config_hash(args)
        args.out.write_text(json.dumps(report, indent=2) + "\n")
    elif cmd == "verify":
        doc = json.loads(args.report.read_text())
        designs = [DesignVector(**d["design"]) for d in doc.get("designs", [])]
        if not designs:
            raise CliError(f"{args.report}: no designs to verify")
        ranked = verify_candidates(designs, _target(args), materials)
        fh = open(args.out, "w", newline="") if args.out else sys.stdout
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", *PARAM_NAMES, "band_mse"])
            for i, (d, score) in enumerate(ranked, 1):
                w.writerow([i, *(repr(float(v)) for v in d.as_array()), repr(score)])
        finally:
            if args.out:
                fh.close()
    elif cmd == "insight":
        _run_insight(args, materials)


def _run_insight(args, materials: MaterialDb) -> None:
    sub = args.insight_command
    if sub == "weights":
        insight.extract_weight_map(PseudoEncoder.load(args.pe)).to_csv(args.out)
    elif sub == "invariance":
        pe = PseudoEncoder.load(args.pe)
        node, ratio = insight.dominant_node(insight.extract_weight_map(pe), LC_NAMES)
        rng = np.random.default_rng(args.seed)
        groups = insight.weighted_sum_groups(pe, args.base, node, args.sums, args.sets, rng)
        report = insight.invariance_experiment(groups, materials).to_dict()
        report.update({"node": node, "dominance_ratio": ratio, "config_hash": config_hash(args)})
        args.out.write_text(json.dumps(report, indent=2) + "\n")
    elif sub == "sweep":
        spectra = insight.parameter_sweep(args.base, args.param, args.values, materials)
        insight.write_sweep_csv(args.values, spectra, args.param, args.out)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.command == "insight" and args.insight_command is None:
        print("usage: metadr insight {weights,invariance,sweep} ...", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    log.info("%s config hash %s", args.command, config_hash(args))
    try:
        limits = threadpool_limits(args.threads) if args.threads else None
        try:
            _run(args, _materials(args))
        finally:
            if limits is not None:
                limits.unregister()
    except (CliError, ValueError, RuntimeError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"metadr {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
